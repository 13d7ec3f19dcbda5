#pragma once

// Exhaustive reference solutions for small instances.

#include "gaqp/ensemble.hpp"

#include <algorithm>
#include <cstddef>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <span>
#include <vector>

namespace brute {

/// Minimum total weight over every perfect matching of n points (n even).
inline double min_perfect_matching(std::span<const double> dist, std::size_t n)
{
    std::vector<bool> used(n, false);
    double best = std::numeric_limits<double>::infinity();
    std::function<void(double)> rec = [&](double acc) {
        std::size_t i = 0;
        while (i != n && used[i])
            ++i;
        if (i == n) {
            best = std::min(best, acc);
            return;
        }
        used[i] = true;
        for (std::size_t j = i + 1; j != n; ++j) {
            if (used[j])
                continue;
            used[j] = true;
            rec(acc + dist[i * n + j]);
            used[j] = false;
        }
        used[i] = false;
    };
    rec(0.0);
    return best;
}

/// Distribution of cross pairs over all labelings of the fixed matching {(0,1), (2,3), ...}.
inline std::vector<double> cross_pair_distribution(std::size_t n, std::size_t n_d)
{
    std::vector<double> counts(n / 2 + 1, 0.0);
    double total = 0;
    for (unsigned mask = 0; mask != (1u << n); ++mask) {
        if (static_cast<std::size_t>(__builtin_popcount(mask)) != n_d)
            continue;
        std::size_t a = 0;
        for (std::size_t p = 0; p != n / 2; ++p)
            a += ((mask >> (2 * p)) & 1) != ((mask >> (2 * p + 1)) & 1);
        counts[a] += 1;
        total += 1;
    }
    for (auto &c : counts)
        c /= total;
    return counts;
}

/// Best sum over exactly k contiguous runs of [0, l).
inline double contiguous(std::size_t l, std::size_t k, const std::function<double(std::size_t, std::size_t)> &score)
{
    double best = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> cut;
    std::function<void(std::size_t, double)> rec = [&](std::size_t begin, double acc) {
        if (cut.size() + 1 == k) {
            best = std::min(best, acc + score(begin, l));
            return;
        }
        for (std::size_t end = begin + 1; end + (k - cut.size() - 1) <= l; ++end) {
            cut.push_back(end);
            rec(end, acc + score(begin, end));
            cut.pop_back();
        }
    };
    if (k >= 1 && k <= l)
        rec(0, 0.0);
    return best;
}

// Every tree cut of `node` as (cost, parts).
inline std::vector<std::pair<double, std::size_t>> tree_cuts(const gaqp::OlapTree &tree, std::size_t node,
                                                             std::span<const double> scores, std::size_t cap)
{
    std::vector<std::pair<double, std::size_t>> out{{scores[node], 1}};
    const auto &ch = tree.nodes[node].children;
    if (ch.empty())
        return out;
    std::vector<std::pair<double, std::size_t>> acc{{0.0, 0}};
    for (auto c : ch) {
        const auto sub = tree_cuts(tree, c, scores, cap);
        std::vector<std::pair<double, std::size_t>> next;
        for (const auto &[ca, pa] : acc)
            for (const auto &[cb, pb] : sub)
                if (pa + pb <= cap)
                    next.emplace_back(ca + cb, pa + pb);
        acc = std::move(next);
    }
    out.insert(out.end(), acc.begin(), acc.end());
    return out;
}

/// Random ordered tree with at most `max_leaves` leaves, numbered in preorder.
inline gaqp::OlapTree random_tree(std::size_t max_leaves, std::mt19937_64 &rng)
{
    gaqp::OlapTree tree;
    tree.nodes.push_back({"root", {}, std::nullopt});
    std::vector<std::size_t> frontier{0};
    std::size_t leaves = 1;
    std::uniform_int_distribution<int> arity(1, 4);
    while (!frontier.empty()) {
        std::uniform_int_distribution<std::size_t> pick(0, frontier.size() - 1);
        const auto i = pick(rng);
        const auto n = frontier[i];
        frontier.erase(frontier.begin() + i);
        const std::size_t a = arity(rng);
        if (leaves - 1 + a > max_leaves || tree.nodes.size() > 3 * max_leaves || rng() % 4 == 0)
            continue;
        leaves += a - 1;
        for (std::size_t c = 0; c != a; ++c) {
            tree.nodes[n].children.push_back(tree.nodes.size());
            frontier.push_back(tree.nodes.size());
            tree.nodes.push_back({"n" + std::to_string(tree.nodes.size()), {}, std::nullopt});
        }
    }
    // number leaves in preorder
    std::size_t next = 0;
    std::vector<std::size_t> stack{0};
    while (!stack.empty()) {
        const auto n = stack.back();
        stack.pop_back();
        if (tree.nodes[n].children.empty())
            tree.nodes[n].group = next++;
        for (auto it = tree.nodes[n].children.rbegin(); it != tree.nodes[n].children.rend(); ++it)
            stack.push_back(*it);
    }
    return tree;
}

} // namespace brute
