#pragma once

#include "gaqp/bayesnet.hpp"
#include "gaqp/relation.hpp"

#include <random>
#include <string>
#include <vector>

namespace fixture {

/// Three binary nodes, A1 and A2 roots, A3 with parents {A1, A2}. The root priors and the
/// (A1=1, A2=0) row of A3 are the worked example's; the other A3 rows are arbitrary.
inline gaqp::BayesNet example_network()
{
    using gaqp::Cpt;
    Cpt a1{{}, {}, 2, {0.6, 0.4}};
    Cpt a2{{}, {}, 2, {0.1, 0.9}};
    // rows indexed a1 * 2 + a2
    Cpt a3{{0, 1}, {2, 2}, 2, {0.8, 0.2, 0.5, 0.5, 0.4, 0.6, 0.3, 0.7}};
    return gaqp::make_bayesnet({"A1", "A2", "A3"}, {2, 2, 2}, {a1, a2, a3});
}

inline gaqp::Schema binary_schema(const std::vector<std::string> &names)
{
    gaqp::Schema s;
    for (const auto &n : names)
        s.attributes.push_back({n, gaqp::AttributeKind::Categorical, {"0", "1"}});
    return s;
}

/// Random network over nodes 0..n-1 whose parents have lower indices.
inline gaqp::BayesNet random_network(std::size_t n, std::size_t max_parents, std::uint64_t seed, std::size_t max_card = 2)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.05, 1.0);
    std::vector<std::size_t> cards(n);
    for (auto &c : cards)
        c = 2 + rng() % (max_card - 1);
    std::vector<gaqp::Cpt> cpts(n);
    std::vector<std::string> names;
    for (std::size_t v = 0; v != n; ++v) {
        names.push_back("X" + std::to_string(v));
        auto &c = cpts[v];
        c.card = cards[v];
        // parents drawn from lower indices keeps the graph acyclic
        for (std::size_t p = 0; p != v && c.parents.size() < max_parents; ++p)
            if (rng() % 3 == 0)
                c.parents.push_back(p);
        std::size_t rows = 1;
        for (auto p : c.parents) {
            c.parent_cards.push_back(cards[p]);
            rows *= cards[p];
        }
        for (std::size_t r = 0; r != rows; ++r) {
            std::vector<double> row(c.card);
            double s = 0;
            for (auto &x : row)
                s += x = u(rng);
            for (auto &x : row)
                c.probs.push_back(x / s);
        }
    }
    return gaqp::make_bayesnet(names, cards, cpts);
}

// Visits every full assignment of the network.
template <class F> void for_each_assignment(const gaqp::BayesNet &bn, F &&f)
{
    gaqp::Tuple t(bn.size(), 0);
    while (true) {
        f(t);
        std::size_t i = 0;
        while (i != t.size() && ++t[i] == bn.cards[i])
            t[i++] = 0;
        if (i == t.size())
            return;
    }
}

} // namespace fixture
