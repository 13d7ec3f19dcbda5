#include "gaqp/ensemble.hpp"

#include "gaqp/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>

namespace gaqp {

namespace {

double log_sum_exp(std::span<const double> v)
{
    double m = -std::numeric_limits<double>::infinity();
    for (double x : v)
        m = std::max(m, x);
    if (!std::isfinite(m))
        return m;
    double s = 0.0;
    for (double x : v)
        s += std::exp(x - m);
    return m + std::log(s);
}

double acceptance_log(double r, double threshold)
{
    return threshold >= 1e9 ? 0.0 : std::min(0.0, r + threshold);
}

EncodedDataset subset(const EncodedDataset &data, std::span<const std::size_t> rows)
{
    EncodedDataset out;
    out.spec = data.spec;
    out.num_rows = rows.size();
    out.bits.reserve(rows.size() * data.dim());
    for (auto r : rows) {
        const auto row = data.row(r);
        out.bits.insert(out.bits.end(), row.begin(), row.end());
    }
    return out;
}

} // namespace

RElboResult r_elbo(const VaeParams &model, const EncodedDataset &data, double threshold, std::size_t n_draws,
                   std::uint64_t seed, RElboEstimator estimator)
{
    const double t[1] = {threshold};
    return r_elbo(model, data, t, n_draws, seed, estimator).front();
}

std::vector<RElboResult> r_elbo(const VaeParams &model, const EncodedDataset &data, std::span<const double> thresholds,
                                std::size_t n_draws, std::uint64_t seed, RElboEstimator estimator)
{
    if (n_draws == 0)
        throw DataError("R-ELBO needs at least one draw per tuple");
    std::vector<RElboResult> results(thresholds.size());
    std::vector<double> sums(thresholds.size(), 0.0);
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<double> ratios(n_draws), log_u(n_draws), log_a(n_draws), eps(model.latent_dim);

    for (std::size_t i = 0; i != data.num_rows; ++i) {
        const auto x = data.row(i);
        const auto post = posterior_params(model, x);
        for (std::size_t s = 0; s != n_draws; ++s) {
            for (auto &e : eps)
                e = normal(rng);
            const auto z = reparameterize(post, eps);
            const auto ld = log_densities(model, x, z, post);
            ratios[s] = ld.log_joint - ld.log_posterior;
            log_u[s] = std::log(unif(rng));
        }
        for (std::size_t t = 0; t != thresholds.size(); ++t) {
            for (std::size_t s = 0; s != n_draws; ++s)
                log_a[s] = acceptance_log(ratios[s], thresholds[t]);
            auto &res = results[t];
            ++res.tuples;
            if (estimator == RElboEstimator::Weighted) {
                // E_R[log p - log r] with r = q a / Z, importance-weighted by a over q-draws.
                const double lse = log_sum_exp(log_a);
                const double log_z = lse - std::log(static_cast<double>(n_draws));
                double v = 0.0;
                for (std::size_t s = 0; s != n_draws; ++s)
                    v += std::exp(log_a[s] - lse) * (ratios[s] - log_a[s]);
                sums[t] += v + log_z;
            } else {
                std::size_t accepted = 0;
                double v = 0.0;
                for (std::size_t s = 0; s != n_draws; ++s) {
                    if (log_u[s] <= log_a[s]) {
                        ++accepted;
                        v += ratios[s] - log_a[s];
                    }
                }
                if (accepted == 0) {
                    ++res.skipped;
                    continue;
                }
                const double log_z = std::log(static_cast<double>(accepted) / static_cast<double>(n_draws));
                sums[t] += v / static_cast<double>(accepted) + log_z;
            }
        }
    }
    for (std::size_t t = 0; t != thresholds.size(); ++t) {
        auto &res = results[t];
        const auto used = res.tuples - res.skipped;
        res.value = used == 0 ? std::numeric_limits<double>::quiet_NaN() : sums[t] / static_cast<double>(used);
        res.unreliable = res.tuples > 0 && 10 * res.skipped > res.tuples;
    }
    return results;
}

double bound_sum(std::span<const double> scores)
{
    if (scores.empty())
        throw DataError("bound_sum needs at least one score");
    return std::accumulate(scores.begin(), scores.end(), 0.0);
}

BoundValidationResult validate_bound(const Relation &relation, std::span<const std::vector<std::size_t>> groups,
                                     const BoundValidationConfig &cfg)
{
    const auto l = groups.size();
    if (l == 0)
        throw DataError("bound validation needs at least one group");
    if (l > 63)
        throw DataError("bound validation supports at most 63 groups");
    const auto encoded = encode_dataset(relation, cfg.encoding);
    const auto nt = cfg.thresholds.size();
    Rng rng(cfg.seed);

    std::vector<EncodedDataset> train_sets, eval_sets;
    for (const auto &g : groups) {
        if (g.empty())
            throw DataError("bound validation groups must be non-empty");
        train_sets.push_back(subset(encoded, g));
        std::vector<std::size_t> pick(g.size());
        std::iota(pick.begin(), pick.end(), std::size_t{0});
        if (cfg.eval_tuples != 0 && cfg.eval_tuples < g.size()) {
            std::shuffle(pick.begin(), pick.end(), rng);
            pick.resize(cfg.eval_tuples);
            std::sort(pick.begin(), pick.end());
        }
        eval_sets.push_back(subset(train_sets.back(), pick));
    }

    BoundValidationResult result;
    result.thresholds = cfg.thresholds;
    result.fraction.assign(nt, 0.0);
    for (std::size_t g = 0; g != l; ++g) {
        const auto model = train(train_sets[g], cfg.train).params;
        const auto scores = r_elbo(model, eval_sets[g], cfg.thresholds, cfg.n_draws, cfg.seed + g);
        std::vector<double> loss(nt);
        for (std::size_t t = 0; t != nt; ++t)
            loss[t] = -scores[t].value;
        result.group_loss.push_back(std::move(loss));
    }

    // Union losses keyed by member bitmask; repeated subsets reuse the trained model.
    std::map<std::uint64_t, std::optional<std::vector<double>>> cache;
    std::vector<std::size_t> held(nt, 0);
    std::vector<std::size_t> order(l);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t s = 0; s != cfg.n_subsets; ++s) {
        const auto size = l >= 2 ? std::uniform_int_distribution<std::size_t>(2, l)(rng) : 1;
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<std::size_t> members(order.begin(), order.begin() + static_cast<long>(size));
        std::sort(members.begin(), members.end());
        std::uint64_t mask = 0;
        for (auto m : members)
            mask |= std::uint64_t{1} << m;

        if (!cache.count(mask)) {
            if (members.size() == 1) {
                cache[mask] = result.group_loss[members[0]];
            } else {
                std::vector<std::size_t> rows;
                for (auto m : members)
                    rows.insert(rows.end(), groups[m].begin(), groups[m].end());
                std::sort(rows.begin(), rows.end());
                try {
                    const auto model = train(subset(encoded, rows), cfg.train).params;
                    std::vector<double> loss(nt, 0.0);
                    double total = 0.0;
                    for (auto m : members) {
                        const auto scores = r_elbo(model, eval_sets[m], cfg.thresholds, cfg.n_draws, cfg.seed + m);
                        const auto w = static_cast<double>(groups[m].size());
                        for (std::size_t t = 0; t != nt; ++t)
                            loss[t] -= w * scores[t].value;
                        total += w;
                    }
                    for (auto &v : loss)
                        v /= total;
                    cache[mask] = std::move(loss);
                } catch (const DivergenceError &) {
                    cache[mask] = std::nullopt;
                }
            }
        }
        const auto &union_loss = cache[mask];
        if (!union_loss) {
            ++result.skipped;
            continue;
        }
        ++result.evaluated;
        for (std::size_t t = 0; t != nt; ++t) {
            std::vector<double> member_loss;
            for (auto m : members)
                member_loss.push_back(result.group_loss[m][t]);
            if ((*union_loss)[t] <= bound_sum(member_loss))
                ++held[t];
        }
    }
    for (std::size_t t = 0; t != nt; ++t)
        result.fraction[t] =
            result.evaluated == 0 ? 0.0 : static_cast<double>(held[t]) / static_cast<double>(result.evaluated);
    return result;
}

/*----------------------------------------------------------------------------------------------------------------------
 * Hierarchies
 *--------------------------------------------------------------------------------------------------------------------*/

std::size_t OlapTree::num_groups() const
{
    std::size_t n = 0;
    for (const auto &node : nodes)
        n += node.group.has_value();
    return n;
}

std::vector<std::size_t> OlapTree::groups_under(std::size_t node) const
{
    std::vector<std::size_t> out;
    std::vector<std::size_t> stack{node};
    while (!stack.empty()) {
        const auto n = stack.back();
        stack.pop_back();
        if (nodes[n].group)
            out.push_back(*nodes[n].group);
        for (auto it = nodes[n].children.rbegin(); it != nodes[n].children.rend(); ++it)
            stack.push_back(*it);
    }
    return out;
}

OlapTree parse_hierarchy(std::istream &in)
{
    OlapTree tree;
    std::vector<std::pair<std::size_t, std::size_t>> stack; // (indent, node)
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#')
            continue;
        const auto last = line.find_last_not_of(" \t");
        const auto label = line.substr(first, last - first + 1);
        while (!stack.empty() && stack.back().first >= first)
            stack.pop_back();
        if (stack.empty() && !tree.nodes.empty())
            throw DataError("hierarchy line " + std::to_string(lineno) + ": more than one root");
        const auto id = tree.nodes.size();
        tree.nodes.push_back({label, {}, std::nullopt});
        if (!stack.empty())
            tree.nodes[stack.back().second].children.push_back(id);
        stack.emplace_back(first, id);
    }
    if (tree.nodes.empty())
        throw DataError("hierarchy is empty");
    std::size_t next = 0;
    // Leaves are numbered in file order, which is also preorder.
    for (auto &node : tree.nodes)
        if (node.children.empty())
            node.group = next++;
    return tree;
}

OlapTree load_hierarchy(const std::string &path)
{
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open hierarchy file " + path);
    return parse_hierarchy(in);
}

std::vector<double> default_node_scores(const OlapTree &tree, std::span<const double> leaf_scores)
{
    std::vector<double> scores(tree.nodes.size());
    for (std::size_t n = 0; n != tree.nodes.size(); ++n) {
        std::vector<double> members;
        for (auto g : tree.groups_under(n))
            members.push_back(leaf_scores[g]);
        scores[n] = bound_sum(members);
    }
    return scores;
}

namespace {

struct Cut
{
    double cost = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> nodes;
};

class HierarchyDp
{
public:
    HierarchyDp(const OlapTree &tree, std::size_t k, std::span<const double> scores)
        : tree_(tree)
        , k_(k)
        , scores_(scores)
    {}

    /// best[j] = cheapest cut of `node` with at most j parts (j = 0 unused).
    std::vector<Cut> node(std::size_t n)
    {
        std::vector<Cut> best(k_ + 1);
        best[1] = {scores_[n], {n}};
        const auto &ch = tree_.nodes[n].children;
        if (!ch.empty()) {
            // j starts at 1 so a lone child may replace its parent
            const auto split = range(n, 0, ch.size());
            for (std::size_t j = 1; j <= k_; ++j)
                if (split[j].cost < best[j].cost)
                    best[j] = split[j];
        }
        for (std::size_t j = 2; j <= k_; ++j)
            if (best[j - 1].cost <= best[j].cost)
                best[j] = best[j - 1];
        return best;
    }

private:
    /// Children [a, b) of `n`, split recursively in halves.
    std::vector<Cut> range(std::size_t n, std::size_t a, std::size_t b)
    {
        const auto &ch = tree_.nodes[n].children;
        if (b - a == 1)
            return node(ch[a]);
        const auto mid = a + (b - a) / 2;
        const auto left = range(n, a, mid);
        const auto right = range(n, mid, b);
        std::vector<Cut> best(k_ + 1);
        for (std::size_t j = 2; j <= k_; ++j) {
            for (std::size_t i = 1; i < j; ++i) {
                const double c = left[i].cost + right[j - i].cost;
                if (c < best[j].cost) {
                    best[j].cost = c;
                    best[j].nodes = left[i].nodes;
                    best[j].nodes.insert(best[j].nodes.end(), right[j - i].nodes.begin(), right[j - i].nodes.end());
                }
            }
            if (best[j - 1].cost <= best[j].cost)
                best[j] = best[j - 1];
        }
        return best;
    }

    const OlapTree &tree_;
    std::size_t k_;
    std::span<const double> scores_;
};

} // namespace

PartitionPlan partition_hierarchy(const OlapTree &tree, std::size_t k, std::span<const double> node_scores)
{
    if (k == 0)
        throw DataError("partition budget K must be at least 1");
    if (tree.nodes.empty())
        throw DataError("hierarchy is empty");
    if (node_scores.size() != tree.nodes.size())
        throw DataError("need one score per hierarchy node");
    PartitionPlan plan;
    const auto leaves = tree.num_groups();
    if (k > leaves) {
        plan.flagged = true;
        k = leaves;
    }
    HierarchyDp dp(tree, k, node_scores);
    const auto best = dp.node(0);
    plan.objective = best[k].cost;
    plan.nodes = best[k].nodes;
    plan.k = plan.nodes.size();
    for (auto n : plan.nodes)
        plan.parts.push_back(tree.groups_under(n));
    return plan;
}

ContiguousPlan partition_contiguous(std::size_t num_groups, std::size_t k, const RunScore &run_score)
{
    if (k == 0)
        throw DataError("partition budget K must be at least 1");
    if (num_groups == 0)
        throw DataError("contiguous partitioning needs at least one group");
    ContiguousPlan plan;
    if (k > num_groups) {
        plan.flagged = true;
        k = num_groups;
    }
    const auto l = num_groups;
    const double inf = std::numeric_limits<double>::infinity();
    // best[i][j]: first i groups in exactly j runs; from[i][j] is the start of the last run.
    std::vector<std::vector<double>> best(l + 1, std::vector<double>(k + 1, inf));
    std::vector<std::vector<std::size_t>> from(l + 1, std::vector<std::size_t>(k + 1, 0));
    std::vector<std::vector<double>> run(l + 1, std::vector<double>(l + 1, inf));
    for (std::size_t a = 0; a != l; ++a)
        for (std::size_t b = a + 1; b <= l; ++b)
            run[a][b] = run_score(a, b);
    best[0][0] = 0.0;
    for (std::size_t i = 1; i <= l; ++i)
        for (std::size_t j = 1; j <= std::min(i, k); ++j)
            for (std::size_t s = j - 1; s < i; ++s) {
                const double c = best[s][j - 1] + run[s][i];
                if (c < best[i][j]) {
                    best[i][j] = c;
                    from[i][j] = s;
                }
            }
    plan.objective = best[l][k];
    plan.boundaries.assign(k + 1, 0);
    std::size_t i = l;
    for (std::size_t j = k; j >= 1; --j) {
        plan.boundaries[j] = i;
        i = from[i][j];
    }
    return plan;
}

ContiguousPlan partition_contiguous(std::span<const double> scores, std::size_t k)
{
    return partition_contiguous(scores.size(), k, [scores](std::size_t a, std::size_t b) {
        return bound_sum(scores.subspan(a, b - a));
    });
}

} // namespace gaqp
