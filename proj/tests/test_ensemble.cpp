#include "brute.hpp"
#include "oracles.hpp"

#include "gaqp/ensemble.hpp"
#include "gaqp/error.hpp"
#include "gaqp/synth.hpp"
#include "gaqp/vrs.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

using namespace gaqp;

namespace {

EncodedDataset single_row(std::vector<std::uint8_t> x)
{
    EncodedDataset data;
    data.spec.dim = x.size();
    data.num_rows = 1;
    data.bits = std::move(x);
    return data;
}

// Toy d = 2, d' = 1 model with fixed weights.
VaeParams toy_model()
{
    auto p = VaeParams::zeros(2, 2, 1);
    p.enc_w.data = {0.9, -0.4, 0.3, 0.8};
    p.enc_b.data = {0.1, -0.2};
    p.mu_w.data = {1.1, -0.6};
    p.mu_b.data = {0.2};
    p.lv_w.data = {0.5, 0.4};
    p.lv_b.data = {-0.9};
    p.dec_w.data = {1.7, -1.2};
    p.dec_b.data = {0.3, 0.1};
    p.out_w.data = {1.5, -0.8, -1.1, 0.9};
    p.out_b.data = {-0.2, 0.4};
    return p;
}

struct Quadrature
{
    long double r_elbo;
    long double kl_to_posterior;
};

// Resampled objective E_r[log p(x,z) - log r(z|x)] and KL(r || p(z|x)) by quadrature.
Quadrature resampled(const VaeParams &m, std::span<const std::uint8_t> x, double t)
{
    using LD = long double;
    const auto post = posterior_params(m, x);
    auto log_joint = [&](LD z) {
        const std::vector<double> zv{double(z)};
        return LD(bernoulli_log_likelihood(x, decoder_logits(m, zv)) + standard_normal_log_density(zv));
    };
    auto log_q = [&](LD z) { return LD(diagonal_gaussian_log_density(std::vector<double>{double(z)}, post)); };
    auto log_a = [&](LD z) {
        return t >= 1e9 ? LD(0) : std::min(LD(0), log_joint(z) - log_q(z) + LD(t));
    };
    const LD mu = post.mu[0], lv = post.log_var[0];
    const LD zhat = oracle::gaussian_expectation_1d([&](LD z) { return std::exp(log_a(z)); }, mu, lv);
    const LD value = oracle::gaussian_expectation_1d(
        [&](LD z) { return std::exp(log_a(z)) / zhat * (log_joint(z) - log_q(z) - log_a(z) + std::log(zhat)); }, mu, lv);
    auto log_lik = [&](LD z) {
        return LD(bernoulli_log_likelihood(x, decoder_logits(m, std::vector<double>{double(z)})));
    };
    const LD log_px = oracle::log_marginal_1d(log_lik);
    return {value, log_px - value};
}

void check_valid_plan(const OlapTree &tree, const PartitionPlan &plan, std::span<const double> scores)
{
    std::set<std::size_t> covered;
    double sum = 0;
    for (std::size_t i = 0; i != plan.nodes.size(); ++i) {
        sum += scores[plan.nodes[i]];
        for (auto g : plan.parts[i])
            CHECK(covered.insert(g).second);
    }
    CHECK(covered.size() == tree.num_groups());
    CHECK(sum == doctest::Approx(plan.objective));
}

} // namespace

TEST_CASE("bound_sum")
{
    CHECK(bound_sum(std::vector<double>{-3.0}) == -3.0);
    CHECK(bound_sum(std::vector<double>{-3.0, -5.5}) == -8.5);
    CHECK(bound_sum(std::vector<double>{1.5, -2.0, 4.25}) == bound_sum(std::vector<double>{4.25, 1.5, -2.0}));
}

TEST_CASE("R-ELBO at T = +inf is the ELBO")
{
    const auto m = toy_model();
    for (auto x : {std::vector<std::uint8_t>{1, 0}, std::vector<std::uint8_t>{0, 1}}) {
        const auto data = single_row(x);
        Rng rng(3);
        const double elbo = elbo_estimate(m, x, 200000, rng);
        for (auto est : {RElboEstimator::Weighted, RElboEstimator::Rejection}) {
            const auto r = r_elbo(m, data, kInfiniteThreshold, 200000, 5, est);
            CHECK(r.skipped == 0);
            CHECK(r.value == doctest::Approx(elbo).epsilon(0.01));
        }
    }
}

TEST_CASE("R-ELBO matches quadrature of the resampled objective")
{
    const auto m = toy_model();
    for (auto x : {std::vector<std::uint8_t>{1, 1}, std::vector<std::uint8_t>{0, 1}}) {
        const auto data = single_row(x);
        for (double t : {-1.0, 1.0, 3.0}) {
            const auto exact = resampled(m, x, t);
            // standard error from independent repeats
            std::vector<double> reps;
            for (std::uint64_t s = 1; s <= 20; ++s)
                reps.push_back(r_elbo(m, data, t, 5000, s * 7).value);
            const double mean = std::accumulate(reps.begin(), reps.end(), 0.0) / reps.size();
            double var = 0;
            for (double v : reps)
                var += (v - mean) * (v - mean);
            const double se = std::sqrt(var / (reps.size() - 1) / reps.size());
            CHECK(std::abs(mean - double(exact.r_elbo)) <= 2 * se + 1e-4);
        }
    }
}

TEST_CASE("lower T moves the resampled posterior toward the true posterior")
{
    const auto m = toy_model();
    const std::vector<std::uint8_t> x{1, 0};
    const auto data = single_row(x);
    const std::vector<double> ts{6.0, 3.0, 1.0, 0.0, -1.0, -3.0};
    const auto est = r_elbo(m, data, ts, 100000, 2);
    long double prev_kl = 1e300;
    for (std::size_t i = 0; i != ts.size(); ++i) {
        const auto q = resampled(m, x, ts[i]);
        CHECK(q.kl_to_posterior >= -1e-9);
        CHECK(q.kl_to_posterior <= prev_kl + 1e-12);
        prev_kl = q.kl_to_posterior;
        CHECK(est[i].value == doctest::Approx(double(q.r_elbo)).epsilon(0.01));
    }
}

TEST_CASE("rejection estimator skips tuples without accepts")
{
    const auto m = toy_model();
    EncodedDataset data;
    data.spec.dim = 2;
    data.num_rows = 4;
    data.bits = {1, 0, 0, 1, 1, 1, 0, 0};
    const auto r = r_elbo(m, data, -60.0, 64, 1, RElboEstimator::Rejection);
    CHECK(r.tuples == 4);
    CHECK(r.skipped == 4);
    CHECK(r.unreliable);
    const auto w = r_elbo(m, data, -60.0, 64, 1, RElboEstimator::Weighted);
    CHECK(std::isfinite(w.value));
    CHECK_FALSE(w.unreliable);
}

TEST_CASE("multi-threshold R-ELBO reuses draws")
{
    const auto m = toy_model();
    EncodedDataset data;
    data.spec.dim = 2;
    data.num_rows = 3;
    data.bits = {1, 0, 0, 1, 1, 1};
    const std::vector<double> ts{-2.0, 0.0, 2.0};
    const auto all = r_elbo(m, data, ts, 128, 9);
    for (std::size_t i = 0; i != ts.size(); ++i)
        CHECK(all[i].value == r_elbo(m, data, ts[i], 128, 9).value);
}

TEST_CASE("hierarchy parsing")
{
    std::istringstream in("all\n  east   # comment-free label\n    ny\n    nj\n  west\n    ca\n# note\n    wa\n    or\n");
    const auto tree = parse_hierarchy(in);
    REQUIRE(tree.nodes.size() == 8);
    CHECK(tree.num_groups() == 5);
    CHECK(tree.nodes[0].children == std::vector<std::size_t>{1, 4});
    CHECK(tree.groups_under(4) == std::vector<std::size_t>{2, 3, 4});
    CHECK(tree.nodes[2].label == "ny");
    std::istringstream two("a\nb\n");
    CHECK_THROWS_AS(parse_hierarchy(two), DataError);
}

TEST_CASE("hierarchy DP base cases")
{
    std::istringstream in("all\n  a\n    a1\n    a2\n  b\n    b1\n    b2\n    b3\n");
    const auto tree = parse_hierarchy(in);
    const std::vector<double> leaf{1, 2, 3, 4, 5};
    auto scores = default_node_scores(tree, leaf);
    CHECK(scores[0] == 15.0);
    scores[0] = 20; // make merging expensive
    scores[1] = 5;
    scores[4] = 14;
    const auto one = partition_hierarchy(tree, 1, scores);
    CHECK(one.nodes == std::vector<std::size_t>{0});
    CHECK(one.objective == 20.0);

    const auto all = partition_hierarchy(tree, 5, scores);
    CHECK(all.parts.size() == 5);
    CHECK(all.objective == 15.0);

    const auto over = partition_hierarchy(tree, 9, scores);
    CHECK(over.flagged);
    CHECK(over.k <= 5);
}

TEST_CASE("hierarchy DP equals brute force over tree cuts")
{
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    for (int trial = 0; trial != 200; ++trial) {
        const auto tree = brute::random_tree(12, rng);
        std::vector<double> scores(tree.nodes.size());
        for (auto &s : scores)
            s = u(rng);
        double prev = std::numeric_limits<double>::infinity();
        for (std::size_t k = 1; k <= 4; ++k) {
            const auto plan = partition_hierarchy(tree, k, scores);
            double best = std::numeric_limits<double>::infinity();
            for (const auto &[cost, parts] : brute::tree_cuts(tree, 0, scores, std::min(k, tree.num_groups())))
                best = std::min(best, cost);
            CHECK(plan.objective == doctest::Approx(best).epsilon(1e-12));
            CHECK(plan.k <= k);
            CHECK(plan.objective <= prev + 1e-12);
            prev = plan.objective;
            check_valid_plan(tree, plan, scores);
        }
    }
}

TEST_CASE("contiguous DP")
{
    const std::vector<double> s{1, 2, 3, 4};
    const auto all = partition_contiguous(s, 4);
    CHECK(all.boundaries == std::vector<std::size_t>{0, 1, 2, 3, 4});
    const auto one = partition_contiguous(s, 1);
    CHECK(one.boundaries == std::vector<std::size_t>{0, 4});
    CHECK(one.objective == 10.0);
    const auto over = partition_contiguous(s, 7);
    CHECK(over.flagged);
    CHECK(over.boundaries.size() == 5);

    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (int trial = 0; trial != 200; ++trial) {
        const std::size_t l = 1 + trial % 10;
        std::vector<std::vector<double>> table(l + 1, std::vector<double>(l + 1));
        for (auto &row : table)
            for (auto &v : row)
                v = u(rng);
        const RunScore score = [&](std::size_t a, std::size_t b) { return table[a][b]; };
        for (std::size_t k = 1; k <= std::min<std::size_t>(4, l); ++k) {
            const auto plan = partition_contiguous(l, k, score);
            CHECK(plan.objective == doctest::Approx(brute::contiguous(l, k, score)).epsilon(1e-12));
            REQUIRE(plan.boundaries.size() == k + 1);
            CHECK(plan.boundaries.front() == 0);
            CHECK(plan.boundaries.back() == l);
            double sum = 0;
            for (std::size_t i = 0; i != k; ++i) {
                CHECK(plan.boundaries[i] < plan.boundaries[i + 1]);
                sum += table[plan.boundaries[i]][plan.boundaries[i + 1]];
            }
            CHECK(sum == doctest::Approx(plan.objective));
        }
    }
}

TEST_CASE("bound validation runs end to end")
{
    const auto rel = synthetic_relation({.rows = 2000, .seed = 4});
    std::vector<std::vector<std::size_t>> groups(4);
    for (std::size_t r = 0; r != rel.num_rows(); ++r)
        groups[rel.at(r, 0) % 4].push_back(r);
    BoundValidationConfig cfg;
    cfg.n_subsets = 6;
    cfg.n_draws = 64;
    cfg.eval_tuples = 50;
    cfg.train.epochs = 2;
    const auto a = validate_bound(rel, groups, cfg);
    CHECK(a.evaluated + a.skipped == 6);
    CHECK(a.fraction.size() == 3);
    for (double f : a.fraction) {
        CHECK(f >= 0.0);
        CHECK(f <= 1.0);
    }
    CHECK(a.group_loss.size() == 4);
    const auto b = validate_bound(rel, groups, cfg);
    CHECK(a.fraction == b.fraction);
}
