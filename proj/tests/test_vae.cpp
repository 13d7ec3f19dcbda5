#include "oracles.hpp"

#include "gaqp/error.hpp"
#include "gaqp/synth.hpp"
#include "gaqp/vae.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

using namespace gaqp;

namespace {

EncodedDataset random_bits(std::size_t rows, std::size_t d, std::uint64_t seed)
{
    EncodedDataset data;
    data.spec.dim = d;
    data.num_rows = rows;
    Rng rng(seed);
    for (std::size_t i = 0; i != rows * d; ++i)
        data.bits.push_back(static_cast<std::uint8_t>(rng() & 1));
    return data;
}

void randomize(VaeParams &p, std::uint64_t seed, double scale)
{
    Rng rng(seed);
    std::uniform_real_distribution<double> u(-scale, scale);
    for (auto *t : p.tensors())
        for (auto &w : t->data)
            w = u(rng);
}

// Largest singular value by power iteration on W^T W.
double spectral_norm(const Matrix &w)
{
    std::vector<double> v(w.cols, 1.0), u(w.rows);
    double sigma = 0.0;
    for (int it = 0; it != 500; ++it) {
        for (std::size_t r = 0; r != w.rows; ++r) {
            u[r] = 0;
            for (std::size_t c = 0; c != w.cols; ++c)
                u[r] += w(r, c) * v[c];
        }
        double norm = 0;
        for (std::size_t c = 0; c != w.cols; ++c) {
            v[c] = 0;
            for (std::size_t r = 0; r != w.rows; ++r)
                v[c] += w(r, c) * u[r];
            norm += v[c] * v[c];
        }
        norm = std::sqrt(norm);
        sigma = std::sqrt(norm);
        for (auto &x : v)
            x /= norm;
    }
    return sigma * 1.000001;
}

} // namespace

TEST_CASE("zero-weight model")
{
    auto p = VaeParams::zeros(4, 3, 2);
    p.mu_b.data = {0.3, -0.7};
    p.lv_b.data = {1.5, -20.0};
    const std::uint8_t x[] = {1, 0, 1, 1};
    const auto post = posterior_params(p, std::span<const std::uint8_t>(x));
    CHECK(post.mu == std::vector<double>{0.3, -0.7});
    CHECK(post.log_var == std::vector<double>{1.5, kLogVarMin});

    const std::vector<double> z{0.4, -1.1};
    for (double q : decoder_bernoulli(p, z))
        CHECK(q == 0.5);
}

TEST_CASE("posterior is deterministic and Lipschitz in the input")
{
    auto p = init_params(8, 6, 3, 17);
    const double l_mu = spectral_norm(p.mu_w) * spectral_norm(p.enc_w);
    const double l_lv = spectral_norm(p.lv_w) * spectral_norm(p.enc_w);
    Rng rng(3);
    for (int trial = 0; trial != 50; ++trial) {
        std::vector<std::uint8_t> x(8);
        for (auto &b : x)
            b = rng() & 1;
        const auto a = posterior_params(p, std::span<const std::uint8_t>(x));
        CHECK(a.mu == posterior_params(p, std::span<const std::uint8_t>(x)).mu);
        x[trial % 8] ^= 1;
        const auto b = posterior_params(p, std::span<const std::uint8_t>(x));
        double dmu = 0, dlv = 0;
        for (std::size_t j = 0; j != 3; ++j) {
            dmu += (a.mu[j] - b.mu[j]) * (a.mu[j] - b.mu[j]);
            dlv += (a.log_var[j] - b.log_var[j]) * (a.log_var[j] - b.log_var[j]);
        }
        CHECK(std::sqrt(dmu) <= l_mu);
        CHECK(std::sqrt(dlv) <= l_lv);
    }
}

TEST_CASE("reparameterize")
{
    PosteriorParams p{{0.5, -2.0}, {0.0, std::log(4.0)}};
    CHECK(reparameterize(p, std::vector<double>{0, 0}) == p.mu);
    PosteriorParams standard{{0, 0}, {0, 0}};
    CHECK(reparameterize(standard, std::vector<double>{1.25, -0.5}) == std::vector<double>{1.25, -0.5});

    // affine in eps
    const std::vector<double> e1{0.3, -1.2}, e2{2.0, 0.7};
    const double a = 1.7, b = -0.4;
    const auto r1 = reparameterize(p, e1), r2 = reparameterize(p, e2);
    const auto mix = reparameterize(p, std::vector<double>{a * e1[0] + b * e2[0], a * e1[1] + b * e2[1]});
    for (std::size_t j = 0; j != 2; ++j)
        CHECK(mix[j] == doctest::Approx(a * r1[j] + b * r2[j] - (a + b - 1) * p.mu[j]).epsilon(1e-12));

    // moments over 1e5 draws within 3 standard errors
    Rng rng(9);
    std::normal_distribution<double> nd;
    const std::size_t n = 100000;
    double s1[2] = {0, 0}, s2[2] = {0, 0};
    for (std::size_t i = 0; i != n; ++i) {
        const auto z = reparameterize(p, std::vector<double>{nd(rng), nd(rng)});
        for (int j = 0; j != 2; ++j) {
            s1[j] += z[j];
            s2[j] += z[j] * z[j];
        }
    }
    for (int j = 0; j != 2; ++j) {
        const double var = std::exp(p.log_var[j]);
        const double mean = s1[j] / n;
        const double emp_var = s2[j] / n - mean * mean;
        CHECK(std::abs(mean - p.mu[j]) <= 3 * std::sqrt(var / n));
        CHECK(std::abs(emp_var - var) <= 3 * var * std::sqrt(2.0 / n));
    }
}

TEST_CASE("decoder probabilities and Bernoulli likelihood")
{
    auto p = init_params(7, 5, 3, 4);
    randomize(p, 21, 2.0);
    Rng rng(5);
    std::normal_distribution<double> nd;
    for (int trial = 0; trial != 20; ++trial) {
        std::vector<double> z{nd(rng), nd(rng), nd(rng)};
        const auto probs = decoder_bernoulli(p, z);
        const auto logits = decoder_logits(p, z);
        std::vector<std::uint8_t> x(7);
        for (auto &b : x)
            b = rng() & 1;
        double direct = 0;
        for (std::size_t i = 0; i != 7; ++i) {
            CHECK(probs[i] > 0.0);
            CHECK(probs[i] < 1.0);
            direct += x[i] ? std::log(probs[i]) : std::log(1 - probs[i]);
        }
        CHECK(bernoulli_log_likelihood(x, logits) == doctest::Approx(direct).epsilon(1e-10));
    }
}

TEST_CASE("log densities")
{
    // d' = 1 zero model at z = 0: log q is the standard normal at zero
    const auto p = VaeParams::zeros(2, 1, 1);
    const std::uint8_t x[] = {1, 0};
    const std::vector<double> z{0.0};
    const auto ld = log_densities(p, x, z);
    CHECK(ld.log_posterior == doctest::Approx(-0.5 * std::log(2 * M_PI)));
    CHECK(ld.log_joint == doctest::Approx(2 * std::log(0.5) - 0.5 * std::log(2 * M_PI)));

    // hand-set 2-bit model, d = 2, h = 1, d' = 1
    auto q = VaeParams::zeros(2, 1, 1);
    q.enc_w.data = {0.8, -0.3};
    q.enc_b.data = {0.1};
    q.mu_w.data = {1.5};
    q.mu_b.data = {-0.2};
    q.lv_w.data = {0.6};
    q.lv_b.data = {-1.0};
    q.dec_w.data = {2.0};
    q.dec_b.data = {0.5};
    q.out_w.data = {1.2, -0.7};
    q.out_b.data = {0.3, 0.1};
    const std::uint8_t xb[] = {1, 1};
    const double zz = 0.37;
    const double hid = std::tanh(0.8 - 0.3 + 0.1);
    const double mu = 1.5 * hid - 0.2, lv = 0.6 * hid - 1.0;
    const double g = std::tanh(2.0 * zz + 0.5);
    const double t0 = 1.2 * g + 0.3, t1 = -0.7 * g + 0.1;
    const double sig0 = 1 / (1 + std::exp(-t0)), sig1 = 1 / (1 + std::exp(-t1));
    const double log_joint = std::log(sig0) + std::log(sig1) - 0.5 * std::log(2 * M_PI) - zz * zz / 2;
    const double log_q = -0.5 * std::log(2 * M_PI) - lv / 2 - (zz - mu) * (zz - mu) / (2 * std::exp(lv));
    const auto got = log_densities(q, xb, std::vector<double>{zz});
    CHECK(got.log_joint == doctest::Approx(log_joint).epsilon(1e-12));
    CHECK(got.log_posterior == doctest::Approx(log_q).epsilon(1e-12));
}

TEST_CASE("closed-form KL")
{
    CHECK(kl_to_standard_normal({{0, 0, 0}, {0, 0, 0}}) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(std::abs(kl_to_standard_normal({{0, 0, 0}, {0, 0, 0}})) <= 1e-12);
    Rng rng(2);
    std::uniform_real_distribution<double> u(-3, 3);
    for (int i = 0; i != 1000; ++i) {
        PosteriorParams p{{u(rng), u(rng)}, {u(rng), u(rng)}};
        CHECK(kl_to_standard_normal(p) > 0.0);
    }
    CHECK(kl_to_standard_normal({{1e-3}, {0}}) > 0.0);
    CHECK(kl_to_standard_normal({{0}, {1e-3}}) > 0.0);
}

TEST_CASE("ELBO is below the quadrature log marginal")
{
    auto p = init_params(2, 3, 1, 8);
    randomize(p, 12, 1.5);
    for (std::uint8_t a = 0; a != 2; ++a) {
        for (std::uint8_t b = 0; b != 2; ++b) {
            const std::uint8_t x[] = {a, b};
            auto log_lik = [&](long double z) {
                return (long double)bernoulli_log_likelihood(x, decoder_logits(p, std::vector<double>{double(z)}));
            };
            const auto log_px = oracle::log_marginal_1d(log_lik);
            const auto post = posterior_params(p, std::span<const std::uint8_t>(x));
            const auto exact_elbo =
                oracle::gaussian_expectation_1d(log_lik, post.mu[0], post.log_var[0], 4000) - kl_to_standard_normal(post);
            CHECK(exact_elbo <= log_px + 1e-9);

            Rng rng(40 + a * 2 + b);
            const double mc = elbo_estimate(p, x, 20000, rng);
            CHECK(mc == doctest::Approx(double(exact_elbo)).epsilon(0.01));
        }
    }
}

TEST_CASE("analytic gradients match finite differences")
{
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        auto p = init_params(6, 4, 2, seed);
        randomize(p, seed * 31, 0.8);
        const auto data = random_bits(5, 6, seed);
        std::vector<std::size_t> rows(5);
        std::iota(rows.begin(), rows.end(), 0);
        Rng rng(seed + 100);
        std::normal_distribution<double> nd;
        std::vector<double> eps(rows.size() * 2);
        for (auto &e : eps)
            e = nd(rng);
        CHECK(oracle::gradient_check(p, data, rows, eps) <= 1e-4);
    }
}

TEST_CASE("batch ELBO value matches the long-double oracle")
{
    auto p = init_params(6, 4, 2, 3);
    const auto data = random_bits(8, 6, 3);
    std::vector<std::size_t> rows{0, 3, 5, 7};
    std::vector<double> eps{0.1, -0.2, 0.3, 1.4, -0.5, 0.6, 0.7, -0.8};
    CHECK(batch_elbo(p, data, rows, eps, nullptr) ==
          doctest::Approx(double(oracle::batch_elbo(p, data, rows, eps))).epsilon(1e-12));
}

TEST_CASE("initialization range")
{
    const auto p = init_params(10, 7, 5, 99);
    auto check_range = [](const Matrix &m, std::size_t fan_in) {
        const double bound = 1.0 / std::sqrt(double(fan_in));
        for (double w : m.data)
            CHECK(std::abs(w) <= bound);
    };
    check_range(p.enc_w, 10);
    check_range(p.mu_w, 7);
    check_range(p.lv_w, 7);
    check_range(p.dec_w, 5);
    check_range(p.out_w, 7);
    CHECK(latent_dim_for(22, 0.5) == 11);
    CHECK(latent_dim_for(3, 0.5) >= 1);
}

TEST_CASE("training is deterministic")
{
    const auto data = random_bits(300, 9, 4);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.seed = 5;
    const auto a = train(data, cfg);
    const auto b = train(data, cfg);
    CHECK(a.params == b.params);
    CHECK(a.epoch_elbo == b.epoch_elbo);
    CHECK(a.epoch_elbo.size() == 3);
}

TEST_CASE("a repeated tuple is reconstructed")
{
    EncodedDataset data;
    data.spec.dim = 6;
    data.num_rows = 256;
    const std::uint8_t x[] = {1, 0, 1, 1, 0, 0};
    for (std::size_t r = 0; r != data.num_rows; ++r)
        data.bits.insert(data.bits.end(), std::begin(x), std::end(x));
    TrainConfig cfg;
    cfg.epochs = 1500;
    cfg.learning_rate = 0.05;
    const auto model = train(data, cfg).params;
    const auto post = posterior_params(model, std::span<const std::uint8_t>(x));
    const double ll = bernoulli_log_likelihood(x, decoder_logits(model, post.mu));
    CHECK(std::exp(ll) >= 0.99);
}

TEST_CASE("divergence aborts with the epoch index")
{
    const auto data = random_bits(64, 5, 1);
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.learning_rate = 1e300;
    cfg.clip_norm = 1e308;
    CHECK_THROWS_AS(train(data, cfg), DivergenceError);
}

TEST_CASE("training ELBO mostly increases on the synthetic dataset")
{
    const auto rel = synthetic_relation({.rows = 20000});
    TrainConfig cfg;
    cfg.epochs = 20;
    const auto result = train(encode_dataset(rel, EncodingMode::Binary), cfg);
    std::size_t up = 0;
    for (std::size_t e = 1; e != result.epoch_elbo.size(); ++e)
        up += result.epoch_elbo[e] >= result.epoch_elbo[e - 1];
    CHECK(double(up) / (result.epoch_elbo.size() - 1) >= 0.9);
}
