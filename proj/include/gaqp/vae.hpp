#pragma once

#include "gaqp/relation.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace gaqp {

using Rng = std::mt19937_64;

/// Dense row-major matrix; vectors are stored as n x 1.
struct Matrix
{
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double &operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::size_t size() const { return data.size(); }

    bool operator==(const Matrix &) const = default;
};

/// Weights of the two-layer Gaussian-latent / Bernoulli-output autoencoder.
///
///   encoder:  h = tanh(enc_w x + enc_b);  mu = mu_w h + mu_b;  log_var = clamp(lv_w h + lv_b)
///   decoder:  g = tanh(dec_w z + dec_b);  logits = out_w g + out_b
struct VaeParams
{
    std::size_t input_dim = 0;
    std::size_t hidden_dim = 0;
    std::size_t latent_dim = 0;

    Matrix enc_w, enc_b;
    Matrix mu_w, mu_b;
    Matrix lv_w, lv_b;
    Matrix dec_w, dec_b;
    Matrix out_w, out_b;

    static constexpr std::size_t kNumTensors = 10;

    /// Zero-initialized parameters of the given shape.
    static VaeParams zeros(std::size_t input_dim, std::size_t hidden_dim, std::size_t latent_dim);

    std::array<Matrix *, kNumTensors> tensors();
    std::array<const Matrix *, kNumTensors> tensors() const;
    std::size_t num_parameters() const;

    bool operator==(const VaeParams &) const = default;
};

struct TrainConfig
{
    int epochs = 30;
    std::size_t batch_size = 64;
    double learning_rate = 1e-2;
    std::uint64_t seed = 1;
    double latent_fraction = 0.5;
    std::size_t hidden_dim = 0; ///< 0 selects the input dimension
    double clip_norm = 5.0;
    /// Called after each epoch with (epoch, mean training ELBO).
    std::function<void(int, double)> on_epoch;
};

struct PosteriorParams
{
    std::vector<double> mu;
    std::vector<double> log_var;
};

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

struct LogDensities
{
    double log_joint;     ///< log p(x, z) = log p(x | z) + log N(z; 0, I)
    double log_posterior; ///< log q(z | x)
};

struct TrainResult
{
    VaeParams params;
    std::vector<double> epoch_elbo;
};

PosteriorParams posterior_params(const VaeParams &model, std::span<const double> x);
PosteriorParams posterior_params(const VaeParams &model, std::span<const std::uint8_t> x);

std::vector<double> reparameterize(const PosteriorParams &p, std::span<const double> eps);

/// Bernoulli success probabilities of every output bit given the latent `z`.
std::vector<double> decoder_bernoulli(const VaeParams &model, std::span<const double> z);
/// Output logits; the probabilities are their logistic squashing.
std::vector<double> decoder_logits(const VaeParams &model, std::span<const double> z);

double bernoulli_log_likelihood(std::span<const std::uint8_t> x, std::span<const double> logits);
double standard_normal_log_density(std::span<const double> z);
double diagonal_gaussian_log_density(std::span<const double> z, const PosteriorParams &p);
/// Closed-form KL( N(mu, diag(exp(log_var))) || N(0, I) ).
double kl_to_standard_normal(const PosteriorParams &p);

LogDensities log_densities(const VaeParams &model, std::span<const std::uint8_t> x, std::span<const double> z);
/// As above with the posterior already computed for `x`.
LogDensities log_densities(const VaeParams &model, std::span<const std::uint8_t> x, std::span<const double> z,
                           const PosteriorParams &posterior);

/// Monte Carlo E_q[log p(x|z)] over `n_draws` reparameterized draws minus the closed-form KL.
double elbo_estimate(const VaeParams &model, std::span<const std::uint8_t> x, std::size_t n_draws, Rng &rng);

/// Mean single-draw ELBO over `rows` with the given standard-normal draws (rows.size() x latent_dim,
/// row-major). When `grad` is non-null it receives the gradient of that mean w.r.t. every parameter.
double batch_elbo(const VaeParams &model, const EncodedDataset &data, std::span<const std::size_t> rows,
                  std::span<const double> eps, VaeParams *grad);

/// Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
VaeParams init_params(std::size_t input_dim, std::size_t hidden_dim, std::size_t latent_dim, std::uint64_t seed);
std::size_t latent_dim_for(std::size_t input_dim, double latent_fraction);

/// Minibatch SGD ascent on the ELBO with gradient-norm clipping. Throws DivergenceError.
TrainResult train(const EncodedDataset &data, const TrainConfig &cfg);

std::vector<double> to_double(std::span<const std::uint8_t> bits);

} // namespace gaqp
