#include "gaqp/vae.hpp"

#include "gaqp/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace gaqp {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112; // log(2 pi)

/// out = W v + b
void affine(const Matrix &w, const Matrix &b, std::span<const double> v, std::span<double> out)
{
    for (std::size_t r = 0; r != w.rows; ++r) {
        const double *row = &w.data[r * w.cols];
        double acc = b.data[r];
        for (std::size_t c = 0; c != w.cols; ++c)
            acc += row[c] * v[c];
        out[r] = acc;
    }
}

/// out += W^T g
void affine_transpose_acc(const Matrix &w, std::span<const double> g, std::span<double> out)
{
    for (std::size_t r = 0; r != w.rows; ++r) {
        const double *row = &w.data[r * w.cols];
        const double gr = g[r];
        if (gr == 0.0)
            continue;
        for (std::size_t c = 0; c != w.cols; ++c)
            out[c] += row[c] * gr;
    }
}

/// dW += scale * g v^T, db += scale * g
void outer_acc(Matrix &dw, Matrix &db, std::span<const double> g, std::span<const double> v, double scale)
{
    for (std::size_t r = 0; r != dw.rows; ++r) {
        const double gr = g[r] * scale;
        db.data[r] += gr;
        if (gr == 0.0)
            continue;
        double *row = &dw.data[r * dw.cols];
        for (std::size_t c = 0; c != dw.cols; ++c)
            row[c] += gr * v[c];
    }
}

double softplus(double x)
{
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x)
{
    if (x >= 0)
        return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

void check_finite(std::span<const double> v, const char *what)
{
    for (double x : v)
        if (!std::isfinite(x))
            throw DivergenceError(std::string("non-finite ") + what, -1);
}

/// Forward activations kept for backpropagation.
struct Activations
{
    std::vector<double> hidden, mu_raw, lv_raw, z, dec_hidden, logits;
};

} // namespace

/*======================================================================================================================
 * VaeParams
 *====================================================================================================================*/

VaeParams VaeParams::zeros(std::size_t input_dim, std::size_t hidden_dim, std::size_t latent_dim)
{
    VaeParams p;
    p.input_dim = input_dim;
    p.hidden_dim = hidden_dim;
    p.latent_dim = latent_dim;
    p.enc_w = Matrix(hidden_dim, input_dim);
    p.enc_b = Matrix(hidden_dim, 1);
    p.mu_w = Matrix(latent_dim, hidden_dim);
    p.mu_b = Matrix(latent_dim, 1);
    p.lv_w = Matrix(latent_dim, hidden_dim);
    p.lv_b = Matrix(latent_dim, 1);
    p.dec_w = Matrix(hidden_dim, latent_dim);
    p.dec_b = Matrix(hidden_dim, 1);
    p.out_w = Matrix(input_dim, hidden_dim);
    p.out_b = Matrix(input_dim, 1);
    return p;
}

std::array<Matrix *, VaeParams::kNumTensors> VaeParams::tensors()
{
    return {&enc_w, &enc_b, &mu_w, &mu_b, &lv_w, &lv_b, &dec_w, &dec_b, &out_w, &out_b};
}

std::array<const Matrix *, VaeParams::kNumTensors> VaeParams::tensors() const
{
    return {&enc_w, &enc_b, &mu_w, &mu_b, &lv_w, &lv_b, &dec_w, &dec_b, &out_w, &out_b};
}

std::size_t VaeParams::num_parameters() const
{
    std::size_t n = 0;
    for (const auto *t : tensors())
        n += t->size();
    return n;
}

/*======================================================================================================================
 * Densities
 *====================================================================================================================*/

std::vector<double> to_double(std::span<const std::uint8_t> bits)
{
    return {bits.begin(), bits.end()};
}

PosteriorParams posterior_params(const VaeParams &model, std::span<const double> x)
{
    std::vector<double> hidden(model.hidden_dim);
    affine(model.enc_w, model.enc_b, x, hidden);
    for (auto &h : hidden)
        h = std::tanh(h);
    PosteriorParams p;
    p.mu.resize(model.latent_dim);
    p.log_var.resize(model.latent_dim);
    affine(model.mu_w, model.mu_b, hidden, p.mu);
    affine(model.lv_w, model.lv_b, hidden, p.log_var);
    check_finite(p.mu, "posterior mean");
    check_finite(p.log_var, "posterior log-variance");
    for (auto &lv : p.log_var)
        lv = std::clamp(lv, kLogVarMin, kLogVarMax);
    return p;
}

PosteriorParams posterior_params(const VaeParams &model, std::span<const std::uint8_t> x)
{
    const auto xd = to_double(x);
    return posterior_params(model, std::span<const double>(xd));
}

std::vector<double> reparameterize(const PosteriorParams &p, std::span<const double> eps)
{
    std::vector<double> z(p.mu.size());
    for (std::size_t j = 0; j != z.size(); ++j)
        z[j] = p.mu[j] + std::exp(0.5 * p.log_var[j]) * eps[j];
    return z;
}

std::vector<double> decoder_logits(const VaeParams &model, std::span<const double> z)
{
    std::vector<double> hidden(model.hidden_dim);
    affine(model.dec_w, model.dec_b, z, hidden);
    for (auto &h : hidden)
        h = std::tanh(h);
    std::vector<double> logits(model.input_dim);
    affine(model.out_w, model.out_b, hidden, logits);
    check_finite(logits, "decoder logits");
    return logits;
}

std::vector<double> decoder_bernoulli(const VaeParams &model, std::span<const double> z)
{
    auto probs = decoder_logits(model, z);
    for (auto &l : probs)
        l = sigmoid(l);
    return probs;
}

double bernoulli_log_likelihood(std::span<const std::uint8_t> x, std::span<const double> logits)
{
    // x log s(l) + (1-x) log(1-s(l)) = x l - softplus(l)
    double ll = 0.0;
    for (std::size_t i = 0; i != x.size(); ++i)
        ll += (x[i] ? logits[i] : 0.0) - softplus(logits[i]);
    return ll;
}

double standard_normal_log_density(std::span<const double> z)
{
    double s = 0.0;
    for (double v : z)
        s += v * v;
    return -0.5 * (s + static_cast<double>(z.size()) * kLog2Pi);
}

double diagonal_gaussian_log_density(std::span<const double> z, const PosteriorParams &p)
{
    double s = 0.0;
    for (std::size_t j = 0; j != z.size(); ++j) {
        const double d = z[j] - p.mu[j];
        s += d * d * std::exp(-p.log_var[j]) + p.log_var[j] + kLog2Pi;
    }
    return -0.5 * s;
}

double kl_to_standard_normal(const PosteriorParams &p)
{
    double kl = 0.0;
    for (std::size_t j = 0; j != p.mu.size(); ++j)
        kl += p.mu[j] * p.mu[j] + std::exp(p.log_var[j]) - 1.0 - p.log_var[j];
    return 0.5 * kl;
}

LogDensities log_densities(const VaeParams &model, std::span<const std::uint8_t> x, std::span<const double> z,
                           const PosteriorParams &posterior)
{
    const auto logits = decoder_logits(model, z);
    return {bernoulli_log_likelihood(x, logits) + standard_normal_log_density(z),
            diagonal_gaussian_log_density(z, posterior)};
}

LogDensities log_densities(const VaeParams &model, std::span<const std::uint8_t> x, std::span<const double> z)
{
    return log_densities(model, x, z, posterior_params(model, x));
}

double elbo_estimate(const VaeParams &model, std::span<const std::uint8_t> x, std::size_t n_draws, Rng &rng)
{
    if (n_draws == 0)
        throw std::invalid_argument("elbo_estimate needs at least one draw");
    const auto post = posterior_params(model, x);
    std::normal_distribution<double> normal;
    std::vector<double> eps(model.latent_dim);
    double sum = 0.0;
    for (std::size_t s = 0; s != n_draws; ++s) {
        for (auto &e : eps)
            e = normal(rng);
        const auto z = reparameterize(post, eps);
        sum += bernoulli_log_likelihood(x, decoder_logits(model, z));
    }
    return sum / static_cast<double>(n_draws) - kl_to_standard_normal(post);
}

/*======================================================================================================================
 * Gradient
 *====================================================================================================================*/

double batch_elbo(const VaeParams &model, const EncodedDataset &data, std::span<const std::size_t> rows,
                  std::span<const double> eps, VaeParams *grad)
{
    const auto d = model.input_dim;
    const auto h = model.hidden_dim;
    const auto k = model.latent_dim;
    if (data.dim() != d)
        throw std::invalid_argument("dataset dimension does not match the model");
    if (eps.size() != rows.size() * k)
        throw std::invalid_argument("eps must hold latent_dim draws per row");
    if (grad)
        *grad = VaeParams::zeros(d, h, k);

    const double scale = rows.empty() ? 0.0 : 1.0 / static_cast<double>(rows.size());
    Activations act;
    act.hidden.resize(h);
    act.mu_raw.resize(k);
    act.lv_raw.resize(k);
    act.z.resize(k);
    act.dec_hidden.resize(h);
    act.logits.resize(d);
    std::vector<double> x(d), d_logits(d), d_dec_hidden(h), d_z(k), d_mu(k), d_lv(k), d_hidden(h);

    double total = 0.0;
    for (std::size_t n = 0; n != rows.size(); ++n) {
        const auto bits = data.row(rows[n]);
        for (std::size_t i = 0; i != d; ++i)
            x[i] = bits[i];
        const double *e = &eps[n * k];

        affine(model.enc_w, model.enc_b, x, act.hidden);
        for (auto &v : act.hidden)
            v = std::tanh(v);
        affine(model.mu_w, model.mu_b, act.hidden, act.mu_raw);
        affine(model.lv_w, model.lv_b, act.hidden, act.lv_raw);
        double kl = 0.0;
        for (std::size_t j = 0; j != k; ++j) {
            const double lv = std::clamp(act.lv_raw[j], kLogVarMin, kLogVarMax);
            act.z[j] = act.mu_raw[j] + std::exp(0.5 * lv) * e[j];
            kl += act.mu_raw[j] * act.mu_raw[j] + std::exp(lv) - 1.0 - lv;
        }
        kl *= 0.5;
        affine(model.dec_w, model.dec_b, act.z, act.dec_hidden);
        for (auto &v : act.dec_hidden)
            v = std::tanh(v);
        affine(model.out_w, model.out_b, act.dec_hidden, act.logits);
        const double value = bernoulli_log_likelihood(bits, act.logits) - kl;
        if (!std::isfinite(value))
            throw DivergenceError("non-finite ELBO", -1);
        total += value;

        if (!grad)
            continue;

        for (std::size_t i = 0; i != d; ++i)
            d_logits[i] = x[i] - sigmoid(act.logits[i]);
        outer_acc(grad->out_w, grad->out_b, d_logits, act.dec_hidden, scale);

        std::fill(d_dec_hidden.begin(), d_dec_hidden.end(), 0.0);
        affine_transpose_acc(model.out_w, d_logits, d_dec_hidden);
        for (std::size_t i = 0; i != h; ++i)
            d_dec_hidden[i] *= 1.0 - act.dec_hidden[i] * act.dec_hidden[i];
        outer_acc(grad->dec_w, grad->dec_b, d_dec_hidden, act.z, scale);

        std::fill(d_z.begin(), d_z.end(), 0.0);
        affine_transpose_acc(model.dec_w, d_dec_hidden, d_z);
        for (std::size_t j = 0; j != k; ++j) {
            d_mu[j] = d_z[j] - act.mu_raw[j];
            const double raw = act.lv_raw[j];
            if (raw < kLogVarMin || raw > kLogVarMax) {
                d_lv[j] = 0.0;
            } else {
                const double sd = std::exp(0.5 * raw);
                d_lv[j] = d_z[j] * e[j] * 0.5 * sd - 0.5 * (sd * sd - 1.0);
            }
        }
        outer_acc(grad->mu_w, grad->mu_b, d_mu, act.hidden, scale);
        outer_acc(grad->lv_w, grad->lv_b, d_lv, act.hidden, scale);

        std::fill(d_hidden.begin(), d_hidden.end(), 0.0);
        affine_transpose_acc(model.mu_w, d_mu, d_hidden);
        affine_transpose_acc(model.lv_w, d_lv, d_hidden);
        for (std::size_t i = 0; i != h; ++i)
            d_hidden[i] *= 1.0 - act.hidden[i] * act.hidden[i];
        outer_acc(grad->enc_w, grad->enc_b, d_hidden, x, scale);
    }
    return total * scale;
}

/*======================================================================================================================
 * Training
 *====================================================================================================================*/

std::size_t latent_dim_for(std::size_t input_dim, double latent_fraction)
{
    const auto k = static_cast<std::size_t>(std::lround(latent_fraction * static_cast<double>(input_dim)));
    return std::max<std::size_t>(k, 1);
}

VaeParams init_params(std::size_t input_dim, std::size_t hidden_dim, std::size_t latent_dim, std::uint64_t seed)
{
    auto p = VaeParams::zeros(input_dim, hidden_dim, latent_dim);
    Rng rng(seed);
    auto fill = [&rng](Matrix &w, Matrix &b, std::size_t fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (auto &v : w.data)
            v = u(rng);
        for (auto &v : b.data)
            v = u(rng);
    };
    fill(p.enc_w, p.enc_b, input_dim);
    fill(p.mu_w, p.mu_b, hidden_dim);
    fill(p.lv_w, p.lv_b, hidden_dim);
    fill(p.dec_w, p.dec_b, latent_dim);
    fill(p.out_w, p.out_b, hidden_dim);
    return p;
}

TrainResult train(const EncodedDataset &data, const TrainConfig &cfg)
{
    if (data.num_rows == 0)
        throw std::invalid_argument("cannot train on an empty dataset");
    if (cfg.epochs < 1 || cfg.learning_rate <= 0 || cfg.latent_fraction <= 0 || cfg.latent_fraction > 1 ||
        cfg.batch_size == 0)
        throw std::invalid_argument("invalid training configuration");

    const auto d = data.dim();
    const auto h = cfg.hidden_dim ? cfg.hidden_dim : d;
    const auto k = latent_dim_for(d, cfg.latent_fraction);

    TrainResult result;
    result.params = init_params(d, h, k, cfg.seed);
    auto &params = result.params;

    Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> normal;
    std::vector<std::size_t> order(data.num_rows);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> eps;
    VaeParams grad;

    for (int epoch = 0; epoch != cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const auto end = std::min(order.size(), start + cfg.batch_size);
            std::span<const std::size_t> batch(order.data() + start, end - start);
            eps.resize(batch.size() * k);
            for (auto &e : eps)
                e = normal(rng);
            double value;
            try {
                value = batch_elbo(params, data, batch, eps, &grad);
            } catch (const DivergenceError &) {
                throw DivergenceError("training diverged in epoch " + std::to_string(epoch), epoch);
            }
            epoch_sum += value * static_cast<double>(batch.size());

            double norm2 = 0.0;
            for (const auto *t : grad.tensors())
                for (double g : t->data)
                    norm2 += g * g;
            const double norm = std::sqrt(norm2);
            if (!std::isfinite(norm))
                throw DivergenceError("non-finite gradient in epoch " + std::to_string(epoch), epoch);
            const double step = cfg.learning_rate * (norm > cfg.clip_norm ? cfg.clip_norm / norm : 1.0);
            auto dst = params.tensors();
            auto src = std::as_const(grad).tensors();
            for (std::size_t t = 0; t != dst.size(); ++t)
                for (std::size_t i = 0; i != dst[t]->data.size(); ++i)
                    dst[t]->data[i] += step * src[t]->data[i];
        }
        const double mean = epoch_sum / static_cast<double>(order.size());
        if (!std::isfinite(mean))
            throw DivergenceError("non-finite ELBO in epoch " + std::to_string(epoch), epoch);
        result.epoch_elbo.push_back(mean);
        if (cfg.on_epoch)
            cfg.on_epoch(epoch, mean);
    }
    return result;
}

} // namespace gaqp
