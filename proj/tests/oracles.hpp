#pragma once

// Independent reference computations used as test oracles.

#include "gaqp/vae.hpp"

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace oracle {

using LD = long double;

/// Long-double single-draw ELBO of one row with the log-variance clamp applied.
inline LD elbo(const gaqp::VaeParams &m, std::span<const std::uint8_t> x, std::span<const double> eps)
{
    const auto d = m.input_dim, h = m.hidden_dim, k = m.latent_dim;
    std::vector<LD> hid(h), z(k), g(h);
    for (std::size_t i = 0; i != h; ++i) {
        LD s = m.enc_b(i, 0);
        for (std::size_t j = 0; j != d; ++j)
            s += LD(m.enc_w(i, j)) * x[j];
        hid[i] = std::tanh(s);
    }
    LD kl = 0;
    for (std::size_t j = 0; j != k; ++j) {
        LD mu = m.mu_b(j, 0), lv = m.lv_b(j, 0);
        for (std::size_t i = 0; i != h; ++i) {
            mu += LD(m.mu_w(j, i)) * hid[i];
            lv += LD(m.lv_w(j, i)) * hid[i];
        }
        lv = std::fmin(std::fmax(lv, LD(-10)), LD(10));
        z[j] = mu + std::exp(lv / 2) * eps[j];
        kl += (mu * mu + std::exp(lv) - 1 - lv) / 2;
    }
    for (std::size_t i = 0; i != h; ++i) {
        LD s = m.dec_b(i, 0);
        for (std::size_t j = 0; j != k; ++j)
            s += LD(m.dec_w(i, j)) * z[j];
        g[i] = std::tanh(s);
    }
    LD ll = 0;
    for (std::size_t o = 0; o != d; ++o) {
        LD t = m.out_b(o, 0);
        for (std::size_t i = 0; i != h; ++i)
            t += LD(m.out_w(o, i)) * g[i];
        // log sigmoid(t) and log(1 - sigmoid(t)) without cancellation
        const LD log1pexp = t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
        ll += x[o] ? t - log1pexp : -log1pexp;
    }
    return ll - kl;
}

inline LD batch_elbo(const gaqp::VaeParams &m, const gaqp::EncodedDataset &data, std::span<const std::size_t> rows,
                     std::span<const double> eps)
{
    LD sum = 0;
    for (std::size_t n = 0; n != rows.size(); ++n)
        sum += elbo(m, data.row(rows[n]), eps.subspan(n * m.latent_dim, m.latent_dim));
    return sum / rows.size();
}

/// Worst |analytic - fd| / (|fd| + 1e-8) over every parameter, with a five-point stencil in long double.
inline double gradient_check(const gaqp::VaeParams &model, const gaqp::EncodedDataset &data,
                             std::span<const std::size_t> rows, std::span<const double> eps)
{
    gaqp::VaeParams grad;
    gaqp::batch_elbo(model, data, rows, eps, &grad);
    auto probe = model;
    auto tensors = probe.tensors();
    auto gtensors = grad.tensors();
    double worst = 0.0;
    const double h = 1e-4;
    for (std::size_t t = 0; t != tensors.size(); ++t) {
        auto &w = tensors[t]->data;
        for (std::size_t i = 0; i != w.size(); ++i) {
            const double w0 = w[i];
            auto at = [&](double delta) {
                w[i] = w0 + delta;
                return batch_elbo(probe, data, rows, eps);
            };
            const LD fd = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * LD(h));
            w[i] = w0;
            const double err = double(std::fabs(gtensors[t]->data[i] - fd) / (std::fabs(fd) + 1e-8L));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

/// log p(x) for a one-dimensional latent by trapezoidal quadrature over z in [-12, 12].
template <class LogLik> LD log_marginal_1d(LogLik &&log_lik, std::size_t steps = 20000)
{
    const LD lo = -12, hi = 12, dz = (hi - lo) / steps;
    LD sum = 0;
    for (std::size_t s = 0; s <= steps; ++s) {
        const LD z = lo + s * dz;
        const LD w = (s == 0 || s == steps) ? 0.5L : 1.0L;
        sum += w * std::exp(log_lik(z) - z * z / 2) / std::sqrt(2 * LD(M_PI));
    }
    return std::log(sum * dz);
}

/// E_{N(mu, exp(lv))}[f(z)] by the same quadrature.
template <class F> LD gaussian_expectation_1d(F &&f, LD mu, LD lv, std::size_t steps = 20000)
{
    const LD sd = std::exp(lv / 2), lo = mu - 12 * sd, hi = mu + 12 * sd, dz = (hi - lo) / steps;
    LD sum = 0;
    for (std::size_t s = 0; s <= steps; ++s) {
        const LD z = lo + s * dz;
        const LD w = (s == 0 || s == steps) ? 0.5L : 1.0L;
        const LD u = (z - mu) / sd;
        sum += w * f(z) * std::exp(-u * u / 2) / (sd * std::sqrt(2 * LD(M_PI)));
    }
    return sum * dz;
}

} // namespace oracle
