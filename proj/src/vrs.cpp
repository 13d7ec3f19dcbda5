#include "gaqp/vrs.hpp"

#include "gaqp/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace gaqp {

namespace {

constexpr double kBracket = 50.0;
constexpr int kMaxExpansions = 8;
constexpr double kSolveTolerance = 1e-7;

double mean_acceptance(std::span<const double> log_ratios, double threshold)
{
    double s = 0.0;
    for (double r : log_ratios)
        s += std::exp(acceptance_log_probability(r, threshold));
    return s / static_cast<double>(log_ratios.size());
}

std::vector<double> draw_eps(std::size_t n, Rng &rng)
{
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> eps(n);
    for (auto &e : eps)
        e = normal(rng);
    return eps;
}

} // namespace

double acceptance_log_probability(double log_ratio, double threshold)
{
    if (threshold >= kInfiniteThreshold)
        return 0.0;
    return std::min(0.0, log_ratio + threshold);
}

double acceptance_log_probability(const VaeParams &model, std::span<const std::uint8_t> x, std::span<const double> z,
                                  double threshold)
{
    const auto ld = log_densities(model, x, z);
    return acceptance_log_probability(ld.log_joint - ld.log_posterior, threshold);
}

double solve_threshold(std::span<const double> log_ratios, double target_accept, bool *flagged)
{
    if (log_ratios.empty())
        throw DataError("threshold fitting needs at least one log ratio");
    if (!(target_accept > 0.0 && target_accept < 1.0))
        throw DataError("target acceptance must lie in (0, 1)");
    if (flagged)
        *flagged = false;

    double lo = -kBracket;
    double hi = kBracket;
    int expansions = 0;
    while (mean_acceptance(log_ratios, hi) < target_accept) {
        if (++expansions > kMaxExpansions) {
            if (flagged)
                *flagged = true;
            return hi;
        }
        lo = hi;
        hi *= 2.0;
    }
    expansions = 0;
    while (mean_acceptance(log_ratios, lo) > target_accept) {
        if (++expansions > kMaxExpansions) {
            if (flagged)
                *flagged = true;
            return lo;
        }
        hi = lo;
        lo *= 2.0;
    }
    for (int it = 0; it != 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double f = mean_acceptance(log_ratios, mid);
        if (std::abs(f - target_accept) <= kSolveTolerance)
            return mid;
        if (f < target_accept)
            lo = mid;
        else
            hi = mid;
        if (hi - lo < 1e-12)
            break;
    }
    return 0.5 * (lo + hi);
}

ThresholdState fit_tuple_thresholds(const VaeParams &model, const EncodedDataset &data, double target_accept,
                                    std::size_t mc_draws, std::uint64_t seed)
{
    if (mc_draws < 16)
        throw DataError("threshold fitting needs at least 16 draws per tuple");
    ThresholdState state;
    state.target_accept = target_accept;
    state.mc_draws = mc_draws;
    state.per_tuple.resize(data.num_rows);
    state.flagged.assign(data.num_rows, 0);

    Rng rng(seed);
    std::vector<double> ratios(mc_draws);
    for (std::size_t i = 0; i != data.num_rows; ++i) {
        const auto x = data.row(i);
        const auto post = posterior_params(model, x);
        for (auto &r : ratios) {
            const auto z = reparameterize(post, draw_eps(model.latent_dim, rng));
            const auto ld = log_densities(model, x, z, post);
            r = ld.log_joint - ld.log_posterior;
        }
        bool flag = false;
        state.per_tuple[i] = solve_threshold(ratios, target_accept, &flag);
        state.flagged[i] = flag ? 1 : 0;
    }
    if (!state.per_tuple.empty())
        state.global = global_threshold(state.per_tuple);
    return state;
}

double global_threshold(std::span<const double> per_tuple, double percentile)
{
    if (per_tuple.empty())
        throw DataError("no per-tuple thresholds to summarize");
    if (!(percentile > 0.0 && percentile <= 100.0))
        throw DataError("percentile must lie in (0, 100]");
    std::vector<double> sorted(per_tuple.begin(), per_tuple.end());
    std::sort(sorted.begin(), sorted.end());
    const auto n = static_cast<double>(sorted.size());
    auto rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * n - 1e-9));
    rank = std::clamp<std::size_t>(rank, 1, sorted.size());
    return sorted[rank - 1];
}

SeedReservoir make_reservoir(const VaeParams &model, const EncodedDataset &data, std::size_t capacity,
                             std::uint64_t seed)
{
    std::vector<std::size_t> all(data.num_rows);
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::vector<std::size_t> chosen;
    Rng rng(seed);
    std::sample(all.begin(), all.end(), std::back_inserter(chosen), std::min(capacity, data.num_rows), rng);
    std::vector<std::uint8_t> bits;
    bits.reserve(chosen.size() * data.dim());
    for (auto i : chosen) {
        const auto r = data.row(i);
        bits.insert(bits.end(), r.begin(), r.end());
    }
    return make_reservoir(model, std::move(bits), data.dim());
}

SeedReservoir make_reservoir(const VaeParams &model, std::vector<std::uint8_t> bits, std::size_t dim)
{
    if (dim != model.input_dim)
        throw DataError("reservoir dimension does not match the model input");
    SeedReservoir res;
    res.dim = dim;
    res.bits = std::move(bits);
    const auto n = dim == 0 ? 0 : res.bits.size() / dim;
    res.posteriors.reserve(n);
    for (std::size_t i = 0; i != n; ++i)
        res.posteriors.push_back(posterior_params(model, res.row(i)));
    return res;
}

LatentBatch rejection_sample_latents(const VaeParams &model, const SeedReservoir &reservoir, double threshold,
                                     std::size_t count, Rng &rng, std::size_t budget_factor)
{
    if (reservoir.size() == 0)
        throw DataError("rejection sampling needs a non-empty seed reservoir");
    LatentBatch batch;
    batch.latents.reserve(count);
    const std::size_t budget = budget_factor * count;
    std::uniform_int_distribution<std::size_t> pick(0, reservoir.size() - 1);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    while (batch.latents.size() < count) {
        if (batch.trials == budget) {
            batch.budget_exceeded = true;
            break;
        }
        ++batch.trials;
        const auto idx = pick(rng);
        const auto &post = reservoir.posteriors[idx];
        auto z = reparameterize(post, draw_eps(model.latent_dim, rng));
        const double u = unif(rng);
        double log_a = 0.0;
        if (threshold < kInfiniteThreshold) {
            const auto ld = log_densities(model, reservoir.row(idx), z, post);
            log_a = acceptance_log_probability(ld.log_joint - ld.log_posterior, threshold);
        }
        if (std::log(u) <= log_a)
            batch.latents.push_back(std::move(z));
    }
    return batch;
}

std::vector<std::vector<double>> prior_sample_latents(std::size_t latent_dim, std::size_t count, Rng &rng)
{
    std::vector<std::vector<double>> out;
    out.reserve(count);
    for (std::size_t i = 0; i != count; ++i)
        out.push_back(draw_eps(latent_dim, rng));
    return out;
}

std::vector<bool> accept_on_tape(const VaeParams &model, const SeedReservoir &reservoir, double threshold,
                                 std::size_t trials, std::uint64_t seed)
{
    if (reservoir.size() == 0)
        throw DataError("acceptance measurement needs a non-empty seed reservoir");
    Rng rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, reservoir.size() - 1);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<bool> out(trials);
    for (std::size_t t = 0; t != trials; ++t) {
        const auto idx = pick(rng);
        const auto &post = reservoir.posteriors[idx];
        const auto z = reparameterize(post, draw_eps(model.latent_dim, rng));
        const double u = unif(rng);
        const auto ld = log_densities(model, reservoir.row(idx), z, post);
        out[t] = std::log(u) <= acceptance_log_probability(ld.log_joint - ld.log_posterior, threshold);
    }
    return out;
}

double acceptance_rate(const VaeParams &model, const SeedReservoir &reservoir, double threshold, std::size_t trials,
                       std::uint64_t seed)
{
    if (trials == 0)
        return 0.0;
    const auto tape = accept_on_tape(model, reservoir, threshold, trials, seed);
    return static_cast<double>(std::count(tape.begin(), tape.end(), true)) / static_cast<double>(trials);
}

double tuple_acceptance_rate(const VaeParams &model, std::span<const std::uint8_t> x, double threshold,
                             std::size_t draws, Rng &rng)
{
    const auto post = posterior_params(model, x);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::size_t accepted = 0;
    for (std::size_t i = 0; i != draws; ++i) {
        const auto z = reparameterize(post, draw_eps(model.latent_dim, rng));
        const auto ld = log_densities(model, x, z, post);
        if (std::log(unif(rng)) <= acceptance_log_probability(ld.log_joint - ld.log_posterior, threshold))
            ++accepted;
    }
    return draws == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(draws);
}

std::vector<std::vector<double>> latent_projection(const VaeParams &model, const EncodedDataset &rows)
{
    std::vector<std::vector<double>> out;
    out.reserve(rows.num_rows);
    for (std::size_t i = 0; i != rows.num_rows; ++i)
        out.push_back(posterior_params(model, rows.row(i)).mu);
    return out;
}

CalibrationResult calibrate_threshold(const VaeParams &model, const EncodedDataset &dataset_sample,
                                      const SampleSource &source, const CalibrationConfig &cfg)
{
    if (dataset_sample.num_rows < 20)
        throw DataError("calibration needs at least 20 dataset tuples");
    const auto d_latents = latent_projection(model, dataset_sample);
    CalibrationResult result;
    double threshold = cfg.initial_threshold;
    for (int it = 0; it != cfg.max_iterations; ++it) {
        Rng rng(cfg.seed + static_cast<std::uint64_t>(it));
        auto sample = source(threshold, dataset_sample.num_rows, rng);
        if (sample.num_rows == 0)
            throw CertificationError("sample source produced no tuples at T = " + format_double(threshold));
        const auto m_latents = latent_projection(model, sample);
        const auto outcome = crossmatch_test(d_latents, m_latents, cfg.alpha, cfg.seed + static_cast<std::uint64_t>(it));
        result.trace.push_back({threshold, outcome});
        if (!outcome.reject) {
            result.threshold = threshold;
            result.sample = std::move(sample);
            return result;
        }
        threshold -= 1.0;
    }
    std::ostringstream msg;
    msg << "cross-match test still rejects after " << cfg.max_iterations << " iterations; p-values:";
    for (const auto &step : result.trace)
        msg << ' ' << format_double(step.outcome.p_value);
    throw CalibrationFailure(msg.str(), std::move(result.trace));
}

SampleSource reservoir_source(const VaeParams &model, const SeedReservoir &reservoir, const EncodingSpec &spec,
                              const Schema &, const DecodeConfig &decode)
{
    return [&model, &reservoir, spec, decode](double threshold, std::size_t count, Rng &rng) {
        const auto batch = rejection_sample_latents(model, reservoir, threshold, count, rng);
        return generate_encoded(model, batch.latents, decode, spec, rng);
    };
}

} // namespace gaqp
