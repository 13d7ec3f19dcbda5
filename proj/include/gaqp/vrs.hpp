#pragma once

#include "gaqp/crossmatch.hpp"
#include "gaqp/error.hpp"
#include "gaqp/relation.hpp"
#include "gaqp/sample_gen.hpp"
#include "gaqp/vae.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace gaqp {

/// T at or above this value means "accept everything".
inline constexpr double kInfiniteThreshold = 1e9;

/// log a(z|x, e^-T) = min(0, log p(x,z) - log q(z|x) + T)
double acceptance_log_probability(double log_ratio, double threshold);
double acceptance_log_probability(const VaeParams &model, std::span<const std::uint8_t> x, std::span<const double> z,
                                  double threshold);

struct ThresholdState
{
    std::vector<double> per_tuple;
    std::vector<std::uint8_t> flagged; ///< 1 where bisection exhausted its bracket
    double target_accept = 0.9;
    std::size_t mc_draws = 256;
    double global = 0.0;
    std::optional<double> certified;
};

/// Solves mean_i exp(min(0, r_i + T)) = target by bisection; `flagged` reports bracket exhaustion.
double solve_threshold(std::span<const double> log_ratios, double target_accept, bool *flagged = nullptr);

/// Per-tuple Monte Carlo thresholds for every row of `data`. `global` is left at the 90th percentile.
ThresholdState fit_tuple_thresholds(const VaeParams &model, const EncodedDataset &data, double target_accept,
                                    std::size_t mc_draws, std::uint64_t seed);

/// Nearest-rank percentile of the per-tuple thresholds.
double global_threshold(std::span<const double> per_tuple, double percentile = 90.0);

/// Training tuples (bits) with their cached posterior parameters.
struct SeedReservoir
{
    std::size_t dim = 0;
    std::vector<std::uint8_t> bits;
    std::vector<PosteriorParams> posteriors;

    std::size_t size() const { return posteriors.size(); }
    std::span<const std::uint8_t> row(std::size_t i) const { return {bits.data() + i * dim, dim}; }
};

/// Uniformly chosen (without replacement) rows of `data`, at most `capacity`.
SeedReservoir make_reservoir(const VaeParams &model, const EncodedDataset &data, std::size_t capacity,
                             std::uint64_t seed);
/// Rebuilds the cached posteriors for stored reservoir bits.
SeedReservoir make_reservoir(const VaeParams &model, std::vector<std::uint8_t> bits, std::size_t dim);

struct LatentBatch
{
    std::vector<std::vector<double>> latents;
    std::size_t trials = 0;
    bool budget_exceeded = false;
};

/// Draws reservoir entries uniformly, proposes z ~ q(z|x) and accepts with probability a(z|x, e^-T) until
/// `count` latents are accepted or `budget_factor * count` trials are spent.
LatentBatch rejection_sample_latents(const VaeParams &model, const SeedReservoir &reservoir, double threshold,
                                     std::size_t count, Rng &rng, std::size_t budget_factor = 1000);

/// z ~ N(0, I); the fast path with no rejection.
std::vector<std::vector<double>> prior_sample_latents(std::size_t latent_dim, std::size_t count, Rng &rng);

/// Accept/reject outcomes of `trials` proposals drawn from a fixed random tape determined by `seed`.
std::vector<bool> accept_on_tape(const VaeParams &model, const SeedReservoir &reservoir, double threshold,
                                 std::size_t trials, std::uint64_t seed);
double acceptance_rate(const VaeParams &model, const SeedReservoir &reservoir, double threshold, std::size_t trials,
                       std::uint64_t seed);

/// Fraction of `draws` fresh proposals from q(z|x) accepted at threshold T.
double tuple_acceptance_rate(const VaeParams &model, std::span<const std::uint8_t> x, double threshold,
                             std::size_t draws, Rng &rng);

/// Projects each encoded row to its posterior mean.
std::vector<std::vector<double>> latent_projection(const VaeParams &model, const EncodedDataset &rows);

/// Produces `count` encoded model samples at threshold T.
using SampleSource = std::function<EncodedDataset(double threshold, std::size_t count, Rng &rng)>;

struct CalibrationConfig
{
    double initial_threshold = 0.0;
    double alpha = 0.05;
    int max_iterations = 50;
    std::uint64_t seed = 1;
};

struct CalibrationStep
{
    double threshold;
    CrossMatchOutcome outcome;
};

struct CalibrationResult
{
    double threshold = 0.0;
    EncodedDataset sample;
    std::vector<CalibrationStep> trace;
};

/// Generates |S_D| model samples at T, runs the cross-match test in latent space and lowers T by one on
/// rejection. Throws CalibrationFailure (carrying the trace) when the iteration cap is reached.
CalibrationResult calibrate_threshold(const VaeParams &model, const EncodedDataset &dataset_sample,
                                      const SampleSource &source, const CalibrationConfig &cfg);

/// Sample source backed by reservoir rejection sampling and multi-draw decoding. Keeps references to
/// `model` and `reservoir`.
SampleSource reservoir_source(const VaeParams &model, const SeedReservoir &reservoir, const EncodingSpec &spec,
                              const Schema &schema, const DecodeConfig &decode);

class CalibrationFailure : public CertificationError
{
public:
    CalibrationFailure(const std::string &what, std::vector<CalibrationStep> trace)
        : CertificationError(what)
        , trace(std::move(trace))
    {}

    std::vector<CalibrationStep> trace;
};

} // namespace gaqp
