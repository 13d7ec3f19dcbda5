#pragma once

#include "gaqp/model_io.hpp"
#include "gaqp/sample_gen.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace gaqp {

struct VaeTrainOptions
{
    EncodingMode encoding = EncodingMode::Binary;
    TrainConfig train;
    std::size_t reservoir_size = 4096;
    double target_accept = 0.9;
    std::size_t mc_draws = 256;
    double percentile = 90.0;
};

/// Encodes, trains, draws the seed reservoir and fits thresholds on the reservoir tuples.
VaeModel train_vae_model(const Relation &relation, const VaeTrainOptions &opts, std::vector<double> *epoch_elbo = nullptr);

/// Refits per-tuple thresholds on the reservoir and sets the global threshold.
void refit_thresholds(VaeModel &model, double target_accept, std::size_t mc_draws, double percentile,
                      std::uint64_t seed);

/// Certified threshold when present, otherwise the global one.
double auto_threshold(const VaeModel &model);

struct SampleReport
{
    std::size_t requested = 0;
    std::size_t produced = 0;
    std::size_t trials = 0;
    bool budget_exceeded = false;
    GenerationStats stats;
};

/// Rejection-samples `count` latents at T (auto when absent) and decodes them.
Relation sample_vae(const VaeModel &model, const Schema &schema, std::size_t count, std::optional<double> threshold,
                    const DecodeConfig &decode, SampleReport *report = nullptr);

/// Samples any artifact kind; ensembles split `count` across members by population share.
Relation sample_artifact(const ModelArtifact &model, std::size_t count, std::optional<double> threshold,
                         const DecodeConfig &decode, SampleReport *report = nullptr);

/// Largest-remainder split of `total` proportionally to `weights`.
std::vector<std::size_t> apportion(std::size_t total, std::span<const std::uint64_t> weights);

/// Concatenates relations sharing one schema.
Relation concat_relations(const Schema &schema, std::span<const Relation> parts);

} // namespace gaqp
