#pragma once

#include "gaqp/relation.hpp"
#include "gaqp/vae.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace gaqp {

enum class Aggregation : std::uint8_t { Mode = 0, Weighted = 1 };

std::string_view to_string(Aggregation agg);
Aggregation parse_aggregation(std::string_view text);

struct DecodeConfig
{
    std::size_t draws_per_latent = 8;
    Aggregation aggregation = Aggregation::Mode;
    std::uint64_t seed = 1;
};

struct GenerationStats
{
    std::size_t draw_clamps = 0;   ///< out-of-domain slices over all J draws
    std::size_t output_clamps = 0; ///< out-of-domain slices among the aggregated outputs
    std::size_t degenerate = 0;    ///< one-hot output slices with no set bit
    std::size_t slices = 0;        ///< attribute slices in the output
};

struct GeneratedRelation
{
    Relation relation;
    GenerationStats stats;
};

/// Raw value of one attribute slice before clamping: the binary integer, or the lowest set one-hot
/// position (the slice width when no bit is set).
std::size_t raw_slice_value(std::span<const std::uint8_t> bits, const EncodingSpec &spec, std::size_t attr);

/// Draws J bit vectors per latent from the decoder and aggregates each attribute's J values.
GeneratedRelation generate_relation(const VaeParams &model, std::span<const std::vector<double>> latents,
                                    const DecodeConfig &cfg, const EncodingSpec &spec, const Schema &schema);

/// Same as generate_relation but returns the encoded tuples, used by the certification loop.
EncodedDataset generate_encoded(const VaeParams &model, std::span<const std::vector<double>> latents,
                                const DecodeConfig &cfg, const EncodingSpec &spec, Rng &rng,
                                GenerationStats *stats = nullptr);

} // namespace gaqp
