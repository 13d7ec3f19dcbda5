#pragma once

#include "gaqp/relation.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace gaqp {

/// Seeded correlated trip-like data: a hidden cluster drives region, hour, carrier, distance, fare and
/// passengers.
struct SynthConfig
{
    std::size_t rows = 50000;
    std::size_t clusters = 8;
    std::size_t numeric_bins = 16;
    std::uint64_t seed = 7;
};

struct SynthData
{
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> cells;
    SchemaConfig config;
    std::string config_text;
};

SynthData make_synthetic(const SynthConfig &cfg);
Relation synthetic_relation(const SynthConfig &cfg);

} // namespace gaqp
