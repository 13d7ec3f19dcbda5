#pragma once

#include "gaqp/bayesnet.hpp"
#include "gaqp/relation.hpp"
#include "gaqp/vae.hpp"
#include "gaqp/vrs.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace gaqp {

/// A trained VAE with everything sampling needs. Threshold state is fitted on the reservoir tuples.
struct VaeModel
{
    EncodingSpec spec;
    VaeParams params;
    ThresholdState thresholds;
    SeedReservoir reservoir;
};

/// K sub-models, each owning the tuples whose partition attribute falls in its code set.
struct EnsembleModel
{
    std::size_t attribute = 0;
    std::vector<std::vector<Code>> part_codes;
    std::vector<std::uint64_t> part_population;
    std::vector<VaeModel> members;
};

enum class ModelKind : std::uint32_t { Vae = 0, Bn = 1, Ensemble = 2 };

std::string_view to_string(ModelKind kind);

struct ModelArtifact
{
    ModelKind kind = ModelKind::Vae;
    Schema schema;
    std::uint64_t population_n = 0;
    std::optional<VaeModel> vae;
    std::optional<BayesNet> bn;
    std::optional<EnsembleModel> ensemble;
};

inline constexpr std::uint32_t kModelFormatVersion = 1;

/// Byte counts per section of a serialized artifact, in file order.
using SizeBreakdown = std::vector<std::pair<std::string, std::size_t>>;

std::vector<std::uint8_t> serialize_model(const ModelArtifact &model, SizeBreakdown *sizes = nullptr);
/// Throws IntegrityError on bad magic, unknown version, checksum mismatch or truncation.
ModelArtifact deserialize_model(std::span<const std::uint8_t> bytes);

SizeBreakdown save_model(const ModelArtifact &model, const std::filesystem::path &path);
ModelArtifact load_model(const std::filesystem::path &path);

/// Binary relation file ("GREL"): schema, row count, code columns, checksum.
std::vector<std::uint8_t> serialize_relation(const Relation &relation);
Relation deserialize_relation(std::span<const std::uint8_t> bytes);
void save_relation(const Relation &relation, const std::filesystem::path &path);
Relation load_relation(const std::filesystem::path &path);

std::vector<std::uint8_t> read_file(const std::filesystem::path &path);
void write_file(const std::filesystem::path &path, std::span<const std::uint8_t> bytes);

/// Bytes taken by the schema section of `schema`.
std::size_t schema_section_size(const Schema &schema);

} // namespace gaqp
