#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gaqp {

/// Every stored value is the zero-based index into its attribute's domain.
using Code = std::uint32_t;
using Tuple = std::vector<Code>;

enum class AttributeKind : std::uint8_t { Categorical = 0, Numeric = 1 };

struct AttributeSchema
{
    std::string name;
    AttributeKind kind = AttributeKind::Categorical;
    /// Categorical values in first-appearance order.
    std::vector<std::string> dictionary;
    /// Interior bin edges of a numeric attribute, strictly increasing. Bin `i` holds values in
    /// (edges[i-1], edges[i]]; the outer bins are closed by the observed minimum and maximum.
    std::vector<double> edges;
    double min_value = 0.0;
    double max_value = 0.0;
    /// Set when binning produced fewer bins than requested.
    bool bins_flagged = false;

    std::size_t domain_size() const;
    /// Bin index of a raw numeric value.
    Code bin_of(double value) const;
    /// Numeric value standing in for `code`: the bin midpoint for numeric attributes, the parsed
    /// dictionary entry for categorical ones (NaN when the entry is not a number).
    double representative(Code code) const;
    /// Text used when exporting `code` to CSV.
    std::string label(Code code) const;
    std::optional<Code> lookup(std::string_view text) const;
};

struct Schema
{
    std::vector<AttributeSchema> attributes;

    std::size_t size() const { return attributes.size(); }
    const AttributeSchema &operator[](std::size_t i) const { return attributes[i]; }
    std::optional<std::size_t> index_of(std::string_view name) const;
    /// Like index_of but throws SchemaError naming the attribute.
    std::size_t require(std::string_view name) const;
};

/// Column-major table of domain codes. Immutable after construction.
class Relation
{
public:
    Relation() = default;
    /// Validates every column against its attribute's domain.
    Relation(Schema schema, std::vector<std::vector<Code>> columns);

    static Relation from_rows(Schema schema, std::span<const Tuple> rows);

    const Schema &schema() const { return schema_; }
    std::size_t num_rows() const { return num_rows_; }
    std::size_t num_attributes() const { return schema_.size(); }
    const std::vector<Code> &column(std::size_t attr) const { return columns_[attr]; }
    Code at(std::size_t row, std::size_t attr) const { return columns_[attr][row]; }
    Tuple row(std::size_t i) const;

    /// Rows selected by index, in the given order (indices may repeat).
    Relation select_rows(std::span<const std::size_t> indices) const;

private:
    Schema schema_;
    std::vector<std::vector<Code>> columns_;
    std::size_t num_rows_ = 0;
};

/*----------------------------------------------------------------------------------------------------------------------
 * Ingestion
 *--------------------------------------------------------------------------------------------------------------------*/

struct ColumnConfig
{
    std::string name;
    AttributeKind kind = AttributeKind::Categorical;
    std::size_t bins = 0; ///< numeric only
};

struct SchemaConfig
{
    std::vector<ColumnConfig> columns;

    const ColumnConfig *find(std::string_view name) const;
    /// Parses `name=categorical` / `name=numeric:<bins>` lines; `#` starts a comment.
    static SchemaConfig parse(std::istream &in);
    static SchemaConfig load(const std::filesystem::path &path);
};

struct BinResult
{
    std::vector<double> edges;
    bool flagged = false;
};

/// Equal-frequency binning: edges are the linear-interpolation (i/k)-quantiles for i = 1..k-1.
/// Duplicate edges and edges at or above the maximum are dropped; `flagged` reports a shortfall.
BinResult bin_numeric(std::span<const double> values, std::size_t k);

/// Reads a CSV file with a header row. Columns not named in `config` are dropped.
Relation ingest_csv(const std::filesystem::path &path, const SchemaConfig &config);
Relation ingest_csv(std::istream &in, const SchemaConfig &config);
/// Reads a CSV file treating every column as categorical; used for exported samples.
Relation ingest_csv_categorical(const std::filesystem::path &path);

/// Builds a relation from already-split string cells.
Relation build_relation(const std::vector<std::string> &header, const std::vector<std::vector<std::string>> &rows,
                        const SchemaConfig &config, std::size_t first_line = 2);

/// Writes the relation as CSV; numeric attributes export their bin representative.
void write_csv(const Relation &relation, std::ostream &out);
void write_csv(const Relation &relation, const std::filesystem::path &path);

/// Splits one CSV record honouring double-quote escaping.
std::vector<std::string> split_csv_record(std::string_view line);
std::string format_double(double value);

/*----------------------------------------------------------------------------------------------------------------------
 * Encodings
 *--------------------------------------------------------------------------------------------------------------------*/

enum class EncodingMode : std::uint8_t { OneHot = 0, Binary = 1 };

std::string_view to_string(EncodingMode mode);
EncodingMode parse_encoding_mode(std::string_view text);

struct EncodingSpec
{
    EncodingMode mode = EncodingMode::Binary;
    std::vector<std::size_t> domain_sizes;
    std::vector<std::size_t> offsets;
    std::vector<std::size_t> widths;
    std::size_t dim = 0;

    static EncodingSpec make(const Schema &schema, EncodingMode mode);
    /// Bit width of one attribute under `mode`.
    static std::size_t width_for(std::size_t domain_size, EncodingMode mode);

    void encode(std::span<const Code> tuple, std::span<std::uint8_t> out) const;
};

/// Bit-valued n x d matrix in row-major order.
struct EncodedDataset
{
    EncodingSpec spec;
    std::size_t num_rows = 0;
    std::vector<std::uint8_t> bits;

    std::span<const std::uint8_t> row(std::size_t i) const { return {bits.data() + i * spec.dim, spec.dim}; }
    std::size_t dim() const { return spec.dim; }
};

EncodedDataset encode_dataset(const Relation &relation, EncodingMode mode);

struct DecodeStats
{
    std::size_t clamped = 0;    ///< binary slices decoding past the domain
    std::size_t degenerate = 0; ///< one-hot slices with no set bit
};

/// Inverse of the encoding. Total: out-of-domain binary slices clamp to the largest index and
/// one-hot slices pick the lowest set position (index 0 when none is set).
Tuple decode_vector(std::span<const std::uint8_t> bits, const EncodingSpec &spec, DecodeStats *stats = nullptr);

} // namespace gaqp
