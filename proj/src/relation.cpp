#include "gaqp/relation.hpp"

#include "gaqp/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <unordered_map>

namespace gaqp {

namespace {

std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r'))
        s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
        s.remove_suffix(1);
    return s;
}

std::optional<double> parse_double(std::string_view s)
{
    s = trim(s);
    if (s.empty())
        return std::nullopt;
    if (s.front() == '+')
        s.remove_prefix(1);
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        return std::nullopt;
    return value;
}

bool needs_quoting(std::string_view s)
{
    return s.find_first_of(",\"\n\r") != std::string_view::npos;
}

void write_cell(std::ostream &out, std::string_view s)
{
    if (!needs_quoting(s)) {
        out << s;
        return;
    }
    out << '"';
    for (char c : s) {
        if (c == '"')
            out << '"';
        out << c;
    }
    out << '"';
}

/// Reads one logical CSV record, joining physical lines while a quoted field is open.
bool read_record(std::istream &in, std::string &record, std::size_t &line_no)
{
    record.clear();
    std::string line;
    bool open = false;
    bool any = false;
    while (std::getline(in, line)) {
        ++line_no;
        any = true;
        if (!record.empty() || open)
            record.push_back('\n');
        record += line;
        for (char c : line)
            if (c == '"')
                open = !open;
        if (!open)
            break;
    }
    if (!record.empty() && record.back() == '\r')
        record.pop_back();
    return any;
}

} // namespace

/*======================================================================================================================
 * AttributeSchema / Schema
 *====================================================================================================================*/

std::size_t AttributeSchema::domain_size() const
{
    return kind == AttributeKind::Categorical ? dictionary.size() : edges.size() + 1;
}

Code AttributeSchema::bin_of(double value) const
{
    return static_cast<Code>(std::lower_bound(edges.begin(), edges.end(), value) - edges.begin());
}

double AttributeSchema::representative(Code code) const
{
    if (kind == AttributeKind::Categorical)
        return parse_double(dictionary.at(code)).value_or(std::numeric_limits<double>::quiet_NaN());
    const double lo = code == 0 ? min_value : edges.at(code - 1);
    const double hi = code == edges.size() ? max_value : edges.at(code);
    return 0.5 * (lo + hi);
}

std::string AttributeSchema::label(Code code) const
{
    if (kind == AttributeKind::Categorical)
        return dictionary.at(code);
    return format_double(representative(code));
}

std::optional<Code> AttributeSchema::lookup(std::string_view text) const
{
    if (kind == AttributeKind::Categorical) {
        auto it = std::find(dictionary.begin(), dictionary.end(), text);
        if (it != dictionary.end())
            return static_cast<Code>(it - dictionary.begin());
        return std::nullopt;
    }
    auto v = parse_double(text);
    if (!v)
        return std::nullopt;
    return bin_of(*v);
}

std::optional<std::size_t> Schema::index_of(std::string_view name) const
{
    for (std::size_t i = 0; i != attributes.size(); ++i)
        if (attributes[i].name == name)
            return i;
    return std::nullopt;
}

std::size_t Schema::require(std::string_view name) const
{
    if (auto i = index_of(name))
        return *i;
    throw SchemaError("unknown attribute '" + std::string(name) + "'");
}

/*======================================================================================================================
 * Relation
 *====================================================================================================================*/

Relation::Relation(Schema schema, std::vector<std::vector<Code>> columns)
    : schema_(std::move(schema))
    , columns_(std::move(columns))
{
    if (columns_.size() != schema_.size())
        throw SchemaError("relation has " + std::to_string(columns_.size()) + " columns but schema has " +
                          std::to_string(schema_.size()) + " attributes");
    num_rows_ = columns_.empty() ? 0 : columns_.front().size();
    for (std::size_t a = 0; a != columns_.size(); ++a) {
        const auto &attr = schema_[a];
        if (attr.domain_size() == 0 && num_rows_ > 0)
            throw SchemaError("attribute '" + attr.name + "' has an empty domain");
        if (columns_[a].size() != num_rows_)
            throw SchemaError("column '" + attr.name + "' has a different row count");
        const auto dom = attr.domain_size();
        for (std::size_t r = 0; r != num_rows_; ++r)
            if (columns_[a][r] >= dom)
                throw DataError("value outside the domain of '" + attr.name + "' in row " + std::to_string(r));
    }
}

Relation Relation::from_rows(Schema schema, std::span<const Tuple> rows)
{
    std::vector<std::vector<Code>> columns(schema.size());
    for (auto &c : columns)
        c.reserve(rows.size());
    for (std::size_t r = 0; r != rows.size(); ++r) {
        if (rows[r].size() != schema.size())
            throw SchemaError("row " + std::to_string(r) + " has " + std::to_string(rows[r].size()) + " values");
        for (std::size_t a = 0; a != schema.size(); ++a)
            columns[a].push_back(rows[r][a]);
    }
    return Relation(std::move(schema), std::move(columns));
}

Tuple Relation::row(std::size_t i) const
{
    Tuple t(columns_.size());
    for (std::size_t a = 0; a != columns_.size(); ++a)
        t[a] = columns_[a][i];
    return t;
}

Relation Relation::select_rows(std::span<const std::size_t> indices) const
{
    std::vector<std::vector<Code>> columns(columns_.size());
    for (std::size_t a = 0; a != columns_.size(); ++a) {
        columns[a].reserve(indices.size());
        for (auto i : indices)
            columns[a].push_back(columns_[a].at(i));
    }
    return Relation(schema_, std::move(columns));
}

/*======================================================================================================================
 * Ingestion
 *====================================================================================================================*/

const ColumnConfig *SchemaConfig::find(std::string_view name) const
{
    for (const auto &c : columns)
        if (c.name == name)
            return &c;
    return nullptr;
}

SchemaConfig SchemaConfig::parse(std::istream &in)
{
    SchemaConfig config;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string_view view = line;
        if (auto hash = view.find('#'); hash != std::string_view::npos)
            view = view.substr(0, hash);
        view = trim(view);
        if (view.empty())
            continue;
        const auto eq = view.find('=');
        if (eq == std::string_view::npos)
            throw SchemaError("schema config line " + std::to_string(line_no) + ": expected name=kind");
        ColumnConfig col;
        col.name = std::string(trim(view.substr(0, eq)));
        const auto kind = trim(view.substr(eq + 1));
        if (kind == "categorical") {
            col.kind = AttributeKind::Categorical;
        } else if (kind.starts_with("numeric:")) {
            col.kind = AttributeKind::Numeric;
            auto bins = parse_double(kind.substr(8));
            if (!bins || *bins < 1 || *bins != std::floor(*bins))
                throw SchemaError("schema config line " + std::to_string(line_no) + ": bad bin count");
            col.bins = static_cast<std::size_t>(*bins);
        } else {
            throw SchemaError("schema config line " + std::to_string(line_no) + ": unknown kind '" +
                              std::string(kind) + "'");
        }
        if (col.name.empty() || config.find(col.name))
            throw SchemaError("schema config line " + std::to_string(line_no) + ": empty or duplicate column");
        config.columns.push_back(std::move(col));
    }
    return config;
}

SchemaConfig SchemaConfig::load(const std::filesystem::path &path)
{
    std::ifstream in(path);
    if (!in)
        throw SchemaError("cannot open schema config " + path.string());
    return parse(in);
}

BinResult bin_numeric(std::span<const double> values, std::size_t k)
{
    if (k == 0)
        throw std::invalid_argument("bin count must be at least 1");
    if (values.empty())
        throw std::invalid_argument("cannot bin an empty column");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const double max = sorted.back();
    const auto n = sorted.size();

    BinResult result;
    for (std::size_t i = 1; i < k; ++i) {
        const double h = static_cast<double>(n - 1) * static_cast<double>(i) / static_cast<double>(k);
        const auto lo = static_cast<std::size_t>(std::floor(h));
        const auto hi = std::min(lo + 1, n - 1);
        const double q = sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
        if (q >= max)
            continue;
        if (!result.edges.empty() && q <= result.edges.back())
            continue;
        result.edges.push_back(q);
    }
    result.flagged = result.edges.size() + 1 < k;
    return result;
}

std::vector<std::string> split_csv_record(std::string_view line)
{
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cell.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cell.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            cells.push_back(std::move(cell));
            cell.clear();
        } else {
            cell.push_back(c);
        }
    }
    cells.push_back(std::move(cell));
    return cells;
}

Relation build_relation(const std::vector<std::string> &header, const std::vector<std::vector<std::string>> &rows,
                        const SchemaConfig &config, std::size_t first_line)
{
    for (const auto &c : config.columns)
        if (std::find(header.begin(), header.end(), c.name) == header.end())
            throw SchemaError("column '" + c.name + "' named in the schema config is missing from the header");

    std::vector<std::size_t> source;
    Schema schema;
    for (std::size_t i = 0; i != header.size(); ++i) {
        const auto *cfg = config.find(header[i]);
        if (!cfg)
            continue;
        source.push_back(i);
        AttributeSchema attr;
        attr.name = cfg->name;
        attr.kind = cfg->kind;
        schema.attributes.push_back(std::move(attr));
    }

    std::vector<std::vector<Code>> columns(schema.size());
    for (std::size_t a = 0; a != schema.size(); ++a) {
        auto &attr = schema.attributes[a];
        const auto col = source[a];
        auto &codes = columns[a];
        codes.reserve(rows.size());
        if (attr.kind == AttributeKind::Categorical) {
            std::unordered_map<std::string, Code> index;
            for (std::size_t r = 0; r != rows.size(); ++r) {
                const auto &cell = rows[r].at(col);
                auto [it, inserted] = index.try_emplace(cell, static_cast<Code>(attr.dictionary.size()));
                if (inserted)
                    attr.dictionary.push_back(cell);
                codes.push_back(it->second);
            }
        } else {
            std::vector<double> values;
            values.reserve(rows.size());
            for (std::size_t r = 0; r != rows.size(); ++r) {
                auto v = parse_double(rows[r].at(col));
                if (!v || !std::isfinite(*v))
                    throw DataError("line " + std::to_string(first_line + r) + ": cannot parse numeric value '" +
                                    rows[r][col] + "' in column '" + attr.name + "'");
                values.push_back(*v);
            }
            if (!values.empty()) {
                auto bins = bin_numeric(values, config.find(attr.name)->bins);
                attr.edges = std::move(bins.edges);
                attr.bins_flagged = bins.flagged;
                auto [mn, mx] = std::minmax_element(values.begin(), values.end());
                attr.min_value = *mn;
                attr.max_value = *mx;
                for (double v : values)
                    codes.push_back(attr.bin_of(v));
            }
        }
    }
    return Relation(std::move(schema), std::move(columns));
}

Relation ingest_csv(std::istream &in, const SchemaConfig &config)
{
    std::string record;
    std::size_t line_no = 0;
    if (!read_record(in, record, line_no))
        throw SchemaError("CSV input has no header row");
    auto header = split_csv_record(record);
    for (auto &h : header)
        h = std::string(trim(h));

    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> lines;
    while (true) {
        const auto start = line_no + 1;
        if (!read_record(in, record, line_no))
            break;
        if (trim(record).empty())
            continue;
        auto cells = split_csv_record(record);
        if (cells.size() != header.size())
            throw DataError("line " + std::to_string(start) + ": expected " + std::to_string(header.size()) +
                            " fields, found " + std::to_string(cells.size()));
        rows.push_back(std::move(cells));
        lines.push_back(start);
    }
    try {
        return build_relation(header, rows, config);
    } catch (const SchemaError &) {
        throw;
    } catch (const DataError &e) {
        // build_relation numbers rows assuming no blank lines; translate through the recorded line numbers
        std::string msg = e.what();
        if (msg.starts_with("line ")) {
            const auto colon = msg.find(':');
            const auto idx = std::stoul(msg.substr(5, colon - 5)) - 2;
            if (idx < lines.size())
                msg = "line " + std::to_string(lines[idx]) + msg.substr(colon);
        }
        throw DataError(msg);
    }
}

Relation ingest_csv(const std::filesystem::path &path, const SchemaConfig &config)
{
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open " + path.string());
    return ingest_csv(in, config);
}

Relation ingest_csv_categorical(const std::filesystem::path &path)
{
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open " + path.string());
    std::string header_line;
    std::size_t line_no = 0;
    if (!read_record(in, header_line, line_no))
        throw SchemaError("CSV input has no header row");
    SchemaConfig config;
    for (auto &h : split_csv_record(header_line))
        config.columns.push_back({std::string(trim(h)), AttributeKind::Categorical, 0});
    in.clear();
    in.seekg(0);
    return ingest_csv(in, config);
}

std::string format_double(double value)
{
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, ptr);
}

void write_csv(const Relation &relation, std::ostream &out)
{
    const auto &schema = relation.schema();
    for (std::size_t a = 0; a != schema.size(); ++a) {
        if (a)
            out << ',';
        write_cell(out, schema[a].name);
    }
    out << '\n';
    std::vector<std::vector<std::string>> labels(schema.size());
    for (std::size_t a = 0; a != schema.size(); ++a)
        for (std::size_t c = 0; c != schema[a].domain_size(); ++c)
            labels[a].push_back(schema[a].label(static_cast<Code>(c)));
    for (std::size_t r = 0; r != relation.num_rows(); ++r) {
        for (std::size_t a = 0; a != schema.size(); ++a) {
            if (a)
                out << ',';
            write_cell(out, labels[a][relation.at(r, a)]);
        }
        out << '\n';
    }
}

void write_csv(const Relation &relation, const std::filesystem::path &path)
{
    std::ofstream out(path);
    if (!out)
        throw DataError("cannot write " + path.string());
    write_csv(relation, out);
}

/*======================================================================================================================
 * Encodings
 *====================================================================================================================*/

std::string_view to_string(EncodingMode mode)
{
    return mode == EncodingMode::OneHot ? "onehot" : "binary";
}

EncodingMode parse_encoding_mode(std::string_view text)
{
    if (text == "onehot" || text == "one-hot")
        return EncodingMode::OneHot;
    if (text == "binary")
        return EncodingMode::Binary;
    throw std::invalid_argument("unknown encoding '" + std::string(text) + "'");
}

std::size_t EncodingSpec::width_for(std::size_t domain_size, EncodingMode mode)
{
    if (mode == EncodingMode::OneHot)
        return domain_size;
    std::size_t width = 0;
    while ((std::size_t{1} << width) < domain_size)
        ++width;
    return std::max<std::size_t>(width, 1);
}

EncodingSpec EncodingSpec::make(const Schema &schema, EncodingMode mode)
{
    EncodingSpec spec;
    spec.mode = mode;
    for (const auto &attr : schema.attributes) {
        const auto dom = attr.domain_size();
        spec.domain_sizes.push_back(dom);
        spec.offsets.push_back(spec.dim);
        spec.widths.push_back(width_for(dom, mode));
        spec.dim += spec.widths.back();
    }
    return spec;
}

void EncodingSpec::encode(std::span<const Code> tuple, std::span<std::uint8_t> out) const
{
    std::fill(out.begin(), out.end(), std::uint8_t{0});
    for (std::size_t a = 0; a != tuple.size(); ++a) {
        const auto code = tuple[a];
        if (code >= domain_sizes[a])
            throw DataError("value " + std::to_string(code) + " outside the domain of attribute " + std::to_string(a));
        auto slice = out.subspan(offsets[a], widths[a]);
        if (mode == EncodingMode::OneHot) {
            slice[code] = 1;
        } else {
            // most significant bit first
            for (std::size_t b = 0; b != widths[a]; ++b)
                slice[b] = static_cast<std::uint8_t>((code >> (widths[a] - 1 - b)) & 1u);
        }
    }
}

EncodedDataset encode_dataset(const Relation &relation, EncodingMode mode)
{
    EncodedDataset data;
    data.spec = EncodingSpec::make(relation.schema(), mode);
    data.num_rows = relation.num_rows();
    data.bits.assign(data.num_rows * data.spec.dim, 0);
    Tuple t(relation.num_attributes());
    for (std::size_t r = 0; r != data.num_rows; ++r) {
        for (std::size_t a = 0; a != t.size(); ++a) {
            t[a] = relation.at(r, a);
            if (t[a] >= data.spec.domain_sizes[a])
                throw DataError("row " + std::to_string(r) + ": value outside the domain of attribute '" +
                                relation.schema()[a].name + "'");
        }
        data.spec.encode(t, {data.bits.data() + r * data.spec.dim, data.spec.dim});
    }
    return data;
}

Tuple decode_vector(std::span<const std::uint8_t> bits, const EncodingSpec &spec, DecodeStats *stats)
{
    Tuple t(spec.domain_sizes.size());
    for (std::size_t a = 0; a != t.size(); ++a) {
        auto slice = bits.subspan(spec.offsets[a], spec.widths[a]);
        const auto dom = spec.domain_sizes[a];
        if (spec.mode == EncodingMode::OneHot) {
            auto it = std::find_if(slice.begin(), slice.end(), [](auto b) { return b != 0; });
            if (it == slice.end()) {
                t[a] = 0;
                if (stats)
                    ++stats->degenerate;
            } else {
                t[a] = static_cast<Code>(it - slice.begin());
            }
        } else {
            std::size_t value = 0;
            for (auto b : slice)
                value = (value << 1) | (b ? 1u : 0u);
            if (value >= dom) {
                value = dom - 1;
                if (stats)
                    ++stats->clamped;
            }
            t[a] = static_cast<Code>(value);
        }
    }
    return t;
}

} // namespace gaqp
