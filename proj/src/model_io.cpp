#include "gaqp/model_io.hpp"

#include "gaqp/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <zlib.h>

namespace gaqp {

std::string_view to_string(ModelKind kind)
{
    switch (kind) {
    case ModelKind::Vae:
        return "vae";
    case ModelKind::Bn:
        return "bn";
    case ModelKind::Ensemble:
        return "ensemble";
    }
    return "?";
}

namespace {

class Writer
{
public:
    void u8(std::uint8_t v) { bytes.push_back(v); }
    void u32(std::uint32_t v)
    {
        for (int i = 0; i != 4; ++i)
            bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v)
    {
        for (int i = 0; i != 8; ++i)
            bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(const std::string &s)
    {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes.insert(bytes.end(), s.begin(), s.end());
    }
    void raw(std::string_view s) { bytes.insert(bytes.end(), s.begin(), s.end()); }
    std::size_t size() const { return bytes.size(); }

    std::vector<std::uint8_t> bytes;
};

class Reader
{
public:
    explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}

    std::uint8_t u8()
    {
        need(1);
        return bytes_[pos_++];
    }
    std::uint32_t u32()
    {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i != 4; ++i)
            v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
        return v;
    }
    std::uint64_t u64()
    {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i != 8; ++i)
            v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str()
    {
        const auto n = u32();
        need(n);
        std::string s(reinterpret_cast<const char *>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    /// Count prefix checked against the bytes left, assuming at least `unit` bytes per element.
    std::size_t count(std::uint64_t n, std::size_t unit)
    {
        if (unit != 0 && n > (bytes_.size() - pos_) / unit)
            throw IntegrityError("file is truncated or corrupt (bad element count)");
        return static_cast<std::size_t>(n);
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const
    {
        if (bytes_.size() - pos_ < n)
            throw IntegrityError("file is truncated");
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

std::uint32_t crc(std::span<const std::uint8_t> bytes)
{
    return static_cast<std::uint32_t>(
        crc32(crc32(0L, Z_NULL, 0), bytes.data(), static_cast<uInt>(bytes.size())));
}

void write_schema(Writer &w, const Schema &schema)
{
    w.u32(static_cast<std::uint32_t>(schema.size()));
    for (const auto &a : schema.attributes) {
        w.str(a.name);
        w.u8(static_cast<std::uint8_t>(a.kind));
        w.u32(static_cast<std::uint32_t>(a.dictionary.size()));
        for (const auto &d : a.dictionary)
            w.str(d);
        w.u32(static_cast<std::uint32_t>(a.edges.size()));
        for (double e : a.edges)
            w.f64(e);
        w.f64(a.min_value);
        w.f64(a.max_value);
        w.u8(a.bins_flagged ? 1 : 0);
    }
}

Schema read_schema(Reader &r)
{
    Schema schema;
    const auto n = r.count(r.u32(), 4);
    for (std::size_t i = 0; i != n; ++i) {
        AttributeSchema a;
        a.name = r.str();
        const auto kind = r.u8();
        if (kind > 1)
            throw IntegrityError("unknown attribute kind");
        a.kind = static_cast<AttributeKind>(kind);
        const auto nd = r.count(r.u32(), 4);
        for (std::size_t j = 0; j != nd; ++j)
            a.dictionary.push_back(r.str());
        const auto ne = r.count(r.u32(), 8);
        for (std::size_t j = 0; j != ne; ++j)
            a.edges.push_back(r.f64());
        a.min_value = r.f64();
        a.max_value = r.f64();
        a.bins_flagged = r.u8() != 0;
        if (a.domain_size() == 0)
            throw IntegrityError("attribute " + a.name + " has an empty domain");
        schema.attributes.push_back(std::move(a));
    }
    return schema;
}

void write_matrix(Writer &w, const Matrix &m)
{
    w.u32(static_cast<std::uint32_t>(m.rows));
    w.u32(static_cast<std::uint32_t>(m.cols));
    for (double v : m.data)
        w.f64(v);
}

Matrix read_matrix(Reader &r, std::size_t rows, std::size_t cols)
{
    const auto rr = r.u32();
    const auto cc = r.u32();
    if (rr != rows || cc != cols)
        throw IntegrityError("weight array dimensions do not match the declared model shape");
    Matrix m(rows, cols);
    r.count(static_cast<std::uint64_t>(rows) * cols, 8);
    for (auto &v : m.data)
        v = r.f64();
    return m;
}

/// Sections are recorded as (name, bytes written since the previous mark).
struct Sections
{
    SizeBreakdown *out;
    std::size_t last = 0;

    void mark(const std::string &name, const Writer &w)
    {
        if (out)
            out->emplace_back(name, w.size() - last);
        last = w.size();
    }
};

void write_vae(Writer &w, const VaeModel &m, Sections &sec, const std::string &prefix)
{
    const auto &p = m.params;
    w.u8(static_cast<std::uint8_t>(m.spec.mode));
    w.u32(static_cast<std::uint32_t>(p.input_dim));
    w.u32(static_cast<std::uint32_t>(p.hidden_dim));
    w.u32(static_cast<std::uint32_t>(p.latent_dim));
    for (const auto *t : p.tensors())
        write_matrix(w, *t);
    sec.mark(prefix + "weights", w);

    const auto &t = m.thresholds;
    w.f64(t.target_accept);
    w.u32(static_cast<std::uint32_t>(t.mc_draws));
    w.f64(t.global);
    w.u8(t.certified ? 1 : 0);
    w.f64(t.certified.value_or(0.0));
    w.u64(t.per_tuple.size());
    for (double v : t.per_tuple)
        w.f64(v);
    for (std::size_t i = 0; i != t.per_tuple.size(); ++i)
        w.u8(i < t.flagged.size() ? t.flagged[i] : 0);
    sec.mark(prefix + "thresholds", w);

    const auto &res = m.reservoir;
    w.u64(res.size());
    w.u32(static_cast<std::uint32_t>(res.dim));
    std::uint8_t acc = 0;
    std::size_t nbits = 0;
    for (auto b : res.bits) {
        acc |= static_cast<std::uint8_t>((b & 1) << (nbits % 8));
        if (++nbits % 8 == 0) {
            w.u8(acc);
            acc = 0;
        }
    }
    if (nbits % 8)
        w.u8(acc);
    sec.mark(prefix + "reservoir", w);
}

VaeModel read_vae(Reader &r, const Schema &schema)
{
    VaeModel m;
    const auto mode = r.u8();
    if (mode > 1)
        throw IntegrityError("unknown encoding mode");
    m.spec = EncodingSpec::make(schema, static_cast<EncodingMode>(mode));
    const auto d = r.u32();
    const auto h = r.u32();
    const auto dl = r.u32();
    if (d != m.spec.dim)
        throw IntegrityError("model input dimension does not match the schema encoding");
    auto &p = m.params;
    p = VaeParams::zeros(d, h, dl);
    for (auto *t : p.tensors())
        *t = read_matrix(r, t->rows, t->cols);

    auto &t = m.thresholds;
    t.target_accept = r.f64();
    t.mc_draws = r.u32();
    t.global = r.f64();
    const bool certified = r.u8() != 0;
    const double cert = r.f64();
    if (certified)
        t.certified = cert;
    const auto nt = r.count(r.u64(), 9);
    t.per_tuple.resize(nt);
    for (auto &v : t.per_tuple)
        v = r.f64();
    t.flagged.resize(nt);
    for (auto &f : t.flagged)
        f = r.u8();

    const auto nres = r.u64();
    const auto dim = r.u32();
    if (dim != d)
        throw IntegrityError("reservoir dimension does not match the model");
    const auto nbits = static_cast<std::uint64_t>(nres) * dim;
    r.count((nbits + 7) / 8, 1);
    std::vector<std::uint8_t> bits(static_cast<std::size_t>(nbits));
    std::uint8_t acc = 0;
    for (std::size_t i = 0; i != bits.size(); ++i) {
        if (i % 8 == 0)
            acc = r.u8();
        bits[i] = (acc >> (i % 8)) & 1;
    }
    m.reservoir = make_reservoir(m.params, std::move(bits), dim);
    return m;
}

void write_bn(Writer &w, const BayesNet &bn)
{
    w.u32(static_cast<std::uint32_t>(bn.size()));
    for (std::size_t v = 0; v != bn.size(); ++v) {
        const auto &cpt = bn.cpts[v];
        w.u32(static_cast<std::uint32_t>(bn.cards[v]));
        w.u32(static_cast<std::uint32_t>(cpt.parents.size()));
        for (auto p : cpt.parents)
            w.u32(static_cast<std::uint32_t>(p));
        w.u64(cpt.probs.size());
        for (double p : cpt.probs)
            w.f64(p);
    }
}

BayesNet read_bn(Reader &r, const Schema &schema)
{
    const auto n = r.u32();
    if (n != schema.size())
        throw IntegrityError("network size does not match the schema");
    std::vector<std::string> names;
    std::vector<std::size_t> cards;
    std::vector<Cpt> cpts(n);
    for (std::size_t v = 0; v != n; ++v) {
        names.push_back(schema[v].name);
        cards.push_back(r.u32());
        const auto np = r.count(r.u32(), 4);
        for (std::size_t i = 0; i != np; ++i)
            cpts[v].parents.push_back(r.u32());
        const auto nprob = r.count(r.u64(), 8);
        cpts[v].probs.resize(nprob);
        for (auto &p : cpts[v].probs)
            p = r.f64();
    }
    for (std::size_t v = 0; v != n; ++v) {
        cpts[v].card = cards[v];
        for (auto p : cpts[v].parents) {
            if (p >= n)
                throw IntegrityError("parent index out of range");
            cpts[v].parent_cards.push_back(cards[p]);
        }
    }
    try {
        return make_bayesnet(std::move(names), std::move(cards), std::move(cpts));
    } catch (const IntegrityError &) {
        throw;
    } catch (const DataError &e) {
        throw IntegrityError(std::string("invalid network: ") + e.what());
    }
}

void finish(Writer &w)
{
    w.u32(crc(w.bytes));
}

Reader open_checked(std::span<const std::uint8_t> bytes, std::string_view magic, std::span<const std::uint8_t> &body)
{
    if (bytes.size() < magic.size() + 8 || std::memcmp(bytes.data(), magic.data(), magic.size()) != 0)
        throw IntegrityError("not a " + std::string(magic) + " file (bad magic or truncated)");
    body = bytes.first(bytes.size() - 4);
    Reader tail(bytes.last(4));
    if (tail.u32() != crc(body))
        throw IntegrityError("checksum mismatch");
    Reader r(body);
    for (std::size_t i = 0; i != magic.size(); ++i)
        r.u8();
    const auto version = r.u32();
    if (version != kModelFormatVersion)
        throw IntegrityError("unsupported format version " + std::to_string(version));
    return r;
}

} // namespace

std::size_t schema_section_size(const Schema &schema)
{
    Writer w;
    write_schema(w, schema);
    return w.size();
}

std::vector<std::uint8_t> serialize_model(const ModelArtifact &model, SizeBreakdown *sizes)
{
    if (sizes)
        sizes->clear();
    Sections sec{sizes};
    Writer w;
    w.raw("GAQP");
    w.u32(kModelFormatVersion);
    w.u32(static_cast<std::uint32_t>(model.kind));
    sec.mark("header", w);
    write_schema(w, model.schema);
    w.u64(model.population_n);
    sec.mark("schema", w);
    switch (model.kind) {
    case ModelKind::Vae:
        if (!model.vae)
            throw DataError("VAE artifact has no model");
        write_vae(w, *model.vae, sec, "");
        break;
    case ModelKind::Bn:
        if (!model.bn)
            throw DataError("Bayesian network artifact has no model");
        write_bn(w, *model.bn);
        sec.mark("network", w);
        break;
    case ModelKind::Ensemble: {
        if (!model.ensemble)
            throw DataError("ensemble artifact has no model");
        const auto &e = *model.ensemble;
        w.u32(static_cast<std::uint32_t>(e.attribute));
        w.u32(static_cast<std::uint32_t>(e.members.size()));
        for (std::size_t k = 0; k != e.members.size(); ++k) {
            w.u32(static_cast<std::uint32_t>(e.part_codes[k].size()));
            for (auto c : e.part_codes[k])
                w.u32(c);
            w.u64(e.part_population[k]);
        }
        sec.mark("partition map", w);
        for (std::size_t k = 0; k != e.members.size(); ++k)
            write_vae(w, e.members[k], sec, "member " + std::to_string(k) + " ");
        break;
    }
    }
    finish(w);
    sec.mark("checksum", w);
    return std::move(w.bytes);
}

ModelArtifact deserialize_model(std::span<const std::uint8_t> bytes)
{
    std::span<const std::uint8_t> body;
    auto r = open_checked(bytes, "GAQP", body);
    ModelArtifact m;
    const auto kind = r.u32();
    if (kind > 2)
        throw IntegrityError("unknown model kind " + std::to_string(kind));
    m.kind = static_cast<ModelKind>(kind);
    m.schema = read_schema(r);
    m.population_n = r.u64();
    switch (m.kind) {
    case ModelKind::Vae:
        m.vae = read_vae(r, m.schema);
        break;
    case ModelKind::Bn:
        m.bn = read_bn(r, m.schema);
        break;
    case ModelKind::Ensemble: {
        EnsembleModel e;
        e.attribute = r.u32();
        if (e.attribute >= m.schema.size())
            throw IntegrityError("partition attribute out of range");
        const auto k = r.count(r.u32(), 12);
        for (std::size_t i = 0; i != k; ++i) {
            const auto nc = r.count(r.u32(), 4);
            std::vector<Code> codes(nc);
            for (auto &c : codes)
                c = r.u32();
            e.part_codes.push_back(std::move(codes));
            e.part_population.push_back(r.u64());
        }
        for (std::size_t i = 0; i != k; ++i)
            e.members.push_back(read_vae(r, m.schema));
        m.ensemble = std::move(e);
        break;
    }
    }
    if (!r.done())
        throw IntegrityError("trailing bytes after model payload");
    return m;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path &path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path &path, std::span<const std::uint8_t> bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error("cannot write " + path.string());
    out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw Error("write failed for " + path.string());
}

SizeBreakdown save_model(const ModelArtifact &model, const std::filesystem::path &path)
{
    SizeBreakdown sizes;
    write_file(path, serialize_model(model, &sizes));
    return sizes;
}

ModelArtifact load_model(const std::filesystem::path &path)
{
    return deserialize_model(read_file(path));
}

std::vector<std::uint8_t> serialize_relation(const Relation &relation)
{
    Writer w;
    w.raw("GREL");
    w.u32(kModelFormatVersion);
    write_schema(w, relation.schema());
    w.u64(relation.num_rows());
    for (std::size_t a = 0; a != relation.num_attributes(); ++a)
        for (auto c : relation.column(a))
            w.u32(c);
    finish(w);
    return std::move(w.bytes);
}

Relation deserialize_relation(std::span<const std::uint8_t> bytes)
{
    std::span<const std::uint8_t> body;
    auto r = open_checked(bytes, "GREL", body);
    auto schema = read_schema(r);
    const auto n = r.count(r.u64(), 4 * std::max<std::size_t>(1, schema.size()));
    std::vector<std::vector<Code>> columns(schema.size(), std::vector<Code>(n));
    for (auto &col : columns)
        for (auto &c : col)
            c = r.u32();
    if (!r.done())
        throw IntegrityError("trailing bytes after relation payload");
    try {
        return Relation(std::move(schema), std::move(columns));
    } catch (const IntegrityError &) {
        throw;
    } catch (const DataError &e) {
        throw IntegrityError(std::string("invalid relation file: ") + e.what());
    }
}

void save_relation(const Relation &relation, const std::filesystem::path &path)
{
    write_file(path, serialize_relation(relation));
}

Relation load_relation(const std::filesystem::path &path)
{
    return deserialize_relation(read_file(path));
}

} // namespace gaqp
