#include "fixtures.hpp"

#include "gaqp/error.hpp"
#include "gaqp/model_io.hpp"
#include "gaqp/pipeline.hpp"
#include "gaqp/synth.hpp"

#include <doctest.h>

#include <filesystem>
#include <numeric>

using namespace gaqp;

namespace {

// Bitwise reflected CRC-32 (polynomial 0xEDB88320), independent of zlib.
std::uint32_t crc32_bitwise(std::span<const std::uint8_t> bytes)
{
    std::uint32_t c = 0xFFFFFFFFu;
    for (auto b : bytes) {
        c ^= b;
        for (int k = 0; k < 8; ++k)
            c = (c >> 1) ^ (0xEDB88320u & (0u - (c & 1u)));
    }
    return ~c;
}

std::uint32_t le32(std::span<const std::uint8_t> b, std::size_t at)
{
    return b[at] | (b[at + 1] << 8) | (b[at + 2] << 16) | (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

std::uint64_t le64(std::span<const std::uint8_t> b, std::size_t at)
{
    return le32(b, at) | (static_cast<std::uint64_t>(le32(b, at + 4)) << 32);
}

const Relation &small_relation()
{
    static const Relation rel = [] {
        SynthConfig cfg;
        cfg.rows = 600;
        cfg.numeric_bins = 8;
        return synthetic_relation(cfg);
    }();
    return rel;
}

VaeModel small_vae()
{
    VaeTrainOptions opts;
    opts.train.epochs = 2;
    opts.train.hidden_dim = 16;
    opts.reservoir_size = 200;
    opts.mc_draws = 32;
    return train_vae_model(small_relation(), opts);
}

ModelArtifact vae_artifact()
{
    ModelArtifact m;
    m.kind = ModelKind::Vae;
    m.schema = small_relation().schema();
    m.population_n = small_relation().num_rows();
    m.vae = small_vae();
    m.vae->thresholds.certified = -1.5;
    return m;
}

void check_same_vae(const VaeModel &a, const VaeModel &b)
{
    CHECK(a.spec.mode == b.spec.mode);
    CHECK(a.spec.dim == b.spec.dim);
    CHECK(a.params == b.params);
    CHECK(a.thresholds.per_tuple == b.thresholds.per_tuple);
    CHECK(a.thresholds.flagged == b.thresholds.flagged);
    CHECK(a.thresholds.global == b.thresholds.global);
    CHECK(a.thresholds.certified == b.thresholds.certified);
    CHECK(a.thresholds.mc_draws == b.thresholds.mc_draws);
    CHECK(a.reservoir.bits == b.reservoir.bits);
    REQUIRE(a.reservoir.size() == b.reservoir.size());
    for (std::size_t i = 0; i < a.reservoir.size(); ++i) {
        CHECK(a.reservoir.posteriors[i].mu == b.reservoir.posteriors[i].mu);
        CHECK(a.reservoir.posteriors[i].log_var == b.reservoir.posteriors[i].log_var);
    }
}

void check_same_schema(const Schema &a, const Schema &b)
{
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].name == b[i].name);
        CHECK(a[i].kind == b[i].kind);
        CHECK(a[i].dictionary == b[i].dictionary);
        CHECK(a[i].edges == b[i].edges);
        CHECK(a[i].min_value == b[i].min_value);
        CHECK(a[i].max_value == b[i].max_value);
    }
}

} // namespace

TEST_CASE("VAE artifact round trip")
{
    const auto m = vae_artifact();
    SizeBreakdown sizes;
    const auto bytes = serialize_model(m, &sizes);
    const auto back = deserialize_model(bytes);
    CHECK(back.kind == ModelKind::Vae);
    CHECK(back.population_n == m.population_n);
    check_same_schema(back.schema, m.schema);
    REQUIRE(back.vae);
    check_same_vae(*back.vae, *m.vae);
    CHECK(serialize_model(back) == bytes);

    std::size_t total = 0;
    for (const auto &[name, n] : sizes)
        total += n;
    CHECK(total == bytes.size());
    CHECK(sizes.front().first == "header");
    CHECK(sizes.front().second == 12);
    CHECK(sizes.back().first == "checksum");
    CHECK(sizes.back().second == 4);
    CHECK(sizes[1].second == schema_section_size(m.schema) + 8);
}

TEST_CASE("BN and ensemble artifacts round trip")
{
    ModelArtifact bn;
    bn.kind = ModelKind::Bn;
    bn.schema = fixture::binary_schema({"A1", "A2", "A3"});
    bn.population_n = 42;
    bn.bn = fixture::example_network();
    const auto bn_back = deserialize_model(serialize_model(bn));
    REQUIRE(bn_back.bn);
    CHECK(*bn_back.bn == *bn.bn);

    ModelArtifact ens;
    ens.kind = ModelKind::Ensemble;
    ens.schema = small_relation().schema();
    ens.population_n = 600;
    EnsembleModel e;
    e.attribute = 0;
    e.part_codes = {{0, 1, 2}, {3, 4, 5, 6, 7}};
    e.part_population = {250, 350};
    e.members = {small_vae(), small_vae()};
    ens.ensemble = e;
    SizeBreakdown sizes;
    const auto bytes = serialize_model(ens, &sizes);
    const auto back = deserialize_model(bytes);
    REQUIRE(back.ensemble);
    CHECK(back.ensemble->attribute == 0);
    CHECK(back.ensemble->part_codes == e.part_codes);
    CHECK(back.ensemble->part_population == e.part_population);
    REQUIRE(back.ensemble->members.size() == 2);
    for (int k = 0; k < 2; ++k)
        check_same_vae(back.ensemble->members[k], e.members[k]);
    std::size_t total = 0;
    for (const auto &[name, n] : sizes)
        total += n;
    CHECK(total == bytes.size());
}

TEST_CASE("integrity errors")
{
    const auto bytes = serialize_model(vae_artifact());

    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(deserialize_model(bad_magic), IntegrityError);

    // flip one payload bit in every region of the file
    for (std::size_t at : {std::size_t{5}, std::size_t{40}, bytes.size() / 2, bytes.size() - 5}) {
        auto flipped = bytes;
        flipped[at] ^= 0x10;
        CHECK_THROWS_AS(deserialize_model(flipped), IntegrityError);
    }

    for (std::size_t len : {std::size_t{0}, std::size_t{3}, std::size_t{11}, bytes.size() / 3, bytes.size() - 1}) {
        std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(len));
        CHECK_THROWS_AS(deserialize_model(cut), IntegrityError);
    }

    // a valid checksum over a wrong version still fails
    auto versioned = bytes;
    versioned[4] = 9;
    const auto body = std::span<const std::uint8_t>(versioned).first(versioned.size() - 4);
    const auto c = crc32_bitwise(body);
    for (int i = 0; i < 4; ++i)
        versioned[versioned.size() - 4 + i] = static_cast<std::uint8_t>(c >> (8 * i));
    CHECK_THROWS_WITH_AS(deserialize_model(versioned), doctest::Contains("version"), IntegrityError);
}

TEST_CASE("relation file layout is little-endian with a trailing CRC-32")
{
    Schema s;
    s.attributes.push_back({"k", AttributeKind::Categorical, {"a", "b"}});
    const auto rel = Relation::from_rows(s, std::vector<Tuple>{{1}, {0}, {1}});
    const auto b = serialize_relation(rel);
    const std::span<const std::uint8_t> bytes(b);

    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "GREL");
    CHECK(le32(bytes, 4) == 1);  // version
    CHECK(le32(bytes, 8) == 1);  // attribute count
    CHECK(le32(bytes, 12) == 1); // name length
    CHECK(bytes[16] == 'k');
    CHECK(bytes[17] == 0);       // categorical
    CHECK(le32(bytes, 18) == 2); // dictionary size
    std::size_t at = 22 + (4 + 1) * 2;
    CHECK(le32(bytes, at) == 0); // no edges
    at += 4 + 8 + 8 + 1;
    CHECK(le64(bytes, at) == 3);
    at += 8;
    CHECK(le32(bytes, at) == 1);
    CHECK(le32(bytes, at + 4) == 0);
    CHECK(le32(bytes, at + 8) == 1);
    at += 12;
    REQUIRE(bytes.size() == at + 4);
    CHECK(le32(bytes, at) == crc32_bitwise(bytes.first(at)));

    const auto back = deserialize_relation(b);
    CHECK(back.column(0) == rel.column(0));
    auto bad = b;
    bad[at - 1] = 7;
    CHECK_THROWS_AS(deserialize_relation(bad), IntegrityError);
}

TEST_CASE("model header decodes from raw bytes")
{
    const auto m = vae_artifact();
    const auto b = serialize_model(m);
    const std::span<const std::uint8_t> bytes(b);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "GAQP");
    CHECK(le32(bytes, 4) == kModelFormatVersion);
    CHECK(le32(bytes, 8) == static_cast<std::uint32_t>(ModelKind::Vae));
    CHECK(le32(bytes, 12) == m.schema.size());
    const auto pop_at = 12 + schema_section_size(m.schema);
    CHECK(le64(bytes, pop_at) == 600);
    // encoding mode, then d, h, d'
    CHECK(bytes[pop_at + 8] == static_cast<std::uint8_t>(EncodingMode::Binary));
    CHECK(le32(bytes, pop_at + 9) == m.vae->params.input_dim);
    CHECK(le32(bytes, pop_at + 13) == m.vae->params.hidden_dim);
    CHECK(le32(bytes, pop_at + 17) == m.vae->params.latent_dim);
    CHECK(le32(bytes, b.size() - 4) == crc32_bitwise(bytes.first(b.size() - 4)));
}

TEST_CASE("files on disk")
{
    const auto dir = std::filesystem::temp_directory_path() / "gaqp_model_io_test";
    std::filesystem::create_directories(dir);
    const auto m = vae_artifact();
    const auto sizes = save_model(m, dir / "m.gaqp");
    std::size_t total = 0;
    for (const auto &[name, n] : sizes)
        total += n;
    CHECK(total == std::filesystem::file_size(dir / "m.gaqp"));
    const auto back = load_model(dir / "m.gaqp");
    REQUIRE(back.vae);
    CHECK(back.vae->params == m.vae->params);

    save_relation(small_relation(), dir / "r.grel");
    const auto rel = load_relation(dir / "r.grel");
    REQUIRE(rel.num_rows() == small_relation().num_rows());
    for (std::size_t a = 0; a < rel.num_attributes(); ++a)
        CHECK(rel.column(a) == small_relation().column(a));

    CHECK_THROWS_AS(load_model(dir / "missing.gaqp"), DataError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("pipeline helpers")
{
    const std::vector<std::uint64_t> w{1, 1, 1};
    const auto a = apportion(10, w);
    CHECK(std::accumulate(a.begin(), a.end(), std::size_t{0}) == 10);
    for (auto x : a)
        CHECK((x == 3 || x == 4));
    const std::vector<std::uint64_t> w2{250, 350};
    CHECK(apportion(100, w2) == std::vector<std::size_t>{42, 58});

    const auto &rel = small_relation();
    const std::vector<std::size_t> i1{0, 1}, i2{5};
    const std::vector<Relation> parts{rel.select_rows(i1), rel.select_rows(i2)};
    const auto cat = concat_relations(rel.schema(), parts);
    REQUIRE(cat.num_rows() == 3);
    CHECK(cat.row(2) == rel.row(5));

    const auto m = vae_artifact();
    CHECK(auto_threshold(*m.vae) == -1.5);
    DecodeConfig decode;
    SampleReport report;
    const auto s1 = sample_artifact(m, 50, std::nullopt, decode, &report);
    CHECK(s1.num_rows() == report.produced);
    CHECK(report.requested == 50);
    const auto s2 = sample_artifact(m, 50, std::nullopt, decode);
    for (std::size_t a = 0; a < s1.num_attributes(); ++a)
        CHECK(s1.column(a) == s2.column(a));
}
