#include "gaqp/sample_gen.hpp"

#include "gaqp/error.hpp"

#include <algorithm>
#include <map>
#include <random>

namespace gaqp {

std::string_view to_string(Aggregation agg)
{
    return agg == Aggregation::Mode ? "mode" : "weighted";
}

Aggregation parse_aggregation(std::string_view text)
{
    if (text == "mode")
        return Aggregation::Mode;
    if (text == "weighted")
        return Aggregation::Weighted;
    throw DataError("unknown aggregation '" + std::string(text) + "' (expected mode or weighted)");
}

std::size_t raw_slice_value(std::span<const std::uint8_t> bits, const EncodingSpec &spec, std::size_t attr)
{
    const auto off = spec.offsets[attr];
    const auto width = spec.widths[attr];
    if (spec.mode == EncodingMode::Binary) {
        std::size_t value = 0;
        for (std::size_t b = 0; b != width; ++b)
            value = (value << 1) | bits[off + b];
        return value;
    }
    for (std::size_t b = 0; b != width; ++b)
        if (bits[off + b])
            return b;
    return width;
}

namespace {

Code clamp_raw(std::size_t raw, std::size_t domain_size, GenerationStats &stats, bool output, EncodingMode mode)
{
    if (raw < domain_size)
        return static_cast<Code>(raw);
    if (mode == EncodingMode::OneHot) {
        if (output)
            ++stats.degenerate;
        return 0;
    }
    if (output)
        ++stats.output_clamps;
    return static_cast<Code>(domain_size - 1);
}

std::vector<Tuple> decode_latents(const VaeParams &model, std::span<const std::vector<double>> latents,
                                  const DecodeConfig &cfg, const EncodingSpec &spec, Rng &rng, GenerationStats &stats)
{
    if (cfg.draws_per_latent == 0)
        throw DataError("draws per latent must be at least 1");
    const auto m = spec.widths.size();
    const auto J = cfg.draws_per_latent;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<std::uint8_t> draw(spec.dim);
    std::vector<std::vector<std::size_t>> votes(m, std::vector<std::size_t>(J));
    std::vector<Tuple> out;
    out.reserve(latents.size());

    for (const auto &z : latents) {
        const auto probs = decoder_bernoulli(model, z);
        for (std::size_t j = 0; j != J; ++j) {
            for (std::size_t b = 0; b != spec.dim; ++b)
                draw[b] = unif(rng) < probs[b] ? 1 : 0;
            for (std::size_t a = 0; a != m; ++a) {
                const auto raw = raw_slice_value(draw, spec, a);
                if (raw >= spec.domain_sizes[a] && spec.mode == EncodingMode::Binary)
                    ++stats.draw_clamps;
                votes[a][j] = raw;
            }
        }
        Tuple t(m);
        for (std::size_t a = 0; a != m; ++a) {
            auto &v = votes[a];
            std::size_t chosen;
            if (cfg.aggregation == Aggregation::Weighted) {
                // A uniformly chosen draw selects each value with probability equal to its frequency.
                std::uniform_int_distribution<std::size_t> pick(0, J - 1);
                chosen = v[pick(rng)];
            } else {
                std::sort(v.begin(), v.end());
                chosen = v[0];
                std::size_t best = 0;
                for (std::size_t i = 0; i != J;) {
                    std::size_t k = i;
                    while (k != J && v[k] == v[i])
                        ++k;
                    // Strictly greater keeps the lowest value on ties.
                    if (k - i > best) {
                        best = k - i;
                        chosen = v[i];
                    }
                    i = k;
                }
            }
            t[a] = clamp_raw(chosen, spec.domain_sizes[a], stats, true, spec.mode);
            ++stats.slices;
        }
        out.push_back(std::move(t));
    }
    return out;
}

} // namespace

GeneratedRelation generate_relation(const VaeParams &model, std::span<const std::vector<double>> latents,
                                    const DecodeConfig &cfg, const EncodingSpec &spec, const Schema &schema)
{
    Rng rng(cfg.seed);
    GeneratedRelation result;
    const auto rows = decode_latents(model, latents, cfg, spec, rng, result.stats);
    result.relation = Relation::from_rows(schema, rows);
    return result;
}

EncodedDataset generate_encoded(const VaeParams &model, std::span<const std::vector<double>> latents,
                                const DecodeConfig &cfg, const EncodingSpec &spec, Rng &rng, GenerationStats *stats)
{
    GenerationStats local;
    const auto rows = decode_latents(model, latents, cfg, spec, rng, stats ? *stats : local);
    EncodedDataset data;
    data.spec = spec;
    data.num_rows = rows.size();
    data.bits.assign(rows.size() * spec.dim, 0);
    for (std::size_t i = 0; i != rows.size(); ++i)
        spec.encode(rows[i], {data.bits.data() + i * spec.dim, spec.dim});
    return data;
}

} // namespace gaqp
