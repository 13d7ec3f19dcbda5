#include "gaqp/pipeline.hpp"

#include "gaqp/error.hpp"

#include <algorithm>
#include <numeric>

namespace gaqp {

VaeModel train_vae_model(const Relation &relation, const VaeTrainOptions &opts, std::vector<double> *epoch_elbo)
{
    if (relation.num_rows() == 0)
        throw DataError("cannot train on an empty relation");
    const auto data = encode_dataset(relation, opts.encoding);
    auto trained = train(data, opts.train);
    if (epoch_elbo)
        *epoch_elbo = trained.epoch_elbo;
    VaeModel model;
    model.spec = data.spec;
    model.params = std::move(trained.params);
    model.reservoir = make_reservoir(model.params, data, opts.reservoir_size, opts.train.seed);
    refit_thresholds(model, opts.target_accept, opts.mc_draws, opts.percentile, opts.train.seed);
    return model;
}

void refit_thresholds(VaeModel &model, double target_accept, std::size_t mc_draws, double percentile,
                      std::uint64_t seed)
{
    EncodedDataset res;
    res.spec = model.spec;
    res.num_rows = model.reservoir.size();
    res.bits = model.reservoir.bits;
    auto state = fit_tuple_thresholds(model.params, res, target_accept, mc_draws, seed);
    state.global = global_threshold(state.per_tuple, percentile);
    state.certified = model.thresholds.certified;
    model.thresholds = std::move(state);
}

double auto_threshold(const VaeModel &model)
{
    return model.thresholds.certified.value_or(model.thresholds.global);
}

Relation sample_vae(const VaeModel &model, const Schema &schema, std::size_t count, std::optional<double> threshold,
                    const DecodeConfig &decode, SampleReport *report)
{
    Rng rng(decode.seed);
    const double t = threshold.value_or(auto_threshold(model));
    const auto batch = rejection_sample_latents(model.params, model.reservoir, t, count, rng);
    DecodeConfig dc = decode;
    dc.seed = decode.seed ^ 0x9e3779b97f4a7c15ULL;
    auto gen = generate_relation(model.params, batch.latents, dc, model.spec, schema);
    if (report) {
        report->requested += count;
        report->produced += gen.relation.num_rows();
        report->trials += batch.trials;
        report->budget_exceeded = report->budget_exceeded || batch.budget_exceeded;
        report->stats.draw_clamps += gen.stats.draw_clamps;
        report->stats.output_clamps += gen.stats.output_clamps;
        report->stats.degenerate += gen.stats.degenerate;
        report->stats.slices += gen.stats.slices;
    }
    return std::move(gen.relation);
}

std::vector<std::size_t> apportion(std::size_t total, std::span<const std::uint64_t> weights)
{
    std::vector<std::size_t> out(weights.size(), 0);
    const double sum = static_cast<double>(std::accumulate(weights.begin(), weights.end(), std::uint64_t{0}));
    if (weights.empty() || sum == 0)
        return out;
    std::vector<std::pair<double, std::size_t>> rem;
    std::size_t given = 0;
    for (std::size_t i = 0; i != weights.size(); ++i) {
        const double exact = static_cast<double>(total) * static_cast<double>(weights[i]) / sum;
        out[i] = static_cast<std::size_t>(exact);
        given += out[i];
        rem.emplace_back(-(exact - static_cast<double>(out[i])), i);
    }
    std::sort(rem.begin(), rem.end());
    for (std::size_t j = 0; given < total; ++j, ++given)
        ++out[rem[j % rem.size()].second];
    return out;
}

Relation concat_relations(const Schema &schema, std::span<const Relation> parts)
{
    std::vector<std::vector<Code>> columns(schema.size());
    for (const auto &p : parts)
        for (std::size_t a = 0; a != schema.size(); ++a)
            columns[a].insert(columns[a].end(), p.column(a).begin(), p.column(a).end());
    return Relation(schema, std::move(columns));
}

Relation sample_artifact(const ModelArtifact &model, std::size_t count, std::optional<double> threshold,
                         const DecodeConfig &decode, SampleReport *report)
{
    switch (model.kind) {
    case ModelKind::Vae:
        return sample_vae(*model.vae, model.schema, count, threshold, decode, report);
    case ModelKind::Bn: {
        auto rel = ancestral_sample(*model.bn, model.schema, count, decode.seed);
        if (report) {
            report->requested += count;
            report->produced += rel.num_rows();
            report->trials += count;
        }
        return rel;
    }
    case ModelKind::Ensemble: {
        const auto &e = *model.ensemble;
        const auto counts = apportion(count, e.part_population);
        std::vector<Relation> parts;
        for (std::size_t k = 0; k != e.members.size(); ++k) {
            if (counts[k] == 0)
                continue;
            DecodeConfig dc = decode;
            dc.seed = decode.seed + 1000003ULL * k;
            parts.push_back(sample_vae(e.members[k], model.schema, counts[k], threshold, dc, report));
        }
        return concat_relations(model.schema, parts);
    }
    }
    throw DataError("unknown model kind");
}

} // namespace gaqp
