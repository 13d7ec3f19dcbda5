#include "gaqp/cli.hpp"

#include "gaqp/aqp.hpp"
#include "gaqp/bayesnet.hpp"
#include "gaqp/ensemble.hpp"
#include "gaqp/error.hpp"
#include "gaqp/model_io.hpp"
#include "gaqp/pipeline.hpp"
#include "gaqp/synth.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace gaqp {

namespace {

namespace fs = std::filesystem;

/*----------------------------------------------------------------------------------------------------------------------
 * Stage arguments
 *--------------------------------------------------------------------------------------------------------------------*/

struct IngestArgs
{
    std::string csv, schema, out;
};

struct TrainArgs
{
    std::string relation, out;
    std::string encoding = "binary";
    double latent_frac = 0.5;
    int epochs = 30;
    std::uint64_t seed = 1;
    std::size_t hidden = 0;
    double lr = 1e-2;
    std::size_t batch = 64;
    std::size_t reservoir = 4096;
    double target_accept = 0.9;
    std::size_t mc_draws = 256;
    double percentile = 90.0;
};

struct ThresholdArgs
{
    std::string model;
    double target_accept = 0.9;
    double percentile = 90.0;
    std::size_t mc_draws = 256;
    std::uint64_t seed = 1;
};

struct CertifyArgs
{
    std::string model, relation;
    double alpha = 0.05;
    std::size_t test_size = 128;
    std::uint64_t seed = 1;
    int max_iterations = 50;
    std::string initial_threshold = "auto";
    std::size_t draws_per_latent = 8;
    std::string agg = "mode";
};

struct SampleArgs
{
    std::string model, out;
    std::size_t count = 1000;
    std::string threshold = "auto";
    std::size_t draws_per_latent = 8;
    std::string agg = "mode";
    std::uint64_t seed = 1;
};

struct QueryArgs
{
    std::string model, sample, sql;
    std::size_t population_n = 0;
    std::size_t count = 10000;
    std::string threshold = "auto";
    std::size_t draws_per_latent = 8;
    std::string agg = "mode";
    std::uint64_t seed = 1;
    bool repl = false;
};

struct EvaluateArgs
{
    std::string relation, model, workload, out;
    double sample_frac = 0.01;
    std::size_t reps = 10;
    std::string threshold = "auto";
    std::size_t draws_per_latent = 8;
    std::string agg = "mode";
    std::uint64_t seed = 1;
};

struct PartitionArgs
{
    std::string relation, hierarchy, contiguous, out;
    std::size_t k = 2;
    double threshold = 0.0;
    std::string encoding = "binary";
    int epochs = 10;
    std::uint64_t seed = 1;
    std::size_t draws = 64;
    std::size_t eval_tuples = 500;
    bool measure_internal = false;
};

struct BnTrainArgs
{
    std::string relation, out, export_text;
    std::size_t max_parents = 3;
    double alpha = 1.0;
    std::uint64_t seed = 1;
};

struct BnSampleArgs
{
    std::string model, out;
    std::size_t count = 1000;
    std::uint64_t seed = 1;
};

struct BnConditionalArgs
{
    std::string model, evidence, sql, out;
    std::size_t count = 10000;
    std::size_t population_n = 0;
    std::uint64_t seed = 1;
};

struct WorkloadArgs
{
    std::string relation, out, strata = "0.05:1.0";
    std::size_t count = 300;
    std::uint64_t seed = 1;
    bool no_group_by = false;
};

struct SynthArgs
{
    std::string csv, schema;
    std::size_t rows = 50000;
    std::uint64_t seed = 7;
};

struct RunAllArgs
{
    std::string csv, schema, workdir;
    std::string encoding = "binary";
    int epochs = 30;
    std::size_t hidden = 0;
    double lr = 1e-2;
    std::uint64_t seed = 1;
    double sample_frac = 0.01;
    std::size_t draws_per_latent = 8;
    std::string agg = "mode";
    std::size_t reps = 10;
    std::size_t workload_count = 300;
    std::string strata = "0.05:1.0";
    double alpha = 0.05;
    std::size_t test_size = 128;
    bool skip_certify = false;
};

/*----------------------------------------------------------------------------------------------------------------------
 * Helpers
 *--------------------------------------------------------------------------------------------------------------------*/

std::optional<double> parse_threshold(const std::string &text)
{
    if (text == "auto")
        return std::nullopt;
    if (text == "inf" || text == "+inf")
        return kInfiniteThreshold;
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used == text.size())
            return v;
    } catch (const std::exception &) {
    }
    throw std::invalid_argument("threshold must be auto, inf or a number, got '" + text + "'");
}

void print_sizes(std::ostream &out, const SizeBreakdown &sizes)
{
    std::size_t total = 0;
    for (const auto &[name, bytes] : sizes)
        total += bytes;
    out << "model size: " << total << " bytes\n";
    for (const auto &[name, bytes] : sizes)
        out << "  " << std::left << std::setw(24) << name << bytes << '\n';
}

VaeModel &require_vae(ModelArtifact &m)
{
    if (m.kind != ModelKind::Vae)
        throw DataError("expected a VAE model, found " + std::string(to_string(m.kind)));
    return *m.vae;
}

DecodeConfig decode_config(std::size_t draws, const std::string &agg, std::uint64_t seed)
{
    DecodeConfig dc;
    dc.draws_per_latent = draws;
    dc.aggregation = parse_aggregation(agg);
    dc.seed = seed;
    return dc;
}

void print_estimate(std::ostream &out, const AggregateEstimate &est, bool grouped)
{
    if (est.groups.empty()) {
        out << "no satisfying rows in the sample\n";
        return;
    }
    for (const auto &g : est.groups) {
        if (grouped)
            out << g.label << '\t';
        out << format_double(g.value) << "\t+-" << format_double(g.half_width) << "\tsupport " << g.support << '\n';
    }
}

std::vector<std::string> read_lines(const std::string &path)
{
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos || line[line.find_first_not_of(" \t")] == '#')
            continue;
        lines.push_back(line);
    }
    return lines;
}

std::vector<std::pair<double, double>> parse_strata(const std::string &text)
{
    std::vector<std::pair<double, double>> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto colon = item.find(':');
        if (colon == std::string::npos)
            throw std::invalid_argument("stratum '" + item + "' must be lo:hi");
        out.emplace_back(std::stod(item.substr(0, colon)), std::stod(item.substr(colon + 1)));
    }
    if (out.empty())
        throw std::invalid_argument("at least one stratum is required");
    return out;
}

EncodedDataset encode_rows(const Relation &relation, std::span<const std::size_t> rows, EncodingMode mode)
{
    return encode_dataset(relation.select_rows(rows), mode);
}

/*----------------------------------------------------------------------------------------------------------------------
 * Stages
 *--------------------------------------------------------------------------------------------------------------------*/

void run_ingest(const IngestArgs &a, std::ostream &out)
{
    const auto config = SchemaConfig::load(a.schema);
    const auto rel = ingest_csv(a.csv, config);
    save_relation(rel, a.out);
    out << "ingested " << rel.num_rows() << " rows, " << rel.num_attributes() << " attributes\n";
    for (const auto &attr : rel.schema().attributes) {
        out << "  " << attr.name << ": " << (attr.kind == AttributeKind::Numeric ? "numeric" : "categorical") << ", "
            << attr.domain_size() << " values";
        if (attr.bins_flagged)
            out << " (fewer bins than requested)";
        out << '\n';
    }
}

void run_train(const TrainArgs &a, std::ostream &out)
{
    const auto rel = load_relation(a.relation);
    VaeTrainOptions opts;
    opts.encoding = parse_encoding_mode(a.encoding);
    opts.train.epochs = a.epochs;
    opts.train.seed = a.seed;
    opts.train.latent_fraction = a.latent_frac;
    opts.train.hidden_dim = a.hidden;
    opts.train.learning_rate = a.lr;
    opts.train.batch_size = a.batch;
    opts.reservoir_size = a.reservoir;
    opts.target_accept = a.target_accept;
    opts.mc_draws = a.mc_draws;
    opts.percentile = a.percentile;
    std::vector<double> elbo;
    ModelArtifact art;
    art.kind = ModelKind::Vae;
    art.schema = rel.schema();
    art.population_n = rel.num_rows();
    art.vae = train_vae_model(rel, opts, &elbo);
    const auto &p = art.vae->params;
    out << "trained VAE d=" << p.input_dim << " h=" << p.hidden_dim << " latent=" << p.latent_dim << " ("
        << p.num_parameters() << " parameters)\n";
    if (!elbo.empty())
        out << "final epoch ELBO: " << format_double(elbo.back()) << '\n';
    out << "global threshold T: " << format_double(art.vae->thresholds.global) << '\n';
    print_sizes(out, save_model(art, a.out));
}

void run_thresholds(const ThresholdArgs &a, std::ostream &out)
{
    auto art = load_model(a.model);
    auto update = [&](VaeModel &m) {
        refit_thresholds(m, a.target_accept, a.mc_draws, a.percentile, a.seed);
        const auto &t = m.thresholds;
        const auto flagged = std::count(t.flagged.begin(), t.flagged.end(), 1);
        out << "tuples " << t.per_tuple.size() << ", flagged " << flagged << ", global T (p" << format_double(a.percentile)
            << ") " << format_double(t.global) << '\n';
    };
    if (art.kind == ModelKind::Vae)
        update(*art.vae);
    else if (art.kind == ModelKind::Ensemble)
        for (auto &m : art.ensemble->members)
            update(m);
    else
        throw DataError("thresholds apply to VAE models only");
    print_sizes(out, save_model(art, a.model));
}

void run_certify(const CertifyArgs &a, std::ostream &out)
{
    auto art = load_model(a.model);
    auto &model = require_vae(art);
    const auto rel = load_relation(a.relation);
    const auto rows = sample_indices(rel.num_rows(), a.test_size, a.seed);
    const auto sd = encode_rows(rel, rows, model.spec.mode);
    CalibrationConfig cfg;
    cfg.alpha = a.alpha;
    // "auto" starts from the fitted global threshold; T = 0 accepts almost nothing on a trained model
    const auto initial = parse_threshold(a.initial_threshold);
    cfg.initial_threshold = initial ? *initial : model.thresholds.global;
    cfg.max_iterations = a.max_iterations;
    cfg.seed = a.seed;
    const auto source =
        reservoir_source(model.params, model.reservoir, model.spec, art.schema,
                         decode_config(a.draws_per_latent, a.agg, a.seed));
    auto print_trace = [&](const std::vector<CalibrationStep> &trace) {
        for (const auto &s : trace)
            out << "T=" << format_double(s.threshold) << " a_DD=" << s.outcome.a_dd << " a_MM=" << s.outcome.a_mm
                << " a_DM=" << s.outcome.a_dm << " p=" << format_double(s.outcome.p_value)
                << (s.outcome.reject ? " reject" : " accept") << '\n';
    };
    try {
        const auto result = calibrate_threshold(model.params, sd, source, cfg);
        print_trace(result.trace);
        model.thresholds.certified = result.threshold;
        out << "certified T: " << format_double(result.threshold) << '\n';
        print_sizes(out, save_model(art, a.model));
    } catch (const CalibrationFailure &f) {
        print_trace(f.trace);
        throw;
    }
}

void run_sample(const SampleArgs &a, std::ostream &out)
{
    const auto art = load_model(a.model);
    SampleReport report;
    const auto rel =
        sample_artifact(art, a.count, parse_threshold(a.threshold), decode_config(a.draws_per_latent, a.agg, a.seed),
                        &report);
    write_csv(rel, fs::path(a.out));
    out << "wrote " << rel.num_rows() << " rows to " << a.out << '\n';
    if (report.trials)
        out << "trials " << report.trials << ", acceptance "
            << format_double(static_cast<double>(report.produced) / static_cast<double>(report.trials)) << '\n';
    if (report.budget_exceeded)
        out << "warning: trial budget exhausted, sample is partial\n";
    if (report.stats.slices)
        out << "clamped slices: " << report.stats.output_clamps << " of " << report.stats.slices << " (draws "
            << report.stats.draw_clamps << ")\n";
}

Relation query_sample(const QueryArgs &a, std::size_t &population_n)
{
    if (!a.sample.empty()) {
        if (a.population_n == 0)
            throw std::invalid_argument("--population-n is required with --sample");
        population_n = a.population_n;
        return ingest_csv_categorical(a.sample);
    }
    const auto art = load_model(a.model);
    population_n = a.population_n ? a.population_n : art.population_n;
    return sample_artifact(art, a.count, parse_threshold(a.threshold),
                           decode_config(a.draws_per_latent, a.agg, a.seed));
}

void answer(const Relation &sample, std::size_t population_n, const std::string &sql, std::ostream &out)
{
    const auto start = std::chrono::steady_clock::now();
    const auto ast = parse_query(sql);
    const auto est = estimate_from_sample(sample, ast, population_n);
    const auto ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    print_estimate(out, est, !ast.group_by.empty());
    out << "(" << std::fixed << std::setprecision(3) << ms << " ms)" << std::defaultfloat << std::setprecision(6)
        << '\n';
}

void run_query(const QueryArgs &a, std::istream &in, std::ostream &out, std::ostream &err)
{
    if (a.model.empty() == a.sample.empty())
        throw std::invalid_argument("give exactly one of --model or --sample");
    if (!a.repl && a.sql.empty())
        throw std::invalid_argument("a query is required unless --repl is given");
    std::size_t population_n = 0;
    const auto sample = query_sample(a, population_n);
    if (!a.sql.empty())
        answer(sample, population_n, a.sql, out);
    if (!a.repl)
        return;
    std::string line;
    while (true) {
        out << "gaqp> " << std::flush;
        if (!std::getline(in, line))
            break;
        if (line == "quit" || line == "exit")
            break;
        if (line.find_first_not_of(" \t") == std::string::npos)
            continue;
        try {
            answer(sample, population_n, line, out);
        } catch (const Error &e) {
            err << "error: " << e.what() << '\n';
        }
    }
    out << '\n';
}

ErrorReport evaluate(const EvaluateArgs &a)
{
    const auto rel = load_relation(a.relation);
    const auto art = load_model(a.model);
    const auto queries = read_lines(a.workload);
    if (!(a.sample_frac > 0 && a.sample_frac <= 1))
        throw std::invalid_argument("--sample-frac must lie in (0, 1]");
    const auto m = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(a.sample_frac * rel.num_rows())));
    const auto threshold = parse_threshold(a.threshold);
    std::vector<Relation> ds, ms;
    for (std::size_t r = 0; r != a.reps; ++r) {
        const auto rows = sample_indices(rel.num_rows(), m, a.seed + r);
        ds.push_back(rel.select_rows(rows));
        ms.push_back(sample_artifact(art, m, threshold, decode_config(a.draws_per_latent, a.agg, a.seed + r)));
    }
    return evaluate_workload(rel, queries, ds, ms, rel.num_rows());
}

void run_evaluate(const EvaluateArgs &a, std::ostream &out)
{
    const auto report = evaluate(a);
    std::ofstream csv(a.out);
    if (!csv)
        throw DataError("cannot write " + a.out);
    write_error_csv(report, csv);
    out << "queries scored " << report.rows.size() << ", excluded (zero truth) " << report.excluded << '\n';
    out << "mean relative error: dataset " << format_double(report.mean_relerr_dataset) << ", model "
        << format_double(report.mean_relerr_model) << '\n';
    out << "median RED: " << format_double(report.median_red) << '\n';
}

struct Grouping
{
    std::vector<std::string> labels;
    std::vector<std::vector<std::size_t>> rows;
    std::vector<std::pair<std::size_t, Code>> defining; ///< (attribute, code) per group
};

Grouping groups_from_hierarchy(const Relation &rel, const OlapTree &tree)
{
    Grouping g;
    g.rows.resize(tree.num_groups());
    g.labels.resize(tree.num_groups());
    g.defining.resize(tree.num_groups());
    for (const auto &node : tree.nodes) {
        if (!node.group)
            continue;
        const auto eq = node.label.find('=');
        if (eq == std::string::npos)
            throw DataError("hierarchy leaf '" + node.label + "' must be attribute=value");
        const auto attr = rel.schema().require(node.label.substr(0, eq));
        const auto code = rel.schema()[attr].lookup(node.label.substr(eq + 1));
        if (!code)
            throw DataError("hierarchy leaf '" + node.label + "' names a value outside the domain");
        g.labels[*node.group] = node.label;
        g.defining[*node.group] = {attr, *code};
    }
    std::vector<int> owner(rel.num_rows(), -1);
    for (std::size_t grp = 0; grp != g.rows.size(); ++grp) {
        const auto [attr, code] = g.defining[grp];
        for (std::size_t i = 0; i != rel.num_rows(); ++i) {
            if (rel.at(i, attr) != code)
                continue;
            if (owner[i] >= 0)
                throw DataError("hierarchy leaves " + g.labels[owner[i]] + " and " + g.labels[grp] + " overlap");
            owner[i] = static_cast<int>(grp);
            g.rows[grp].push_back(i);
        }
    }
    if (std::count(owner.begin(), owner.end(), -1) != 0)
        throw DataError("hierarchy leaves do not cover every row");
    for (std::size_t grp = 0; grp != g.rows.size(); ++grp)
        if (g.rows[grp].empty())
            throw DataError("hierarchy leaf " + g.labels[grp] + " matches no rows");
    return g;
}

Grouping groups_from_attribute(const Relation &rel, const std::string &name)
{
    const auto attr = rel.schema().require(name);
    const auto &as = rel.schema()[attr];
    std::vector<Code> codes(as.domain_size());
    std::iota(codes.begin(), codes.end(), Code{0});
    bool numeric = true;
    for (auto c : codes)
        numeric = numeric && std::isfinite(as.representative(c));
    if (numeric)
        std::stable_sort(codes.begin(), codes.end(),
                         [&](Code x, Code y) { return as.representative(x) < as.representative(y); });
    Grouping g;
    for (auto c : codes) {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i != rel.num_rows(); ++i)
            if (rel.at(i, attr) == c)
                rows.push_back(i);
        if (rows.empty())
            continue;
        g.labels.push_back(as.name + "=" + as.label(c));
        g.rows.push_back(std::move(rows));
        g.defining.emplace_back(attr, c);
    }
    return g;
}

void run_partition(const PartitionArgs &a, std::ostream &out)
{
    if (a.hierarchy.empty() == a.contiguous.empty())
        throw std::invalid_argument("give exactly one of --hierarchy or --contiguous");
    if (a.k == 0)
        throw std::invalid_argument("--k must be at least 1");
    const auto rel = load_relation(a.relation);
    const auto mode = parse_encoding_mode(a.encoding);
    TrainConfig tc;
    tc.epochs = a.epochs;
    tc.seed = a.seed;

    std::optional<OlapTree> tree;
    Grouping groups;
    if (!a.hierarchy.empty()) {
        tree = load_hierarchy(a.hierarchy);
        groups = groups_from_hierarchy(rel, *tree);
    } else {
        groups = groups_from_attribute(rel, a.contiguous);
    }

    // Size-weighted loss of a model trained on `rows`, scored on up to eval_tuples of them.
    auto measured = [&](const std::vector<std::size_t> &rows) {
        const auto data = encode_rows(rel, rows, mode);
        const auto model = train(data, tc).params;
        auto pick = sample_indices(rows.size(), a.eval_tuples ? a.eval_tuples : rows.size(), a.seed);
        EncodedDataset eval;
        eval.spec = data.spec;
        eval.num_rows = pick.size();
        for (auto i : pick) {
            const auto r = data.row(i);
            eval.bits.insert(eval.bits.end(), r.begin(), r.end());
        }
        const auto score = r_elbo(model, eval, a.threshold, a.draws, a.seed);
        return -score.value * static_cast<double>(rows.size());
    };
    auto union_rows = [&](std::span<const std::size_t> gids) {
        std::vector<std::size_t> rows;
        for (auto g : gids)
            rows.insert(rows.end(), groups.rows[g].begin(), groups.rows[g].end());
        std::sort(rows.begin(), rows.end());
        return rows;
    };

    std::vector<double> leaf(groups.rows.size());
    for (std::size_t g = 0; g != leaf.size(); ++g) {
        leaf[g] = measured(groups.rows[g]);
        out << "group " << groups.labels[g] << ": " << groups.rows[g].size() << " rows, score "
            << format_double(leaf[g]) << '\n';
    }

    std::vector<std::vector<std::size_t>> parts;
    if (tree) {
        auto scores = default_node_scores(*tree, leaf);
        if (a.measure_internal)
            for (std::size_t n = 0; n != tree->nodes.size(); ++n)
                if (!tree->nodes[n].children.empty())
                    scores[n] = measured(union_rows(tree->groups_under(n)));
        for (std::size_t k = 1; k <= a.k; ++k)
            out << "K=" << k << " objective " << format_double(partition_hierarchy(*tree, k, scores).objective)
                << '\n';
        const auto plan = partition_hierarchy(*tree, a.k, scores);
        if (plan.flagged)
            out << "warning: K exceeds the number of groups; using " << plan.k << '\n';
        for (std::size_t i = 0; i != plan.nodes.size(); ++i)
            out << "part " << i << ": " << tree->nodes[plan.nodes[i]].label << '\n';
        parts = plan.parts;
    } else {
        RunScore run = [&](std::size_t b, std::size_t e) {
            return bound_sum(std::span<const double>(leaf).subspan(b, e - b));
        };
        std::map<std::pair<std::size_t, std::size_t>, double> cache;
        if (a.measure_internal)
            run = [&](std::size_t b, std::size_t e) {
                if (e - b == 1)
                    return leaf[b];
                auto it = cache.find({b, e});
                if (it == cache.end()) {
                    std::vector<std::size_t> gids(e - b);
                    std::iota(gids.begin(), gids.end(), b);
                    it = cache.emplace(std::make_pair(b, e), measured(union_rows(gids))).first;
                }
                return it->second;
            };
        for (std::size_t k = 1; k <= std::min(a.k, leaf.size()); ++k)
            out << "K=" << k << " objective " << format_double(partition_contiguous(leaf.size(), k, run).objective)
                << '\n';
        const auto plan = partition_contiguous(leaf.size(), a.k, run);
        if (plan.flagged)
            out << "warning: K exceeds the number of groups; using " << plan.boundaries.size() - 1 << '\n';
        for (std::size_t i = 0; i + 1 < plan.boundaries.size(); ++i) {
            out << "part " << i << ": " << groups.labels[plan.boundaries[i]] << " .. "
                << groups.labels[plan.boundaries[i + 1] - 1] << '\n';
            std::vector<std::size_t> gids(plan.boundaries[i + 1] - plan.boundaries[i]);
            std::iota(gids.begin(), gids.end(), plan.boundaries[i]);
            parts.push_back(std::move(gids));
        }
    }

    if (a.out.empty())
        return;
    const auto attr = groups.defining.front().first;
    for (const auto &d : groups.defining)
        if (d.first != attr)
            throw DataError("an ensemble artifact needs every group defined by the same attribute");
    ModelArtifact art;
    art.kind = ModelKind::Ensemble;
    art.schema = rel.schema();
    art.population_n = rel.num_rows();
    EnsembleModel e;
    e.attribute = attr;
    VaeTrainOptions opts;
    opts.encoding = mode;
    opts.train = tc;
    for (const auto &part : parts) {
        std::vector<Code> codes;
        for (auto g : part)
            codes.push_back(groups.defining[g].second);
        std::sort(codes.begin(), codes.end());
        const auto rows = union_rows(part);
        e.part_codes.push_back(codes);
        e.part_population.push_back(rows.size());
        e.members.push_back(train_vae_model(rel.select_rows(rows), opts));
    }
    art.ensemble = std::move(e);
    print_sizes(out, save_model(art, a.out));
}

void run_bn_train(const BnTrainArgs &a, std::ostream &out)
{
    const auto rel = load_relation(a.relation);
    ModelArtifact art;
    art.kind = ModelKind::Bn;
    art.schema = rel.schema();
    art.population_n = rel.num_rows();
    art.bn = fit_bayesnet(rel, a.max_parents, a.alpha, a.seed);
    const auto &bn = *art.bn;
    out << "edges " << bn.graph.num_edges() << ", BIC " << format_double(bic_score(rel, bn.graph)) << '\n';
    for (std::size_t v = 0; v != bn.size(); ++v)
        for (auto p : bn.graph.parents[v])
            out << "  " << bn.names[p] << " -> " << bn.names[v] << '\n';
    if (!a.export_text.empty()) {
        std::ofstream txt(a.export_text);
        if (!txt)
            throw DataError("cannot write " + a.export_text);
        write_bayesnet_text(bn, txt);
    }
    print_sizes(out, save_model(art, a.out));
}

const BayesNet &require_bn(const ModelArtifact &art)
{
    if (art.kind != ModelKind::Bn)
        throw DataError("expected a Bayesian network model, found " + std::string(to_string(art.kind)));
    return *art.bn;
}

void run_bn_sample(const BnSampleArgs &a, std::ostream &out)
{
    const auto art = load_model(a.model);
    const auto rel = ancestral_sample(require_bn(art), art.schema, a.count, a.seed);
    write_csv(rel, fs::path(a.out));
    out << "wrote " << rel.num_rows() << " rows to " << a.out << '\n';
}

void run_bn_conditional(const BnConditionalArgs &a, std::ostream &out)
{
    const auto art = load_model(a.model);
    const auto &bn = require_bn(art);
    const auto evidence = parse_evidence(art.schema, a.evidence);
    const auto samples = likelihood_weighted_sample(bn, evidence, a.count, a.seed);
    std::vector<Tuple> rows;
    std::vector<double> weights;
    for (const auto &s : samples) {
        rows.push_back(s.tuple);
        weights.push_back(s.weight);
    }
    const double mean_w =
        weights.empty() ? 0.0 : std::accumulate(weights.begin(), weights.end(), 0.0) / static_cast<double>(weights.size());
    out << "samples " << samples.size() << ", mean weight (evidence probability) " << format_double(mean_w) << '\n';
    const auto rel = Relation::from_rows(art.schema, rows);
    if (!a.out.empty()) {
        std::ofstream csv(a.out);
        if (!csv)
            throw DataError("cannot write " + a.out);
        std::ostringstream body;
        write_csv(rel, body);
        std::istringstream lines(body.str());
        std::string line;
        std::getline(lines, line);
        csv << line << ",weight\n";
        for (std::size_t i = 0; std::getline(lines, line); ++i)
            csv << line << ',' << format_double(weights[i]) << '\n';
    }
    if (a.sql.empty())
        return;
    const auto population = a.population_n ? a.population_n : art.population_n;
    const auto ast = parse_query(a.sql);
    auto est = estimate_from_sample(rel, ast, population, weights);
    // Weights are normalized inside the estimator; totals are rescaled by the evidence probability.
    if (ast.aggregate != AggregateKind::Avg)
        for (auto &g : est.groups) {
            g.value *= mean_w;
            g.half_width *= mean_w;
        }
    print_estimate(out, est, !ast.group_by.empty());
}

void run_workload(const WorkloadArgs &a, std::ostream &out)
{
    const auto rel = load_relation(a.relation);
    WorkloadConfig cfg;
    cfg.count = a.count;
    cfg.strata = parse_strata(a.strata);
    cfg.group_by = !a.no_group_by;
    cfg.seed = a.seed;
    const auto w = generate_workload(rel, cfg);
    std::ofstream file(a.out);
    if (!file)
        throw DataError("cannot write " + a.out);
    for (const auto &q : w.queries)
        file << q << '\n';
    out << "wrote " << w.queries.size() << " queries to " << a.out << '\n';
    for (std::size_t s = 0; s != w.underfilled.size(); ++s)
        if (w.underfilled[s])
            out << "warning: stratum " << format_double(cfg.strata[s].first) << ":"
                << format_double(cfg.strata[s].second) << " is under-filled\n";
}

void run_synth(const SynthArgs &a, std::ostream &out)
{
    SynthConfig cfg;
    cfg.rows = a.rows;
    cfg.seed = a.seed;
    const auto data = make_synthetic(cfg);
    std::ofstream csv(a.csv);
    if (!csv)
        throw DataError("cannot write " + a.csv);
    for (std::size_t i = 0; i != data.header.size(); ++i)
        csv << (i ? "," : "") << data.header[i];
    csv << '\n';
    for (const auto &row : data.cells) {
        for (std::size_t i = 0; i != row.size(); ++i)
            csv << (i ? "," : "") << row[i];
        csv << '\n';
    }
    std::ofstream schema(a.schema);
    if (!schema)
        throw DataError("cannot write " + a.schema);
    schema << data.config_text;
    out << "wrote " << data.cells.size() << " rows to " << a.csv << '\n';
}

void run_all(const RunAllArgs &a, std::ostream &out)
{
    fs::create_directories(a.workdir);
    const auto dir = fs::path(a.workdir);
    const auto rel_path = (dir / "relation.grel").string();
    const auto model_path = (dir / "model.gaqp").string();
    const auto workload_path = (dir / "workload.txt").string();

    out << "== ingest\n";
    run_ingest({a.csv, a.schema, rel_path}, out);

    out << "== train\n";
    TrainArgs t;
    t.relation = rel_path;
    t.out = model_path;
    t.encoding = a.encoding;
    t.epochs = a.epochs;
    t.hidden = a.hidden;
    t.lr = a.lr;
    t.seed = a.seed;
    run_train(t, out);

    if (!a.skip_certify) {
        out << "== certify\n";
        CertifyArgs c;
        c.model = model_path;
        c.relation = rel_path;
        c.alpha = a.alpha;
        c.test_size = a.test_size;
        c.seed = a.seed;
        c.draws_per_latent = a.draws_per_latent;
        c.agg = a.agg;
        run_certify(c, out);
    }

    out << "== workload\n";
    WorkloadArgs w;
    w.relation = rel_path;
    w.out = workload_path;
    w.count = a.workload_count;
    w.strata = a.strata;
    w.seed = a.seed;
    run_workload(w, out);

    out << "== evaluate\n";
    EvaluateArgs e;
    e.relation = rel_path;
    e.model = model_path;
    e.workload = workload_path;
    e.out = (dir / "report.csv").string();
    e.sample_frac = a.sample_frac;
    e.reps = a.reps;
    e.draws_per_latent = a.draws_per_latent;
    e.agg = a.agg;
    e.seed = a.seed;
    run_evaluate(e, out);
}

} // namespace

int run_cli(const std::vector<std::string> &args, std::istream &in, std::ostream &out, std::ostream &err)
{
    CLI::App app{"Model-based approximate query processing", "gaqp"};
    app.require_subcommand(1);

    IngestArgs ingest;
    auto *c_ingest = app.add_subcommand("ingest", "Read a CSV into a binary relation file");
    c_ingest->add_option("--csv", ingest.csv, "Input CSV")->required();
    c_ingest->add_option("--schema", ingest.schema, "Schema config (name=categorical|numeric:<bins>)")->required();
    c_ingest->add_option("--out", ingest.out, "Output relation file")->required();

    TrainArgs trainer;
    auto *c_train = app.add_subcommand("train", "Train a VAE and fit rejection thresholds");
    c_train->add_option("--relation", trainer.relation)->required();
    c_train->add_option("--encoding", trainer.encoding)->check(CLI::IsMember({"binary", "onehot"}));
    c_train->add_option("--latent-frac", trainer.latent_frac);
    c_train->add_option("--epochs", trainer.epochs);
    c_train->add_option("--seed", trainer.seed);
    c_train->add_option("--hidden", trainer.hidden, "Hidden width (0 = input dimension)");
    c_train->add_option("--lr", trainer.lr);
    c_train->add_option("--batch", trainer.batch);
    c_train->add_option("--reservoir", trainer.reservoir);
    c_train->add_option("--target-accept", trainer.target_accept);
    c_train->add_option("--mc-draws", trainer.mc_draws);
    c_train->add_option("--percentile", trainer.percentile);
    c_train->add_option("--out", trainer.out)->required();

    ThresholdArgs thr;
    auto *c_thr = app.add_subcommand("thresholds", "Refit per-tuple and global thresholds");
    c_thr->add_option("--model", thr.model)->required();
    c_thr->add_option("--target-accept", thr.target_accept);
    c_thr->add_option("--percentile", thr.percentile);
    c_thr->add_option("--mc-draws", thr.mc_draws);
    c_thr->add_option("--seed", thr.seed);

    CertifyArgs cert;
    auto *c_cert = app.add_subcommand("certify", "Lower T until the cross-match test accepts");
    c_cert->add_option("--model", cert.model)->required();
    c_cert->add_option("--relation", cert.relation)->required();
    c_cert->add_option("--alpha", cert.alpha);
    c_cert->add_option("--test-size", cert.test_size);
    c_cert->add_option("--seed", cert.seed);
    c_cert->add_option("--max-iterations", cert.max_iterations);
    c_cert->add_option("--initial-T", cert.initial_threshold, "Starting threshold (auto = fitted global T)");
    c_cert->add_option("--draws-per-latent", cert.draws_per_latent);
    c_cert->add_option("--agg", cert.agg)->check(CLI::IsMember({"mode", "weighted"}));

    SampleArgs smp;
    auto *c_sample = app.add_subcommand("sample", "Generate synthetic tuples as CSV");
    c_sample->add_option("--model", smp.model)->required();
    c_sample->add_option("--count", smp.count)->required();
    c_sample->add_option("--T", smp.threshold, "auto, inf or a number");
    c_sample->add_option("--draws-per-latent", smp.draws_per_latent);
    c_sample->add_option("--agg", smp.agg)->check(CLI::IsMember({"mode", "weighted"}));
    c_sample->add_option("--seed", smp.seed);
    c_sample->add_option("--out", smp.out)->required();

    QueryArgs qry;
    auto *c_query = app.add_subcommand("query", "Answer an aggregate query from a model or a sample");
    c_query->add_option("--model", qry.model);
    c_query->add_option("--sample", qry.sample, "Sample CSV");
    c_query->add_option("--population-n", qry.population_n);
    c_query->add_option("--count", qry.count, "Rows to generate from the model");
    c_query->add_option("--T", qry.threshold);
    c_query->add_option("--draws-per-latent", qry.draws_per_latent);
    c_query->add_option("--agg", qry.agg)->check(CLI::IsMember({"mode", "weighted"}));
    c_query->add_option("--seed", qry.seed);
    c_query->add_flag("--repl", qry.repl, "Read queries interactively");
    c_query->add_option("sql", qry.sql, "Query text");

    EvaluateArgs ev;
    auto *c_eval = app.add_subcommand("evaluate", "Score a workload against dataset and model samples");
    c_eval->add_option("--relation", ev.relation)->required();
    c_eval->add_option("--model", ev.model)->required();
    c_eval->add_option("--workload", ev.workload)->required();
    c_eval->add_option("--sample-frac", ev.sample_frac);
    c_eval->add_option("--reps", ev.reps);
    c_eval->add_option("--T", ev.threshold);
    c_eval->add_option("--draws-per-latent", ev.draws_per_latent);
    c_eval->add_option("--agg", ev.agg)->check(CLI::IsMember({"mode", "weighted"}));
    c_eval->add_option("--seed", ev.seed);
    c_eval->add_option("--out", ev.out)->required();

    PartitionArgs part;
    auto *c_part = app.add_subcommand("partition", "Split groups into K sub-models by R-ELBO");
    c_part->add_option("--relation", part.relation)->required();
    c_part->add_option("--hierarchy", part.hierarchy, "Indented hierarchy file");
    c_part->add_option("--contiguous", part.contiguous, "Attribute whose values form ordered groups");
    c_part->add_option("--k", part.k);
    c_part->add_option("--T", part.threshold);
    c_part->add_option("--encoding", part.encoding)->check(CLI::IsMember({"binary", "onehot"}));
    c_part->add_option("--epochs", part.epochs);
    c_part->add_option("--seed", part.seed);
    c_part->add_option("--draws", part.draws);
    c_part->add_option("--eval-tuples", part.eval_tuples);
    c_part->add_flag("--measure-internal", part.measure_internal, "Train models for merged groups too");
    c_part->add_option("--out", part.out, "Write an ensemble model");

    BnTrainArgs bnt;
    auto *c_bnt = app.add_subcommand("bn-train", "Learn a Bayesian network");
    c_bnt->add_option("--relation", bnt.relation)->required();
    c_bnt->add_option("--max-parents", bnt.max_parents);
    c_bnt->add_option("--alpha", bnt.alpha, "Laplace smoothing");
    c_bnt->add_option("--seed", bnt.seed);
    c_bnt->add_option("--export", bnt.export_text, "Plain-text export");
    c_bnt->add_option("--out", bnt.out)->required();

    BnSampleArgs bns;
    auto *c_bns = app.add_subcommand("bn-sample", "Forward-sample a Bayesian network");
    c_bns->add_option("--model", bns.model)->required();
    c_bns->add_option("--count", bns.count);
    c_bns->add_option("--seed", bns.seed);
    c_bns->add_option("--out", bns.out)->required();

    BnConditionalArgs bnc;
    auto *c_bnc = app.add_subcommand("bn-conditional", "Likelihood-weighted conditional samples");
    c_bnc->add_option("--model", bnc.model)->required();
    c_bnc->add_option("--evidence", bnc.evidence, "A=v,B=w")->required();
    c_bnc->add_option("--count", bnc.count);
    c_bnc->add_option("--population-n", bnc.population_n);
    c_bnc->add_option("--seed", bnc.seed);
    c_bnc->add_option("--query", bnc.sql);
    c_bnc->add_option("--out", bnc.out);

    WorkloadArgs wl;
    auto *c_wl = app.add_subcommand("workload", "Generate a stratified random workload");
    c_wl->add_option("--relation", wl.relation)->required();
    c_wl->add_option("--count", wl.count);
    c_wl->add_option("--strata", wl.strata, "lo:hi[,lo:hi...]");
    c_wl->add_option("--seed", wl.seed);
    c_wl->add_flag("--no-group-by", wl.no_group_by);
    c_wl->add_option("--out", wl.out)->required();

    SynthArgs syn;
    auto *c_syn = app.add_subcommand("synth", "Write the synthetic demo dataset");
    c_syn->add_option("--rows", syn.rows);
    c_syn->add_option("--seed", syn.seed);
    c_syn->add_option("--csv", syn.csv)->required();
    c_syn->add_option("--schema", syn.schema)->required();

    RunAllArgs all;
    auto *c_all = app.add_subcommand("run-all", "ingest, train, certify, workload and evaluate in one go");
    c_all->add_option("--csv", all.csv)->required();
    c_all->add_option("--schema", all.schema)->required();
    c_all->add_option("--workdir", all.workdir)->required();
    c_all->add_option("--encoding", all.encoding)->check(CLI::IsMember({"binary", "onehot"}));
    c_all->add_option("--epochs", all.epochs);
    c_all->add_option("--hidden", all.hidden, "Hidden width (0 = input dimension)");
    c_all->add_option("--lr", all.lr);
    c_all->add_option("--draws-per-latent", all.draws_per_latent);
    c_all->add_option("--agg", all.agg)->check(CLI::IsMember({"mode", "weighted"}));
    c_all->add_option("--seed", all.seed);
    c_all->add_option("--sample-frac", all.sample_frac);
    c_all->add_option("--reps", all.reps);
    c_all->add_option("--workload-count", all.workload_count);
    c_all->add_option("--strata", all.strata);
    c_all->add_option("--alpha", all.alpha);
    c_all->add_option("--test-size", all.test_size);
    c_all->add_flag("--skip-certify", all.skip_certify);

    std::vector<std::string> argv_store{"gaqp"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<char *> argv;
    for (auto &s : argv_store)
        argv.push_back(s.data());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*c_ingest)
            run_ingest(ingest, out);
        else if (*c_train)
            run_train(trainer, out);
        else if (*c_thr)
            run_thresholds(thr, out);
        else if (*c_cert)
            run_certify(cert, out);
        else if (*c_sample)
            run_sample(smp, out);
        else if (*c_query)
            run_query(qry, in, out, err);
        else if (*c_eval)
            run_evaluate(ev, out);
        else if (*c_part)
            run_partition(part, out);
        else if (*c_bnt)
            run_bn_train(bnt, out);
        else if (*c_bns)
            run_bn_sample(bns, out);
        else if (*c_bnc)
            run_bn_conditional(bnc, out);
        else if (*c_wl)
            run_workload(wl, out);
        else if (*c_syn)
            run_synth(syn, out);
        else if (*c_all)
            run_all(all, out);
        return kExitOk;
    } catch (const CertificationError &e) {
        err << "certification failed: " << e.what() << '\n';
        return kExitCertification;
    } catch (const Error &e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::invalid_argument &e) {
        err << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception &e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    }
}

} // namespace gaqp
