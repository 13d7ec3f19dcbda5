#include "gaqp/bayesnet.hpp"

#include "gaqp/error.hpp"
#include "gaqp/vae.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <sstream>

namespace gaqp {

bool BnGraph::has_edge(std::size_t from, std::size_t to) const
{
    const auto &p = parents[to];
    return std::binary_search(p.begin(), p.end(), from);
}

std::size_t BnGraph::num_edges() const
{
    std::size_t n = 0;
    for (const auto &p : parents)
        n += p.size();
    return n;
}

std::vector<std::size_t> BnGraph::topological_order() const
{
    const auto n = size();
    std::vector<std::size_t> indegree(n);
    std::vector<std::vector<std::size_t>> children(n);
    for (std::size_t v = 0; v != n; ++v) {
        indegree[v] = parents[v].size();
        for (auto p : parents[v])
            children[p].push_back(v);
    }
    std::vector<std::size_t> order;
    std::vector<bool> done(n, false);
    while (order.size() < n) {
        std::size_t next = n;
        for (std::size_t v = 0; v != n; ++v)
            if (!done[v] && indegree[v] == 0) {
                next = v;
                break;
            }
        if (next == n)
            throw DataError("Bayesian network graph has a cycle");
        done[next] = true;
        order.push_back(next);
        for (auto c : children[next])
            --indegree[c];
    }
    return order;
}

bool BnGraph::is_acyclic() const
{
    try {
        topological_order();
        return true;
    } catch (const DataError &) {
        return false;
    }
}

std::size_t Cpt::row_index(std::span<const Code> tuple) const
{
    std::size_t r = 0;
    for (std::size_t i = 0; i != parents.size(); ++i)
        r = r * parent_cards[i] + tuple[parents[i]];
    return r;
}

namespace {

/// counts[row * card + value] for `node` given `parents`.
std::vector<double> family_counts(const Relation &relation, std::size_t node, std::span<const std::size_t> parents)
{
    const auto &schema = relation.schema();
    const auto card = schema[node].domain_size();
    std::size_t rows = 1;
    for (auto p : parents)
        rows *= schema[p].domain_size();
    std::vector<double> counts(rows * card, 0.0);
    const auto &col = relation.column(node);
    for (std::size_t i = 0; i != relation.num_rows(); ++i) {
        std::size_t r = 0;
        for (auto p : parents)
            r = r * schema[p].domain_size() + relation.column(p)[i];
        counts[r * card + col[i]] += 1.0;
    }
    return counts;
}

bool reaches(const BnGraph &g, std::size_t from, std::size_t to)
{
    // Is there a directed path from -> ... -> to?
    std::vector<std::vector<std::size_t>> children(g.size());
    for (std::size_t v = 0; v != g.size(); ++v)
        for (auto p : g.parents[v])
            children[p].push_back(v);
    std::vector<bool> seen(g.size(), false);
    std::vector<std::size_t> stack{from};
    while (!stack.empty()) {
        const auto v = stack.back();
        stack.pop_back();
        if (v == to)
            return true;
        if (seen[v])
            continue;
        seen[v] = true;
        for (auto c : children[v])
            stack.push_back(c);
    }
    return false;
}

void add_parent(BnGraph &g, std::size_t from, std::size_t to)
{
    auto &p = g.parents[to];
    p.insert(std::upper_bound(p.begin(), p.end(), from), from);
}

void remove_parent(BnGraph &g, std::size_t from, std::size_t to)
{
    auto &p = g.parents[to];
    p.erase(std::find(p.begin(), p.end(), from));
}

} // namespace

double bic_local_score(const Relation &relation, std::size_t node, std::span<const std::size_t> parents)
{
    const auto card = relation.schema()[node].domain_size();
    const auto counts = family_counts(relation, node, parents);
    const auto rows = counts.size() / card;
    double ll = 0.0;
    for (std::size_t r = 0; r != rows; ++r) {
        double total = 0.0;
        for (std::size_t k = 0; k != card; ++k)
            total += counts[r * card + k];
        for (std::size_t k = 0; k != card; ++k) {
            const double c = counts[r * card + k];
            if (c > 0)
                ll += c * std::log(c / total);
        }
    }
    const double n = static_cast<double>(relation.num_rows());
    const double params = static_cast<double>((card - 1) * rows);
    return ll - 0.5 * std::log(std::max(n, 1.0)) * params;
}

double bic_score(const Relation &relation, const BnGraph &graph)
{
    double s = 0.0;
    for (std::size_t v = 0; v != graph.size(); ++v)
        s += bic_local_score(relation, v, graph.parents[v]);
    return s;
}

BnGraph learn_structure(const Relation &relation, std::size_t max_parents, std::uint64_t)
{
    const auto m = relation.num_attributes();
    BnGraph g(m);
    std::map<std::pair<std::size_t, std::vector<std::size_t>>, double> cache;
    auto local = [&](std::size_t v, const std::vector<std::size_t> &ps) {
        const auto key = std::make_pair(v, ps);
        auto it = cache.find(key);
        if (it == cache.end())
            it = cache.emplace(key, bic_local_score(relation, v, ps)).first;
        return it->second;
    };
    auto with = [](std::vector<std::size_t> ps, std::size_t p) {
        ps.insert(std::upper_bound(ps.begin(), ps.end(), p), p);
        return ps;
    };
    auto without = [](std::vector<std::size_t> ps, std::size_t p) {
        ps.erase(std::find(ps.begin(), ps.end(), p));
        return ps;
    };

    enum class Move { Add, Delete, Reverse };
    constexpr double kMinGain = 1e-9;
    while (true) {
        double best_gain = kMinGain;
        Move best_move = Move::Add;
        std::size_t best_u = 0, best_v = 0;
        bool found = false;
        auto consider = [&](double gain, Move mv, std::size_t u, std::size_t v) {
            if (gain > best_gain) {
                best_gain = gain;
                best_move = mv;
                best_u = u;
                best_v = v;
                found = true;
            }
        };
        // Pairs in lexicographic order; only strictly larger gains replace, so ties keep the first.
        for (std::size_t u = 0; u != m; ++u) {
            for (std::size_t v = 0; v != m; ++v) {
                if (u == v)
                    continue;
                const auto &pv = g.parents[v];
                const auto &pu = g.parents[u];
                if (g.has_edge(u, v)) {
                    const double base_v = local(v, pv);
                    consider(local(v, without(pv, u)) - base_v, Move::Delete, u, v);
                    if (pu.size() < max_parents) {
                        auto trial = g;
                        remove_parent(trial, u, v);
                        if (!reaches(trial, u, v)) {
                            const double gain =
                                local(v, without(pv, u)) - base_v + local(u, with(pu, v)) - local(u, pu);
                            consider(gain, Move::Reverse, u, v);
                        }
                    }
                } else if (!g.has_edge(v, u) && pv.size() < max_parents && !reaches(g, v, u)) {
                    consider(local(v, with(pv, u)) - local(v, pv), Move::Add, u, v);
                }
            }
        }
        if (!found)
            break;
        switch (best_move) {
        case Move::Add:
            add_parent(g, best_u, best_v);
            break;
        case Move::Delete:
            remove_parent(g, best_u, best_v);
            break;
        case Move::Reverse:
            remove_parent(g, best_u, best_v);
            add_parent(g, best_v, best_u);
            break;
        }
    }
    return g;
}

std::vector<Cpt> fit_cpts(const Relation &relation, const BnGraph &graph, double laplace_alpha)
{
    if (laplace_alpha < 0)
        throw DataError("Laplace alpha must be non-negative");
    const auto &schema = relation.schema();
    std::vector<Cpt> cpts;
    for (std::size_t v = 0; v != graph.size(); ++v) {
        Cpt cpt;
        cpt.parents = graph.parents[v];
        for (auto p : cpt.parents)
            cpt.parent_cards.push_back(schema[p].domain_size());
        cpt.card = schema[v].domain_size();
        cpt.probs = family_counts(relation, v, cpt.parents);
        const auto card = static_cast<double>(cpt.card);
        for (std::size_t r = 0; r != cpt.num_rows(); ++r) {
            double total = 0.0;
            for (std::size_t k = 0; k != cpt.card; ++k)
                total += cpt.probs[r * cpt.card + k];
            const double denom = total + laplace_alpha * card;
            for (std::size_t k = 0; k != cpt.card; ++k) {
                auto &p = cpt.probs[r * cpt.card + k];
                p = denom > 0 ? (p + laplace_alpha) / denom : 1.0 / card;
            }
        }
        cpts.push_back(std::move(cpt));
    }
    return cpts;
}

BayesNet fit_bayesnet(const Relation &relation, std::size_t max_parents, double laplace_alpha, std::uint64_t seed)
{
    BayesNet bn;
    for (const auto &a : relation.schema().attributes) {
        bn.names.push_back(a.name);
        bn.cards.push_back(a.domain_size());
    }
    bn.graph = learn_structure(relation, max_parents, seed);
    bn.cpts = fit_cpts(relation, bn.graph, laplace_alpha);
    return bn;
}

BayesNet make_bayesnet(std::vector<std::string> names, std::vector<std::size_t> cards, std::vector<Cpt> cpts)
{
    const auto n = cards.size();
    if (names.size() != n || cpts.size() != n)
        throw DataError("Bayesian network needs one name and one table per node");
    BayesNet bn;
    bn.graph = BnGraph(n);
    for (std::size_t v = 0; v != n; ++v) {
        auto &cpt = cpts[v];
        if (!std::is_sorted(cpt.parents.begin(), cpt.parents.end()))
            throw DataError("CPT parents must be sorted for node " + names[v]);
        if (cpt.card != cards[v] || cpt.parent_cards.size() != cpt.parents.size())
            throw DataError("CPT shape mismatch for node " + names[v]);
        std::size_t rows = 1;
        for (std::size_t i = 0; i != cpt.parents.size(); ++i) {
            if (cpt.parents[i] >= n || cpt.parent_cards[i] != cards[cpt.parents[i]])
                throw DataError("CPT parent mismatch for node " + names[v]);
            rows *= cpt.parent_cards[i];
        }
        if (cpt.probs.size() != rows * cpt.card)
            throw DataError("CPT size mismatch for node " + names[v]);
        for (std::size_t r = 0; r != rows; ++r) {
            double s = 0.0;
            for (double p : cpt.row(r)) {
                if (!(p >= 0.0))
                    throw DataError("negative CPT entry for node " + names[v]);
                s += p;
            }
            if (std::abs(s - 1.0) > 1e-9)
                throw DataError("CPT row does not sum to one for node " + names[v]);
        }
        bn.graph.parents[v] = cpt.parents;
    }
    if (!bn.graph.is_acyclic())
        throw DataError("Bayesian network graph has a cycle");
    bn.names = std::move(names);
    bn.cards = std::move(cards);
    bn.cpts = std::move(cpts);
    return bn;
}

double joint_probability(const BayesNet &bn, std::span<const Code> tuple)
{
    if (tuple.size() != bn.size())
        throw DataError("tuple arity does not match the network");
    // extended precision so the product is rounded to double once
    long double p = 1.0L;
    for (std::size_t v = 0; v != bn.size(); ++v) {
        if (tuple[v] >= bn.cards[v])
            return 0.0;
        p *= bn.cpts[v].row(bn.cpts[v].row_index(tuple))[tuple[v]];
    }
    return static_cast<double>(p);
}

namespace {

Code draw_from(std::span<const double> probs, Rng &rng)
{
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double u = unif(rng);
    double c = 0.0;
    for (std::size_t k = 0; k != probs.size(); ++k) {
        c += probs[k];
        if (u < c)
            return static_cast<Code>(k);
    }
    // Round-off: fall back to the last value with positive mass.
    for (std::size_t k = probs.size(); k-- > 0;)
        if (probs[k] > 0)
            return static_cast<Code>(k);
    return 0;
}

} // namespace

Relation ancestral_sample(const BayesNet &bn, const Schema &schema, std::size_t n, std::uint64_t seed)
{
    if (schema.size() != bn.size())
        throw DataError("schema does not match the network");
    const auto weighted = likelihood_weighted_sample(bn, {}, n, seed);
    std::vector<Tuple> rows;
    rows.reserve(n);
    for (const auto &s : weighted)
        rows.push_back(s.tuple);
    return Relation::from_rows(schema, rows);
}

Evidence parse_evidence(const Schema &schema, std::string_view text)
{
    Evidence ev;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto end = text.find(',', pos);
        if (end == std::string_view::npos)
            end = text.size();
        auto item = text.substr(pos, end - pos);
        pos = end + 1;
        const auto trim = [](std::string_view s) {
            while (!s.empty() && s.front() == ' ')
                s.remove_prefix(1);
            while (!s.empty() && s.back() == ' ')
                s.remove_suffix(1);
            return s;
        };
        item = trim(item);
        if (item.empty())
            continue;
        const auto eq = item.find('=');
        if (eq == std::string_view::npos)
            throw DataError("evidence item '" + std::string(item) + "' is not of the form A=v");
        const auto attr = schema.require(trim(item.substr(0, eq)));
        const auto value = trim(item.substr(eq + 1));
        auto code = schema[attr].lookup(value);
        if (!code && schema[attr].kind == AttributeKind::Numeric) {
            try {
                code = schema[attr].bin_of(std::stod(std::string(value)));
            } catch (const std::exception &) {
            }
        }
        if (!code)
            throw DataError("evidence value '" + std::string(value) + "' is not in the domain of " +
                            schema[attr].name);
        ev.emplace_back(attr, *code);
    }
    return ev;
}

std::vector<WeightedSample> likelihood_weighted_sample(const BayesNet &bn, const Evidence &evidence, std::size_t n,
                                                       std::uint64_t seed)
{
    std::vector<int> clamped(bn.size(), -1);
    for (auto [attr, value] : evidence) {
        if (attr >= bn.size() || value >= bn.cards[attr])
            throw DataError("evidence outside the network's domain");
        clamped[attr] = static_cast<int>(value);
    }
    const auto order = bn.graph.topological_order();
    Rng rng(seed);
    std::vector<WeightedSample> out;
    out.reserve(n);
    for (std::size_t i = 0; i != n; ++i) {
        WeightedSample s;
        s.tuple.assign(bn.size(), 0);
        for (auto v : order) {
            const auto row = bn.cpts[v].row(bn.cpts[v].row_index(s.tuple));
            if (clamped[v] >= 0) {
                s.tuple[v] = static_cast<Code>(clamped[v]);
                s.weight *= row[s.tuple[v]];
            } else {
                s.tuple[v] = draw_from(row, rng);
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

void write_bayesnet_text(const BayesNet &bn, std::ostream &out)
{
    out << "bayesnet " << bn.size() << '\n';
    for (std::size_t v = 0; v != bn.size(); ++v) {
        const auto &cpt = bn.cpts[v];
        out << "node " << bn.names[v] << ' ' << bn.cards[v] << " parents";
        for (auto p : cpt.parents)
            out << ' ' << p;
        out << '\n';
        for (std::size_t r = 0; r != cpt.num_rows(); ++r) {
            out << "row";
            for (double p : cpt.row(r))
                out << ' ' << format_double(p);
            out << '\n';
        }
    }
}

BayesNet read_bayesnet_text(std::istream &in)
{
    std::string word;
    std::size_t n = 0;
    if (!(in >> word >> n) || word != "bayesnet")
        throw DataError("not a Bayesian network text file");
    std::vector<std::string> names(n);
    std::vector<std::size_t> cards(n);
    std::vector<std::vector<std::size_t>> parents(n);
    std::vector<std::vector<double>> rows(n);
    std::string line;
    std::getline(in, line);
    std::size_t v = 0;
    bool started = false;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        if (!(ls >> word))
            continue;
        if (word == "node") {
            if (started)
                ++v;
            started = true;
            if (v >= n)
                throw DataError("Bayesian network text lists too many nodes");
            std::string tag;
            if (!(ls >> names[v] >> cards[v] >> tag) || tag != "parents")
                throw DataError("malformed node line: " + line);
            std::size_t p;
            while (ls >> p)
                parents[v].push_back(p);
        } else if (word == "row") {
            if (!started)
                throw DataError("CPT row before any node line");
            std::string tok;
            while (ls >> tok)
                rows[v].push_back(std::stod(tok));
        } else {
            throw DataError("unexpected line in Bayesian network text: " + line);
        }
    }
    if (n != 0 && (!started || v + 1 != n))
        throw DataError("Bayesian network text lists too few nodes");
    std::vector<Cpt> cpts(n);
    for (std::size_t i = 0; i != n; ++i) {
        cpts[i].parents = parents[i];
        for (auto p : parents[i]) {
            if (p >= n)
                throw DataError("parent index out of range");
            cpts[i].parent_cards.push_back(cards[p]);
        }
        cpts[i].card = cards[i];
        cpts[i].probs = std::move(rows[i]);
    }
    return make_bayesnet(std::move(names), std::move(cards), std::move(cpts));
}

} // namespace gaqp
