#pragma once

#include "gaqp/relation.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace gaqp {

/// Directed acyclic graph over attributes; parents[v] is sorted.
struct BnGraph
{
    std::vector<std::vector<std::size_t>> parents;

    explicit BnGraph(std::size_t num_nodes = 0) : parents(num_nodes) {}

    std::size_t size() const { return parents.size(); }
    bool has_edge(std::size_t from, std::size_t to) const;
    std::size_t num_edges() const;
    /// Kahn order, smallest index first among ready nodes. Throws on a cycle.
    std::vector<std::size_t> topological_order() const;
    bool is_acyclic() const;

    bool operator==(const BnGraph &) const = default;
};

/// P(node | parents): one probability row over the node's domain per parent assignment. Rows are
/// indexed mixed-radix with the first parent most significant.
struct Cpt
{
    std::vector<std::size_t> parents;
    std::vector<std::size_t> parent_cards;
    std::size_t card = 0;
    std::vector<double> probs; ///< num_rows() x card

    std::size_t num_rows() const { return card == 0 ? 0 : probs.size() / card; }
    std::size_t row_index(std::span<const Code> tuple) const;
    std::span<const double> row(std::size_t r) const { return {probs.data() + r * card, card}; }

    bool operator==(const Cpt &) const = default;
};

struct BayesNet
{
    std::vector<std::string> names;
    std::vector<std::size_t> cards;
    BnGraph graph;
    std::vector<Cpt> cpts;

    std::size_t size() const { return cards.size(); }
    bool operator==(const BayesNet &) const = default;
};

/// BIC of one node given a parent set: maximum-likelihood log-likelihood minus (log n / 2) x free parameters.
double bic_local_score(const Relation &relation, std::size_t node, std::span<const std::size_t> parents);
double bic_score(const Relation &relation, const BnGraph &graph);

/// Greedy hill climbing from the empty graph over edge additions, deletions and reversals.
BnGraph learn_structure(const Relation &relation, std::size_t max_parents, std::uint64_t seed = 1);

/// Laplace-smoothed conditional tables; rows without support are uniform.
std::vector<Cpt> fit_cpts(const Relation &relation, const BnGraph &graph, double laplace_alpha);

BayesNet fit_bayesnet(const Relation &relation, std::size_t max_parents = 3, double laplace_alpha = 1.0,
                      std::uint64_t seed = 1);

/// Builds a network from explicit tables; validates shapes and row sums.
BayesNet make_bayesnet(std::vector<std::string> names, std::vector<std::size_t> cards, std::vector<Cpt> cpts);

double joint_probability(const BayesNet &bn, std::span<const Code> tuple);

/// Forward sampling in topological order.
Relation ancestral_sample(const BayesNet &bn, const Schema &schema, std::size_t n, std::uint64_t seed);

using Evidence = std::vector<std::pair<std::size_t, Code>>;

/// Parses "A=v,B=w" against the schema's labels.
Evidence parse_evidence(const Schema &schema, std::string_view text);

struct WeightedSample
{
    Tuple tuple;
    double weight = 1.0;
};

/// Evidence nodes are clamped; the weight is the product of their conditional probabilities.
std::vector<WeightedSample> likelihood_weighted_sample(const BayesNet &bn, const Evidence &evidence, std::size_t n,
                                                       std::uint64_t seed);

/// Plain-text export listing nodes, parents and CPT rows; doubles round-trip exactly.
void write_bayesnet_text(const BayesNet &bn, std::ostream &out);
BayesNet read_bayesnet_text(std::istream &in);

} // namespace gaqp
