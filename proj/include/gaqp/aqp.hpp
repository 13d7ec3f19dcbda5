#pragma once

#include "gaqp/relation.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace gaqp {

enum class AggregateKind : std::uint8_t { Avg, Sum, Count };
enum class CompareOp : std::uint8_t { Eq, Ne, Lt, Gt, Le, Ge };

std::string_view to_string(AggregateKind kind);
std::string_view to_string(CompareOp op);

struct Literal
{
    std::string text;
    bool quoted = false;

    bool operator==(const Literal &) const = default;
};

struct Expr
{
    enum class Kind : std::uint8_t { Compare, And, Or };

    Kind kind = Kind::Compare;
    std::string attribute;
    CompareOp op = CompareOp::Eq;
    Literal literal;
    std::vector<Expr> children;

    bool operator==(const Expr &) const = default;
};

struct QueryAst
{
    AggregateKind aggregate = AggregateKind::Count;
    std::optional<std::string> measure; ///< absent for COUNT
    std::vector<std::string> select_attributes;
    std::string table;
    std::optional<Expr> filter;
    std::vector<std::string> group_by;

    bool operator==(const QueryAst &) const = default;
};

/// Throws SyntaxError carrying the byte offset of the offending token.
QueryAst parse_query(std::string_view text);
/// Canonical text; parse_query(to_string(q)) == q.
std::string to_string(const QueryAst &query);
std::string to_string(const Expr &expr);

/// A query resolved against a schema: comparisons become per-attribute domain masks.
class BoundQuery
{
public:
    BoundQuery(const QueryAst &query, const Schema &schema);

    const QueryAst &ast() const { return ast_; }
    bool matches(std::span<const Code> tuple) const;
    bool matches(const Relation &relation, std::size_t row) const;
    /// Numeric value of the measure for a domain code (unused for COUNT).
    double measure_value(Code code) const { return measure_values_[code]; }
    std::optional<std::size_t> measure_index() const { return measure_; }
    const std::vector<std::size_t> &group_indices() const { return group_; }

private:
    struct Node
    {
        Expr::Kind kind;
        std::size_t attribute = 0;
        std::vector<bool> mask;
        std::vector<Node> children;
    };

    bool eval(const Node &node, const Relation *rel, std::size_t row, std::span<const Code> tuple) const;
    Node compile(const Expr &expr, const Schema &schema) const;

    QueryAst ast_;
    std::optional<Node> filter_;
    std::optional<std::size_t> measure_;
    std::vector<double> measure_values_;
    std::vector<std::size_t> group_;
};

struct GroupValue
{
    Tuple key;         ///< codes of the GROUP BY attributes
    std::string label; ///< their labels joined by '|'
    double value = 0.0;
    double half_width = 0.0; ///< 95% normal-approximation confidence half-width
    std::size_t support = 0; ///< satisfying rows that contributed
};

/// One entry per non-empty group, ordered by key. Ungrouped queries have at most one entry with an empty key.
struct AggregateEstimate
{
    std::vector<GroupValue> groups;

    const GroupValue *find(const Tuple &key) const;
};

AggregateEstimate evaluate_exact(const Relation &relation, const QueryAst &query);
AggregateEstimate evaluate_exact(const Relation &relation, const BoundQuery &query);

/// Scales sample aggregates to a population of `population_n` rows. `weights`, when given, holds one
/// non-negative weight per sample row and turns the estimators into weighted ones.
AggregateEstimate estimate_from_sample(const Relation &sample, const QueryAst &query, std::size_t population_n,
                                       std::span<const double> weights = {});
AggregateEstimate estimate_from_sample(const Relation &sample, const BoundQuery &query, std::size_t population_n,
                                       std::span<const double> weights = {});

/// Fraction of rows satisfying the filter.
double selectivity(const Relation &relation, const BoundQuery &query);

/*----------------------------------------------------------------------------------------------------------------------
 * Error metrics
 *--------------------------------------------------------------------------------------------------------------------*/

/// |estimate - truth| / |truth|.
double relative_error(double truth, double estimate);

struct GroupError
{
    std::optional<double> value; ///< absent when every true group has truth 0
    std::size_t true_groups = 0; ///< r
    std::size_t estimated = 0;   ///< r'
    std::size_t excluded = 0;    ///< true groups skipped because their truth is 0
};

/// Average relative error over the true groups, charging 1 for each group the estimate misses.
GroupError group_relative_error(const AggregateEstimate &truth, const AggregateEstimate &estimate);

/// Workload mean of per-query errors.
double average_relative_error(std::span<const double> errors);

struct ErrorRow
{
    std::size_t query_id = 0;
    std::string query;
    double truth = 0.0; ///< ungrouped queries only; NaN for GROUP BY
    double estimate_dataset = 0.0;
    double estimate_model = 0.0;
    double relerr_dataset = 0.0;
    double relerr_model = 0.0;
    double red = 0.0;
    double selectivity = 0.0;
    double missing_dataset = 0.0; ///< mean share of true groups missing from the estimate
    double missing_model = 0.0;
};

struct ErrorReport
{
    std::vector<ErrorRow> rows;
    std::size_t excluded = 0; ///< queries dropped because their truth is 0
    double mean_relerr_dataset = 0.0;
    double mean_relerr_model = 0.0;
    double median_red = 0.0;
};

/// Scores every query on each repetition's dataset sample and model sample, averages the relative
/// errors over repetitions and reports RED = |relerr_model - relerr_dataset|.
ErrorReport evaluate_workload(const Relation &relation, std::span<const std::string> queries,
                              std::span<const Relation> dataset_samples, std::span<const Relation> model_samples,
                              std::size_t population_n);

void write_error_csv(const ErrorReport &report, std::ostream &out);
double median(std::vector<double> values);

/*----------------------------------------------------------------------------------------------------------------------
 * Workloads
 *--------------------------------------------------------------------------------------------------------------------*/

struct WorkloadConfig
{
    std::size_t count = 100;
    /// Selectivity ranges [lo, hi]; queries are split evenly across them.
    std::vector<std::pair<double, double>> strata{{0.05, 1.0}};
    bool group_by = true;
    std::string table = "R";
    std::uint64_t seed = 1;
};

struct Workload
{
    std::vector<std::string> queries;
    std::vector<std::size_t> stratum;
    std::vector<double> selectivity;
    std::vector<std::size_t> predicate_count;
    std::vector<bool> underfilled; ///< per stratum
};

Workload generate_workload(const Relation &relation, const WorkloadConfig &cfg);

/// Row indices of a uniform sample without replacement, in increasing order.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t m, std::uint64_t seed);

} // namespace gaqp
