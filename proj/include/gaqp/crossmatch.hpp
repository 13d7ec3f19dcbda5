#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace gaqp {

struct MatchingResult
{
    std::vector<std::pair<std::size_t, std::size_t>> pairs; ///< (i, j) with i < j, sorted by i
    double total_weight = 0.0;
};

/// Exact minimum-weight perfect matching on the complete graph whose edge weights are given by the
/// symmetric N x N row-major matrix `dist`. N must be even.
MatchingResult min_weight_perfect_matching(std::span<const double> dist, std::size_t n);

/// Maximum-weight matching among maximum-cardinality matchings of a general graph with integer weights.
/// Returns mate[v] (or -1). Edges are (u, v, weight).
struct WeightedEdge
{
    std::size_t u;
    std::size_t v;
    std::int64_t weight;
};
std::vector<long> max_weight_matching(std::size_t num_vertices, std::span<const WeightedEdge> edges,
                                      bool max_cardinality);

/// log P(A_DM = a) under the cross-match null for N points of which n_d are labelled D.
/// Returns -inf for parity-infeasible or out-of-range a.
double crossmatch_null_log_pmf(std::size_t n, std::size_t n_d, std::size_t a);
double crossmatch_null_pmf(std::size_t n, std::size_t n_d, std::size_t a);
/// P(A_DM <= a) under the null.
double crossmatch_p_value(std::size_t n, std::size_t n_d, std::size_t a);

struct CrossMatchOutcome
{
    std::size_t a_dd = 0;
    std::size_t a_mm = 0;
    std::size_t a_dm = 0;
    double p_value = 1.0;
    bool reject = false;
    std::optional<std::size_t> dropped_model_point;
};

using PointSet = std::vector<std::vector<double>>;

/// Cross-match two-sample test on Euclidean distances. An odd combined count drops one model point
/// chosen with `seed`.
CrossMatchOutcome crossmatch_test(const PointSet &dataset_points, const PointSet &model_points, double alpha,
                                  std::uint64_t seed = 1);

} // namespace gaqp
