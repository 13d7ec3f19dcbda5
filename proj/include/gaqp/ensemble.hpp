#pragma once

#include "gaqp/relation.hpp"
#include "gaqp/vae.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gaqp {

/*----------------------------------------------------------------------------------------------------------------------
 * R-ELBO
 *--------------------------------------------------------------------------------------------------------------------*/

enum class RElboEstimator : std::uint8_t {
    /// Every q-draw contributes with weight proportional to its acceptance probability.
    Weighted = 0,
    /// Literal accept/reject with a uniform draw; tuples with no accepted draw are skipped.
    Rejection = 1,
};

struct RElboResult
{
    double value = 0.0; ///< per-tuple mean
    std::size_t tuples = 0;
    std::size_t skipped = 0;
    bool unreliable = false; ///< more than 10% of tuples skipped
};

/// Monte Carlo resampled ELBO of `data` under `model` at threshold T.
RElboResult r_elbo(const VaeParams &model, const EncodedDataset &data, double threshold, std::size_t n_draws,
                   std::uint64_t seed, RElboEstimator estimator = RElboEstimator::Weighted);

/// As r_elbo for several thresholds, reusing the same q-draws for all of them.
std::vector<RElboResult> r_elbo(const VaeParams &model, const EncodedDataset &data, std::span<const double> thresholds,
                                std::size_t n_draws, std::uint64_t seed,
                                RElboEstimator estimator = RElboEstimator::Weighted);

double bound_sum(std::span<const double> scores);

/*----------------------------------------------------------------------------------------------------------------------
 * Bound validation
 *--------------------------------------------------------------------------------------------------------------------*/

struct BoundValidationConfig
{
    std::vector<double> thresholds{-10.0, 0.0, 10.0};
    std::size_t n_subsets = 200;
    std::size_t n_draws = 64;
    /// Tuples per group used for scoring (0 scores every tuple).
    std::size_t eval_tuples = 0;
    EncodingMode encoding = EncodingMode::Binary;
    TrainConfig train;
    std::uint64_t seed = 1;
};

struct BoundValidationResult
{
    std::vector<double> thresholds;
    std::vector<double> fraction; ///< per threshold, share of evaluated subsets where the bound held
    std::size_t evaluated = 0;
    std::size_t skipped = 0; ///< subsets whose union model failed to train
    /// Per-tuple losses (negated R-ELBO) of each group's own model, [group][threshold].
    std::vector<std::vector<double>> group_loss;
};

/// Trains one model per group, then for random subsets a model on their union, and checks
/// loss(union) <= sum of member losses at every threshold.
BoundValidationResult validate_bound(const Relation &relation, std::span<const std::vector<std::size_t>> groups,
                                     const BoundValidationConfig &cfg);

/*----------------------------------------------------------------------------------------------------------------------
 * Partitioning
 *--------------------------------------------------------------------------------------------------------------------*/

struct OlapNode
{
    std::string label;
    std::vector<std::size_t> children;
    std::optional<std::size_t> group; ///< leaf only: atomic group id
};

/// Rooted, ordered tree whose leaves are atomic groups. Node 0 is the root.
struct OlapTree
{
    std::vector<OlapNode> nodes;

    std::size_t num_groups() const;
    /// Atomic group ids under `node`, in tree order.
    std::vector<std::size_t> groups_under(std::size_t node) const;
};

/// Reads an indented tree, one node per line. Leaves are numbered in file order.
OlapTree parse_hierarchy(std::istream &in);
OlapTree load_hierarchy(const std::string &path);

/// Node scores where leaves take `leaf_scores[group]` and internal nodes the bound_sum of their leaves.
std::vector<double> default_node_scores(const OlapTree &tree, std::span<const double> leaf_scores);

struct PartitionPlan
{
    std::size_t k = 0;
    std::vector<std::size_t> nodes;              ///< hierarchy plans: the chosen tree-cut nodes
    std::vector<std::vector<std::size_t>> parts; ///< group ids per partition
    double objective = 0.0;
    bool flagged = false; ///< requested K exceeded what the input allows
};

/// Minimum-score tree cut with at most K parts. `node_scores` is indexed by node.
PartitionPlan partition_hierarchy(const OlapTree &tree, std::size_t k, std::span<const double> node_scores);

/// Score of the half-open run [begin, end) of ordered groups.
using RunScore = std::function<double(std::size_t begin, std::size_t end)>;

struct ContiguousPlan
{
    std::vector<std::size_t> boundaries; ///< b_0 = 0 < b_1 < ... < b_K = l, runs are [b_i, b_{i+1})
    double objective = 0.0;
    bool flagged = false;
};

/// Exactly K contiguous runs minimizing the summed run score.
ContiguousPlan partition_contiguous(std::size_t num_groups, std::size_t k, const RunScore &run_score);
/// Run scores taken as the bound_sum of member scores.
ContiguousPlan partition_contiguous(std::span<const double> scores, std::size_t k);

} // namespace gaqp
