#pragma once

#include "condsr/graph.hpp"

#include <span>
#include <string_view>
#include <vector>

// =============================================================================
/// @file conformal.hpp
/// @brief Split conformal prediction with the adaptive prediction set (APS)
///        score.
///
/// Classes are ranked by descending probability with ties going to the lower
/// class index. The same ranking is used for scoring and for set
/// construction, so a set built at threshold aps_score(p, y) always
/// contains y.
// =============================================================================

namespace condsr {

struct CalibrationResult {
    double epsilon = 0.1;
    double threshold = 0.0;
    int num_scores = 0;  ///< calibration size p
};

struct PredictionSet {
    NodeId node = 0;
    std::vector<int> members;  ///< classes in rank order
};

struct SetOutcome {
    NodeId node = 0;
    int set_size = 0;
    bool covered = false;
    bool correct = false;  ///< top-1 prediction equals the label
};

struct ConformalReport {
    double coverage = 0.0;
    double inefficiency = 0.0;
    double accuracy = 0.0;
    std::vector<SetOutcome> breakdown;
};

/// Class indices ordered by descending probability, ties to the lower index.
std::vector<int> rank_classes(std::span<const double> probs);

/// Cumulative probability of the ranked classes up to and including `label`.
double aps_score(std::span<const double> probs, int label);

/// Threshold at level q = (1 - eps)(1 + 1/p): the ceil(q p)-th smallest
/// score, or the largest score when q >= 1.
CalibrationResult calibrate(std::span<const double> scores, double epsilon);

/// How a threshold becomes a set.
///   Prefix: smallest ranked prefix with cumulative probability >= threshold.
///   Score:  every class whose APS score is <= threshold (may be empty).
enum class SetRule { Prefix, Score };

std::string_view to_string(SetRule r);
SetRule set_rule_from_string(std::string_view s);

/// Smallest ranked prefix whose cumulative probability reaches `threshold`;
/// every class when no prefix does. Trailing classes that do not move the
/// cumulative mass above the threshold are kept as well.
PredictionSet predict_set(std::span<const double> probs, double threshold, NodeId node = 0);

/// Set under either rule; Prefix is predict_set above.
PredictionSet predict_set(std::span<const double> probs, double threshold, SetRule rule, NodeId node = 0);

/// Coverage, mean set size and top-1 accuracy over `sets`. `probs` rows and
/// `labels` are indexed by node id.
ConformalReport evaluate(std::span<const PredictionSet> sets, std::span<const int> labels, const Matrix& probs);

/// APS scores of `nodes` under a row-per-node probability matrix.
std::vector<double> aps_scores(const Matrix& probs, std::span<const int> labels, std::span<const NodeId> nodes);

/// Calibrates on `calib`, builds sets on `test`, and evaluates.
ConformalReport run_split_conformal(const Matrix& probs, std::span<const int> labels, std::span<const NodeId> calib,
                                    std::span<const NodeId> test, double epsilon, SetRule rule = SetRule::Prefix);

}  // namespace condsr
