#include "condsr/conformal.hpp"

#include "condsr/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace condsr {

namespace {

// Slack for the rank ceil((1 - eps)(p + 1)), so that levels which are
// integers in exact arithmetic are not pushed up by rounding.
constexpr double kRankSlack = 1e-9;

std::vector<double> row_of(const Matrix& m, NodeId i) {
    std::vector<double> out(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[static_cast<std::size_t>(j)] = m(i, j);
    return out;
}

}  // namespace

std::vector<int> rank_classes(std::span<const double> probs) {
    std::vector<int> order(probs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return probs[a] > probs[b]; });
    return order;
}

double aps_score(std::span<const double> probs, int label) {
    if (label < 0 || label >= static_cast<int>(probs.size())) {
        throw ValidationError("aps: label " + std::to_string(label) + " outside [0, " + std::to_string(probs.size()) +
                              ")");
    }
    double cumulative = 0.0;
    for (int c : rank_classes(probs)) {
        cumulative += probs[c];
        if (c == label) break;
    }
    return cumulative;
}

CalibrationResult calibrate(std::span<const double> scores, double epsilon) {
    if (scores.empty()) throw ValidationError("calibrate: empty score list");
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw ValidationError("calibrate: epsilon must lie in (0, 1)");

    const auto p = static_cast<long>(scores.size());
    std::vector<double> sorted(scores.begin(), scores.end());
    std::sort(sorted.begin(), sorted.end());

    // q * p with q = (1 - eps)(1 + 1/p).
    const double level = (1.0 - epsilon) * static_cast<double>(p + 1);
    long rank = static_cast<long>(std::ceil(level - kRankSlack));
    rank = std::clamp(rank, 1L, p);
    return {epsilon, sorted[static_cast<std::size_t>(rank - 1)], static_cast<int>(p)};
}

PredictionSet predict_set(std::span<const double> probs, double threshold, NodeId node) {
    PredictionSet set{node, {}};
    double cumulative = 0.0;
    for (int c : rank_classes(probs)) {
        // Past k*, keep only classes that leave the cumulative mass at or
        // below the threshold (zero or absorbed increments), so every class
        // whose score equals the threshold stays in the set.
        if (!set.members.empty() && cumulative >= threshold && cumulative + probs[c] > threshold) break;
        set.members.push_back(c);
        cumulative += probs[c];
    }
    return set;
}

PredictionSet predict_set(std::span<const double> probs, double threshold, SetRule rule, NodeId node) {
    if (rule == SetRule::Prefix) return predict_set(probs, threshold, node);
    PredictionSet set{node, {}};
    double cumulative = 0.0;
    for (int c : rank_classes(probs)) {
        cumulative += probs[c];
        if (cumulative > threshold) break;
        set.members.push_back(c);
    }
    return set;
}

std::string_view to_string(SetRule r) { return r == SetRule::Prefix ? "prefix" : "score"; }

SetRule set_rule_from_string(std::string_view s) {
    if (s == "prefix") return SetRule::Prefix;
    if (s == "score") return SetRule::Score;
    throw ValidationError("unknown set rule '" + std::string(s) + "' (expected prefix or score)");
}

ConformalReport evaluate(std::span<const PredictionSet> sets, std::span<const int> labels, const Matrix& probs) {
    if (sets.empty()) throw ValidationError("evaluate: empty test set");
    if (static_cast<Eigen::Index>(labels.size()) != probs.rows()) {
        throw ShapeError("evaluate: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(probs.rows()) + " probability rows");
    }
    ConformalReport report;
    report.breakdown.reserve(sets.size());
    long covered = 0, correct = 0, total_size = 0;
    for (const PredictionSet& s : sets) {
        if (s.node < 0 || s.node >= probs.rows()) {
            throw ShapeError("evaluate: node " + std::to_string(s.node) + " has no probability row");
        }
        const int y = labels[s.node];
        const std::vector<double> row = row_of(probs, s.node);
        SetOutcome o;
        o.node = s.node;
        o.set_size = static_cast<int>(s.members.size());
        o.covered = std::find(s.members.begin(), s.members.end(), y) != s.members.end();
        o.correct = rank_classes(row).front() == y;
        covered += o.covered;
        correct += o.correct;
        total_size += o.set_size;
        report.breakdown.push_back(o);
    }
    const double n = static_cast<double>(sets.size());
    report.coverage = static_cast<double>(covered) / n;
    report.inefficiency = static_cast<double>(total_size) / n;
    report.accuracy = static_cast<double>(correct) / n;
    return report;
}

std::vector<double> aps_scores(const Matrix& probs, std::span<const int> labels, std::span<const NodeId> nodes) {
    std::vector<double> out;
    out.reserve(nodes.size());
    for (NodeId i : nodes) out.push_back(aps_score(row_of(probs, i), labels[i]));
    return out;
}

ConformalReport run_split_conformal(const Matrix& probs, std::span<const int> labels, std::span<const NodeId> calib,
                                    std::span<const NodeId> test, double epsilon, SetRule rule) {
    const CalibrationResult cal = calibrate(aps_scores(probs, labels, calib), epsilon);
    std::vector<PredictionSet> sets;
    sets.reserve(test.size());
    for (NodeId i : test) sets.push_back(predict_set(row_of(probs, i), cal.threshold, rule, i));
    return evaluate(sets, labels, probs);
}

}  // namespace condsr
