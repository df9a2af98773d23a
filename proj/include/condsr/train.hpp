#pragma once

#include "condsr/autodiff.hpp"
#include "condsr/graph.hpp"
#include "condsr/models.hpp"
#include "condsr/shift_metrics.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <span>
#include <vector>

namespace condsr {

struct TrainConfig {
    double lambda_cmd = 0.0;
    double lambda_mmd = 0.0;
    int epochs = 200;
    double learning_rate = 0.01;
    double weight_decay = 5e-4;
    std::uint64_t seed = 0;
    CmdConfig cmd;
    MmdConfig mmd;

    void validate() const;
};

/// One epoch's objective, split into its parts.
struct LossRecord {
    double total = 0.0;
    double ce = 0.0;
    double cmd = 0.0;
    double mmd = 0.0;
};

struct TrainedModel {
    ModelConfig model;
    TrainConfig train;
    ad::ParamSet params;
    std::vector<LossRecord> history;
};

/// Differentiable pieces of the shift-regularized objective.
struct LossTerms {
    ad::Var total;
    ad::Var ce;
    ad::Var cmd;
    ad::Var mmd;
};

/// `m` pool members drawn uniformly without replacement, sorted ascending.
std::vector<NodeId> sample_iid(std::span<const NodeId> pool, int m, Rng& rng);

/// mean CE over `train_idx` + lambda_cmd * cmd(H_train, H_iid)
///                         + lambda_mmd * mmd(H_train, H_iid).
/// A regularizer with zero weight is still evaluated (for logging) but does
/// not enter `total`.
LossTerms condsr_loss(const ForwardResult& fw, std::span<const int> labels, std::span<const NodeId> train_idx,
                      std::span<const NodeId> iid_idx, const TrainConfig& cfg);

/// Full-batch Adam training with a fresh IID draw (|train| nodes from the
/// split's pool) every epoch. Deterministic in `tcfg.seed`.
///
/// Throws NumericalError naming the epoch and loss parts if the objective
/// becomes non-finite.
TrainedModel train(const SparseGraph& g, const NormalizedAdjacency& adj, const SplitSpec& split,
                   const ModelConfig& mcfg, const TrainConfig& tcfg);

/// Last-hidden-layer representations and class probabilities of a trained
/// model, in inference mode.
struct Inference {
    Matrix hidden;
    Matrix probs;
};
Inference infer(const TrainedModel& model, const NormalizedAdjacency& adj, const SparseRowMatrix& x);

/// Fraction of `nodes` whose top-ranked class equals the label.
double accuracy(const Matrix& probs, std::span<const int> labels, std::span<const NodeId> nodes);

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Model checkpoint plus config echo and loss history.
nlohmann::json checkpoint_to_json(const TrainedModel& m);
TrainedModel checkpoint_from_json(const nlohmann::json& j);

/// SplitMix64 finalizer; derives independent RNG streams from one seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace condsr
