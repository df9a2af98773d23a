#pragma once

#include "condsr/autodiff.hpp"
#include "condsr/graph.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <string_view>

namespace condsr {

enum class Arch { Gcn, Appnp };

std::string_view to_string(Arch a);
Arch arch_from_string(std::string_view s);

/// Two-layer GNN configuration. Hidden activation is tanh, so hidden
/// representations are bounded in [-1, 1].
struct ModelConfig {
    Arch arch = Arch::Appnp;
    int hidden_dim = 64;
    double appnp_teleport = 0.1;
    int appnp_hops = 10;
    double dropout = 0.0;

    void validate() const;
};

struct ForwardResult {
    ad::Var hidden;  ///< last hidden layer, n x hidden_dim
    ad::Var logits;  ///< n x K
    ad::Var probs;   ///< row-softmax(logits)
};

/// Input features in the sparse row layout the models consume.
SparseRowMatrix feature_matrix(const SparseGraph& g);

/// Glorot-uniform weights W1 (d x hidden), W2 (hidden x K); zero biases b1, b2.
ad::ParamSet init_params(const ModelConfig& cfg, int in_dim, int num_classes, std::uint64_t seed);

/// hidden = tanh(A~ X W1 + b1); logits = A~ hidden W2 + b2.
ForwardResult gcn_forward(const ad::BoundParams& params, const NormalizedAdjacency& adj, const SparseRowMatrix& x,
                          double dropout = 0.0, Rng* rng = nullptr);

/// hidden = tanh(X W1 + b1); H0 = hidden W2 + b2;
/// Z <- (1 - beta) A~ Z + beta H0, `hops` times from Z = H0; logits = Z.
ForwardResult appnp_forward(const ad::BoundParams& params, const NormalizedAdjacency& adj, const SparseRowMatrix& x,
                            double teleport, int hops, double dropout = 0.0, Rng* rng = nullptr);

/// Dispatches on `cfg.arch`. Dropout is applied only when `rng` is non-null.
ForwardResult forward(const ModelConfig& cfg, const ad::BoundParams& params, const NormalizedAdjacency& adj,
                      const SparseRowMatrix& x, Rng* rng = nullptr);

/// Class probabilities from a parameter snapshot (inference mode).
Matrix predict_probs(const ModelConfig& cfg, const ad::ParamSet& params, const NormalizedAdjacency& adj,
                     const SparseRowMatrix& x);

// Checkpoint pieces: params serialize as an ordered array of
// {"name", "rows", "cols", "data"} with data in row-major order.
nlohmann::json config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const nlohmann::json& j);
nlohmann::json params_to_json(const ad::ParamSet& params);
ad::ParamSet params_from_json(const nlohmann::json& j);

}  // namespace condsr
