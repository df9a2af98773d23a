#pragma once

#include "condsr/graph.hpp"

#include <cstdint>
#include <vector>

namespace condsr {

/// Row `source` of the personalized PageRank matrix (I - (1 - alpha) A~)^{-1}.
struct PprVector {
    NodeId source = 0;
    double alpha = 1.0;
    Eigen::VectorXd scores;
};

struct PprOptions {
    double tol = 1e-10;
    int max_iter = 10000;
};

/// Neumann-series iteration p <- e_source + (1 - alpha) A~^T p, stopped when
/// the sup-norm of the update drops below `opts.tol`.
///
/// Throws ConvergenceError (with the last residual) if `opts.max_iter` sweeps
/// are not enough.
PprVector ppr_row(const NormalizedAdjacency& adj, NodeId source, double alpha, const PprOptions& opts = {});

/// Locality-biased training set.
///
/// For each class: draw one seed node of that class uniformly, rank the
/// class's nodes by the seed's PPR score (ties to the lower id, the seed
/// first), keep the top `per_class`. Returns the union, sorted ascending.
std::vector<NodeId> biased_train_sample(const SparseGraph& g, const NormalizedAdjacency& adj, int per_class,
                                        double alpha, std::uint64_t seed, const PprOptions& opts = {});

/// Unbiased counterpart: `per_class` uniform draws from each class.
std::vector<NodeId> uniform_train_sample(const SparseGraph& g, int per_class, std::uint64_t seed);

}  // namespace condsr
