#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace condsr {

using NodeId = int;
using Matrix = Eigen::MatrixXd;
using SparseRowMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

struct Edge {
    NodeId u = 0;
    NodeId v = 0;

    friend bool operator==(const Edge&, const Edge&) = default;
    friend auto operator<=>(const Edge&, const Edge&) = default;
};

// =============================================================================
// SparseGraph
// =============================================================================

/// Undirected, unweighted attributed graph.
///
/// Edges are stored once each in canonical (u < v) order, sorted and
/// deduplicated. Self-loops are rejected; they are only introduced when the
/// adjacency is normalized.
class SparseGraph {
public:
    SparseGraph(int num_nodes, std::vector<Edge> edges, Matrix features,
                std::vector<int> labels, int num_classes);

    int num_nodes() const { return num_nodes_; }
    int num_classes() const { return num_classes_; }
    int feature_dim() const { return static_cast<int>(features_.cols()); }
    std::size_t num_edges() const { return edges_.size(); }

    std::span<const Edge> edges() const { return edges_; }
    const Matrix& features() const { return features_; }
    std::span<const int> labels() const { return labels_; }

    /// Node ids carrying class `c`, ascending.
    std::vector<NodeId> nodes_of_class(int c) const;

private:
    int num_nodes_;
    int num_classes_;
    std::vector<Edge> edges_;
    Matrix features_;
    std::vector<int> labels_;
};

/// Reads the portable JSON dataset container.
///
/// Throws ParseError for missing or mistyped fields (the message names the
/// field) and ValidationError for out-of-range edge endpoints or labels.
SparseGraph load_graph(const std::filesystem::path& path);

/// Writes `g` in the same container `load_graph` reads.
void save_graph(const SparseGraph& g, const std::filesystem::path& path);

// =============================================================================
// NormalizedAdjacency
// =============================================================================

/// D^{-1/2} (A + I) D^{-1/2}, with D the diagonal row-sum matrix of A + I.
class NormalizedAdjacency {
public:
    explicit NormalizedAdjacency(SparseRowMatrix entries);

    int num_nodes() const { return static_cast<int>(entries_.rows()); }
    const SparseRowMatrix& matrix() const { return entries_; }
    double entry(NodeId i, NodeId j) const { return entries_.coeff(i, j); }
    Matrix to_dense() const { return Matrix(entries_); }

private:
    SparseRowMatrix entries_;
};

NormalizedAdjacency normalize_adjacency(const SparseGraph& g);

// =============================================================================
// Synthetic graphs
// =============================================================================

struct SbmParams {
    std::vector<int> block_sizes{100, 100, 100, 100};
    double p_in = 0.1;
    double p_out = 0.01;
    int feature_dim = 16;
    double feat_shift = 1.0;
};

/// Stochastic block model with Gaussian node features.
///
/// Block b's features are N(feat_shift * e_{b mod d}, I); labels are block
/// ids. Identical (params, seed) give identical graphs.
SparseGraph generate_sbm(const SbmParams& params, std::uint64_t seed);

// =============================================================================
// Splits
// =============================================================================

struct SplitSpec {
    std::vector<NodeId> train_idx;
    std::vector<NodeId> calib_idx;
    std::vector<NodeId> test_idx;
    std::vector<NodeId> iid_pool_idx;
};

/// Calibration-set size for `remaining` non-training nodes:
/// min{1000, floor(remaining / 2)}.
int calibration_size(int remaining);

/// Partitions every node outside `train_idx` uniformly at random into
/// calibration and test sets. `iid_pool_idx` receives all non-training nodes.
SplitSpec make_splits(const SparseGraph& g, std::span<const NodeId> train_idx,
                      std::uint64_t seed);

}  // namespace condsr
