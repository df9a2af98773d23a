#pragma once

#include "condsr/graph.hpp"
#include "condsr/random.hpp"

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

// =============================================================================
/// @file autodiff.hpp
/// @brief Minimal reverse-mode differentiation over dense double matrices.
///
/// A Tape records every value produced by the operations below in creation
/// order, which is already a topological order. `Tape::backward` seeds the
/// scalar output with 1 and walks the record in reverse, accumulating into
/// each node's `grad`.
///
/// Tapes are single-use and confined to one thread. Training builds a fresh
/// tape per step; persistent parameters live in a ParamSet outside the tape.
// =============================================================================

namespace condsr::ad {

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
public:
    Var() = default;

    const Matrix& value() const;
    const Matrix& grad() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    bool requires_grad() const;

    /// Value of a 1x1 node.
    double scalar() const;

    Tape* tape() const { return tape_; }
    std::size_t id() const { return id_; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Differentiable input; its gradient is populated by backward().
    Var leaf(Matrix value);
    /// Input that never receives a gradient.
    Var constant(Matrix value);

    /// Reverse sweep from a 1x1 output. Throws if `output` is not scalar or
    /// if the tape has already been swept.
    void backward(Var output);

    std::size_t size() const { return nodes_.size(); }

    // Used by the operation implementations.
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;
    Var record(Matrix value, bool requires_grad, BackwardFn fn);
    const Matrix& value(std::size_t id) const { return nodes_[id].value; }
    Matrix& grad(std::size_t id) { return nodes_[id].grad; }
    const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        BackwardFn backward;
    };
    std::vector<Node> nodes_;
    bool swept_ = false;
};

// -----------------------------------------------------------------------------
// Operations. All throw ShapeError naming both shapes on mismatch.
// -----------------------------------------------------------------------------

Var matmul(Var a, Var b);
/// `lhs` * b for a constant sparse lhs; `lhs` must outlive the tape.
Var spmm(const SparseRowMatrix& lhs, Var b);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double s);
/// Adds a 1 x c row to every row of an r x c matrix (bias term).
Var add_row(Var a, Var row);
/// Subtracts a 1 x c row from every row (centering).
Var sub_row(Var a, Var row);

Var relu(Var a);
Var tanh(Var a);
Var exp(Var a);
Var row_softmax(Var a);

/// Mean over `rows` of -log softmax(logits)[row, labels[row]].
/// `labels` is indexed by node id, not by position in `rows`.
Var softmax_cross_entropy(Var logits, std::span<const int> labels, std::span<const NodeId> rows);

Var select_rows(Var a, std::span<const NodeId> rows);
/// 1 x c matrix of column means.
Var col_mean(Var a);
/// Elementwise a^k for integer k >= 1.
Var pow(Var a, int k);
/// Squared Frobenius norm.
Var sum_squares(Var a);
Var sum(Var a);
/// Mean of all entries.
Var mean(Var a);
/// D(i, j) = ||a_i - b_j||^2 for rows a_i of a and b_j of b.
Var pairwise_sq_dists(Var a, Var b);

/// Inverted dropout: zeroes each entry with probability `rate` and scales
/// survivors by 1 / (1 - rate). Identity when `rate` is 0.
Var dropout(Var a, double rate, Rng& rng);

/// The operations above by name, for documentation and the gradient-check
/// test driver.
std::span<const std::string_view> op_table();

// -----------------------------------------------------------------------------
// Trainable parameters
// -----------------------------------------------------------------------------

/// Named trainable matrices in insertion order. Names are unique.
class ParamSet {
public:
    void add(std::string name, Matrix value);
    bool contains(std::string_view name) const;
    const Matrix& at(std::string_view name) const;
    Matrix& at(std::string_view name);

    std::size_t size() const { return entries_.size(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }
    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }

    friend bool operator==(const ParamSet&, const ParamSet&);

private:
    std::vector<std::pair<std::string, Matrix>> entries_;
};

/// ParamSet members recorded as leaves on one tape, in ParamSet order.
class BoundParams {
public:
    BoundParams(Tape& tape, const ParamSet& params);
    Var operator[](std::string_view name) const;
    std::span<const std::pair<std::string, Var>> entries() const { return vars_; }

private:
    std::vector<std::pair<std::string, Var>> vars_;
};

}  // namespace condsr::ad
