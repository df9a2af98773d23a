#include "condsr/autodiff.hpp"

#include "condsr/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

namespace condsr::ad {

namespace {

std::string shape_str(const Matrix& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

void require_same_tape(Var a, Var b, const char* op) {
    if (a.tape() == nullptr || a.tape() != b.tape()) {
        throw Error(std::string(op) + ": operands belong to different tapes");
    }
}

void require_same_shape(Var a, Var b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.value()) + " vs " +
                         shape_str(b.value()));
    }
}

void require_rows_in_range(std::span<const NodeId> rows, Eigen::Index limit, const char* op) {
    for (NodeId r : rows) {
        if (r < 0 || r >= limit) {
            throw ShapeError(std::string(op) + ": row index " + std::to_string(r) + " outside [0, " +
                             std::to_string(limit) + ")");
        }
    }
}

/// Elementwise unary op whose derivative is a function of input and output.
template <typename Forward, typename Derivative>
Var unary(Var a, Forward fwd, Derivative deriv) {
    Tape& t = *a.tape();
    const std::size_t ia = a.id();
    Matrix out = a.value().unaryExpr(fwd);
    return t.record(std::move(out), a.requires_grad(), [ia, deriv](Tape& tp, std::size_t self) {
        if (!tp.requires_grad(ia)) return;
        const Matrix& x = tp.value(ia);
        const Matrix& y = tp.value(self);
        const Matrix& g = tp.grad(self);
        Matrix& ga = tp.grad(ia);
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            for (Eigen::Index i = 0; i < x.rows(); ++i) ga(i, j) += g(i, j) * deriv(x(i, j), y(i, j));
        }
    });
}

constexpr std::array<std::string_view, 20> kOps{
    "matmul", "spmm", "add",        "sub",                   "scale",       "add_row", "sub_row",
    "relu",   "tanh", "exp",        "row_softmax",           "softmax_cross_entropy", "select_rows",
    "col_mean", "pow", "sum_squares", "sum",                 "mean",        "pairwise_sq_dists", "dropout"};

}  // namespace

// -----------------------------------------------------------------------------
// Var / Tape
// -----------------------------------------------------------------------------

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return std::as_const(*tape_).grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

double Var::scalar() const {
    const Matrix& v = value();
    if (v.rows() != 1 || v.cols() != 1) throw ShapeError("scalar(): node has shape " + shape_str(v));
    return v(0, 0);
}

Var Tape::record(Matrix value, bool requires_grad, BackwardFn fn) {
    if (swept_) throw Error("tape: cannot record after backward()");
    Node node;
    node.grad = Matrix::Zero(value.rows(), value.cols());
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    if (requires_grad) node.backward = std::move(fn);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Matrix value) { return record(std::move(value), true, nullptr); }
Var Tape::constant(Matrix value) { return record(std::move(value), false, nullptr); }

void Tape::backward(Var output) {
    if (output.tape() != this) throw Error("backward: output belongs to a different tape");
    if (swept_) throw Error("backward: called twice on the same tape");
    const Matrix& v = value(output.id());
    if (v.rows() != 1 || v.cols() != 1) throw ShapeError("backward: output must be scalar, got " + shape_str(v));
    swept_ = true;
    nodes_[output.id()].grad(0, 0) += 1.0;
    for (std::size_t i = output.id() + 1; i-- > 0;) {
        if (nodes_[i].backward) nodes_[i].backward(*this, i);
    }
}

// -----------------------------------------------------------------------------
// Linear algebra
// -----------------------------------------------------------------------------

Var matmul(Var a, Var b) {
    require_same_tape(a, b, "matmul");
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: shape mismatch " + shape_str(a.value()) + " vs " + shape_str(b.value()));
    }
    Tape& t = *a.tape();
    const std::size_t ia = a.id(), ib = b.id();
    Matrix out = a.value() * b.value();
    return t.record(std::move(out), a.requires_grad() || b.requires_grad(), [ia, ib](Tape& tp, std::size_t self) {
        const Matrix& g = tp.grad(self);
        if (tp.requires_grad(ia)) tp.grad(ia).noalias() += g * tp.value(ib).transpose();
        if (tp.requires_grad(ib)) tp.grad(ib).noalias() += tp.value(ia).transpose() * g;
    });
}

Var spmm(const SparseRowMatrix& lhs, Var b) {
    if (lhs.cols() != b.rows()) {
        throw ShapeError("spmm: shape mismatch " + std::to_string(lhs.rows()) + "x" + std::to_string(lhs.cols()) +
                         " vs " + shape_str(b.value()));
    }
    Tape& t = *b.tape();
    const std::size_t ib = b.id();
    const SparseRowMatrix* m = &lhs;
    Matrix out = lhs * b.value();
    return t.record(std::move(out), b.requires_grad(), [ib, m](Tape& tp, std::size_t self) {
        if (tp.requires_grad(ib)) tp.grad(ib).noalias() += m->transpose() * tp.grad(self);
    });
}

Var add(Var a, Var b) {
    require_same_tape(a, b, "add");
    require_same_shape(a, b, "add");
    Tape& t = *a.tape();
    const std::size_t ia = a.id(), ib = b.id();
    Matrix out = a.value() + b.value();
    return t.record(std::move(out), a.requires_grad() || b.requires_grad(), [ia, ib](Tape& tp, std::size_t self) {
        if (tp.requires_grad(ia)) tp.grad(ia) += tp.grad(self);
        if (tp.requires_grad(ib)) tp.grad(ib) += tp.grad(self);
    });
}

Var sub(Var a, Var b) {
    require_same_tape(a, b, "sub");
    require_same_shape(a, b, "sub");
    Tape& t = *a.tape();
    const std::size_t ia = a.id(), ib = b.id();
    Matrix out = a.value() - b.value();
    return t.record(std::move(out), a.requires_grad() || b.requires_grad(), [ia, ib](Tape& tp, std::size_t self) {
        if (tp.requires_grad(ia)) tp.grad(ia) += tp.grad(self);
        if (tp.requires_grad(ib)) tp.grad(ib) -= tp.grad(self);
    });
}

Var scale(Var a, double s) {
    Tape& t = *a.tape();
    const std::size_t ia = a.id();
    Matrix out = s * a.value();
    return t.record(std::move(out), a.requires_grad(), [ia, s](Tape& tp, std::size_t self) {
        if (tp.requires_grad(ia)) tp.grad(ia) += s * tp.grad(self);
    });
}

Var add_row(Var a, Var row) {
    require_same_tape(a, row, "add_row");
    if (row.rows() != 1 || row.cols() != a.cols()) {
        throw ShapeError("add_row: shape mismatch " + shape_str(a.value()) + " vs " + shape_str(row.value()));
    }
    Tape& t = *a.tape();
    const std::size_t ia = a.id(), ir = row.id();
    Matrix out = a.value().rowwise() + row.value().row(0);
    return t.record(std::move(out), a.requires_grad() || row.requires_grad(), [ia, ir](Tape& tp, std::size_t self) {
        if (tp.requires_grad(ia)) tp.grad(ia) += tp.grad(self);
        if (tp.requires_grad(ir)) tp.grad(ir) += tp.grad(self).colwise().sum();
    });
}

Var sub_row(Var a, Var row) { return add_row(a, scale(row, -1.0)); }

// -----------------------------------------------------------------------------
// Elementwise
// -----------------------------------------------------------------------------

Var relu(Var a) {
    return unary(
        a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var tanh(Var a) {
    return unary(
        a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp(Var a) {
    return unary(
        a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var pow(Var a, int k) {
    if (k < 1) throw Error("pow: exponent must be >= 1, got " + std::to_string(k));
    return unary(
        a, [k](double x) { return std::pow(x, k); },
        [k](double x, double) { return k == 1 ? 1.0 : k * std::pow(x, k - 1); });
}

Var row_softmax(Var a) {
    Tape& t = *a.tape();
    const std::size_t ia = a.id();
    const Matrix& x = a.value();
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double mx = x.row(i).maxCoeff();
        out.row(i) = (x.row(i).array() - mx).exp().matrix();
        out.row(i) /= out.row(i).sum();
    }
    return t.record(std::move(out), a.requires_grad(), [ia](Tape& tp, std::size_t self) {
        if (!tp.requires_grad(ia)) return;
        const Matrix& s = tp.value(self);
        const Matrix& g = tp.grad(self);
        Matrix& ga = tp.grad(ia);
        for (Eigen::Index i = 0; i < s.rows(); ++i) {
            const double dot = g.row(i).dot(s.row(i));
            ga.row(i).array() += s.row(i).array() * (g.row(i).array() - dot);
        }
    });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels, std::span<const NodeId> rows) {
    if (rows.empty()) throw Error("softmax_cross_entropy: empty row set");
    const Matrix& z = logits.value();
    require_rows_in_range(rows, z.rows(), "softmax_cross_entropy");
    if (static_cast<Eigen::Index>(labels.size()) < z.rows()) {
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         shape_str(z));
    }

    std::vector<NodeId> sel(rows.begin(), rows.end());
    std::vector<int> lab(sel.size());
    Matrix probs(static_cast<Eigen::Index>(sel.size()), z.cols());
    double total = 0.0;
    for (std::size_t r = 0; r < sel.size(); ++r) {
        const int y = labels[sel[r]];
        if (y < 0 || y >= z.cols()) {
            throw ShapeError("softmax_cross_entropy: label " + std::to_string(y) + " outside [0, " +
                             std::to_string(z.cols()) + ")");
        }
        lab[r] = y;
        const auto row = z.row(sel[r]);
        const double mx = row.maxCoeff();
        const double lse = mx + std::log((row.array() - mx).exp().sum());
        total += lse - row(y);
        probs.row(static_cast<Eigen::Index>(r)) = (row.array() - lse).exp().matrix();
    }
    const double inv = 1.0 / static_cast<double>(sel.size());
    Matrix out(1, 1);
    out(0, 0) = total * inv;

    Tape& t = *logits.tape();
    const std::size_t il = logits.id();
    return t.record(std::move(out), logits.requires_grad(),
                    [il, sel = std::move(sel), lab = std::move(lab), probs = std::move(probs), inv](Tape& tp,
                                                                                                    std::size_t self) {
                        if (!tp.requires_grad(il)) return;
                        const double g = tp.grad(self)(0, 0) * inv;
                        Matrix& gl = tp.grad(il);
                        for (std::size_t r = 0; r < sel.size(); ++r) {
                            gl.row(sel[r]) += g * probs.row(static_cast<Eigen::Index>(r));
                            gl(sel[r], lab[r]) -= g;
                        }
                    });
}

// -----------------------------------------------------------------------------
// Reductions and indexing
// -----------------------------------------------------------------------------

Var select_rows(Var a, std::span<const NodeId> rows) {
    require_rows_in_range(rows, a.rows(), "select_rows");
    Tape& t = *a.tape();
    const std::size_t ia = a.id();
    std::vector<NodeId> sel(rows.begin(), rows.end());
    Matrix out(static_cast<Eigen::Index>(sel.size()), a.cols());
    for (std::size_t r = 0; r < sel.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = a.value().row(sel[r]);
    return t.record(std::move(out), a.requires_grad(), [ia, sel = std::move(sel)](Tape& tp, std::size_t self) {
        if (!tp.requires_grad(ia)) return;
        const Matrix& g = tp.grad(self);
        Matrix& ga = tp.grad(ia);
        for (std::size_t r = 0; r < sel.size(); ++r) ga.row(sel[r]) += g.row(static_cast<Eigen::Index>(r));
    });
}

Var col_mean(Var a) {
    if (a.rows() == 0) throw ShapeError("col_mean: empty matrix " + shape_str(a.value()));
    Tape& t = *a.tape();
    const std::size_t ia = a.id();
    const double inv = 1.0 / static_cast<double>(a.rows());
    Matrix out = a.value().colwise().sum() * inv;
    return t.record(std::move(out), a.requires_grad(), [ia, inv](Tape& tp, std::size_t self) {
        if (tp.requires_grad(ia)) tp.grad(ia).rowwise() += tp.grad(self).row(0) * inv;
    });
}

Var sum_squares(Var a) {
    Tape& t = *a.tape();
    const std::size_t ia = a.id();
    Matrix out(1, 1);
    out(0, 0) = a.value().squaredNorm();
    return t.record(std::move(out), a.requires_grad(), [ia](Tape& tp, std::size_t self) {
        if (tp.requires_grad(ia)) tp.grad(ia) += (2.0 * tp.grad(self)(0, 0)) * tp.value(ia);
    });
}

Var sum(Var a) {
    Tape& t = *a.tape();
    const std::size_t ia = a.id();
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    return t.record(std::move(out), a.requires_grad(), [ia](Tape& tp, std::size_t self) {
        if (tp.requires_grad(ia)) tp.grad(ia).array() += tp.grad(self)(0, 0);
    });
}

Var mean(Var a) {
    if (a.value().size() == 0) throw ShapeError("mean: empty matrix");
    return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var pairwise_sq_dists(Var a, Var b) {
    require_same_tape(a, b, "pairwise_sq_dists");
    if (a.cols() != b.cols()) {
        throw ShapeError("pairwise_sq_dists: shape mismatch " + shape_str(a.value()) + " vs " +
                         shape_str(b.value()));
    }
    Tape& t = *a.tape();
    const std::size_t ia = a.id(), ib = b.id();
    const Matrix& x = a.value();
    const Matrix& y = b.value();
    Matrix out(x.rows(), y.rows());
    for (Eigen::Index j = 0; j < y.rows(); ++j) {
        for (Eigen::Index i = 0; i < x.rows(); ++i) out(i, j) = (x.row(i) - y.row(j)).squaredNorm();
    }
    return t.record(std::move(out), a.requires_grad() || b.requires_grad(), [ia, ib](Tape& tp, std::size_t self) {
        const Matrix& g = tp.grad(self);
        const Matrix& x = tp.value(ia);
        const Matrix& y = tp.value(ib);
        if (tp.requires_grad(ia)) {
            Matrix& gx = tp.grad(ia);
            gx += 2.0 * (g.rowwise().sum().asDiagonal() * x - g * y);
        }
        if (tp.requires_grad(ib)) {
            Matrix& gy = tp.grad(ib);
            gy += 2.0 * (g.colwise().sum().transpose().asDiagonal() * y - g.transpose() * x);
        }
    });
}

Var dropout(Var a, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw Error("dropout: rate must lie in [0, 1)");
    if (rate == 0.0) return a;
    Tape& t = *a.tape();
    const std::size_t ia = a.id();
    std::bernoulli_distribution keep(1.0 - rate);
    const double s = 1.0 / (1.0 - rate);
    Matrix mask(a.rows(), a.cols());
    for (Eigen::Index j = 0; j < mask.cols(); ++j) {
        for (Eigen::Index i = 0; i < mask.rows(); ++i) mask(i, j) = keep(rng) ? s : 0.0;
    }
    Matrix out = a.value().cwiseProduct(mask);
    return t.record(std::move(out), a.requires_grad(), [ia, mask = std::move(mask)](Tape& tp, std::size_t self) {
        if (tp.requires_grad(ia)) tp.grad(ia) += tp.grad(self).cwiseProduct(mask);
    });
}

std::span<const std::string_view> op_table() { return kOps; }

// -----------------------------------------------------------------------------
// ParamSet
// -----------------------------------------------------------------------------

void ParamSet::add(std::string name, Matrix value) {
    if (contains(name)) throw Error("params: duplicate parameter '" + name + "'");
    entries_.emplace_back(std::move(name), std::move(value));
}

bool ParamSet::contains(std::string_view name) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

const Matrix& ParamSet::at(std::string_view name) const {
    for (const auto& [n, m] : entries_) {
        if (n == name) return m;
    }
    throw Error("params: no parameter named '" + std::string(name) + "'");
}

Matrix& ParamSet::at(std::string_view name) { return const_cast<Matrix&>(std::as_const(*this).at(name)); }

bool operator==(const ParamSet& a, const ParamSet& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
        const auto& [na, ma] = a.entries_[i];
        const auto& [nb, mb] = b.entries_[i];
        if (na != nb || ma.rows() != mb.rows() || ma.cols() != mb.cols()) return false;
        if (!(ma.array() == mb.array()).all()) return false;
    }
    return true;
}

BoundParams::BoundParams(Tape& tape, const ParamSet& params) {
    for (const auto& [name, value] : params) vars_.emplace_back(name, tape.leaf(value));
}

Var BoundParams::operator[](std::string_view name) const {
    for (const auto& [n, v] : vars_) {
        if (n == name) return v;
    }
    throw Error("params: no bound parameter named '" + std::string(name) + "'");
}

}  // namespace condsr::ad
