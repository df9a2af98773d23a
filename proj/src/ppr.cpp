#include "condsr/ppr.hpp"

#include "condsr/error.hpp"
#include "condsr/random.hpp"

#include <algorithm>
#include <string>

namespace condsr {

namespace {

void require_class_sizes(const SparseGraph& g, int per_class) {
    if (per_class < 1) throw ValidationError("train sample: per_class must be >= 1");
    for (int c = 0; c < g.num_classes(); ++c) {
        const auto members = g.nodes_of_class(c).size();
        if (static_cast<int>(members) < per_class) {
            throw ValidationError("train sample: class " + std::to_string(c) + " has " + std::to_string(members) +
                                  " nodes, fewer than per_class = " + std::to_string(per_class));
        }
    }
}

}  // namespace

PprVector ppr_row(const NormalizedAdjacency& adj, NodeId source, double alpha, const PprOptions& opts) {
    const int n = adj.num_nodes();
    if (source < 0 || source >= n) {
        throw ValidationError("ppr: source " + std::to_string(source) + " outside [0, " + std::to_string(n) + ")");
    }
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ValidationError("ppr: alpha must lie in (0, 1]");
    if (!(opts.tol > 0.0)) throw ValidationError("ppr: tol must be positive");

    const double damping = 1.0 - alpha;
    // A~ is symmetric, so A~^T p is the row-major product A~ p.
    const SparseRowMatrix& a = adj.matrix();

    Eigen::VectorXd p = Eigen::VectorXd::Zero(n);
    p(source) = 1.0;
    double residual = 0.0;
    for (int it = 0; it < opts.max_iter; ++it) {
        Eigen::VectorXd next = damping * (a * p);
        next(source) += 1.0;
        residual = (next - p).lpNorm<Eigen::Infinity>();
        p.swap(next);
        if (residual < opts.tol) return {source, alpha, std::move(p)};
    }
    throw ConvergenceError("ppr: no convergence after " + std::to_string(opts.max_iter) +
                           " iterations (residual " + std::to_string(residual) + ")");
}

std::vector<NodeId> biased_train_sample(const SparseGraph& g, const NormalizedAdjacency& adj, int per_class,
                                        double alpha, std::uint64_t seed, const PprOptions& opts) {
    require_class_sizes(g, per_class);
    Rng rng(seed);
    std::vector<NodeId> out;
    for (int c = 0; c < g.num_classes(); ++c) {
        std::vector<NodeId> members = g.nodes_of_class(c);
        std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
        const NodeId root = members[pick(rng)];
        const PprVector ppr = ppr_row(adj, root, alpha, opts);

        std::stable_sort(members.begin(), members.end(), [&](NodeId x, NodeId y) {
            if (x == root || y == root) return x == root && y != root;
            return ppr.scores(x) > ppr.scores(y);
        });
        out.insert(out.end(), members.begin(), members.begin() + per_class);
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<NodeId> uniform_train_sample(const SparseGraph& g, int per_class, std::uint64_t seed) {
    require_class_sizes(g, per_class);
    Rng rng(seed);
    std::vector<NodeId> out;
    for (int c = 0; c < g.num_classes(); ++c) {
        const std::vector<NodeId> members = g.nodes_of_class(c);
        const auto drawn = sample_without_replacement<NodeId>(members, static_cast<std::size_t>(per_class), rng);
        out.insert(out.end(), drawn.begin(), drawn.end());
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace condsr
