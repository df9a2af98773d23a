#include "condsr/models.hpp"

#include "condsr/error.hpp"

#include <cmath>

namespace condsr {

std::string_view to_string(Arch a) { return a == Arch::Gcn ? "gcn" : "appnp"; }

Arch arch_from_string(std::string_view s) {
    if (s == "gcn") return Arch::Gcn;
    if (s == "appnp") return Arch::Appnp;
    throw ValidationError("model: unknown architecture '" + std::string(s) + "' (expected gcn or appnp)");
}

void ModelConfig::validate() const {
    if (hidden_dim < 1) throw ValidationError("model: hidden_dim must be >= 1");
    if (!(appnp_teleport > 0.0 && appnp_teleport <= 1.0)) throw ValidationError("model: appnp_teleport must lie in (0, 1]");
    if (appnp_hops < 0) throw ValidationError("model: appnp_hops must be >= 0");
    if (dropout < 0.0 || dropout >= 1.0) throw ValidationError("model: dropout must lie in [0, 1)");
}

SparseRowMatrix feature_matrix(const SparseGraph& g) { return g.features().sparseView(); }

ad::ParamSet init_params(const ModelConfig& cfg, int in_dim, int num_classes, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    auto glorot = [&](int fan_in, int fan_out) {
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        std::uniform_real_distribution<double> u(-limit, limit);
        Matrix w(fan_in, fan_out);
        for (Eigen::Index j = 0; j < w.cols(); ++j) {
            for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = u(rng);
        }
        return w;
    };
    ad::ParamSet p;
    p.add("W1", glorot(in_dim, cfg.hidden_dim));
    p.add("b1", Matrix::Zero(1, cfg.hidden_dim));
    p.add("W2", glorot(cfg.hidden_dim, num_classes));
    p.add("b2", Matrix::Zero(1, num_classes));
    return p;
}

namespace {

ad::Var input_layer(const ad::BoundParams& params, const SparseRowMatrix& x) {
    return ad::spmm(x, params["W1"]);
}

ad::Var maybe_dropout(ad::Var v, double rate, Rng* rng) {
    return (rng != nullptr && rate > 0.0) ? ad::dropout(v, rate, *rng) : v;
}

}  // namespace

ForwardResult gcn_forward(const ad::BoundParams& params, const NormalizedAdjacency& adj, const SparseRowMatrix& x,
                          double dropout, Rng* rng) {
    const SparseRowMatrix& a = adj.matrix();
    ad::Var hidden = ad::tanh(ad::add_row(ad::spmm(a, input_layer(params, x)), params["b1"]));
    ad::Var h = maybe_dropout(hidden, dropout, rng);
    ad::Var logits = ad::add_row(ad::spmm(a, ad::matmul(h, params["W2"])), params["b2"]);
    return {hidden, logits, ad::row_softmax(logits)};
}

ForwardResult appnp_forward(const ad::BoundParams& params, const NormalizedAdjacency& adj, const SparseRowMatrix& x,
                            double teleport, int hops, double dropout, Rng* rng) {
    ad::Var hidden = ad::tanh(ad::add_row(input_layer(params, x), params["b1"]));
    ad::Var h = maybe_dropout(hidden, dropout, rng);
    ad::Var h0 = ad::add_row(ad::matmul(h, params["W2"]), params["b2"]);
    ad::Var z = h0;
    if (teleport < 1.0) {
        ad::Var restart = ad::scale(h0, teleport);
        for (int t = 0; t < hops; ++t) z = ad::add(ad::scale(ad::spmm(adj.matrix(), z), 1.0 - teleport), restart);
    }
    return {hidden, z, ad::row_softmax(z)};
}

ForwardResult forward(const ModelConfig& cfg, const ad::BoundParams& params, const NormalizedAdjacency& adj,
                      const SparseRowMatrix& x, Rng* rng) {
    if (cfg.arch == Arch::Gcn) return gcn_forward(params, adj, x, cfg.dropout, rng);
    return appnp_forward(params, adj, x, cfg.appnp_teleport, cfg.appnp_hops, cfg.dropout, rng);
}

Matrix predict_probs(const ModelConfig& cfg, const ad::ParamSet& params, const NormalizedAdjacency& adj,
                     const SparseRowMatrix& x) {
    ad::Tape tape;
    ad::BoundParams bound(tape, params);
    return forward(cfg, bound, adj, x).probs.value();
}

nlohmann::json config_to_json(const ModelConfig& cfg) {
    return {{"arch", std::string(to_string(cfg.arch))},
            {"hidden_dim", cfg.hidden_dim},
            {"appnp_teleport", cfg.appnp_teleport},
            {"appnp_hops", cfg.appnp_hops},
            {"dropout", cfg.dropout}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    if (j.contains("arch")) cfg.arch = arch_from_string(j.at("arch").get<std::string>());
    cfg.hidden_dim = j.value("hidden_dim", cfg.hidden_dim);
    cfg.appnp_teleport = j.value("appnp_teleport", cfg.appnp_teleport);
    cfg.appnp_hops = j.value("appnp_hops", cfg.appnp_hops);
    cfg.dropout = j.value("dropout", cfg.dropout);
    cfg.validate();
    return cfg;
}

nlohmann::json params_to_json(const ad::ParamSet& params) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& [name, m] : params) {
        std::vector<double> data;
        data.reserve(static_cast<std::size_t>(m.size()));
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            for (Eigen::Index k = 0; k < m.cols(); ++k) data.push_back(m(i, k));
        }
        out.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}});
    }
    return out;
}

ad::ParamSet params_from_json(const nlohmann::json& j) {
    ad::ParamSet p;
    if (!j.is_array()) throw ParseError("checkpoint: 'params' must be an array");
    for (const auto& entry : j) {
        const auto name = entry.at("name").get<std::string>();
        const auto rows = entry.at("rows").get<Eigen::Index>();
        const auto cols = entry.at("cols").get<Eigen::Index>();
        const auto data = entry.at("data").get<std::vector<double>>();
        if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
            throw ParseError("checkpoint: parameter '" + name + "' has " + std::to_string(data.size()) +
                             " values for shape " + std::to_string(rows) + "x" + std::to_string(cols));
        }
        Matrix m(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i) {
            for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = data[static_cast<std::size_t>(i * cols + k)];
        }
        p.add(name, std::move(m));
    }
    return p;
}

}  // namespace condsr
