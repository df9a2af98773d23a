#include "condsr/train.hpp"

#include "condsr/conformal.hpp"
#include "condsr/error.hpp"
#include "condsr/random.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

namespace condsr {

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

enum Stream : std::uint64_t { kInitStream = 1, kIidStream = 2, kDropoutStream = 3 };

struct AdamState {
    std::vector<Matrix> m;
    std::vector<Matrix> v;
    long step = 0;
};

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

void TrainConfig::validate() const {
    if (!(lambda_cmd >= 0.0) || !(lambda_mmd >= 0.0)) throw ValidationError("train: lambdas must be >= 0");
    if (epochs < 1) throw ValidationError("train: epochs must be >= 1");
    if (!(learning_rate > 0.0)) throw ValidationError("train: learning_rate must be > 0");
    if (!(weight_decay >= 0.0)) throw ValidationError("train: weight_decay must be >= 0");
    cmd.validate();
    mmd.validate();
}

std::vector<NodeId> sample_iid(std::span<const NodeId> pool, int m, Rng& rng) {
    if (m < 1) throw ValidationError("sample_iid: m must be >= 1");
    if (static_cast<std::size_t>(m) > pool.size()) {
        throw ValidationError("sample_iid: pool of " + std::to_string(pool.size()) + " nodes is smaller than m = " +
                              std::to_string(m));
    }
    auto out = sample_without_replacement<NodeId>(pool, static_cast<std::size_t>(m), rng);
    std::sort(out.begin(), out.end());
    return out;
}

LossTerms condsr_loss(const ForwardResult& fw, std::span<const int> labels, std::span<const NodeId> train_idx,
                      std::span<const NodeId> iid_idx, const TrainConfig& cfg) {
    if (train_idx.empty()) throw ValidationError("condsr_loss: empty training index set");
    if (iid_idx.empty()) throw ValidationError("condsr_loss: empty IID index set");

    ad::Var ce = ad::softmax_cross_entropy(fw.logits, labels, train_idx);
    ad::Var h_train = ad::select_rows(fw.hidden, train_idx);
    ad::Var h_iid = ad::select_rows(fw.hidden, iid_idx);
    ad::Var d_cmd = cmd(h_train, h_iid, cfg.cmd);
    ad::Var d_mmd = mmd(h_train, h_iid, cfg.mmd);

    ad::Var total = ce;
    if (cfg.lambda_cmd > 0.0) total = ad::add(total, ad::scale(d_cmd, cfg.lambda_cmd));
    if (cfg.lambda_mmd > 0.0) total = ad::add(total, ad::scale(d_mmd, cfg.lambda_mmd));
    return {total, ce, d_cmd, d_mmd};
}

TrainedModel train(const SparseGraph& g, const NormalizedAdjacency& adj, const SplitSpec& split,
                   const ModelConfig& mcfg, const TrainConfig& tcfg) {
    mcfg.validate();
    tcfg.validate();
    if (adj.num_nodes() != g.num_nodes()) throw ShapeError("train: adjacency and graph node counts differ");
    if (split.train_idx.empty()) throw ValidationError("train: empty training set");

    const SparseRowMatrix x = feature_matrix(g);
    const int m = static_cast<int>(split.train_idx.size());

    TrainedModel out{mcfg, tcfg, init_params(mcfg, g.feature_dim(), g.num_classes(), mix_seed(tcfg.seed, kInitStream)),
                     {}};
    Rng iid_rng(mix_seed(tcfg.seed, kIidStream));
    Rng dropout_rng(mix_seed(tcfg.seed, kDropoutStream));

    AdamState adam;
    for (const auto& [name, value] : out.params) {
        adam.m.push_back(Matrix::Zero(value.rows(), value.cols()));
        adam.v.push_back(Matrix::Zero(value.rows(), value.cols()));
    }

    out.history.reserve(static_cast<std::size_t>(tcfg.epochs));
    for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
        const std::vector<NodeId> iid = sample_iid(split.iid_pool_idx, m, iid_rng);

        ad::Tape tape;
        ad::BoundParams bound(tape, out.params);
        const ForwardResult fw = forward(mcfg, bound, adj, x, &dropout_rng);
        const LossTerms loss = condsr_loss(fw, g.labels(), split.train_idx, iid, tcfg);

        const LossRecord rec{loss.total.scalar(), loss.ce.scalar(), loss.cmd.scalar(), loss.mmd.scalar()};
        if (!std::isfinite(rec.total) || !std::isfinite(rec.ce) || !std::isfinite(rec.cmd) ||
            !std::isfinite(rec.mmd)) {
            std::ostringstream msg;
            msg << "train: non-finite loss at epoch " << epoch << " (total " << rec.total << ", ce " << rec.ce
                << ", cmd " << rec.cmd << ", mmd " << rec.mmd << ")";
            throw NumericalError(msg.str());
        }
        out.history.push_back(rec);

        tape.backward(loss.total);

        ++adam.step;
        const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(adam.step));
        const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(adam.step));
        std::size_t i = 0;
        for (auto& [name, value] : out.params) {
            Matrix grad = bound.entries()[i].second.grad();
            if (tcfg.weight_decay > 0.0) grad += tcfg.weight_decay * value;
            adam.m[i] = kAdamBeta1 * adam.m[i] + (1.0 - kAdamBeta1) * grad;
            adam.v[i] = kAdamBeta2 * adam.v[i] + (1.0 - kAdamBeta2) * grad.cwiseProduct(grad);
            value.array() -= tcfg.learning_rate * (adam.m[i].array() / bc1) /
                             ((adam.v[i].array() / bc2).sqrt() + kAdamEps);
            ++i;
        }
    }
    return out;
}

Inference infer(const TrainedModel& model, const NormalizedAdjacency& adj, const SparseRowMatrix& x) {
    ad::Tape tape;
    ad::BoundParams bound(tape, model.params);
    const ForwardResult fw = forward(model.model, bound, adj, x);
    return {fw.hidden.value(), fw.probs.value()};
}

double accuracy(const Matrix& probs, std::span<const int> labels, std::span<const NodeId> nodes) {
    if (nodes.empty()) throw ValidationError("accuracy: empty node set");
    long hits = 0;
    std::vector<double> row(static_cast<std::size_t>(probs.cols()));
    for (NodeId i : nodes) {
        for (Eigen::Index j = 0; j < probs.cols(); ++j) row[static_cast<std::size_t>(j)] = probs(i, j);
        hits += rank_classes(row).front() == labels[i];
    }
    return static_cast<double>(hits) / static_cast<double>(nodes.size());
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
    nlohmann::json mmd_j = {{"kernel", std::string(to_string(cfg.mmd.kernel))}};
    mmd_j["bandwidth"] = cfg.mmd.bandwidth ? nlohmann::json(*cfg.mmd.bandwidth) : nlohmann::json("median");
    return {{"lambda_cmd", cfg.lambda_cmd},
            {"lambda_mmd", cfg.lambda_mmd},
            {"epochs", cfg.epochs},
            {"learning_rate", cfg.learning_rate},
            {"weight_decay", cfg.weight_decay},
            {"seed", cfg.seed},
            {"cmd", {{"moment_order", cfg.cmd.moment_order}, {"lower", cfg.cmd.lower}, {"upper", cfg.cmd.upper}}},
            {"mmd", std::move(mmd_j)}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig cfg;
    cfg.lambda_cmd = j.value("lambda_cmd", cfg.lambda_cmd);
    cfg.lambda_mmd = j.value("lambda_mmd", cfg.lambda_mmd);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("cmd")) {
        const auto& c = j.at("cmd");
        cfg.cmd.moment_order = c.value("moment_order", cfg.cmd.moment_order);
        cfg.cmd.lower = c.value("lower", cfg.cmd.lower);
        cfg.cmd.upper = c.value("upper", cfg.cmd.upper);
    }
    if (j.contains("mmd")) {
        const auto& c = j.at("mmd");
        if (c.contains("kernel")) cfg.mmd.kernel = kernel_from_string(c.at("kernel").get<std::string>());
        if (c.contains("bandwidth")) {
            const auto& b = c.at("bandwidth");
            if (b.is_number()) {
                cfg.mmd.bandwidth = b.get<double>();
            } else if (!(b.is_string() && b.get<std::string>() == "median")) {
                throw ParseError("config: 'mmd.bandwidth' must be a number or \"median\"");
            }
        }
    }
    cfg.validate();
    return cfg;
}

nlohmann::json checkpoint_to_json(const TrainedModel& m) {
    nlohmann::json history = nlohmann::json::array();
    for (const LossRecord& r : m.history) {
        history.push_back({{"total", r.total}, {"ce", r.ce}, {"cmd", r.cmd}, {"mmd", r.mmd}});
    }
    return {{"config", config_to_json(m.model)},
            {"train", train_config_to_json(m.train)},
            {"params", params_to_json(m.params)},
            {"loss_history", std::move(history)}};
}

TrainedModel checkpoint_from_json(const nlohmann::json& j) {
    TrainedModel m;
    m.model = config_from_json(j.at("config"));
    m.train = train_config_from_json(j.at("train"));
    m.params = params_from_json(j.at("params"));
    for (const auto& r : j.value("loss_history", nlohmann::json::array())) {
        m.history.push_back({r.at("total").get<double>(), r.at("ce").get<double>(), r.at("cmd").get<double>(),
                             r.at("mmd").get<double>()});
    }
    return m;
}

}  // namespace condsr
