#include "condsr/graph.hpp"

#include "condsr/error.hpp"
#include "condsr/random.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

namespace condsr {

namespace {

using nlohmann::json;

const json& require_field(const json& root, const char* name) {
    auto it = root.find(name);
    if (it == root.end()) {
        throw ParseError(std::string("dataset: missing field '") + name + "'");
    }
    return *it;
}

int require_int(const json& root, const char* name) {
    const json& v = require_field(root, name);
    if (!v.is_number_integer()) {
        throw ParseError(std::string("dataset: field '") + name + "' must be an integer");
    }
    return v.get<int>();
}

const json& require_array(const json& root, const char* name) {
    const json& v = require_field(root, name);
    if (!v.is_array()) {
        throw ParseError(std::string("dataset: field '") + name + "' must be an array");
    }
    return v;
}

}  // namespace

SparseGraph::SparseGraph(int num_nodes, std::vector<Edge> edges, Matrix features,
                         std::vector<int> labels, int num_classes)
    : num_nodes_(num_nodes),
      num_classes_(num_classes),
      edges_(std::move(edges)),
      features_(std::move(features)),
      labels_(std::move(labels)) {
    if (num_nodes_ <= 0) {
        throw ValidationError("graph: node count must be positive, got " + std::to_string(num_nodes_));
    }
    if (num_classes_ <= 0) {
        throw ValidationError("graph: class count must be positive, got " + std::to_string(num_classes_));
    }
    if (features_.rows() != num_nodes_) {
        throw ValidationError("graph: feature matrix has " + std::to_string(features_.rows()) +
                              " rows for " + std::to_string(num_nodes_) + " nodes");
    }
    if (static_cast<int>(labels_.size()) != num_nodes_) {
        throw ValidationError("graph: " + std::to_string(labels_.size()) + " labels for " +
                              std::to_string(num_nodes_) + " nodes");
    }
    for (std::size_t i = 0; i < labels_.size(); ++i) {
        if (labels_[i] < 0 || labels_[i] >= num_classes_) {
            throw ValidationError("graph: label " + std::to_string(labels_[i]) + " of node " +
                                  std::to_string(i) + " outside [0, " + std::to_string(num_classes_) + ")");
        }
    }
    for (Edge& e : edges_) {
        if (e.u < 0 || e.u >= num_nodes_ || e.v < 0 || e.v >= num_nodes_) {
            throw ValidationError("graph: edge [" + std::to_string(e.u) + ", " + std::to_string(e.v) +
                                  "] has an endpoint outside [0, " + std::to_string(num_nodes_) + ")");
        }
        if (e.u == e.v) {
            throw ValidationError("graph: self-loop on node " + std::to_string(e.u));
        }
        if (e.u > e.v) std::swap(e.u, e.v);
    }
    std::sort(edges_.begin(), edges_.end());
    edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());
}

std::vector<NodeId> SparseGraph::nodes_of_class(int c) const {
    std::vector<NodeId> out;
    for (NodeId i = 0; i < num_nodes_; ++i) {
        if (labels_[i] == c) out.push_back(i);
    }
    return out;
}

SparseGraph load_graph(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("dataset: cannot open '" + path.string() + "'");

    json root;
    try {
        root = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError("dataset: malformed JSON in '" + path.string() + "': " + e.what());
    }
    if (!root.is_object()) throw ParseError("dataset: top level must be an object");

    const int n = require_int(root, "n");
    const int k = require_int(root, "num_classes");
    const int d = require_int(root, "feature_dim");
    if (n <= 0) throw ValidationError("dataset: 'n' must be positive");
    if (d < 0) throw ValidationError("dataset: 'feature_dim' must be nonnegative");

    std::vector<Edge> edges;
    const json& jedges = require_array(root, "edges");
    edges.reserve(jedges.size());
    for (std::size_t i = 0; i < jedges.size(); ++i) {
        const json& e = jedges[i];
        if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_number_integer()) {
            throw ParseError("dataset: 'edges[" + std::to_string(i) + "]' must be a pair of integers");
        }
        edges.push_back({e[0].get<NodeId>(), e[1].get<NodeId>()});
    }

    const json& jfeat = require_array(root, "features");
    if (static_cast<int>(jfeat.size()) != n) {
        throw ParseError("dataset: 'features' has " + std::to_string(jfeat.size()) + " rows, expected " +
                         std::to_string(n));
    }
    Matrix features(n, d);
    for (int i = 0; i < n; ++i) {
        const json& row = jfeat[i];
        if (!row.is_array() || static_cast<int>(row.size()) != d) {
            throw ParseError("dataset: 'features[" + std::to_string(i) + "]' must hold " + std::to_string(d) +
                             " numbers");
        }
        for (int j = 0; j < d; ++j) {
            if (!row[j].is_number()) {
                throw ParseError("dataset: 'features[" + std::to_string(i) + "][" + std::to_string(j) +
                                 "]' is not a number");
            }
            features(i, j) = row[j].get<double>();
        }
    }

    const json& jlabels = require_array(root, "labels");
    if (static_cast<int>(jlabels.size()) != n) {
        throw ParseError("dataset: 'labels' has " + std::to_string(jlabels.size()) + " entries, expected " +
                         std::to_string(n));
    }
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
        if (!jlabels[i].is_number_integer()) {
            throw ParseError("dataset: 'labels[" + std::to_string(i) + "]' must be an integer");
        }
        labels[i] = jlabels[i].get<int>();
    }

    return SparseGraph(n, std::move(edges), std::move(features), std::move(labels), k);
}

void save_graph(const SparseGraph& g, const std::filesystem::path& path) {
    json root;
    root["n"] = g.num_nodes();
    root["num_classes"] = g.num_classes();
    root["feature_dim"] = g.feature_dim();
    json edges = json::array();
    for (const Edge& e : g.edges()) edges.push_back({e.u, e.v});
    root["edges"] = std::move(edges);
    json features = json::array();
    for (int i = 0; i < g.num_nodes(); ++i) {
        json row = json::array();
        for (int j = 0; j < g.feature_dim(); ++j) row.push_back(g.features()(i, j));
        features.push_back(std::move(row));
    }
    root["features"] = std::move(features);
    root["labels"] = std::vector<int>(g.labels().begin(), g.labels().end());

    std::ofstream out(path);
    if (!out) throw Error("dataset: cannot write '" + path.string() + "'");
    out << root.dump() << '\n';
}

NormalizedAdjacency::NormalizedAdjacency(SparseRowMatrix entries) : entries_(std::move(entries)) {
    if (entries_.rows() != entries_.cols()) {
        throw ShapeError("normalized adjacency must be square, got " + std::to_string(entries_.rows()) + "x" +
                         std::to_string(entries_.cols()));
    }
    entries_.makeCompressed();
}

NormalizedAdjacency normalize_adjacency(const SparseGraph& g) {
    const int n = g.num_nodes();
    std::vector<double> degree(n, 1.0);  // self-loop
    for (const Edge& e : g.edges()) {
        degree[e.u] += 1.0;
        degree[e.v] += 1.0;
    }
    std::vector<double> inv_sqrt(n);
    for (int i = 0; i < n; ++i) inv_sqrt[i] = 1.0 / std::sqrt(degree[i]);

    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(static_cast<std::size_t>(n) + 2 * g.num_edges());
    for (int i = 0; i < n; ++i) triplets.emplace_back(i, i, inv_sqrt[i] * inv_sqrt[i]);
    for (const Edge& e : g.edges()) {
        const double w = inv_sqrt[e.u] * inv_sqrt[e.v];
        triplets.emplace_back(e.u, e.v, w);
        triplets.emplace_back(e.v, e.u, w);
    }
    SparseRowMatrix m(n, n);
    m.setFromTriplets(triplets.begin(), triplets.end());
    return NormalizedAdjacency(std::move(m));
}

SparseGraph generate_sbm(const SbmParams& params, std::uint64_t seed) {
    if (params.block_sizes.empty()) throw ValidationError("sbm: at least one block required");
    if (params.p_in < 0.0 || params.p_in > 1.0 || params.p_out < 0.0 || params.p_out > 1.0) {
        throw ValidationError("sbm: edge probabilities must lie in [0, 1]");
    }
    if (params.feature_dim < 1) throw ValidationError("sbm: feature_dim must be >= 1");

    std::vector<int> labels;
    for (std::size_t b = 0; b < params.block_sizes.size(); ++b) {
        if (params.block_sizes[b] < 1) throw ValidationError("sbm: block sizes must be positive");
        labels.insert(labels.end(), params.block_sizes[b], static_cast<int>(b));
    }
    const int n = static_cast<int>(labels.size());

    Rng rng(seed);
    std::bernoulli_distribution within(params.p_in);
    std::bernoulli_distribution across(params.p_out);
    std::vector<Edge> edges;
    for (NodeId u = 0; u < n; ++u) {
        for (NodeId v = u + 1; v < n; ++v) {
            const bool keep = labels[u] == labels[v] ? within(rng) : across(rng);
            if (keep) edges.push_back({u, v});
        }
    }

    std::normal_distribution<double> noise(0.0, 1.0);
    Matrix features(n, params.feature_dim);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < params.feature_dim; ++j) features(i, j) = noise(rng);
        features(i, labels[i] % params.feature_dim) += params.feat_shift;
    }

    return SparseGraph(n, std::move(edges), std::move(features), std::move(labels),
                       static_cast<int>(params.block_sizes.size()));
}

int calibration_size(int remaining) { return std::min(1000, remaining / 2); }

SplitSpec make_splits(const SparseGraph& g, std::span<const NodeId> train_idx, std::uint64_t seed) {
    const int n = g.num_nodes();
    std::vector<char> in_train(n, 0);
    for (NodeId i : train_idx) {
        if (i < 0 || i >= n) throw ValidationError("splits: training index " + std::to_string(i) + " out of range");
        in_train[i] = 1;
    }

    SplitSpec split;
    split.train_idx.assign(train_idx.begin(), train_idx.end());
    std::sort(split.train_idx.begin(), split.train_idx.end());
    split.train_idx.erase(std::unique(split.train_idx.begin(), split.train_idx.end()), split.train_idx.end());
    for (NodeId i = 0; i < n; ++i) {
        if (!in_train[i]) split.iid_pool_idx.push_back(i);
    }
    const int calib = calibration_size(static_cast<int>(split.iid_pool_idx.size()));
    if (calib < 1) {
        throw ValidationError("splits: " + std::to_string(split.iid_pool_idx.size()) +
                              " non-training nodes leave no calibration data");
    }

    Rng rng(seed);
    std::vector<NodeId> order = sample_without_replacement<NodeId>(split.iid_pool_idx, split.iid_pool_idx.size(), rng);
    split.calib_idx.assign(order.begin(), order.begin() + calib);
    split.test_idx.assign(order.begin() + calib, order.end());
    std::sort(split.calib_idx.begin(), split.calib_idx.end());
    std::sort(split.test_idx.begin(), split.test_idx.end());
    return split;
}

}  // namespace condsr
