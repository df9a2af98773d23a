#include "condsr/error.hpp"
#include "condsr/ppr.hpp"
#include "condsr/train.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace condsr;

namespace {

struct Setup {
    SparseGraph g;
    NormalizedAdjacency adj;
    SplitSpec split;
};

Setup two_cliques() {
    auto g = generate_sbm({{10, 10}, 1.0, 0.0, 4, 0.0}, 1);
    auto adj = normalize_adjacency(g);
    const std::vector<NodeId> train{0, 1, 2, 10, 11, 12};
    auto split = make_splits(g, train, 0);
    return {std::move(g), std::move(adj), std::move(split)};
}

}  // namespace

TEST_CASE("sample_iid") {
    std::vector<NodeId> pool(100);
    std::iota(pool.begin(), pool.end(), 0);
    SUBCASE("pool of size m is returned whole") {
        Rng rng(0);
        CHECK(sample_iid(std::span<const NodeId>(pool).first(10), 10, rng) ==
              std::vector<NodeId>(pool.begin(), pool.begin() + 10));
    }
    SUBCASE("fixed state, identical draw") {
        Rng a(5), b(5);
        CHECK(sample_iid(pool, 10, a) == sample_iid(pool, 10, b));
    }
    SUBCASE("inclusion frequency") {
        Rng rng(11);
        std::vector<int> hits(100, 0);
        for (int t = 0; t < 10000; ++t) {
            for (NodeId i : sample_iid(pool, 10, rng)) ++hits[static_cast<std::size_t>(i)];
        }
        const double sigma = std::sqrt(10000 * 0.1 * 0.9);
        for (int h : hits) CHECK(std::abs(h - 1000) <= 3.0 * sigma);
    }
    SUBCASE("errors") {
        Rng rng(0);
        CHECK_THROWS_AS(sample_iid(std::span<const NodeId>(pool).first(5), 6, rng), ValidationError);
    }
}

TEST_CASE("condsr_loss") {
    const Setup s = two_cliques();
    SUBCASE("zero-weight model over 7 classes gives ln 7") {
        const auto g = generate_sbm({{3, 3, 3, 3, 3, 3, 3}, 0.5, 0.1, 2, 1.0}, 0);
        const auto adj = normalize_adjacency(g);
        const auto x = feature_matrix(g);
        ModelConfig mcfg;
        ad::ParamSet ps = init_params(mcfg, 2, 7, 0);
        for (auto& [name, value] : ps) value.setZero();
        ad::Tape tape;
        ad::BoundParams bound(tape, ps);
        const ForwardResult fw = forward(mcfg, bound, adj, x);
        const std::vector<NodeId> tr{0, 4, 8, 12}, iid{1, 5, 9, 13};
        const LossTerms loss = condsr_loss(fw, g.labels(), tr, iid, {});
        CHECK(loss.total.scalar() == doctest::Approx(std::log(7.0)).epsilon(1e-14));
        CHECK(loss.total.scalar() == loss.ce.scalar());
    }
    SUBCASE("identical index sets contribute no regularizer") {
        const auto x = feature_matrix(s.g);
        ModelConfig mcfg;
        const ad::ParamSet ps = init_params(mcfg, 4, 2, 3);
        ad::Tape tape;
        ad::BoundParams bound(tape, ps);
        const ForwardResult fw = forward(mcfg, bound, s.adj, x);
        TrainConfig t;
        t.lambda_cmd = 0.7;
        t.lambda_mmd = 0.9;
        const LossTerms loss = condsr_loss(fw, s.g.labels(), s.split.train_idx, s.split.train_idx, t);
        CHECK(std::abs(loss.cmd.scalar()) < 1e-15);
        CHECK(std::abs(loss.mmd.scalar()) < 1e-12);
        CHECK(loss.total.scalar() == doctest::Approx(loss.ce.scalar()).epsilon(1e-12));
    }
    SUBCASE("empty index sets") {
        const auto x = feature_matrix(s.g);
        ModelConfig mcfg;
        const ad::ParamSet ps = init_params(mcfg, 4, 2, 3);
        ad::Tape tape;
        ad::BoundParams bound(tape, ps);
        const ForwardResult fw = forward(mcfg, bound, s.adj, x);
        const std::vector<NodeId> none;
        CHECK_THROWS_AS(condsr_loss(fw, s.g.labels(), none, s.split.train_idx, {}), ValidationError);
        CHECK_THROWS_AS(condsr_loss(fw, s.g.labels(), s.split.train_idx, none, {}), ValidationError);
    }
}

TEST_CASE("train on two cliques") {
    const Setup s = two_cliques();
    ModelConfig mcfg;
    mcfg.arch = Arch::Gcn;
    TrainConfig tcfg;
    tcfg.seed = 4;
    const TrainedModel m = train(s.g, s.adj, s.split, mcfg, tcfg);
    const Inference inf = infer(m, s.adj, feature_matrix(s.g));
    CHECK(accuracy(inf.probs, s.g.labels(), s.split.train_idx) == 1.0);
    CHECK(m.history.size() == 200);
    for (const LossRecord& r : m.history) CHECK(std::isfinite(r.total));

    SUBCASE("same seed, bitwise-identical params") {
        CHECK(train(s.g, s.adj, s.split, mcfg, tcfg).params == m.params);
        TrainConfig other = tcfg;
        other.seed = 5;
        CHECK_FALSE(train(s.g, s.adj, s.split, mcfg, other).params == m.params);
    }
}

TEST_CASE("loss decomposition holds every epoch") {
    const auto g = generate_sbm({{15, 15, 15}, 0.3, 0.02, 6, 1.0}, 2);
    const auto adj = normalize_adjacency(g);
    const auto split = make_splits(g, biased_train_sample(g, adj, 4, 0.1, 1), 1);
    for (Arch arch : {Arch::Gcn, Arch::Appnp}) {
        ModelConfig mcfg;
        mcfg.arch = arch;
        mcfg.dropout = 0.2;
        TrainConfig tcfg;
        tcfg.epochs = 40;
        tcfg.lambda_cmd = 0.5;
        tcfg.lambda_mmd = 1.0;
        const TrainedModel m = train(g, adj, split, mcfg, tcfg);
        for (const LossRecord& r : m.history) {
            CHECK(std::abs(r.total - (r.ce + 0.5 * r.cmd + 1.0 * r.mmd)) <= 1e-9);
            CHECK(r.cmd >= 0.0);
            CHECK(r.mmd >= -1e-15);
            CHECK(r.ce > 0.0);
        }
    }
}

TEST_CASE("zero lambdas ignore the regularizer settings") {
    const auto g = generate_sbm({{15, 15, 15}, 0.3, 0.02, 6, 1.0}, 3);
    const auto adj = normalize_adjacency(g);
    const auto split = make_splits(g, biased_train_sample(g, adj, 4, 0.1, 2), 2);
    ModelConfig mcfg;
    TrainConfig a;
    a.epochs = 30;
    TrainConfig b = a;
    b.cmd.moment_order = 2;
    b.mmd = {Kernel::Linear, std::nullopt};
    const TrainedModel ma = train(g, adj, split, mcfg, a);
    const TrainedModel mb = train(g, adj, split, mcfg, b);
    CHECK(ma.params == mb.params);
    for (std::size_t e = 0; e < ma.history.size(); ++e) {
        CHECK(ma.history[e].total == ma.history[e].ce);
        CHECK(ma.history[e].ce == mb.history[e].ce);
    }
}

TEST_CASE("shift regularization reduces the measured CMD") {
    const auto g = generate_sbm({}, 0);
    const auto adj = normalize_adjacency(g);
    const auto x = feature_matrix(g);
    double plain = 0.0, regularized = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto split = make_splits(g, biased_train_sample(g, adj, 20, 0.1, seed), seed);
        auto shift_of = [&](double lc, double lm) {
            TrainConfig t;
            t.seed = seed;
            t.lambda_cmd = lc;
            t.lambda_mmd = lm;
            const TrainedModel m = train(g, adj, split, ModelConfig{}, t);
            const Matrix h = infer(m, adj, x).hidden;
            Matrix ht(static_cast<Eigen::Index>(split.train_idx.size()), h.cols());
            Matrix hp(static_cast<Eigen::Index>(split.iid_pool_idx.size()), h.cols());
            for (std::size_t i = 0; i < split.train_idx.size(); ++i) ht.row(static_cast<Eigen::Index>(i)) = h.row(split.train_idx[i]);
            for (std::size_t i = 0; i < split.iid_pool_idx.size(); ++i) hp.row(static_cast<Eigen::Index>(i)) = h.row(split.iid_pool_idx[i]);
            return cmd_value(ht, hp, {});
        };
        plain += shift_of(0.0, 0.0);
        regularized += shift_of(0.5, 1.0);
    }
    CHECK(regularized <= plain);
}

TEST_CASE("non-finite loss aborts with diagnostics") {
    const Setup s = two_cliques();
    TrainConfig tcfg;
    tcfg.learning_rate = 1e300;
    tcfg.epochs = 50;
    try {
        train(s.g, s.adj, s.split, ModelConfig{}, tcfg);
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("epoch") != std::string::npos);
        CHECK(msg.find("ce") != std::string::npos);
    }
}

TEST_CASE("config and checkpoint round trip") {
    TrainConfig t;
    t.lambda_cmd = 0.3;
    t.mmd.bandwidth = 2.5;
    t.seed = 17;
    const TrainConfig back = train_config_from_json(train_config_to_json(t));
    CHECK(back.lambda_cmd == 0.3);
    CHECK(*back.mmd.bandwidth == 2.5);
    CHECK(back.seed == 17);
    CHECK_FALSE(train_config_from_json(train_config_to_json(TrainConfig{})).mmd.bandwidth.has_value());
    CHECK_THROWS_AS(train_config_from_json({{"mmd", {{"bandwidth", "auto"}}}}), ParseError);
    CHECK_THROWS_AS(train_config_from_json({{"epochs", 0}}), ValidationError);

    const Setup s = two_cliques();
    TrainConfig short_run;
    short_run.epochs = 5;
    const TrainedModel m = train(s.g, s.adj, s.split, ModelConfig{}, short_run);
    const TrainedModel r = checkpoint_from_json(checkpoint_to_json(m));
    CHECK(r.params == m.params);
    CHECK(r.history.size() == 5);
    CHECK(r.history[4].total == m.history[4].total);
}
