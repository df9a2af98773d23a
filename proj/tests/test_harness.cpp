#include "condsr/error.hpp"
#include "condsr/harness.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

using namespace condsr;

namespace {

ExperimentConfig small_config() {
    ExperimentConfig cfg;
    cfg.sbm = {{20, 20, 20}, 0.2, 0.02, 6, 1.0};
    cfg.sbm_seed = 3;
    cfg.conditions = {Condition::Iid, Condition::Biased, Condition::CondSR};
    cfg.model.hidden_dim = 16;
    cfg.train.epochs = 30;
    cfg.train.lambda_cmd = 0.5;
    cfg.train.lambda_mmd = 1.0;
    cfg.epsilons = {0.1, 0.2};
    cfg.n_runs = 2;
    cfg.n_splits = 4;
    cfg.per_class = 5;
    cfg.seed = 9;
    return cfg;
}

bool same_metrics(const ResultRow& a, const ResultRow& b) {
    return a.run == b.run && a.split == b.split && a.epsilon == b.epsilon && a.accuracy == b.accuracy &&
           a.coverage == b.coverage && a.inefficiency == b.inefficiency;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("experiment config JSON") {
    const ExperimentConfig cfg = small_config();
    const ExperimentConfig back = experiment_config_from_json(experiment_config_to_json(cfg));
    CHECK(back.sbm.block_sizes == cfg.sbm.block_sizes);
    CHECK(back.conditions == cfg.conditions);
    CHECK(back.epsilons == cfg.epsilons);
    CHECK(back.n_runs == 2);
    CHECK(back.train.lambda_mmd == 1.0);
    CHECK(back.model.hidden_dim == 16);
    CHECK(back.set_rule == SetRule::Prefix);

    const ExperimentConfig defaults = experiment_config_from_json(nlohmann::json::object());
    CHECK(defaults.n_splits == 200);
    CHECK(defaults.alpha == 0.1);
    CHECK(defaults.per_class == 20);

    const auto all = experiment_config_from_json({{"condition", "all"}, {"set_rule", "score"}});
    CHECK(all.conditions.size() == 3);
    CHECK(all.set_rule == SetRule::Score);

    CHECK_THROWS_AS(experiment_config_from_json({{"condition", "oracle"}}), ValidationError);
    CHECK_THROWS_AS(experiment_config_from_json({{"n_runs", "three"}}), ParseError);
    CHECK_THROWS_AS(experiment_config_from_json({{"epsilons", {1.5}}}), ValidationError);
    CHECK_THROWS_AS(experiment_config_from_json(nlohmann::json::array()), ParseError);

    const auto path = test::temp_path("cfg_bad.json");
    test::write_text(path, "{ not json");
    CHECK_THROWS_AS(load_experiment_config(path), ParseError);
}

TEST_CASE("run_experiment") {
    const ExperimentConfig cfg = small_config();
    const SparseGraph g = experiment_graph(cfg);
    const ResultTable t = run_experiment(cfg, g);
    CHECK(t.rows.size() == 3u * 2u * 4u * 2u);
    CHECK(t.runs.size() == 6);
    for (const ResultRow& r : t.rows) {
        CHECK(r.coverage >= 0.0);
        CHECK(r.coverage <= 1.0);
        CHECK(r.inefficiency >= 1.0);
        CHECK(r.alpha == 0.1);
        const bool reg = r.condition == Condition::CondSR;
        CHECK(r.lambda_cmd == (reg ? 0.5 : 0.0));
    }
    for (const RunDiagnostics& d : t.runs) {
        CHECK(d.train_idx.size() == 15);
        CHECK(d.train_accuracy >= 0.0);
        CHECK(d.cmd_shift >= 0.0);
    }

    SUBCASE("deterministic and independent of the thread count") {
        ExperimentConfig threaded = cfg;
        threaded.threads = 3;
        const ResultTable u = run_experiment(threaded, g);
        REQUIRE(u.rows.size() == t.rows.size());
        for (std::size_t i = 0; i < t.rows.size(); ++i) CHECK(same_metrics(t.rows[i], u.rows[i]));
    }
    SUBCASE("iid and biased differ only in how training nodes are drawn") {
        const auto& iid = t.runs[0];
        const auto& biased = t.runs[2];
        CHECK(iid.condition == Condition::Iid);
        CHECK(biased.condition == Condition::Biased);
        CHECK(iid.train_idx != biased.train_idx);
    }
    SUBCASE("run errors name the run") {
        ExperimentConfig bad = cfg;
        bad.per_class = 25;
        try {
            run_experiment(bad, g);
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(std::string(e.what()).find("run 0") != std::string::npos);
        }
    }
}

TEST_CASE("aggregate") {
    std::vector<ResultRow> rows;
    rows.push_back({0, 0, 0.1, Condition::Biased, 0.5, 0.9, 2.0, 0, 0, 0.1});
    rows.push_back({0, 1, 0.1, Condition::Biased, 0.7, 0.8, 3.0, 0, 0, 0.1});
    rows.push_back({0, 0, 0.1, Condition::CondSR, 0.9, 1.0, 1.0, 0.5, 1, 0.1});
    const auto aggs = aggregate(rows);
    REQUIRE(aggs.size() == 2);
    CHECK(aggs[0].condition == Condition::Biased);
    CHECK(aggs[0].count == 2);
    CHECK(aggs[0].accuracy_mean == doctest::Approx(0.6));
    CHECK(aggs[0].accuracy_std == doctest::Approx(0.1));
    CHECK(aggs[0].inefficiency_mean == doctest::Approx(2.5));
    CHECK(aggs[1].accuracy_std == 0.0);
}

TEST_CASE("reports") {
    const ExperimentConfig cfg = small_config();
    const ResultTable t = run_experiment(cfg);
    const auto dir = test::temp_path("report");
    std::filesystem::remove_all(dir);
    emit_report(t, dir);
    REQUIRE(std::filesystem::exists(dir / "rows.csv"));
    REQUIRE(std::filesystem::exists(dir / "summary.json"));
    REQUIRE(std::filesystem::exists(dir / "table.md"));

    const std::string csv = slurp(dir / "rows.csv");
    CHECK(csv.rfind("run,split,epsilon,condition,accuracy,coverage,inefficiency,lambda_cmd,lambda_mmd,alpha\n", 0) == 0);

    SUBCASE("rows.csv round trips exactly") {
        const auto rows = read_rows_csv(dir / "rows.csv");
        REQUIRE(rows.size() == t.rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            CHECK(same_metrics(rows[i], t.rows[i]));
            CHECK(rows[i].condition == t.rows[i].condition);
            CHECK(rows[i].lambda_mmd == t.rows[i].lambda_mmd);
        }
    }
    SUBCASE("summary aggregates match a recomputation from rows.csv") {
        const auto summary = nlohmann::json::parse(slurp(dir / "summary.json"));
        CHECK(summary.at("code_version") == std::string(kCodeVersion));
        CHECK(summary.at("config").at("n_runs") == 2);
        CHECK(summary.at("runs").size() == 6);
        const auto again = aggregate(read_rows_csv(dir / "rows.csv"));
        const auto& js = summary.at("aggregates");
        REQUIRE(js.size() == again.size());
        for (std::size_t i = 0; i < again.size(); ++i) {
            CHECK(std::abs(js[i].at("accuracy_mean").get<double>() - again[i].accuracy_mean) <= 1e-12);
            CHECK(std::abs(js[i].at("coverage_mean").get<double>() - again[i].coverage_mean) <= 1e-12);
            CHECK(std::abs(js[i].at("inefficiency_std").get<double>() - again[i].inefficiency_std) <= 1e-12);
        }
    }
    SUBCASE("table.md carries the comparison arrows") {
        const std::string md = slurp(dir / "table.md");
        CHECK(md.find("IID → Biased → CondSR") != std::string::npos);
        CHECK(md.find("epsilon = 0.10") != std::string::npos);
        CHECK(md.find("%)") != std::string::npos);
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(emit_report(ResultTable{}, dir), ValidationError);
        test::write_text(dir / "broken.csv", "a,b\n");
        CHECK_THROWS_AS(read_rows_csv(dir / "broken.csv"), ParseError);
    }
}

TEST_CASE("relative change and markdown formatting") {
    CHECK(relative_change_percent(84.11, 71.57) == doctest::Approx(-14.909).epsilon(1e-4));
    CHECK(relative_change_percent(71.57, 75.06) == doctest::Approx(4.876).epsilon(1e-3));

    std::vector<Aggregate> aggs(3);
    const double acc[3] = {0.8411, 0.7157, 0.7506};
    for (int c = 0; c < 3; ++c) {
        aggs[static_cast<std::size_t>(c)].condition = static_cast<Condition>(c);
        aggs[static_cast<std::size_t>(c)].epsilon = 0.1;
        aggs[static_cast<std::size_t>(c)].accuracy_mean = acc[c];
        aggs[static_cast<std::size_t>(c)].coverage_mean = 0.9;
        aggs[static_cast<std::size_t>(c)].inefficiency_mean = 2.0;
    }
    const std::string md = render_markdown(aggs);
    CHECK(md.find("84.11") != std::string::npos);
    CHECK(md.find("(-14.91%)") != std::string::npos);
    CHECK(md.find("(+4.88%)") != std::string::npos);
}

TEST_CASE("sweep_lambdas") {
    ExperimentConfig cfg = small_config();
    cfg.epsilons = {0.1};
    const SparseGraph g = experiment_graph(cfg);
    const SweepResult sw = sweep_lambdas(cfg, g, {0.0, 0.5}, {0.0, 1.0});
    CHECK(sw.cells.size() == 4);
    CHECK(sw.table.rows.size() == 4u * 2u * 4u);
    bool best_is_a_cell = false;
    for (const Aggregate& a : sw.cells) {
        CHECK(a.accuracy_mean <= sw.best.accuracy_mean);
        best_is_a_cell |= a.lambda_cmd == sw.best.lambda_cmd && a.lambda_mmd == sw.best.lambda_mmd;
    }
    CHECK(best_is_a_cell);

    SUBCASE("cell (0, 0) reproduces the biased condition") {
        ExperimentConfig biased = cfg;
        biased.conditions = {Condition::Biased};
        const ResultTable b = run_experiment(biased, g);
        std::vector<ResultRow> zero;
        for (const ResultRow& r : sw.table.rows) {
            if (r.lambda_cmd == 0.0 && r.lambda_mmd == 0.0) zero.push_back(r);
        }
        REQUIRE(zero.size() == b.rows.size());
        for (std::size_t i = 0; i < zero.size(); ++i) CHECK(same_metrics(zero[i], b.rows[i]));
    }
    CHECK_THROWS_AS(sweep_lambdas(cfg, g, {}, {0.1}), ValidationError);
    CHECK_THROWS_AS(sweep_lambdas(cfg, g, {-0.1}, {0.1}), ValidationError);
}
