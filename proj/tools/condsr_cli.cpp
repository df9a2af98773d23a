#include "condsr/error.hpp"
#include "condsr/harness.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using namespace condsr;

struct RunFlags {
    std::string config;
    std::string out = "results";
    std::string condition;
    std::string dataset;
    std::optional<double> alpha;
    std::vector<double> epsilons;
    std::optional<int> runs;
    std::optional<int> splits;
    std::optional<int> per_class;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::string set_rule;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
    cmd->add_option("--config", f.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
    cmd->add_option("--out", f.out, "Output directory")->capture_default_str();
    cmd->add_option("--alpha", f.alpha, "PPR teleport for the biased sampler");
    cmd->add_option("--epsilon", f.epsilons, "Miscoverage level(s)");
    cmd->add_option("--runs", f.runs, "Independent training runs");
    cmd->add_option("--splits", f.splits, "Calibration/test splits per run");
    cmd->add_option("--per-class", f.per_class, "Training nodes per class");
    cmd->add_option("--seed", f.seed, "Base seed");
    cmd->add_option("--dataset", f.dataset, "JSON dataset (default: SBM from config)");
    cmd->add_option("--threads", f.threads, "Worker threads over runs");
    cmd->add_option("--set-rule", f.set_rule, "prefix or score")->check(CLI::IsMember({"prefix", "score"}));
}

ExperimentConfig resolve(const RunFlags& f) {
    ExperimentConfig cfg = f.config.empty() ? ExperimentConfig{} : load_experiment_config(f.config);
    if (!f.dataset.empty()) cfg.dataset = f.dataset;
    if (!f.condition.empty()) {
        cfg.conditions = f.condition == "all"
                             ? std::vector{Condition::Iid, Condition::Biased, Condition::CondSR}
                             : std::vector{condition_from_string(f.condition)};
    }
    if (f.alpha) cfg.alpha = *f.alpha;
    if (!f.epsilons.empty()) cfg.epsilons = f.epsilons;
    if (f.runs) cfg.n_runs = *f.runs;
    if (f.splits) cfg.n_splits = *f.splits;
    if (f.per_class) cfg.per_class = *f.per_class;
    if (f.seed) cfg.seed = *f.seed;
    if (f.threads) cfg.threads = *f.threads;
    if (!f.set_rule.empty()) cfg.set_rule = set_rule_from_string(f.set_rule);
    cfg.validate();
    return cfg;
}

void print_aggregates(const std::vector<Aggregate>& aggs) {
    for (const Aggregate& a : aggs) {
        std::cout << to_string(a.condition) << " eps=" << a.epsilon << " lambda_cmd=" << a.lambda_cmd
                  << " lambda_mmd=" << a.lambda_mmd << " acc=" << a.accuracy_mean << " cov=" << a.coverage_mean
                  << " ineff=" << a.inefficiency_mean << " (n=" << a.count << ")\n";
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Conditional shift-robust conformal prediction for node classification"};
    app.require_subcommand(1);

    SbmParams sbm;
    std::uint64_t sbm_seed = 0;
    std::string sbm_out;
    auto* gen = app.add_subcommand("gen-sbm", "Write a stochastic block model graph as a JSON dataset");
    gen->add_option("--out", sbm_out, "Output dataset path")->required();
    gen->add_option("--sizes", sbm.block_sizes, "Block sizes")->capture_default_str();
    gen->add_option("--p-in", sbm.p_in, "Within-block edge probability")->capture_default_str();
    gen->add_option("--p-out", sbm.p_out, "Between-block edge probability")->capture_default_str();
    gen->add_option("--dim", sbm.feature_dim, "Feature dimension")->capture_default_str();
    gen->add_option("--shift", sbm.feat_shift, "Class mean offset")->capture_default_str();
    gen->add_option("--seed", sbm_seed, "Generator seed")->capture_default_str();

    RunFlags run_flags;
    auto* run = app.add_subcommand("run", "Train and evaluate the selected conditions");
    add_run_flags(run, run_flags);
    run->add_option("--condition", run_flags.condition, "iid, biased, condsr or all")
        ->check(CLI::IsMember({"iid", "biased", "condsr", "all"}));

    RunFlags sweep_flags;
    std::vector<double> grid_cmd{0.1, 0.3, 0.5, 0.7, 1.0};
    std::vector<double> grid_mmd{0.1, 0.3, 0.5, 0.7, 1.0};
    auto* sweep = app.add_subcommand("sweep", "Grid over lambda_cmd x lambda_mmd for the condsr condition");
    add_run_flags(sweep, sweep_flags);
    sweep->add_option("--lambda-cmd", grid_cmd, "lambda_cmd grid")->capture_default_str();
    sweep->add_option("--lambda-mmd", grid_mmd, "lambda_mmd grid")->capture_default_str();

    std::string report_dir;
    auto* report = app.add_subcommand("report", "Regenerate table.md from an existing rows.csv");
    report->add_option("dir", report_dir, "Directory holding rows.csv")->required()->check(CLI::ExistingDirectory);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*gen) {
            save_graph(generate_sbm(sbm, sbm_seed), sbm_out);
            std::cout << "wrote " << sbm_out << "\n";
        } else if (*run) {
            const ExperimentConfig cfg = resolve(run_flags);
            const ResultTable table = run_experiment(cfg);
            emit_report(table, run_flags.out);
            print_aggregates(aggregate(table.rows));
            std::cout << "wrote " << run_flags.out << "\n";
        } else if (*sweep) {
            const ExperimentConfig cfg = resolve(sweep_flags);
            const SweepResult res = sweep_lambdas(cfg, grid_cmd, grid_mmd);
            emit_report(res.table, sweep_flags.out);
            print_aggregates(res.cells);
            std::cout << "best: lambda_cmd=" << res.best.lambda_cmd << " lambda_mmd=" << res.best.lambda_mmd
                      << " acc=" << res.best.accuracy_mean << "\n";
        } else if (*report) {
            const auto rows = read_rows_csv(std::filesystem::path(report_dir) / "rows.csv");
            const std::string md = render_markdown(aggregate(rows));
            std::ofstream out(std::filesystem::path(report_dir) / "table.md");
            if (!out) throw Error("report: cannot write table.md");
            out << "# Results\n\n" << md;
            std::cout << md;
        }
    } catch (const std::exception& e) {
        std::cerr << "condsr: error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
