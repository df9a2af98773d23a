#pragma once

#include "condsr/conformal.hpp"
#include "condsr/graph.hpp"
#include "condsr/models.hpp"
#include "condsr/train.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

// =============================================================================
/// @file harness.hpp
/// @brief Experiment orchestration for the IID / Biased / CondSR conditions.
///
/// Seeds: run r uses `seed + 1000 r`; calibration/test split s of that run
/// uses `run_seed + s`. The training sample, parameter initialisation and
/// per-epoch IID draws all derive from the run seed, so a run can be
/// reproduced in isolation.
// =============================================================================

namespace condsr {

enum class Condition { Iid, Biased, CondSR };

std::string_view to_string(Condition c);
Condition condition_from_string(std::string_view s);

struct ExperimentConfig {
    std::optional<std::filesystem::path> dataset;  ///< JSON dataset; SBM when empty
    SbmParams sbm;
    std::uint64_t sbm_seed = 0;

    std::vector<Condition> conditions{Condition::CondSR};
    ModelConfig model;
    TrainConfig train;  ///< lambdas apply to the condsr condition only
    double alpha = 0.1;
    std::vector<double> epsilons{0.1};
    SetRule set_rule = SetRule::Prefix;
    int n_runs = 1;
    int n_splits = 200;
    int per_class = 20;
    std::uint64_t seed = 0;
    int threads = 1;

    void validate() const;
};

nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg);
/// Missing keys keep their defaults. Throws ParseError/ValidationError.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

struct ResultRow {
    int run = 0;
    int split = 0;
    double epsilon = 0.0;
    Condition condition = Condition::CondSR;
    double accuracy = 0.0;
    double coverage = 0.0;
    double inefficiency = 0.0;
    double lambda_cmd = 0.0;
    double lambda_mmd = 0.0;
    double alpha = 0.0;
};

/// Per trained model: where the training set came from and how far its
/// representations sit from the IID pool.
struct RunDiagnostics {
    int run = 0;
    Condition condition = Condition::CondSR;
    double lambda_cmd = 0.0;
    double lambda_mmd = 0.0;
    std::uint64_t seed = 0;
    std::vector<NodeId> train_idx;
    double train_accuracy = 0.0;
    double pool_accuracy = 0.0;  ///< accuracy on every non-training node
    double cmd_shift = 0.0;      ///< cmd(H_train, H_pool) on the final model
    double mmd_shift = 0.0;
    double final_loss = 0.0;
};

struct Aggregate {
    Condition condition = Condition::CondSR;
    double epsilon = 0.0;
    double lambda_cmd = 0.0;
    double lambda_mmd = 0.0;
    std::size_t count = 0;
    double accuracy_mean = 0.0, accuracy_std = 0.0;
    double coverage_mean = 0.0, coverage_std = 0.0;
    double inefficiency_mean = 0.0, inefficiency_std = 0.0;
};

struct ResultTable {
    std::vector<ResultRow> rows;
    std::vector<RunDiagnostics> runs;
    nlohmann::json config;  ///< echo of the generating config

    /// Sorts rows by (condition, lambdas, run, split, epsilon).
    void canonicalize();
};

/// Mean and population standard deviation per (condition, lambdas, epsilon).
std::vector<Aggregate> aggregate(const std::vector<ResultRow>& rows);

/// Graph the config points at (loaded or generated).
SparseGraph experiment_graph(const ExperimentConfig& cfg);

ResultTable run_experiment(const ExperimentConfig& cfg);
ResultTable run_experiment(const ExperimentConfig& cfg, const SparseGraph& g);

struct SweepResult {
    ResultTable table;
    std::vector<Aggregate> cells;  ///< one per (lambda_cmd, lambda_mmd, epsilon)
    Aggregate best;                ///< highest mean accuracy at the first epsilon
};

/// Runs the condsr condition at every (lambda_cmd, lambda_mmd) grid point.
SweepResult sweep_lambdas(const ExperimentConfig& cfg, const std::vector<double>& lambda_cmd,
                          const std::vector<double>& lambda_mmd);
SweepResult sweep_lambdas(const ExperimentConfig& cfg, const SparseGraph& g, const std::vector<double>& lambda_cmd,
                          const std::vector<double>& lambda_mmd);

/// (to - from) / from * 100.
double relative_change_percent(double from, double to);

/// Writes rows.csv, summary.json and table.md under `out_dir` (created if
/// needed).
void emit_report(const ResultTable& table, const std::filesystem::path& out_dir);

/// Re-reads a rows.csv written by emit_report.
std::vector<ResultRow> read_rows_csv(const std::filesystem::path& path);

/// Markdown IID -> Biased -> CondSR comparison for the given aggregates.
std::string render_markdown(const std::vector<Aggregate>& aggregates);

inline constexpr std::string_view kCodeVersion = "0.1.0";

}  // namespace condsr
