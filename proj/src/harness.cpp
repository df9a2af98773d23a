#include "condsr/harness.hpp"

#include "condsr/conformal.hpp"
#include "condsr/error.hpp"
#include "condsr/ppr.hpp"
#include "condsr/shift_metrics.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>
#include <tuple>

namespace condsr {

namespace {

using nlohmann::json;

constexpr const char* kCsvHeader =
    "run,split,epsilon,condition,accuracy,coverage,inefficiency,lambda_cmd,lambda_mmd,alpha";

// Shortest text that reads back to the same double.
std::string fmt_exact(double v) {
    char buf[40];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string fmt_fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

auto row_key(const ResultRow& r) {
    return std::make_tuple(static_cast<int>(r.condition), r.lambda_cmd, r.lambda_mmd, r.run, r.split, r.epsilon);
}

struct Job {
    Condition condition;
    int run;
    double lambda_cmd;
    double lambda_mmd;
};

struct JobOutput {
    std::vector<ResultRow> rows;
    RunDiagnostics diag;
};

JobOutput run_job(const ExperimentConfig& cfg, const SparseGraph& g, const NormalizedAdjacency& adj,
                  const SparseRowMatrix& x, const Job& job) {
    const std::uint64_t run_seed = cfg.seed + 1000ULL * static_cast<std::uint64_t>(job.run);
    const std::vector<NodeId> train_idx =
        job.condition == Condition::Iid ? uniform_train_sample(g, cfg.per_class, run_seed)
                                        : biased_train_sample(g, adj, cfg.per_class, cfg.alpha, run_seed);

    TrainConfig tcfg = cfg.train;
    tcfg.seed = run_seed;
    tcfg.lambda_cmd = job.lambda_cmd;
    tcfg.lambda_mmd = job.lambda_mmd;

    const SplitSpec base = make_splits(g, train_idx, run_seed);
    const TrainedModel model = train(g, adj, base, cfg.model, tcfg);
    const Inference inf = infer(model, adj, x);

    JobOutput out;
    RunDiagnostics& d = out.diag;
    d.run = job.run;
    d.condition = job.condition;
    d.lambda_cmd = job.lambda_cmd;
    d.lambda_mmd = job.lambda_mmd;
    d.seed = run_seed;
    d.train_idx = train_idx;
    d.train_accuracy = accuracy(inf.probs, g.labels(), train_idx);
    d.pool_accuracy = accuracy(inf.probs, g.labels(), base.iid_pool_idx);
    Matrix h_train(static_cast<Eigen::Index>(train_idx.size()), inf.hidden.cols());
    for (std::size_t i = 0; i < train_idx.size(); ++i) h_train.row(static_cast<Eigen::Index>(i)) = inf.hidden.row(train_idx[i]);
    Matrix h_pool(static_cast<Eigen::Index>(base.iid_pool_idx.size()), inf.hidden.cols());
    for (std::size_t i = 0; i < base.iid_pool_idx.size(); ++i) {
        h_pool.row(static_cast<Eigen::Index>(i)) = inf.hidden.row(base.iid_pool_idx[i]);
    }
    d.cmd_shift = cmd_value(h_train, h_pool, tcfg.cmd);
    d.mmd_shift = mmd_value(h_train, h_pool, tcfg.mmd);
    d.final_loss = model.history.back().total;

    for (int s = 0; s < cfg.n_splits; ++s) {
        try {
            const SplitSpec split = make_splits(g, train_idx, run_seed + static_cast<std::uint64_t>(s));
            for (double eps : cfg.epsilons) {
                const ConformalReport rep =
                    run_split_conformal(inf.probs, g.labels(), split.calib_idx, split.test_idx, eps, cfg.set_rule);
                out.rows.push_back({job.run, s, eps, job.condition, rep.accuracy, rep.coverage, rep.inefficiency,
                                    job.lambda_cmd, job.lambda_mmd, cfg.alpha});
            }
        } catch (const Error& e) {
            throw Error("split " + std::to_string(s) + ": " + e.what());
        }
    }
    return out;
}

ResultTable run_jobs(const ExperimentConfig& cfg, const SparseGraph& g, const std::vector<Job>& jobs) {
    const NormalizedAdjacency adj = normalize_adjacency(g);
    const SparseRowMatrix x = feature_matrix(g);

    std::vector<JobOutput> outputs(jobs.size());
    std::vector<std::exception_ptr> errors(jobs.size());
    auto execute = [&](std::size_t i) {
        try {
            outputs[i] = run_job(cfg, g, adj, x, jobs[i]);
        } catch (const std::exception& e) {
            try {
                throw Error("condition " + std::string(to_string(jobs[i].condition)) + ", run " +
                            std::to_string(jobs[i].run) + ": " + e.what());
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };

    const int workers = std::max(1, std::min<int>(cfg.threads, static_cast<int>(jobs.size())));
    if (workers == 1) {
        for (std::size_t i = 0; i < jobs.size(); ++i) execute(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < jobs.size(); i = next++) execute(i);
            });
        }
        for (auto& t : pool) t.join();
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    ResultTable table;
    for (JobOutput& o : outputs) {
        table.rows.insert(table.rows.end(), o.rows.begin(), o.rows.end());
        table.runs.push_back(std::move(o.diag));
    }
    table.config = experiment_config_to_json(cfg);
    table.canonicalize();
    return table;
}

double population_std(const std::vector<double>& v, double mean) {
    double acc = 0.0;
    for (double x : v) acc += (x - mean) * (x - mean);
    return std::sqrt(acc / static_cast<double>(v.size()));
}

double mean_of(const std::vector<double>& v) {
    double acc = 0.0;
    for (double x : v) acc += x;
    return acc / static_cast<double>(v.size());
}

json aggregate_to_json(const Aggregate& a) {
    return {{"condition", std::string(to_string(a.condition))},
            {"epsilon", a.epsilon},
            {"lambda_cmd", a.lambda_cmd},
            {"lambda_mmd", a.lambda_mmd},
            {"count", a.count},
            {"accuracy_mean", a.accuracy_mean},
            {"accuracy_std", a.accuracy_std},
            {"coverage_mean", a.coverage_mean},
            {"coverage_std", a.coverage_std},
            {"inefficiency_mean", a.inefficiency_mean},
            {"inefficiency_std", a.inefficiency_std}};
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) out.push_back(field);
    return out;
}

}  // namespace

// -----------------------------------------------------------------------------
// Config
// -----------------------------------------------------------------------------

std::string_view to_string(Condition c) {
    switch (c) {
        case Condition::Iid: return "iid";
        case Condition::Biased: return "biased";
        case Condition::CondSR: return "condsr";
    }
    return "?";
}

Condition condition_from_string(std::string_view s) {
    if (s == "iid") return Condition::Iid;
    if (s == "biased") return Condition::Biased;
    if (s == "condsr") return Condition::CondSR;
    throw ValidationError("unknown condition '" + std::string(s) + "' (expected iid, biased or condsr)");
}

void ExperimentConfig::validate() const {
    if (n_runs < 1) throw ValidationError("experiment: n_runs must be >= 1");
    if (n_splits < 1) throw ValidationError("experiment: n_splits must be >= 1");
    if (per_class < 1) throw ValidationError("experiment: per_class must be >= 1");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ValidationError("experiment: alpha must lie in (0, 1]");
    if (conditions.empty()) throw ValidationError("experiment: no conditions selected");
    if (epsilons.empty()) throw ValidationError("experiment: no epsilon values");
    for (double e : epsilons) {
        if (!(e > 0.0 && e < 1.0)) throw ValidationError("experiment: epsilon values must lie in (0, 1)");
    }
    if (threads < 1) throw ValidationError("experiment: threads must be >= 1");
    model.validate();
    train.validate();
}

json experiment_config_to_json(const ExperimentConfig& cfg) {
    json j;
    if (cfg.dataset) {
        j["dataset"] = cfg.dataset->string();
    } else {
        j["sbm"] = {{"block_sizes", cfg.sbm.block_sizes},
                    {"p_in", cfg.sbm.p_in},
                    {"p_out", cfg.sbm.p_out},
                    {"feature_dim", cfg.sbm.feature_dim},
                    {"feat_shift", cfg.sbm.feat_shift},
                    {"seed", cfg.sbm_seed}};
    }
    json conds = json::array();
    for (Condition c : cfg.conditions) conds.push_back(std::string(to_string(c)));
    j["conditions"] = std::move(conds);
    j["model"] = config_to_json(cfg.model);
    j["train"] = train_config_to_json(cfg.train);
    j["alpha"] = cfg.alpha;
    j["epsilons"] = cfg.epsilons;
    j["set_rule"] = std::string(to_string(cfg.set_rule));
    j["n_runs"] = cfg.n_runs;
    j["n_splits"] = cfg.n_splits;
    j["per_class"] = cfg.per_class;
    j["seed"] = cfg.seed;
    return j;
}

ExperimentConfig experiment_config_from_json(const json& j) {
    if (!j.is_object()) throw ParseError("config: top level must be an object");
    ExperimentConfig cfg;
    try {
        if (j.contains("dataset")) cfg.dataset = j.at("dataset").get<std::string>();
        if (j.contains("sbm")) {
            const json& s = j.at("sbm");
            cfg.sbm.block_sizes = s.value("block_sizes", cfg.sbm.block_sizes);
            cfg.sbm.p_in = s.value("p_in", cfg.sbm.p_in);
            cfg.sbm.p_out = s.value("p_out", cfg.sbm.p_out);
            cfg.sbm.feature_dim = s.value("feature_dim", cfg.sbm.feature_dim);
            cfg.sbm.feat_shift = s.value("feat_shift", cfg.sbm.feat_shift);
            cfg.sbm_seed = s.value("seed", cfg.sbm_seed);
        }
        if (j.contains("conditions")) {
            cfg.conditions.clear();
            for (const auto& c : j.at("conditions")) cfg.conditions.push_back(condition_from_string(c.get<std::string>()));
        } else if (j.contains("condition")) {
            const auto c = j.at("condition").get<std::string>();
            cfg.conditions = c == "all" ? std::vector{Condition::Iid, Condition::Biased, Condition::CondSR}
                                        : std::vector{condition_from_string(c)};
        }
        if (j.contains("model")) cfg.model = config_from_json(j.at("model"));
        if (j.contains("train")) cfg.train = train_config_from_json(j.at("train"));
        cfg.alpha = j.value("alpha", cfg.alpha);
        if (j.contains("epsilons")) cfg.epsilons = j.at("epsilons").get<std::vector<double>>();
        if (j.contains("epsilon")) cfg.epsilons = {j.at("epsilon").get<double>()};
        if (j.contains("set_rule")) cfg.set_rule = set_rule_from_string(j.at("set_rule").get<std::string>());
        cfg.n_runs = j.value("n_runs", cfg.n_runs);
        cfg.n_splits = j.value("n_splits", cfg.n_splits);
        cfg.per_class = j.value("per_class", cfg.per_class);
        cfg.seed = j.value("seed", cfg.seed);
        cfg.threads = j.value("threads", cfg.threads);
    } catch (const json::exception& e) {
        throw ParseError(std::string("config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("config: cannot open '" + path.string() + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError("config: malformed JSON in '" + path.string() + "': " + e.what());
    }
    return experiment_config_from_json(j);
}

// -----------------------------------------------------------------------------
// Running
// -----------------------------------------------------------------------------

void ResultTable::canonicalize() {
    std::stable_sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) { return row_key(a) < row_key(b); });
    std::stable_sort(runs.begin(), runs.end(), [](const RunDiagnostics& a, const RunDiagnostics& b) {
        return std::make_tuple(static_cast<int>(a.condition), a.lambda_cmd, a.lambda_mmd, a.run) <
               std::make_tuple(static_cast<int>(b.condition), b.lambda_cmd, b.lambda_mmd, b.run);
    });
}

std::vector<Aggregate> aggregate(const std::vector<ResultRow>& rows) {
    using Key = std::tuple<int, double, double, double>;
    std::map<Key, std::vector<const ResultRow*>> groups;
    for (const ResultRow& r : rows) {
        groups[{static_cast<int>(r.condition), r.lambda_cmd, r.lambda_mmd, r.epsilon}].push_back(&r);
    }
    std::vector<Aggregate> out;
    for (const auto& [key, members] : groups) {
        Aggregate a;
        a.condition = static_cast<Condition>(std::get<0>(key));
        a.lambda_cmd = std::get<1>(key);
        a.lambda_mmd = std::get<2>(key);
        a.epsilon = std::get<3>(key);
        a.count = members.size();
        std::vector<double> acc, cov, ineff;
        for (const ResultRow* r : members) {
            acc.push_back(r->accuracy);
            cov.push_back(r->coverage);
            ineff.push_back(r->inefficiency);
        }
        a.accuracy_mean = mean_of(acc);
        a.accuracy_std = population_std(acc, a.accuracy_mean);
        a.coverage_mean = mean_of(cov);
        a.coverage_std = population_std(cov, a.coverage_mean);
        a.inefficiency_mean = mean_of(ineff);
        a.inefficiency_std = population_std(ineff, a.inefficiency_mean);
        out.push_back(a);
    }
    return out;
}

SparseGraph experiment_graph(const ExperimentConfig& cfg) {
    return cfg.dataset ? load_graph(*cfg.dataset) : generate_sbm(cfg.sbm, cfg.sbm_seed);
}

ResultTable run_experiment(const ExperimentConfig& cfg) { return run_experiment(cfg, experiment_graph(cfg)); }

ResultTable run_experiment(const ExperimentConfig& cfg, const SparseGraph& g) {
    cfg.validate();
    std::vector<Job> jobs;
    for (Condition c : cfg.conditions) {
        const bool regularized = c == Condition::CondSR;
        for (int r = 0; r < cfg.n_runs; ++r) {
            jobs.push_back({c, r, regularized ? cfg.train.lambda_cmd : 0.0, regularized ? cfg.train.lambda_mmd : 0.0});
        }
    }
    return run_jobs(cfg, g, jobs);
}

SweepResult sweep_lambdas(const ExperimentConfig& cfg, const std::vector<double>& lambda_cmd,
                          const std::vector<double>& lambda_mmd) {
    return sweep_lambdas(cfg, experiment_graph(cfg), lambda_cmd, lambda_mmd);
}

SweepResult sweep_lambdas(const ExperimentConfig& cfg, const SparseGraph& g, const std::vector<double>& lambda_cmd,
                          const std::vector<double>& lambda_mmd) {
    cfg.validate();
    if (lambda_cmd.empty() || lambda_mmd.empty()) throw ValidationError("sweep: lambda grids must be nonempty");
    std::vector<Job> jobs;
    for (double lc : lambda_cmd) {
        for (double lm : lambda_mmd) {
            if (!(lc >= 0.0) || !(lm >= 0.0)) throw ValidationError("sweep: lambdas must be >= 0");
            for (int r = 0; r < cfg.n_runs; ++r) jobs.push_back({Condition::CondSR, r, lc, lm});
        }
    }
    ExperimentConfig echo = cfg;
    echo.conditions = {Condition::CondSR};

    SweepResult out;
    out.table = run_jobs(echo, g, jobs);
    out.table.config["sweep"] = {{"lambda_cmd", lambda_cmd}, {"lambda_mmd", lambda_mmd}};
    out.cells = aggregate(out.table.rows);
    bool found = false;
    for (const Aggregate& a : out.cells) {
        if (a.epsilon != cfg.epsilons.front()) continue;
        if (!found || a.accuracy_mean > out.best.accuracy_mean) {
            out.best = a;
            found = true;
        }
    }
    return out;
}

// -----------------------------------------------------------------------------
// Reporting
// -----------------------------------------------------------------------------

double relative_change_percent(double from, double to) { return (to - from) / from * 100.0; }

std::string render_markdown(const std::vector<Aggregate>& aggregates) {
    std::ostringstream md;
    std::vector<double> eps;
    for (const Aggregate& a : aggregates) {
        if (std::find(eps.begin(), eps.end(), a.epsilon) == eps.end()) eps.push_back(a.epsilon);
    }
    std::sort(eps.begin(), eps.end(), std::greater<>());

    auto cell = [](double mean, double sd, double scale, int digits) {
        return fmt_fixed(mean * scale, digits) + " ± " + fmt_fixed(sd * scale, digits);
    };
    auto arrow = [](double from, double to) {
        const double pct = relative_change_percent(from, to);
        return std::string(" →(") + (pct >= 0 ? "+" : "") + fmt_fixed(pct, 2) + "%) ";
    };

    for (double e : eps) {
        const Aggregate* by_cond[3] = {nullptr, nullptr, nullptr};
        std::vector<const Aggregate*> condsr_cells;
        for (const Aggregate& a : aggregates) {
            if (a.epsilon != e) continue;
            if (a.condition == Condition::CondSR) {
                condsr_cells.push_back(&a);
            } else {
                by_cond[static_cast<int>(a.condition)] = &a;
            }
        }
        if (condsr_cells.size() == 1) by_cond[2] = condsr_cells.front();

        md << "## epsilon = " << fmt_fixed(e, 2) << " (target coverage " << fmt_fixed(100.0 * (1.0 - e), 0)
           << "%)\n\n";
        if (by_cond[0] || by_cond[1] || by_cond[2]) {
            md << "| Metric | IID → Biased → CondSR |\n|---|---|\n";
            struct Metric {
                const char* name;
                double Aggregate::*mean;
                double Aggregate::*sd;
                double scale;
                int digits;
            };
            const Metric metrics[] = {{"Accuracy (%)", &Aggregate::accuracy_mean, &Aggregate::accuracy_std, 100.0, 2},
                                      {"Coverage (%)", &Aggregate::coverage_mean, &Aggregate::coverage_std, 100.0, 2},
                                      {"Inefficiency", &Aggregate::inefficiency_mean, &Aggregate::inefficiency_std, 1.0, 3}};
            for (const Metric& m : metrics) {
                md << "| " << m.name << " | ";
                const Aggregate* prev = nullptr;
                for (int c = 0; c < 3; ++c) {
                    const Aggregate* a = by_cond[c];
                    if (c > 0) {
                        md << ((prev && a) ? arrow((*prev).*m.mean, (*a).*m.mean) : std::string(" → "));
                    }
                    md << (a ? cell((*a).*m.mean, (*a).*m.sd, m.scale, m.digits) : std::string("n/a"));
                    if (a) prev = a;
                }
                md << " |\n";
            }
            md << "\n";
        }

        if (condsr_cells.size() > 1) {
            std::vector<double> lc, lm;
            for (const Aggregate* a : condsr_cells) {
                if (std::find(lc.begin(), lc.end(), a->lambda_cmd) == lc.end()) lc.push_back(a->lambda_cmd);
                if (std::find(lm.begin(), lm.end(), a->lambda_mmd) == lm.end()) lm.push_back(a->lambda_mmd);
            }
            std::sort(lc.begin(), lc.end());
            std::sort(lm.begin(), lm.end());
            md << "CondSR accuracy (%) by lambda_cmd (rows) and lambda_mmd (columns):\n\n| |";
            for (double v : lm) md << " " << fmt_fixed(v, 2) << " |";
            md << "\n|---|";
            for (std::size_t i = 0; i < lm.size(); ++i) md << "---|";
            md << "\n";
            for (double c : lc) {
                md << "| " << fmt_fixed(c, 2) << " |";
                for (double m : lm) {
                    auto it = std::find_if(condsr_cells.begin(), condsr_cells.end(), [&](const Aggregate* a) {
                        return a->lambda_cmd == c && a->lambda_mmd == m;
                    });
                    md << " " << (it != condsr_cells.end() ? fmt_fixed(100.0 * (*it)->accuracy_mean, 2) : "n/a")
                       << " |";
                }
                md << "\n";
            }
            md << "\n";
        }
    }
    return md.str();
}

void emit_report(const ResultTable& table, const std::filesystem::path& out_dir) {
    if (table.rows.empty()) throw ValidationError("report: empty result table");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw Error("report: cannot create '" + out_dir.string() + "': " + ec.message());

    {
        std::ofstream csv(out_dir / "rows.csv");
        if (!csv) throw Error("report: cannot write '" + (out_dir / "rows.csv").string() + "'");
        csv << kCsvHeader << '\n';
        for (const ResultRow& r : table.rows) {
            csv << r.run << ',' << r.split << ',' << fmt_exact(r.epsilon) << ',' << to_string(r.condition) << ','
                << fmt_exact(r.accuracy) << ',' << fmt_exact(r.coverage) << ',' << fmt_exact(r.inefficiency) << ','
                << fmt_exact(r.lambda_cmd) << ',' << fmt_exact(r.lambda_mmd) << ',' << fmt_exact(r.alpha) << '\n';
        }
        if (!csv) throw Error("report: write to rows.csv failed");
    }

    const std::vector<Aggregate> aggs = aggregate(table.rows);
    {
        json summary;
        summary["code_version"] = std::string(kCodeVersion);
        summary["config"] = table.config;
        json ja = json::array();
        for (const Aggregate& a : aggs) ja.push_back(aggregate_to_json(a));
        summary["aggregates"] = std::move(ja);
        json jr = json::array();
        for (const RunDiagnostics& d : table.runs) {
            jr.push_back({{"run", d.run},
                          {"condition", std::string(to_string(d.condition))},
                          {"lambda_cmd", d.lambda_cmd},
                          {"lambda_mmd", d.lambda_mmd},
                          {"seed", d.seed},
                          {"train_size", d.train_idx.size()},
                          {"train_accuracy", d.train_accuracy},
                          {"pool_accuracy", d.pool_accuracy},
                          {"cmd_shift", d.cmd_shift},
                          {"mmd_shift", d.mmd_shift},
                          {"final_loss", d.final_loss}});
        }
        summary["runs"] = std::move(jr);
        std::ofstream out(out_dir / "summary.json");
        if (!out) throw Error("report: cannot write '" + (out_dir / "summary.json").string() + "'");
        out << summary.dump(2) << '\n';
    }
    {
        std::ofstream md(out_dir / "table.md");
        if (!md) throw Error("report: cannot write '" + (out_dir / "table.md").string() + "'");
        md << "# Results\n\n" << render_markdown(aggs);
    }
}

std::vector<ResultRow> read_rows_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("rows: cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line) || line != kCsvHeader) {
        throw ParseError("rows: '" + path.string() + "' does not start with the expected header");
    }
    std::vector<ResultRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 10) throw ParseError("rows: line " + std::to_string(lineno) + " has " + std::to_string(f.size()) + " fields");
        try {
            rows.push_back({std::stoi(f[0]), std::stoi(f[1]), std::stod(f[2]), condition_from_string(f[3]),
                            std::stod(f[4]), std::stod(f[5]), std::stod(f[6]), std::stod(f[7]), std::stod(f[8]),
                            std::stod(f[9])});
        } catch (const std::logic_error&) {
            throw ParseError("rows: line " + std::to_string(lineno) + " is not numeric where expected");
        }
    }
    return rows;
}

}  // namespace condsr
