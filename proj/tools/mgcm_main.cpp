// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: single training runs, strategy-comparison
// studies, the masked-conflict demo, memory estimates, significance tests
// and conflict-report aggregation.
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "mgcm/harness.hpp"

namespace {

using namespace mgcm;

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return run_config_from_json(ss.str());
}

int cmd_train(const std::string& config_path, const std::string& strategy, long seed,
              const std::string& out, int steps) {
    RunConfig run = config_path.empty() ? RunConfig{} : load_config(config_path);
    if (!strategy.empty()) run.train.strategy = strategy_from_string(strategy);
    if (seed >= 0) run.train.seed = static_cast<std::uint64_t>(seed);
    if (!out.empty()) run.out_dir = out;
    if (steps >= 0) run.train.steps = steps;
    RunResult r = train(run);
    std::cout << run_summary_json(run, r) << "\n";
    return 0;
}

int cmd_study(const std::string& config_path, const std::string& strategies_csv, int n_seeds,
              const std::string& out, int steps) {
    StudyConfig study;
    study.base = config_path.empty() ? RunConfig{} : load_config(config_path);
    if (!out.empty()) study.base.out_dir = out;
    if (steps >= 0) study.base.train.steps = steps;
    std::stringstream ss(strategies_csv);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) study.strategies.push_back(strategy_from_string(item));
    for (int s = 1; s <= n_seeds; ++s) study.seeds.push_back(static_cast<std::uint64_t>(s));
    StudyReport report = compare_strategies(study);
    std::string json = study_report_json(report);
    if (!study.base.out_dir.empty()) {
        std::ofstream f(study.base.out_dir + "/study.json");
        f << json << "\n";
    }
    std::cout << json << "\n";
    return 0;
}

// Replays the two-module example where the model-level view shows no
// conflict but the decoder slice does.
int cmd_masking_demo() {
    TaskGradientSet<double> ts;
    ts.primary = {{0.5, 0.4, 0.7, 0.4}, "primary"};
    ts.auxiliaries.push_back({{0.9, 0.8, -0.9, 0.7}, "aux"});

    RegistryBuilder b;
    b.begin_module(ModuleKind::FFN_W1, 0, Component::Encoder, AttentionRole::None, "encoder");
    b.add_param("encoder.flat", 2);
    b.end_module();
    b.begin_module(ModuleKind::FFN_W1, 0, Component::Decoder, AttentionRole::None, "decoder");
    b.add_param("decoder.flat", 2);
    b.end_module();
    ModuleRegistry reg = b.finish();

    double model_dot = cos_sim(ts.primary.values, ts.auxiliaries[0].values).dot;
    auto slices_p = modularize(ts.primary, reg);
    auto slices_a = modularize(ts.auxiliaries[0], reg);
    std::cout << "model-level dot: " << model_dot << "\n";
    std::cout << "encoder dot:     " << cos_sim(slices_p[0], slices_a[0]).dot << "\n";
    std::cout << "decoder dot:     " << cos_sim(slices_p[1], slices_a[1]).dot << "\n";

    auto records = detect_masking(ts, reg);
    auto coarse = combine_pcgrad_model(ts);
    auto fine = combine_mgcm(ts, reg);
    long coarse_conflicts = 0, fine_conflicts = 0;
    for (const auto& e : coarse.events) coarse_conflicts += e.conflict;
    for (const auto& e : fine.events) fine_conflicts += e.conflict;
    std::cout << "whole-model conflicts: " << coarse_conflicts
              << ", module-level conflicts: " << fine_conflicts << "\n";
    std::cout << "verdict: " << (!records.empty() ? "masked conflict" : "no masking") << "\n";
    return 0;
}

int cmd_memory(const std::vector<double>& params, int bytes) {
    std::vector<MemoryEstimate> estimates;
    std::cout << "params,pcgrad_gb,mgcm_gb,saving_pct  (GB = 1e9 bytes)\n";
    for (double p : params) {
        auto count = static_cast<std::size_t>(p);
        auto pc = estimate_extra_memory(StrategyKind::PcgradModel, count, bytes);
        auto mg = estimate_extra_memory(StrategyKind::Mgcm, count, bytes);
        estimates.push_back(pc);
        estimates.push_back(mg);
        std::cout << p << "," << pc.extra_bytes / 1e9 << "," << mg.extra_bytes / 1e9 << ","
                  << (1.0 - mg.ratio_vs_pcgrad) * 100.0 << "\n";
    }
    std::cout << memory_report_json(estimates) << "\n";
    return 0;
}

std::vector<double> read_csv_column(const std::string& path, const std::string& column) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty csv " + path);
    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) header.push_back(f);
    }
    std::size_t col = header.size();
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == column) col = i;
    if (col == header.size())
        throw std::runtime_error("column '" + column + "' not found in " + path);
    std::vector<double> values;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string f;
        for (std::size_t i = 0; i <= col; ++i) std::getline(ss, f, ',');
        values.push_back(std::stod(f));
    }
    return values;
}

int cmd_sigtest(const std::string& csv, const std::string& col_a, const std::string& col_b,
                int resamples, long seed) {
    auto a = read_csv_column(csv, col_a);
    auto b = read_csv_column(csv, col_b);
    double p = paired_permutation_test(a, b, resamples, static_cast<std::uint64_t>(seed));
    std::cout << "n=" << a.size() << " resamples=" << resamples << " p_value=" << p << "\n";
    return 0;
}

int cmd_report(const std::string& events_path, const std::string& registry_path,
               const std::string& group_by, bool taxonomy_only, const std::string& out) {
    auto events = read_events_csv(events_path);
    auto reg = ModuleRegistry::load_json(registry_path);
    auto stats = recount_from_events(events);
    GroupBy g = group_by_from_string(group_by);
    auto rows = conflict_probability_report(stats, reg, g, taxonomy_only);
    if (!out.empty()) write_conflict_report_csv(out, rows, g);
    std::cout << group_by << ",aux_index,steps,conflicts,probability\n";
    for (const auto& r : rows)
        std::cout << r.group << "," << r.auxiliary_index << "," << r.steps << "," << r.conflicts
                  << "," << r.probability << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Modular gradient-conflict mitigation toolkit"};
    app.require_subcommand(1);

    std::string config_path, strategy, out, group_by = "kind";
    long seed = -1;
    int steps = -1;

    auto* train_cmd = app.add_subcommand("train", "run one training configuration");
    train_cmd->add_option("--config", config_path, "JSON run configuration");
    train_cmd->add_option("--strategy", strategy, "sum|pcgrad|discard|mgcm");
    train_cmd->add_option("--seed", seed, "training seed");
    train_cmd->add_option("--out", out, "output directory");
    train_cmd->add_option("--steps", steps, "number of optimization steps");

    std::string strategies_csv = "sum,pcgrad,discard,mgcm";
    int n_seeds = 5;
    auto* study_cmd = app.add_subcommand("study", "compare strategies over seeds");
    study_cmd->add_option("--config", config_path, "base JSON run configuration");
    study_cmd->add_option("--strategies", strategies_csv, "comma-separated strategy list");
    study_cmd->add_option("--seeds", n_seeds, "number of seeds (1..N)");
    study_cmd->add_option("--out", out, "output directory");
    study_cmd->add_option("--steps", steps, "steps per run");

    auto* masking_cmd = app.add_subcommand("masking-demo", "replay the masked-conflict example");

    std::vector<double> mem_params{0.2e9, 0.5e9, 1.0e9};
    int mem_bytes = 4;
    auto* memory_cmd = app.add_subcommand("memory", "print extra-memory estimates");
    memory_cmd->add_option("--params", mem_params, "parameter counts (e.g. 0.2e9)");
    memory_cmd->add_option("--bytes", mem_bytes, "bytes per element (2|4|8)");

    std::string sig_csv, col_a, col_b;
    int resamples = 10000;
    long sig_seed = 1;
    auto* sig_cmd = app.add_subcommand("sigtest", "paired permutation test on two CSV columns");
    sig_cmd->add_option("--csv", sig_csv, "CSV file with both score columns")->required();
    sig_cmd->add_option("--col-a", col_a, "first column name")->required();
    sig_cmd->add_option("--col-b", col_b, "second column name")->required();
    sig_cmd->add_option("--resamples", resamples, "number of sign-flip resamples");
    sig_cmd->add_option("--seed", sig_seed, "RNG seed");

    std::string events_path, registry_path;
    bool taxonomy_only = false;
    auto* report_cmd = app.add_subcommand("report", "aggregate an event log into a conflict table");
    report_cmd->add_option("--events", events_path, "events CSV from a run")->required();
    report_cmd->add_option("--registry", registry_path, "registry JSON from the same run")
        ->required();
    report_cmd->add_option("--group-by", group_by, "kind|layer|component");
    report_cmd->add_flag("--taxonomy-only", taxonomy_only, "drop EMBED/OUTPUT_PROJ modules");
    report_cmd->add_option("--out", out, "write the table to this CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*train_cmd) return cmd_train(config_path, strategy, seed, out, steps);
        if (*study_cmd) return cmd_study(config_path, strategies_csv, n_seeds, out, steps);
        if (*masking_cmd) return cmd_masking_demo();
        if (*memory_cmd) return cmd_memory(mem_params, mem_bytes);
        if (*sig_cmd) return cmd_sigtest(sig_csv, col_a, col_b, resamples, sig_seed);
        if (*report_cmd)
            return cmd_report(events_path, registry_path, group_by, taxonomy_only, out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
