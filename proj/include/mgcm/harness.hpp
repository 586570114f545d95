// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mgcm/benchmark.hpp"
#include "mgcm/strategies.hpp"
#include "mgcm/telemetry.hpp"
#include "mgcm/transformer.hpp"

namespace mgcm {

struct TrainConfig {
    StrategyKind strategy = StrategyKind::Sum;
    int steps = 100;
    int batch_size = 4;
    double lr = 0.05;
    std::uint64_t seed = 1;
    std::string precision = "f32";  // f32 for training runs, f64 for verification
    bool log_events = true;
    bool log_masking = true;

    void validate() const {
        if (steps < 0) throw std::invalid_argument("TrainConfig: steps must be >= 0");
        if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
        if (precision != "f32" && precision != "f64")
            throw std::invalid_argument("TrainConfig: precision must be f32 or f64, got '" +
                                        precision + "'");
    }
};

struct RunConfig {
    ModelConfig model;
    BenchmarkSpec data;
    TrainConfig train;
    std::string out_dir;  // empty: in-memory run, no files written
};

RunConfig run_config_from_json(const std::string& json_text);
std::string run_config_to_json(const RunConfig& run);
/// FNV-1a over the canonical JSON form.
std::uint64_t config_fingerprint(const RunConfig& run);

struct RunResult {
    std::vector<std::array<double, 3>> losses;  // per step: primary, aux1, aux2
    double initial_primary_loss = 0.0;
    double final_primary_loss = 0.0;
    long masking_episodes = 0;
    double wall_seconds = 0.0;
    std::uint64_t fingerprint = 0;
    std::string step_log_path, event_log_path, masking_log_path;
    ConflictStats stats;
};

class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(long step)
        : std::runtime_error("training diverged (non-finite loss) at step " +
                             std::to_string(step)),
          step(step) {}
    long step;
};

RunResult train(const RunConfig& run, const Dataset& data);
RunResult train(const RunConfig& run);

struct StudyConfig {
    RunConfig base;
    std::vector<StrategyKind> strategies;
    std::vector<std::uint64_t> seeds;
    int sig_resamples = 10000;
};

struct StudyReport {
    struct Row {
        StrategyKind strategy;
        std::uint64_t seed;
        double final_primary_loss;
        long masking_episodes;
    };
    std::vector<Row> rows;
    // Per baseline: seeds where the module-level projection run did at
    // least as well, and the paired sign-flip p-value against it.
    std::map<std::string, int> mgcm_wins;
    std::map<std::string, double> p_values;
};

StudyReport compare_strategies(const StudyConfig& study);
std::string study_report_json(const StudyReport& report);

std::string run_summary_json(const RunConfig& run, const RunResult& result);

}  // namespace mgcm
