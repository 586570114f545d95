// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mgcm/registry.hpp"
#include "mgcm/strategies.hpp"

namespace mgcm {

// Memory-model constants. The source text quotes two factors that it never
// reconciles: similarity computation costs ~2.5x one input vector, while the
// whole-model method is charged 4.5x total model memory. Both are exposed;
// the estimator uses the total factor.
inline constexpr double kSimilarityCostPerVector = 2.5;
inline constexpr double kPcgradTotalMemoryFactor = 4.5;
inline constexpr double kMaxModuleFraction = 1.0 / 20.0;  // largest module vs model
inline constexpr std::size_t kPerModuleBookkeepingBytes = 64;

/// Online per-(module, auxiliary) conflict counters.
class ConflictStats {
public:
    struct Cell {
        long steps_observed = 0;
        long conflicts_observed = 0;
        double probability() const {
            return steps_observed > 0
                       ? static_cast<double>(conflicts_observed) / static_cast<double>(steps_observed)
                       : 0.0;
        }
    };

    /// Ingest all events of one optimization step. A duplicated
    /// (module, auxiliary) pair within the batch is rejected.
    void record_step(const std::vector<ConflictEvent>& events);

    const std::map<std::pair<int, int>, Cell>& cells() const { return cells_; }
    std::optional<double> probability(int module_id, int aux_index) const;
    long steps_recorded() const { return steps_; }

private:
    std::map<std::pair<int, int>, Cell> cells_;  // (module_id, aux) -> counters
    long steps_ = 0;
};

/// Rebuild counters from a raw event log (rows grouped by step index).
ConflictStats recount_from_events(const std::vector<ConflictEvent>& events);

enum class GroupBy { Kind, Layer, Component };

GroupBy group_by_from_string(const std::string& s);

struct ConflictReportRow {
    std::string group;      // "Attn"/"FFN"/"LN"/..., layer number, or component
    int auxiliary_index = 0;
    long steps = 0;
    long conflicts = 0;
    double probability = 0.0;
};

/// Pooled conflict probabilities. Kind grouping pools Q/K/V/O into "Attn"
/// and W1/W2 into "FFN"; layer grouping numbers encoder layers first and
/// continues the count through the decoder. taxonomy_only drops the
/// EMBED/OUTPUT_PROJ extensions.
std::vector<ConflictReportRow> conflict_probability_report(const ConflictStats& stats,
                                                           const ModuleRegistry& reg,
                                                           GroupBy group_by,
                                                           bool taxonomy_only = false);

struct MaskingRecord {
    long step_index = 0;
    int auxiliary_index = 0;
    double model_dot = 0.0;
    std::vector<int> conflicting_module_ids;
};

/// A masked conflict: the whole-model dot is non-negative for an auxiliary
/// while at least one of its module dots is negative.
template <typename T>
std::vector<MaskingRecord> detect_masking(const TaskGradientSet<T>& ts,
                                          const ModuleRegistry& reg) {
    ts.validate();
    if (ts.length() != reg.total_params)
        throw std::invalid_argument("detect_masking: gradient length mismatch");
    std::vector<MaskingRecord> records;
    for (std::size_t k = 0; k < ts.auxiliaries.size(); ++k) {
        const auto& aux = ts.auxiliaries[k].values;
        double model_dot =
            cos_sim(ts.primary.values.data(), aux.data(), aux.size()).dot;
        if (model_dot < 0.0) continue;
        MaskingRecord rec;
        rec.step_index = ts.step_index;
        rec.auxiliary_index = static_cast<int>(k);
        rec.model_dot = model_dot;
        for (const auto& m : reg.modules) {
            double d = cos_sim(ts.primary.values.data() + m.span_begin,
                               aux.data() + m.span_begin, m.span_size())
                           .dot;
            if (d < 0.0) rec.conflicting_module_ids.push_back(m.module_id);
        }
        if (!rec.conflicting_module_ids.empty()) records.push_back(std::move(rec));
    }
    return records;
}

struct MemoryEstimate {
    StrategyKind strategy = StrategyKind::Sum;
    std::size_t param_count = 0;
    int bytes_per_element = 4;
    double extra_bytes = 0.0;
    double ratio_vs_pcgrad = 0.0;
};

/// Analytic extra-memory model: the whole-model method is charged the full
/// 4.5x factor; module-level strategies only the largest-module fraction
/// plus fixed per-module bookkeeping.
MemoryEstimate estimate_extra_memory(StrategyKind strategy, std::size_t param_count,
                                     int bytes_per_element, std::size_t module_count = 1000);

/// Peak transient scratch of one instrumented combine run, in bytes.
template <typename T>
std::size_t measured_scratch_memory(StrategyKind strategy, const TaskGradientSet<T>& ts,
                                    const ModuleRegistry& reg) {
    ScratchMeter meter;
    combine(strategy, ts, reg, &meter);
    return meter.peak_bytes();
}

/// Two-sided sign-flip paired permutation test on score pairs. Includes the
/// identity permutation, so the result is at least 1/(resamples+1).
/// Deterministic for a given seed.
double paired_permutation_test(const std::vector<double>& scores_a,
                               const std::vector<double>& scores_b, int resamples,
                               std::uint64_t seed);

// ---- CSV / JSON export ---------------------------------------------------

void write_events_csv(const std::string& path, const std::vector<ConflictEvent>& events,
                      const ModuleRegistry& reg, bool append = false);
std::vector<ConflictEvent> read_events_csv(const std::string& path);
void write_conflict_report_csv(const std::string& path,
                               const std::vector<ConflictReportRow>& rows, GroupBy group_by);
void write_masking_csv(const std::string& path, const std::vector<MaskingRecord>& records,
                       bool append = false);
std::string memory_report_json(const std::vector<MemoryEstimate>& estimates);

}  // namespace mgcm
