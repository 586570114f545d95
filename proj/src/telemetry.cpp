// SPDX-License-Identifier: Apache-2.0
#include "mgcm/telemetry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace mgcm {

const char* to_string(StrategyKind s) {
    switch (s) {
        case StrategyKind::Sum: return "sum";
        case StrategyKind::PcgradModel: return "pcgrad";
        case StrategyKind::Discard: return "discard";
        case StrategyKind::Mgcm: return "mgcm";
    }
    return "?";
}

StrategyKind strategy_from_string(const std::string& s) {
    if (s == "sum") return StrategyKind::Sum;
    if (s == "pcgrad") return StrategyKind::PcgradModel;
    if (s == "discard") return StrategyKind::Discard;
    if (s == "mgcm") return StrategyKind::Mgcm;
    throw std::invalid_argument("unknown strategy '" + s + "' (want sum|pcgrad|discard|mgcm)");
}

void ConflictStats::record_step(const std::vector<ConflictEvent>& events) {
    std::set<std::pair<int, int>> seen;
    for (const auto& ev : events) {
        auto key = std::make_pair(ev.module_id, ev.auxiliary_index);
        if (!seen.insert(key).second)
            throw std::invalid_argument("record_step: duplicate (module " +
                                        std::to_string(ev.module_id) + ", aux " +
                                        std::to_string(ev.auxiliary_index) + ") in one step");
        auto& cell = cells_[key];
        cell.steps_observed += 1;
        if (ev.conflict) cell.conflicts_observed += 1;
    }
    steps_ += 1;
}

std::optional<double> ConflictStats::probability(int module_id, int aux_index) const {
    auto it = cells_.find({module_id, aux_index});
    if (it == cells_.end() || it->second.steps_observed == 0) return std::nullopt;
    return it->second.probability();
}

ConflictStats recount_from_events(const std::vector<ConflictEvent>& events) {
    std::map<long, std::vector<ConflictEvent>> by_step;
    for (const auto& ev : events) by_step[ev.step_index].push_back(ev);
    ConflictStats stats;
    for (const auto& [step, evs] : by_step) stats.record_step(evs);
    return stats;
}

GroupBy group_by_from_string(const std::string& s) {
    if (s == "kind") return GroupBy::Kind;
    if (s == "layer") return GroupBy::Layer;
    if (s == "component") return GroupBy::Component;
    throw std::invalid_argument("unknown group key '" + s + "' (want kind|layer|component)");
}

namespace {

std::string kind_group(ModuleKind k) {
    switch (k) {
        case ModuleKind::ATTN_Q:
        case ModuleKind::ATTN_K:
        case ModuleKind::ATTN_V:
        case ModuleKind::ATTN_O: return "Attn";
        case ModuleKind::FFN_W1:
        case ModuleKind::FFN_W2: return "FFN";
        case ModuleKind::LN: return "LN";
        case ModuleKind::EMBED: return "Embed";
        case ModuleKind::OUTPUT_PROJ: return "OutProj";
    }
    return "?";
}

bool taxonomy_extension(ModuleKind k) {
    return k == ModuleKind::EMBED || k == ModuleKind::OUTPUT_PROJ;
}

}  // namespace

std::vector<ConflictReportRow> conflict_probability_report(const ConflictStats& stats,
                                                           const ModuleRegistry& reg,
                                                           GroupBy group_by, bool taxonomy_only) {
    if (stats.cells().empty())
        throw std::invalid_argument("conflict_probability_report: no recorded steps");
    int enc_layers = 0;
    for (const auto& m : reg.modules)
        if (m.component == Component::Encoder) enc_layers = std::max(enc_layers, m.layer_index + 1);

    // Display layer numbering: encoder layers 1..E, then decoder E+1..E+D.
    auto group_of = [&](const ModuleDescriptor& m) -> std::string {
        switch (group_by) {
            case GroupBy::Kind: return kind_group(m.kind);
            case GroupBy::Layer: {
                if (m.layer_index < 0) return "none";
                int display = m.component == Component::Decoder ? enc_layers + m.layer_index + 1
                                                                : m.layer_index + 1;
                return std::to_string(display);
            }
            case GroupBy::Component: return to_string(m.component);
        }
        return "?";
    };

    std::map<std::pair<std::string, int>, ConflictReportRow> pooled;
    for (const auto& [key, cell] : stats.cells()) {
        const auto [module_id, aux] = key;
        if (module_id == kWholeModelModuleId) continue;
        const auto& m = reg.modules.at(static_cast<std::size_t>(module_id));
        if (taxonomy_only && taxonomy_extension(m.kind)) continue;
        auto& row = pooled[{group_of(m), aux}];
        row.group = group_of(m);
        row.auxiliary_index = aux;
        row.steps += cell.steps_observed;
        row.conflicts += cell.conflicts_observed;
    }
    std::vector<ConflictReportRow> rows;
    rows.reserve(pooled.size());
    for (auto& [key, row] : pooled) {
        row.probability =
            row.steps > 0 ? static_cast<double>(row.conflicts) / static_cast<double>(row.steps) : 0.0;
        rows.push_back(row);
    }
    return rows;
}

MemoryEstimate estimate_extra_memory(StrategyKind strategy, std::size_t param_count,
                                     int bytes_per_element, std::size_t module_count) {
    if (param_count == 0)
        throw std::invalid_argument("estimate_extra_memory: param_count must be > 0");
    if (bytes_per_element != 2 && bytes_per_element != 4 && bytes_per_element != 8)
        throw std::invalid_argument("estimate_extra_memory: bytes_per_element must be 2, 4 or 8");
    const double p = static_cast<double>(param_count);
    const double b = static_cast<double>(bytes_per_element);
    const double pcgrad = kPcgradTotalMemoryFactor * p * b;
    MemoryEstimate e;
    e.strategy = strategy;
    e.param_count = param_count;
    e.bytes_per_element = bytes_per_element;
    switch (strategy) {
        case StrategyKind::Sum: e.extra_bytes = 0.0; break;
        case StrategyKind::PcgradModel: e.extra_bytes = pcgrad; break;
        case StrategyKind::Discard:
        case StrategyKind::Mgcm:
            e.extra_bytes = kPcgradTotalMemoryFactor * (p * kMaxModuleFraction) * b +
                            static_cast<double>(kPerModuleBookkeepingBytes) *
                                static_cast<double>(module_count);
            break;
    }
    e.ratio_vs_pcgrad = e.extra_bytes / pcgrad;
    return e;
}

double paired_permutation_test(const std::vector<double>& scores_a,
                               const std::vector<double>& scores_b, int resamples,
                               std::uint64_t seed) {
    if (scores_a.size() != scores_b.size())
        throw std::invalid_argument("paired_permutation_test: length mismatch " +
                                    std::to_string(scores_a.size()) + " vs " +
                                    std::to_string(scores_b.size()));
    if (scores_a.size() < 2)
        throw std::invalid_argument("paired_permutation_test: need at least 2 pairs");
    if (resamples < 1000)
        throw std::invalid_argument("paired_permutation_test: resamples must be >= 1000");
    const std::size_t n = scores_a.size();
    std::vector<double> diff(n);
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        diff[i] = scores_a[i] - scores_b[i];
        mean += diff[i];
    }
    mean /= static_cast<double>(n);
    const double observed = std::fabs(mean);

    std::mt19937_64 rng(seed);
    long at_least = 1;  // identity permutation
    for (int r = 0; r < resamples; ++r) {
        double m = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            m += (rng() & 1u) ? diff[i] : -diff[i];
        m = std::fabs(m / static_cast<double>(n));
        if (m >= observed - 1e-15) ++at_least;
    }
    return static_cast<double>(at_least) / static_cast<double>(resamples + 1);
}

// ---- CSV / JSON ----------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) out.push_back(field);
    return out;
}

}  // namespace

void write_events_csv(const std::string& path, const std::vector<ConflictEvent>& events,
                      const ModuleRegistry& reg, bool append) {
    std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    if (!append || out.tellp() == 0)
        out << "step,module_id,kind,layer,component,attention_role,aux_index,dot,cosine,conflict,action\n";
    out.precision(17);
    for (const auto& ev : events) {
        if (ev.module_id == kWholeModelModuleId) {
            out << ev.step_index << "," << ev.module_id << ",WHOLE_MODEL,-1,shared,none,";
        } else {
            const auto& m = reg.modules.at(static_cast<std::size_t>(ev.module_id));
            out << ev.step_index << "," << ev.module_id << "," << to_string(m.kind) << ","
                << m.layer_index << "," << to_string(m.component) << ","
                << to_string(m.attention_role) << ",";
        }
        out << ev.auxiliary_index << "," << ev.dot << "," << ev.cosine << ","
            << (ev.conflict ? 1 : 0) << "," << to_string(ev.action) << "\n";
    }
}

std::vector<ConflictEvent> read_events_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::string line;
    std::getline(in, line);  // header
    std::vector<ConflictEvent> events;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != 11) throw std::runtime_error("bad events row: " + line);
        ConflictEvent ev;
        ev.step_index = std::stol(f[0]);
        ev.module_id = std::stoi(f[1]);
        ev.auxiliary_index = std::stoi(f[6]);
        ev.dot = std::stod(f[7]);
        ev.cosine = std::stod(f[8]);
        ev.conflict = f[9] == "1";
        if (f[10] == "projected") ev.action = ConflictAction::Projected;
        else if (f[10] == "discarded") ev.action = ConflictAction::Discarded;
        events.push_back(ev);
    }
    return events;
}

void write_conflict_report_csv(const std::string& path,
                               const std::vector<ConflictReportRow>& rows, GroupBy group_by) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    const char* key = group_by == GroupBy::Kind ? "kind"
                      : group_by == GroupBy::Layer ? "layer"
                                                   : "component";
    out << key << ",aux_index,steps,conflicts,probability\n";
    out.precision(17);
    for (const auto& r : rows)
        out << r.group << "," << r.auxiliary_index << "," << r.steps << "," << r.conflicts << ","
            << r.probability << "\n";
}

void write_masking_csv(const std::string& path, const std::vector<MaskingRecord>& records,
                       bool append) {
    std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    if (!append || out.tellp() == 0) out << "step,aux_index,model_dot,conflicting_modules\n";
    out.precision(17);
    for (const auto& r : records) {
        out << r.step_index << "," << r.auxiliary_index << "," << r.model_dot << ",";
        for (std::size_t i = 0; i < r.conflicting_module_ids.size(); ++i)
            out << r.conflicting_module_ids[i]
                << (i + 1 < r.conflicting_module_ids.size() ? ";" : "");
        out << "\n";
    }
}

std::string memory_report_json(const std::vector<MemoryEstimate>& estimates) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& e : estimates) {
        nlohmann::json je;
        je["strategy"] = to_string(e.strategy);
        je["params"] = e.param_count;
        je["bytes_per_element"] = e.bytes_per_element;
        je["extra_bytes"] = e.extra_bytes;
        je["extra_gb_decimal"] = e.extra_bytes / 1e9;  // GB means 1e9 bytes here
        je["ratio_vs_pcgrad"] = e.ratio_vs_pcgrad;
        j.push_back(std::move(je));
    }
    return j.dump(2);
}

}  // namespace mgcm
