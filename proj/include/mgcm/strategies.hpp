// SPDX-License-Identifier: Apache-2.0
//
// Gradient combination strategies for one primary task plus K auxiliaries:
// plain summation, whole-model projection, per-module discard, and
// per-module projection. Auxiliary gradients are only ever adjusted against
// the unmodified primary; the primary itself is never touched.
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mgcm/registry.hpp"

namespace mgcm {

inline constexpr double kZeroNormGuard = 1e-12;
inline constexpr int kWholeModelModuleId = -1;

enum class StrategyKind { Sum, PcgradModel, Discard, Mgcm };

const char* to_string(StrategyKind s);
StrategyKind strategy_from_string(const std::string& s);

enum class ConflictAction { None, Projected, Discarded };

inline const char* to_string(ConflictAction a) {
    switch (a) {
        case ConflictAction::None: return "none";
        case ConflictAction::Projected: return "projected";
        case ConflictAction::Discarded: return "discarded";
    }
    return "?";
}

struct ConflictEvent {
    long step_index = 0;
    int module_id = kWholeModelModuleId;
    int auxiliary_index = 0;
    double dot = 0.0;
    double cosine = 0.0;
    bool conflict = false;
    bool degenerate = false;  // near-zero primary norm, projection skipped
    ConflictAction action = ConflictAction::None;
};

template <typename T>
struct TaskGradientSet {
    GradientVector<T> primary;
    std::vector<GradientVector<T>> auxiliaries;
    long step_index = 0;

    std::size_t length() const { return primary.values.size(); }

    void validate() const {
        if (auxiliaries.empty())
            throw std::invalid_argument("TaskGradientSet: at least one auxiliary required");
        for (const auto& a : auxiliaries)
            if (a.values.size() != primary.values.size())
                throw std::invalid_argument("TaskGradientSet: auxiliary length " +
                                            std::to_string(a.values.size()) +
                                            " != primary length " +
                                            std::to_string(primary.values.size()));
    }
};

/// Tracks transient buffers used for similarity/projection scratch so the
/// per-strategy memory behaviour can be measured rather than modelled.
class ScratchMeter {
public:
    void acquire(std::size_t bytes) {
        current_ += bytes;
        if (current_ > peak_) peak_ = current_;
    }
    void release(std::size_t bytes) { current_ -= bytes; }
    std::size_t peak_bytes() const { return peak_; }
    std::size_t current_bytes() const { return current_; }

private:
    std::size_t current_ = 0;
    std::size_t peak_ = 0;
};

template <typename T>
class ScratchBuffer {
public:
    ScratchBuffer(std::size_t n, ScratchMeter* meter) : data_(n), meter_(meter) {
        if (meter_) meter_->acquire(n * sizeof(T));
    }
    ~ScratchBuffer() {
        if (meter_) meter_->release(data_.size() * sizeof(T));
    }
    ScratchBuffer(const ScratchBuffer&) = delete;
    ScratchBuffer& operator=(const ScratchBuffer&) = delete;
    T* data() { return data_.data(); }
    std::size_t size() const { return data_.size(); }

private:
    std::vector<T> data_;
    ScratchMeter* meter_;
};

struct Similarity {
    double dot = 0.0;
    double cosine = 0.0;
};

/// Dot product and cosine of two equal-length slices. Cosine is defined as
/// 0 when either norm is below the zero-norm guard.
template <typename T>
Similarity cos_sim(const T* a, const T* b, std::size_t n) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        dot += static_cast<double>(a[i]) * static_cast<double>(b[i]);
        na += static_cast<double>(a[i]) * static_cast<double>(a[i]);
        nb += static_cast<double>(b[i]) * static_cast<double>(b[i]);
    }
    Similarity s;
    s.dot = dot;
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    s.cosine = (na < kZeroNormGuard || nb < kZeroNormGuard) ? 0.0 : dot / (na * nb);
    return s;
}

template <typename T>
Similarity cos_sim(const std::vector<T>& a, const std::vector<T>& b) {
    if (a.size() != b.size())
        throw std::invalid_argument("cos_sim: length mismatch " + std::to_string(a.size()) +
                                    " vs " + std::to_string(b.size()));
    return cos_sim(a.data(), b.data(), a.size());
}

/// Strict sign test: conflict iff the dot product is negative.
template <typename T>
bool detect_conflict(const std::vector<T>& g_p, const std::vector<T>& g_a) {
    if (g_p.size() != g_a.size())
        throw std::invalid_argument("detect_conflict: length mismatch");
    return cos_sim(g_p.data(), g_a.data(), g_p.size()).dot < 0.0;
}

/// In place: g_a <- g_a - (g_a.g_p / ||g_p||^2) g_p. Returns false (leaving
/// g_a untouched) when ||g_p|| is below the zero-norm guard.
template <typename T>
bool project_inplace(T* g_a, const T* g_p, std::size_t n) {
    double dot = 0.0, pp = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        dot += static_cast<double>(g_a[i]) * static_cast<double>(g_p[i]);
        pp += static_cast<double>(g_p[i]) * static_cast<double>(g_p[i]);
    }
    if (std::sqrt(pp) < kZeroNormGuard) return false;
    const double coef = dot / pp;
    for (std::size_t i = 0; i < n; ++i)
        g_a[i] = static_cast<T>(static_cast<double>(g_a[i]) -
                                coef * static_cast<double>(g_p[i]));
    return true;
}

template <typename T>
std::vector<T> project(const std::vector<T>& g_a, const std::vector<T>& g_p) {
    if (g_a.size() != g_p.size())
        throw std::invalid_argument("project: length mismatch");
    std::vector<T> r = g_a;
    project_inplace(r.data(), g_p.data(), r.size());
    return r;
}

template <typename T>
struct CombineResult {
    GradientVector<T> total;
    std::vector<ConflictEvent> events;
};

template <typename T>
CombineResult<T> combine_sum(const TaskGradientSet<T>& ts) {
    ts.validate();
    CombineResult<T> out;
    out.total.task_label = "total";
    out.total.values = ts.primary.values;
    for (std::size_t i = 0; i < out.total.values.size(); ++i)
        for (const auto& aux : ts.auxiliaries)
            out.total.values[i] += aux.values[i];
    return out;
}

namespace detail {

// Copy the aux slice into scratch, resolve a conflict if present, then
// accumulate into the running total. Shared by the module-level and the
// whole-model paths; `span` is the slice offset in the flat vector.
template <typename T>
ConflictEvent combine_slice(const T* primary, const T* aux, T* total, std::size_t span_begin,
                            std::size_t len, long step, int module_id, int aux_index,
                            bool discard_mode, ScratchMeter* meter) {
    ConflictEvent ev;
    ev.step_index = step;
    ev.module_id = module_id;
    ev.auxiliary_index = aux_index;
    const T* p = primary + span_begin;
    const T* a = aux + span_begin;
    Similarity sim = cos_sim(p, a, len);
    ev.dot = sim.dot;
    ev.cosine = sim.cosine;
    ev.conflict = sim.dot < 0.0;

    ScratchBuffer<T> work(len, meter);
    for (std::size_t i = 0; i < len; ++i) work.data()[i] = a[i];
    if (ev.conflict) {
        if (discard_mode) {
            for (std::size_t i = 0; i < len; ++i) work.data()[i] = T(0);
            ev.action = ConflictAction::Discarded;
        } else if (project_inplace(work.data(), p, len)) {
            ev.action = ConflictAction::Projected;
        } else {
            ev.degenerate = true;
        }
    }
    for (std::size_t i = 0; i < len; ++i) total[span_begin + i] += work.data()[i];
    return ev;
}

}  // namespace detail

/// Per-module conflict detection and projection against the unmodified
/// primary, each auxiliary handled independently.
template <typename T>
CombineResult<T> combine_mgcm(const TaskGradientSet<T>& ts, const ModuleRegistry& reg,
                              ScratchMeter* meter = nullptr) {
    ts.validate();
    if (ts.length() != reg.total_params)
        throw std::invalid_argument("combine_mgcm: gradient length " +
                                    std::to_string(ts.length()) + " != registry size " +
                                    std::to_string(reg.total_params));
    CombineResult<T> out;
    out.total.task_label = "total";
    out.total.values = ts.primary.values;
    for (const auto& m : reg.modules)
        for (std::size_t k = 0; k < ts.auxiliaries.size(); ++k)
            out.events.push_back(detail::combine_slice(
                ts.primary.values.data(), ts.auxiliaries[k].values.data(),
                out.total.values.data(), m.span_begin, m.span_size(), ts.step_index, m.module_id,
                static_cast<int>(k), /*discard_mode=*/false, meter));
    return out;
}

/// Whole-model detection/projection (coarse-grained baseline).
template <typename T>
CombineResult<T> combine_pcgrad_model(const TaskGradientSet<T>& ts,
                                      ScratchMeter* meter = nullptr) {
    ts.validate();
    CombineResult<T> out;
    out.total.task_label = "total";
    out.total.values = ts.primary.values;
    for (std::size_t k = 0; k < ts.auxiliaries.size(); ++k)
        out.events.push_back(detail::combine_slice(
            ts.primary.values.data(), ts.auxiliaries[k].values.data(), out.total.values.data(), 0,
            ts.length(), ts.step_index, kWholeModelModuleId, static_cast<int>(k),
            /*discard_mode=*/false, meter));
    return out;
}

/// Per-module baseline that zeroes conflicting auxiliary slices instead of
/// projecting them.
template <typename T>
CombineResult<T> combine_discard(const TaskGradientSet<T>& ts, const ModuleRegistry& reg,
                                 ScratchMeter* meter = nullptr) {
    ts.validate();
    if (ts.length() != reg.total_params)
        throw std::invalid_argument("combine_discard: gradient length mismatch");
    CombineResult<T> out;
    out.total.task_label = "total";
    out.total.values = ts.primary.values;
    for (const auto& m : reg.modules)
        for (std::size_t k = 0; k < ts.auxiliaries.size(); ++k)
            out.events.push_back(detail::combine_slice(
                ts.primary.values.data(), ts.auxiliaries[k].values.data(),
                out.total.values.data(), m.span_begin, m.span_size(), ts.step_index, m.module_id,
                static_cast<int>(k), /*discard_mode=*/true, meter));
    return out;
}

template <typename T>
CombineResult<T> combine(StrategyKind s, const TaskGradientSet<T>& ts, const ModuleRegistry& reg,
                         ScratchMeter* meter = nullptr) {
    switch (s) {
        case StrategyKind::Sum: return combine_sum(ts);
        case StrategyKind::PcgradModel: return combine_pcgrad_model(ts, meter);
        case StrategyKind::Discard: return combine_discard(ts, reg, meter);
        case StrategyKind::Mgcm: return combine_mgcm(ts, reg, meter);
    }
    throw std::invalid_argument("combine: unknown strategy");
}

}  // namespace mgcm
