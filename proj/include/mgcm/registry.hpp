// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mgcm/tensor.hpp"

namespace mgcm {

enum class ModuleKind {
    LN,
    FFN_W1,
    FFN_W2,
    ATTN_Q,
    ATTN_K,
    ATTN_V,
    ATTN_O,
    EMBED,
    OUTPUT_PROJ,
};

enum class Component { Encoder, Decoder, Shared };
enum class AttentionRole { Self, Cross, None };

const char* to_string(ModuleKind k);
const char* to_string(Component c);
const char* to_string(AttentionRole r);

struct ParamInfo {
    int id = -1;                 // stable, assigned in construction order
    std::string path;            // e.g. "enc.0.attn.q"
    std::size_t offset = 0;      // start in the flat gradient vector
    std::size_t size = 0;
};

struct ModuleDescriptor {
    int module_id = -1;
    ModuleKind kind = ModuleKind::LN;
    int layer_index = -1;        // -1 for non-layer modules
    Component component = Component::Shared;
    AttentionRole attention_role = AttentionRole::None;
    std::vector<int> param_ids;
    std::size_t span_begin = 0;  // [span_begin, span_end) in the flat vector
    std::size_t span_end = 0;
    std::string path;

    std::size_t span_size() const { return span_end - span_begin; }
};

/// Partition of the flat parameter index space into named modules.
/// Immutable after construction; spans are disjoint and cover [0, n).
struct ModuleRegistry {
    std::vector<ModuleDescriptor> modules;
    std::vector<ParamInfo> params;
    std::size_t total_params = 0;

    std::size_t max_module_span() const {
        std::size_t mx = 0;
        for (const auto& m : modules) mx = std::max(mx, m.span_size());
        return mx;
    }

    /// Registry with one module covering the whole vector (whole-model view).
    static ModuleRegistry single_module(std::size_t n);

    std::string to_json() const;
    void save_json(const std::string& path) const;
    static ModuleRegistry from_json(const std::string& json_text);
    static ModuleRegistry load_json(const std::string& path);
};

/// Accumulates modules/params in construction order and assigns contiguous
/// spans, so a module's parameters are adjacent in the flat vector.
class RegistryBuilder {
public:
    void begin_module(ModuleKind kind, int layer_index, Component component,
                      AttentionRole role, std::string path);
    int add_param(std::string path, std::size_t size);
    void end_module();
    ModuleRegistry finish();

private:
    ModuleRegistry reg_;
    bool open_ = false;
};

template <typename T>
struct GradientVector {
    std::vector<T> values;
    std::string task_label;
};

/// Cut a flat model gradient into per-module slices at the registry's spans.
template <typename T>
std::vector<std::vector<T>> modularize(const GradientVector<T>& g, const ModuleRegistry& reg) {
    if (g.values.size() != reg.total_params)
        throw std::invalid_argument("modularize: gradient length " +
                                    std::to_string(g.values.size()) + " != registry size " +
                                    std::to_string(reg.total_params));
    std::vector<std::vector<T>> out;
    out.reserve(reg.modules.size());
    for (const auto& m : reg.modules)
        out.emplace_back(g.values.begin() + m.span_begin, g.values.begin() + m.span_end);
    return out;
}

/// Inverse of modularize: concatenate per-module slices back into one vector.
template <typename T>
GradientVector<T> concat_model_gradient(const std::vector<std::vector<T>>& slices,
                                        const ModuleRegistry& reg,
                                        std::string task_label = {}) {
    if (slices.size() != reg.modules.size())
        throw std::invalid_argument("concat_model_gradient: got " + std::to_string(slices.size()) +
                                    " slices for " + std::to_string(reg.modules.size()) +
                                    " modules");
    GradientVector<T> g;
    g.task_label = std::move(task_label);
    g.values.resize(reg.total_params);
    for (std::size_t i = 0; i < slices.size(); ++i) {
        const auto& m = reg.modules[i];
        if (slices[i].size() != m.span_size())
            throw std::invalid_argument("concat_model_gradient: slice " + std::to_string(i) +
                                        " has length " + std::to_string(slices[i].size()) +
                                        ", span needs " + std::to_string(m.span_size()));
        std::copy(slices[i].begin(), slices[i].end(), g.values.begin() + m.span_begin);
    }
    return g;
}

}  // namespace mgcm
