// SPDX-License-Identifier: Apache-2.0
#include "mgcm/registry.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

namespace mgcm {

const char* to_string(ModuleKind k) {
    switch (k) {
        case ModuleKind::LN: return "LN";
        case ModuleKind::FFN_W1: return "FFN_W1";
        case ModuleKind::FFN_W2: return "FFN_W2";
        case ModuleKind::ATTN_Q: return "ATTN_Q";
        case ModuleKind::ATTN_K: return "ATTN_K";
        case ModuleKind::ATTN_V: return "ATTN_V";
        case ModuleKind::ATTN_O: return "ATTN_O";
        case ModuleKind::EMBED: return "EMBED";
        case ModuleKind::OUTPUT_PROJ: return "OUTPUT_PROJ";
    }
    return "?";
}

const char* to_string(Component c) {
    switch (c) {
        case Component::Encoder: return "encoder";
        case Component::Decoder: return "decoder";
        case Component::Shared: return "shared";
    }
    return "?";
}

const char* to_string(AttentionRole r) {
    switch (r) {
        case AttentionRole::Self: return "self";
        case AttentionRole::Cross: return "cross";
        case AttentionRole::None: return "none";
    }
    return "?";
}

void RegistryBuilder::begin_module(ModuleKind kind, int layer_index, Component component,
                                   AttentionRole role, std::string path) {
    if (open_) throw std::logic_error("RegistryBuilder: module already open");
    ModuleDescriptor m;
    m.module_id = static_cast<int>(reg_.modules.size());
    m.kind = kind;
    m.layer_index = layer_index;
    m.component = component;
    m.attention_role = role;
    m.path = std::move(path);
    m.span_begin = reg_.total_params;
    m.span_end = reg_.total_params;
    reg_.modules.push_back(std::move(m));
    open_ = true;
}

int RegistryBuilder::add_param(std::string path, std::size_t size) {
    if (!open_) throw std::logic_error("RegistryBuilder: no open module");
    ParamInfo p;
    p.id = static_cast<int>(reg_.params.size());
    p.path = std::move(path);
    p.offset = reg_.total_params;
    p.size = size;
    reg_.params.push_back(p);
    reg_.modules.back().param_ids.push_back(p.id);
    reg_.total_params += size;
    reg_.modules.back().span_end = reg_.total_params;
    return p.id;
}

void RegistryBuilder::end_module() {
    if (!open_) throw std::logic_error("RegistryBuilder: no open module");
    open_ = false;
}

ModuleRegistry RegistryBuilder::finish() {
    if (open_) throw std::logic_error("RegistryBuilder: unterminated module");
    return std::move(reg_);
}

ModuleRegistry ModuleRegistry::single_module(std::size_t n) {
    RegistryBuilder b;
    b.begin_module(ModuleKind::OUTPUT_PROJ, -1, Component::Shared, AttentionRole::None, "whole_model");
    b.add_param("whole_model.flat", n);
    b.end_module();
    return b.finish();
}

std::string ModuleRegistry::to_json() const {
    nlohmann::json j;
    j["total_params"] = total_params;
    auto& mods = j["modules"] = nlohmann::json::array();
    for (const auto& m : modules) {
        nlohmann::json jm;
        jm["module_id"] = m.module_id;
        jm["kind"] = to_string(m.kind);
        jm["layer_index"] = m.layer_index;
        jm["component"] = to_string(m.component);
        jm["attention_role"] = to_string(m.attention_role);
        jm["span_begin"] = m.span_begin;
        jm["span_end"] = m.span_end;
        jm["path"] = m.path;
        auto& paths = jm["param_paths"] = nlohmann::json::array();
        for (int pid : m.param_ids) paths.push_back(params[static_cast<std::size_t>(pid)].path);
        mods.push_back(std::move(jm));
    }
    return j.dump(2);
}

void ModuleRegistry::save_json(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << to_json() << "\n";
}

namespace {

ModuleKind kind_from_string(const std::string& s) {
    for (ModuleKind k : {ModuleKind::LN, ModuleKind::FFN_W1, ModuleKind::FFN_W2,
                         ModuleKind::ATTN_Q, ModuleKind::ATTN_K, ModuleKind::ATTN_V,
                         ModuleKind::ATTN_O, ModuleKind::EMBED, ModuleKind::OUTPUT_PROJ})
        if (s == to_string(k)) return k;
    throw std::invalid_argument("unknown module kind '" + s + "'");
}

Component component_from_string(const std::string& s) {
    for (Component c : {Component::Encoder, Component::Decoder, Component::Shared})
        if (s == to_string(c)) return c;
    throw std::invalid_argument("unknown component '" + s + "'");
}

AttentionRole role_from_string(const std::string& s) {
    for (AttentionRole r : {AttentionRole::Self, AttentionRole::Cross, AttentionRole::None})
        if (s == to_string(r)) return r;
    throw std::invalid_argument("unknown attention role '" + s + "'");
}

}  // namespace

ModuleRegistry ModuleRegistry::from_json(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    ModuleRegistry reg;
    reg.total_params = j.at("total_params").get<std::size_t>();
    for (const auto& jm : j.at("modules")) {
        ModuleDescriptor m;
        m.module_id = jm.at("module_id").get<int>();
        m.kind = kind_from_string(jm.at("kind").get<std::string>());
        m.layer_index = jm.at("layer_index").get<int>();
        m.component = component_from_string(jm.at("component").get<std::string>());
        m.attention_role = role_from_string(jm.at("attention_role").get<std::string>());
        m.span_begin = jm.at("span_begin").get<std::size_t>();
        m.span_end = jm.at("span_end").get<std::size_t>();
        m.path = jm.value("path", std::string());
        reg.modules.push_back(std::move(m));
    }
    return reg;
}

ModuleRegistry ModuleRegistry::load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json(text);
}

}  // namespace mgcm
