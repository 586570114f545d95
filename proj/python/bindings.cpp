// SPDX-License-Identifier: Apache-2.0
//
// Python bindings for the main operations: similarity/projection, the four
// combination strategies, registry construction, telemetry and the
// experiment harness.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mgcm/harness.hpp"

namespace py = pybind11;
using namespace mgcm;

namespace {

std::vector<double> to_vec(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    return {a.data(), a.data() + a.size()};
}

py::array_t<double> to_array(const std::vector<double>& v) {
    py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

TaskGradientSet<double> make_ts(const py::array_t<double>& primary,
                                const std::vector<py::array_t<double>>& auxiliaries,
                                long step_index) {
    TaskGradientSet<double> ts;
    ts.primary = {to_vec(primary), "primary"};
    for (std::size_t k = 0; k < auxiliaries.size(); ++k)
        ts.auxiliaries.push_back({to_vec(auxiliaries[k]), "aux" + std::to_string(k + 1)});
    ts.step_index = step_index;
    return ts;
}

py::dict event_dict(const ConflictEvent& e) {
    py::dict d;
    d["step"] = e.step_index;
    d["module_id"] = e.module_id;
    d["aux_index"] = e.auxiliary_index;
    d["dot"] = e.dot;
    d["cosine"] = e.cosine;
    d["conflict"] = e.conflict;
    d["action"] = to_string(e.action);
    return d;
}

py::tuple combine_py(StrategyKind s, const py::array_t<double>& primary,
                     const std::vector<py::array_t<double>>& auxiliaries,
                     const ModuleRegistry* reg, long step_index) {
    auto ts = make_ts(primary, auxiliaries, step_index);
    ModuleRegistry whole = ModuleRegistry::single_module(ts.length());
    auto result = combine(s, ts, reg ? *reg : whole);
    py::list events;
    for (const auto& e : result.events) events.append(event_dict(e));
    return py::make_tuple(to_array(result.total.values), events);
}

}  // namespace

PYBIND11_MODULE(mgcm_core, m) {
    m.doc() = "Module-level gradient conflict detection and mitigation";

    py::class_<ModuleRegistry>(m, "ModuleRegistry")
        .def_property_readonly("total_params",
                               [](const ModuleRegistry& r) { return r.total_params; })
        .def_property_readonly("module_count",
                               [](const ModuleRegistry& r) { return r.modules.size(); })
        .def("spans",
             [](const ModuleRegistry& r) {
                 py::list out;
                 for (const auto& mod : r.modules)
                     out.append(py::make_tuple(mod.module_id, mod.path, to_string(mod.kind),
                                               mod.span_begin, mod.span_end));
                 return out;
             })
        .def("to_json", &ModuleRegistry::to_json)
        .def_static("from_json", &ModuleRegistry::from_json)
        .def_static("single_module", &ModuleRegistry::single_module);

    m.def("registry_from_spans", [](const std::vector<std::size_t>& span_sizes) {
        RegistryBuilder b;
        for (std::size_t i = 0; i < span_sizes.size(); ++i) {
            b.begin_module(ModuleKind::FFN_W1, static_cast<int>(i), Component::Shared,
                           AttentionRole::None, "m" + std::to_string(i));
            b.add_param("m" + std::to_string(i), span_sizes[i]);
            b.end_module();
        }
        return b.finish();
    }, py::arg("span_sizes"), "Build an ad-hoc registry from a list of span sizes");

    m.def("toy_transformer_registry", [](int enc_layers, int dec_layers, int heads, int d_model,
                                         int d_ffn, int vocab) {
        ModelConfig cfg{enc_layers, dec_layers, heads, d_model, d_ffn, vocab};
        return ToyTransformer<float>(cfg, 1).registry();
    }, py::arg("enc_layers") = 2, py::arg("dec_layers") = 2, py::arg("heads") = 4,
       py::arg("d_model") = 64, py::arg("d_ffn") = 128, py::arg("vocab") = 32);

    m.def("cos_sim", [](const py::array_t<double>& a, const py::array_t<double>& b) {
        auto s = cos_sim(to_vec(a), to_vec(b));
        return py::make_tuple(s.dot, s.cosine);
    });
    m.def("detect_conflict", [](const py::array_t<double>& gp, const py::array_t<double>& ga) {
        return detect_conflict(to_vec(gp), to_vec(ga));
    });
    m.def("project", [](const py::array_t<double>& ga, const py::array_t<double>& gp) {
        return to_array(project(to_vec(ga), to_vec(gp)));
    });

    m.def("modularize", [](const py::array_t<double>& g, const ModuleRegistry& reg) {
        GradientVector<double> gv{to_vec(g), ""};
        py::list out;
        for (const auto& s : modularize(gv, reg)) out.append(to_array(s));
        return out;
    });
    m.def("concat_model_gradient",
          [](const std::vector<py::array_t<double>>& slices, const ModuleRegistry& reg) {
              std::vector<std::vector<double>> sl;
              for (const auto& s : slices) sl.push_back(to_vec(s));
              return to_array(concat_model_gradient(sl, reg).values);
          });

    m.def("combine_sum",
          [](const py::array_t<double>& p, const std::vector<py::array_t<double>>& aux,
             long step) { return combine_py(StrategyKind::Sum, p, aux, nullptr, step); },
          py::arg("primary"), py::arg("auxiliaries"), py::arg("step") = 0);
    m.def("combine_pcgrad_model",
          [](const py::array_t<double>& p, const std::vector<py::array_t<double>>& aux,
             long step) { return combine_py(StrategyKind::PcgradModel, p, aux, nullptr, step); },
          py::arg("primary"), py::arg("auxiliaries"), py::arg("step") = 0);
    m.def("combine_discard",
          [](const py::array_t<double>& p, const std::vector<py::array_t<double>>& aux,
             const ModuleRegistry& reg, long step) {
              return combine_py(StrategyKind::Discard, p, aux, &reg, step);
          },
          py::arg("primary"), py::arg("auxiliaries"), py::arg("registry"), py::arg("step") = 0);
    m.def("combine_mgcm",
          [](const py::array_t<double>& p, const std::vector<py::array_t<double>>& aux,
             const ModuleRegistry& reg, long step) {
              return combine_py(StrategyKind::Mgcm, p, aux, &reg, step);
          },
          py::arg("primary"), py::arg("auxiliaries"), py::arg("registry"), py::arg("step") = 0);

    m.def("detect_masking",
          [](const py::array_t<double>& p, const std::vector<py::array_t<double>>& aux,
             const ModuleRegistry& reg) {
              auto ts = make_ts(p, aux, 0);
              py::list out;
              for (const auto& r : detect_masking(ts, reg)) {
                  py::dict d;
                  d["aux_index"] = r.auxiliary_index;
                  d["model_dot"] = r.model_dot;
                  d["conflicting_modules"] = r.conflicting_module_ids;
                  out.append(d);
              }
              return out;
          });

    m.def("estimate_extra_memory",
          [](const std::string& strategy, std::size_t params, int bytes_per_element) {
              auto e = estimate_extra_memory(strategy_from_string(strategy), params,
                                             bytes_per_element);
              py::dict d;
              d["strategy"] = strategy;
              d["extra_bytes"] = e.extra_bytes;
              d["ratio_vs_pcgrad"] = e.ratio_vs_pcgrad;
              return d;
          },
          py::arg("strategy"), py::arg("params"), py::arg("bytes_per_element") = 4);

    m.def("paired_permutation_test", &paired_permutation_test, py::arg("scores_a"),
          py::arg("scores_b"), py::arg("resamples") = 10000, py::arg("seed") = 1);

    m.def("train_run", [](const std::string& config_json) {
        RunConfig run = run_config_from_json(config_json);
        RunResult r = train(run);
        return run_summary_json(run, r);
    }, py::arg("config_json"), "Run one training configuration; returns the summary JSON");
}
