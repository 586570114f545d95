// SPDX-License-Identifier: Apache-2.0
#include "mgcm/harness.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

namespace mgcm {

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

template <typename T>
struct TaskBatch {
    std::array<double, 3> losses{};
    TaskGradientSet<T> grads;
};

// Forward/backward each task independently on its own tape so the task
// gradients are exactly what single-task training would produce.
template <typename T, typename Model, typename LossFn>
TaskBatch<T> task_gradients(Model& model, LossFn&& loss_for_task, long step) {
    TaskBatch<T> out;
    out.grads.step_index = step;
    static const char* labels[3] = {"primary", "aux1", "aux2"};
    for (int t = 0; t < 3; ++t) {
        Tape<T> tape;
        std::vector<NodeRef> param_nodes;
        NodeRef loss = loss_for_task(tape, param_nodes, t);
        out.losses[static_cast<std::size_t>(t)] =
            static_cast<double>(tape.value(loss).data[0]);
        tape.backward(loss);
        auto g = model.gradient_vector(tape, param_nodes, labels[t]);
        if (t == 0)
            out.grads.primary = std::move(g);
        else
            out.grads.auxiliaries.push_back(std::move(g));
    }
    return out;
}

template <typename T>
RunResult train_impl(const RunConfig& run, const Dataset& data) {
    run.train.validate();
    run.data.validate();
    const auto t0 = std::chrono::steady_clock::now();

    RunResult result;
    result.fingerprint = config_fingerprint(run);

    const bool files = !run.out_dir.empty();
    if (files) std::filesystem::create_directories(run.out_dir);

    std::ofstream step_log;
    if (files) {
        result.step_log_path = run.out_dir + "/steps.csv";
        result.event_log_path = run.out_dir + "/events.csv";
        result.masking_log_path = run.out_dir + "/masking.csv";
        step_log.open(result.step_log_path);
        step_log.precision(17);
        step_log << "step,loss_primary,loss_aux1,loss_aux2\n";
    }

    const std::size_t n_data = data.size();
    auto batch_indices = [&](long step) {
        std::vector<std::size_t> idx(static_cast<std::size_t>(run.train.batch_size));
        for (std::size_t i = 0; i < idx.size(); ++i)
            idx[i] = (static_cast<std::size_t>(step) * idx.size() + i) % n_data;
        return idx;
    };

    auto run_loop = [&](auto& model, auto&& make_loss) {
        const ModuleRegistry& reg = model.registry();
        if (files) {
            reg.save_json(run.out_dir + "/registry.json");
            write_events_csv(result.event_log_path, {}, reg, false);
            write_masking_csv(result.masking_log_path, {}, false);
        }
        for (long step = 0; step < run.train.steps; ++step) {
            auto idx = batch_indices(step);
            auto tb = task_gradients<T>(
                model, [&](Tape<T>& tape, std::vector<NodeRef>& nodes, int task) {
                    return make_loss(model, tape, nodes, idx, task);
                },
                step);
            for (double l : tb.losses)
                if (!std::isfinite(l)) throw TrainingDiverged(step);
            if (step == 0) result.initial_primary_loss = tb.losses[0];

            auto combined = combine(run.train.strategy, tb.grads, reg);
            if (run.train.log_events && !combined.events.empty()) {
                result.stats.record_step(combined.events);
                if (files) write_events_csv(result.event_log_path, combined.events, reg, true);
            }
            if (run.train.log_masking) {
                auto masks = detect_masking(tb.grads, reg);
                result.masking_episodes += static_cast<long>(masks.size());
                if (files && !masks.empty())
                    write_masking_csv(result.masking_log_path, masks, true);
            }
            model.apply_update(combined.total.values, static_cast<T>(run.train.lr));
            result.losses.push_back(tb.losses);
            if (files)
                step_log << step << "," << tb.losses[0] << "," << tb.losses[1] << ","
                         << tb.losses[2] << "\n";
        }
        if (run.train.steps == 0) {
            // Record the initial loss even for an empty run.
            auto idx = batch_indices(0);
            Tape<T> tape;
            std::vector<NodeRef> nodes;
            NodeRef loss = make_loss(model, tape, nodes, idx, 0);
            result.initial_primary_loss = static_cast<double>(tape.value(loss).data[0]);
            result.final_primary_loss = result.initial_primary_loss;
        } else {
            result.final_primary_loss = result.losses.back()[0];
        }
    };

    if (run.data.mode == BenchmarkMode::SeqTriplet) {
        ToyTransformer<T> model(run.model, run.train.seed);
        run_loop(model, [&](ToyTransformer<T>& m, Tape<T>& tape, std::vector<NodeRef>& nodes,
                            const std::vector<std::size_t>& idx, int task) {
            std::vector<std::vector<int>> src, tgt;
            for (auto i : idx) {
                src.push_back(data.src[i]);
                tgt.push_back(task == 0   ? data.tgt_primary[i]
                              : task == 1 ? data.tgt_aux1[i]
                                          : data.tgt_aux2[i]);
            }
            return m.batch_loss(tape, nodes, src, tgt);
        });
    } else {
        EngineeredModel<T> model(data.input_dim(), run.train.seed);
        run_loop(model, [&](EngineeredModel<T>& m, Tape<T>& tape, std::vector<NodeRef>& nodes,
                            const std::vector<std::size_t>& idx, int task) {
            std::vector<std::vector<double>> xs;
            std::vector<double> ys;
            for (auto i : idx) {
                xs.push_back(data.x[i]);
                ys.push_back(data.y[i][static_cast<std::size_t>(task)]);
            }
            return m.batch_loss(tape, nodes, xs, ys);
        });
    }

    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (files) {
        std::ofstream summary(run.out_dir + "/summary.json");
        summary << run_summary_json(run, result) << "\n";
    }
    return result;
}

}  // namespace

RunResult train(const RunConfig& run, const Dataset& data) {
    if (data.spec.mode != run.data.mode)
        throw std::invalid_argument("train: dataset mode does not match run config");
    if (run.train.precision == "f64") return train_impl<double>(run, data);
    return train_impl<float>(run, data);
}

RunResult train(const RunConfig& run) {
    BenchmarkSpec spec = run.data;
    if (spec.mode == BenchmarkMode::SeqTriplet) spec.vocab_size = run.model.vocab;
    return train(run, generate_benchmark(spec));
}

RunConfig run_config_from_json(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    RunConfig run;
    if (j.contains("model")) {
        const auto& m = j["model"];
        run.model.enc_layers = m.value("enc_layers", run.model.enc_layers);
        run.model.dec_layers = m.value("dec_layers", run.model.dec_layers);
        run.model.heads = m.value("heads", run.model.heads);
        run.model.d_model = m.value("d_model", run.model.d_model);
        run.model.d_ffn = m.value("d_ffn", run.model.d_ffn);
        run.model.vocab = m.value("vocab", run.model.vocab);
    }
    if (j.contains("data")) {
        const auto& d = j["data"];
        if (d.contains("mode")) run.data.mode = benchmark_mode_from_string(d["mode"]);
        run.data.seq_len = d.value("seq_len", run.data.seq_len);
        run.data.vocab_size = d.value("vocab_size", run.model.vocab);
        run.data.dataset_size = d.value("dataset_size", run.data.dataset_size);
        run.data.conflict_knob = d.value("conflict_knob", run.data.conflict_knob);
        run.data.seed = d.value("seed", run.data.seed);
    }
    if (j.contains("train")) {
        const auto& t = j["train"];
        if (t.contains("strategy")) run.train.strategy = strategy_from_string(t["strategy"]);
        run.train.steps = t.value("steps", run.train.steps);
        run.train.batch_size = t.value("batch_size", run.train.batch_size);
        run.train.lr = t.value("lr", run.train.lr);
        run.train.seed = t.value("seed", run.train.seed);
        run.train.precision = t.value("precision", run.train.precision);
    }
    run.out_dir = j.value("out", std::string());
    return run;
}

std::string run_config_to_json(const RunConfig& run) {
    nlohmann::json j;
    j["model"] = {{"enc_layers", run.model.enc_layers}, {"dec_layers", run.model.dec_layers},
                  {"heads", run.model.heads},           {"d_model", run.model.d_model},
                  {"d_ffn", run.model.d_ffn},           {"vocab", run.model.vocab}};
    j["data"] = {{"mode", to_string(run.data.mode)},
                 {"seq_len", run.data.seq_len},
                 {"vocab_size", run.data.vocab_size},
                 {"dataset_size", run.data.dataset_size},
                 {"conflict_knob", run.data.conflict_knob},
                 {"seed", run.data.seed}};
    j["train"] = {{"strategy", to_string(run.train.strategy)},
                  {"steps", run.train.steps},
                  {"batch_size", run.train.batch_size},
                  {"lr", run.train.lr},
                  {"seed", run.train.seed},
                  {"precision", run.train.precision}};
    j["out"] = run.out_dir;
    return j.dump();
}

std::uint64_t config_fingerprint(const RunConfig& run) {
    return fnv1a(run_config_to_json(run));
}

std::string run_summary_json(const RunConfig& run, const RunResult& result) {
    char fp[32];
    std::snprintf(fp, sizeof fp, "%016llx",
                  static_cast<unsigned long long>(result.fingerprint));
    nlohmann::json j;
    j["config"] = nlohmann::json::parse(run_config_to_json(run));
    j["fingerprint"] = fp;
    j["steps_run"] = result.losses.size();
    j["initial_primary_loss"] = result.initial_primary_loss;
    j["final_primary_loss"] = result.final_primary_loss;
    j["masking_episodes"] = result.masking_episodes;
    j["wall_seconds"] = result.wall_seconds;
    j["step_log"] = result.step_log_path;
    j["event_log"] = result.event_log_path;
    j["masking_log"] = result.masking_log_path;
    return j.dump(2);
}

StudyReport compare_strategies(const StudyConfig& study) {
    if (study.strategies.empty() || study.seeds.empty())
        throw std::invalid_argument("compare_strategies: need strategies and seeds");
    Dataset data = generate_benchmark(study.base.data);

    StudyReport report;
    std::map<std::string, std::vector<double>> finals;  // strategy -> per-seed loss
    for (auto strategy : study.strategies)
        for (auto seed : study.seeds) {
            RunConfig run = study.base;
            run.train.strategy = strategy;
            run.train.seed = seed;
            if (!study.base.out_dir.empty())
                run.out_dir = study.base.out_dir + "/" + to_string(strategy) + "_seed" +
                              std::to_string(seed);
            RunResult r = train(run, data);
            report.rows.push_back({strategy, seed, r.final_primary_loss, r.masking_episodes});
            finals[to_string(strategy)].push_back(r.final_primary_loss);
        }

    auto mg = finals.find("mgcm");
    if (mg != finals.end()) {
        for (const auto& [name, losses] : finals) {
            if (name == "mgcm") continue;
            int wins = 0;
            for (std::size_t i = 0; i < losses.size(); ++i)
                if (mg->second[i] <= losses[i]) ++wins;
            report.mgcm_wins[name] = wins;
            if (losses.size() >= 2)
                report.p_values[name] = paired_permutation_test(
                    mg->second, losses, study.sig_resamples, study.base.train.seed);
        }
    }
    return report;
}

std::string study_report_json(const StudyReport& report) {
    nlohmann::json j;
    auto& rows = j["rows"] = nlohmann::json::array();
    for (const auto& r : report.rows)
        rows.push_back({{"strategy", to_string(r.strategy)},
                        {"seed", r.seed},
                        {"final_primary_loss", r.final_primary_loss},
                        {"masking_episodes", r.masking_episodes}});
    j["mgcm_wins"] = report.mgcm_wins;
    j["p_values_vs_mgcm"] = report.p_values;
    return j.dump(2);
}

}  // namespace mgcm
