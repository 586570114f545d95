// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mgcm/registry.hpp"
#include "mgcm/tape.hpp"

namespace mgcm {

enum class BenchmarkMode { SeqTriplet, EngineeredRegression };

BenchmarkMode benchmark_mode_from_string(const std::string& s);
const char* to_string(BenchmarkMode m);

/// Synthetic three-task benchmark. seq_triplet mirrors the
/// translate/recognize/reorder task triple over token sequences;
/// engineered_regression is a shared-trunk regression whose conflict level
/// on one designated module is set by conflict_knob.
struct BenchmarkSpec {
    BenchmarkMode mode = BenchmarkMode::SeqTriplet;
    int seq_len = 8;        // engineered mode: per-block input width
    int vocab_size = 32;
    int dataset_size = 64;
    double conflict_knob = 0.0;  // in [0,1], engineered mode only
    std::uint64_t seed = 1;

    void validate() const;
};

inline constexpr int kEngineeredBlocks = 4;
inline constexpr int kEngineeredDesignatedBlock = 1;

struct Dataset {
    BenchmarkSpec spec;

    // seq_triplet: primary = permuted source, aux1 = copy, aux2 = reversed.
    std::vector<std::vector<int>> src;
    std::vector<std::vector<int>> tgt_primary;
    std::vector<std::vector<int>> tgt_aux1;
    std::vector<std::vector<int>> tgt_aux2;

    // engineered_regression: rows of x with one scalar target per task.
    std::vector<std::vector<double>> x;
    std::vector<std::array<double, 3>> y;
    std::vector<double> teacher_primary, teacher_aux1, teacher_aux2;

    std::size_t size() const {
        return spec.mode == BenchmarkMode::SeqTriplet ? src.size() : x.size();
    }
    int input_dim() const { return kEngineeredBlocks * spec.seq_len; }
};

Dataset generate_benchmark(const BenchmarkSpec& spec);

/// Shared-trunk linear model for the engineered benchmark: one weight
/// vector partitioned into equal blocks, each block its own module. The
/// designated block carries kind ATTN_Q, the rest FFN_W1.
template <typename T>
class EngineeredModel {
public:
    EngineeredModel(int input_dim, std::uint64_t /*seed*/) : dim_(input_dim) {
        if (input_dim % kEngineeredBlocks != 0)
            throw std::invalid_argument("EngineeredModel: input_dim must be a multiple of " +
                                        std::to_string(kEngineeredBlocks));
        RegistryBuilder b;
        const int block = input_dim / kEngineeredBlocks;
        for (int j = 0; j < kEngineeredBlocks; ++j) {
            ModuleKind kind =
                j == kEngineeredDesignatedBlock ? ModuleKind::ATTN_Q : ModuleKind::FFN_W1;
            b.begin_module(kind, 0, Component::Encoder,
                           j == kEngineeredDesignatedBlock ? AttentionRole::Self
                                                           : AttentionRole::None,
                           "trunk.block" + std::to_string(j));
            b.add_param("trunk.block" + std::to_string(j) + ".w",
                        static_cast<std::size_t>(block));
            b.end_module();
        }
        reg_ = b.finish();
        flat_.assign(static_cast<std::size_t>(input_dim), T(0));  // start at the origin
    }

    const ModuleRegistry& registry() const { return reg_; }
    std::vector<T>& flat_params() { return flat_; }

    /// Mean squared error of x.w against one task's scalar targets.
    NodeRef batch_loss(Tape<T>& tape, std::vector<NodeRef>& param_nodes,
                       const std::vector<std::vector<double>>& xs,
                       const std::vector<double>& ys) const {
        const std::size_t m = xs.size();
        Tensor<T> X({m, static_cast<std::size_t>(dim_)});
        for (std::size_t i = 0; i < m; ++i)
            for (int j = 0; j < dim_; ++j)
                X.data[i * static_cast<std::size_t>(dim_) + static_cast<std::size_t>(j)] =
                    static_cast<T>(xs[i][static_cast<std::size_t>(j)]);
        Tensor<T> Y({m, 1});
        for (std::size_t i = 0; i < m; ++i) Y.data[i] = static_cast<T>(ys[i]);

        param_nodes.clear();
        NodeRef w = tape.leaf(
            Tensor<T>({static_cast<std::size_t>(dim_), 1}, flat_), 0);
        param_nodes.push_back(w);
        NodeRef pred = tape.matmul(tape.leaf(std::move(X)), w);
        NodeRef diff = tape.add(pred, tape.scale(tape.leaf(std::move(Y)), T(-1)));
        NodeRef sq = tape.matmul(tape.reshape(diff, {1, m}), diff);
        return tape.scale(sq, T(1) / T(m));
    }

    GradientVector<T> gradient_vector(const Tape<T>& tape, const std::vector<NodeRef>& param_nodes,
                                      std::string task_label) const {
        GradientVector<T> g;
        g.task_label = std::move(task_label);
        const auto& pg = tape.grad(param_nodes[0]);
        g.values.assign(pg.data.begin(), pg.data.end());
        if (g.values.empty()) g.values.assign(flat_.size(), T(0));
        return g;
    }

    void apply_update(const std::vector<T>& total, T lr) {
        for (std::size_t i = 0; i < flat_.size(); ++i) flat_[i] -= lr * total[i];
    }

private:
    int dim_;
    ModuleRegistry reg_;
    std::vector<T> flat_;
};

}  // namespace mgcm
