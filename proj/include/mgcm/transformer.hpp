// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale encoder/decoder transformer with every parameter assigned to
// exactly one registry module: per encoder layer Q/K/V/O, FFN w1/b1/w2/b2
// and two sublayer norms; per decoder layer the same plus cross-attention
// and a third norm; shared token embedding and the output projection.
#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mgcm/registry.hpp"
#include "mgcm/tape.hpp"

namespace mgcm {

struct ModelConfig {
    int enc_layers = 2;
    int dec_layers = 2;
    int heads = 4;
    int d_model = 64;
    int d_ffn = 128;
    int vocab = 32;

    void validate() const {
        auto positive = [](const char* name, int v) {
            if (v < 1)
                throw std::invalid_argument(std::string("ModelConfig: ") + name +
                                            " must be >= 1, got " + std::to_string(v));
        };
        positive("enc_layers", enc_layers);
        positive("dec_layers", dec_layers);
        positive("heads", heads);
        positive("d_model", d_model);
        positive("d_ffn", d_ffn);
        positive("vocab", vocab);
        if (d_model % heads != 0)
            throw std::invalid_argument("ModelConfig: d_model " + std::to_string(d_model) +
                                        " not divisible by heads " + std::to_string(heads));
    }
};

template <typename T>
class ToyTransformer {
public:
    ToyTransformer(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        build(seed);
    }

    const ModuleRegistry& registry() const { return reg_; }
    const ModelConfig& config() const { return cfg_; }
    std::vector<T>& flat_params() { return flat_; }
    const std::vector<T>& flat_params() const { return flat_; }

    /// Teacher-forced sequence loss for one batch of (src, tgt) pairs.
    /// Decoder input is BOS-shifted target; returns the scalar loss node.
    /// param_nodes receives the tape leaf of every parameter, indexed by id.
    NodeRef batch_loss(Tape<T>& tape, std::vector<NodeRef>& param_nodes,
                       const std::vector<std::vector<int>>& src,
                       const std::vector<std::vector<int>>& tgt, int bos_token = 0) const {
        if (src.empty() || src.size() != tgt.size())
            throw std::invalid_argument("batch_loss: need equally many src and tgt sequences");
        make_leaves(tape, param_nodes);
        NodeRef total = 0;
        bool first = true;
        for (std::size_t b = 0; b < src.size(); ++b) {
            std::vector<int> dec_in;
            dec_in.reserve(tgt[b].size());
            dec_in.push_back(bos_token);
            dec_in.insert(dec_in.end(), tgt[b].begin(), tgt[b].end() - 1);
            NodeRef loss = sequence_loss(tape, param_nodes, src[b], dec_in, tgt[b]);
            total = first ? loss : tape.add(total, loss);
            first = false;
        }
        return tape.scale(total, T(1) / T(src.size()));
    }

    /// Flat gradient over all parameters after tape.backward(); parameters
    /// not reached by the loss get explicit zeros.
    GradientVector<T> gradient_vector(const Tape<T>& tape, const std::vector<NodeRef>& param_nodes,
                                      std::string task_label) const {
        GradientVector<T> g;
        g.task_label = std::move(task_label);
        g.values.assign(reg_.total_params, T(0));
        for (std::size_t pid = 0; pid < param_nodes.size(); ++pid) {
            const auto& pg = tape.grad(param_nodes[pid]);
            const auto& info = reg_.params[pid];
            if (!pg.data.empty())
                std::copy(pg.data.begin(), pg.data.end(), g.values.begin() + info.offset);
        }
        return g;
    }

    void apply_update(const std::vector<T>& total, T lr) {
        if (total.size() != flat_.size())
            throw std::invalid_argument("apply_update: gradient length mismatch");
        for (std::size_t i = 0; i < flat_.size(); ++i) flat_[i] -= lr * total[i];
    }

private:
    struct ParamShape {
        std::size_t rows, cols;
    };

    void make_leaves(Tape<T>& tape, std::vector<NodeRef>& param_nodes) const {
        param_nodes.clear();
        param_nodes.reserve(reg_.params.size());
        for (std::size_t pid = 0; pid < reg_.params.size(); ++pid) {
            const auto& info = reg_.params[pid];
            const auto& sh = shapes_[pid];
            Tensor<T> v({sh.rows, sh.cols},
                        std::vector<T>(flat_.begin() + info.offset,
                                       flat_.begin() + info.offset + info.size));
            param_nodes.push_back(tape.leaf(std::move(v), static_cast<int>(pid)));
        }
    }

    NodeRef embed_tokens(Tape<T>& tape, const std::vector<NodeRef>& p,
                         const std::vector<int>& ids) const {
        NodeRef e = tape.embedding_lookup(p[embed_param_], ids);
        const std::size_t d = static_cast<std::size_t>(cfg_.d_model);
        Tensor<T> pos({ids.size(), d});
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t j = 0; j < d; ++j) {
                double angle = static_cast<double>(i) /
                               std::pow(10000.0, 2.0 * static_cast<double>(j / 2) / static_cast<double>(d));
                pos.data[i * d + j] = static_cast<T>(j % 2 == 0 ? std::sin(angle) : std::cos(angle));
            }
        return tape.add(e, tape.leaf(std::move(pos)));
    }

    NodeRef multihead(Tape<T>& tape, const std::vector<NodeRef>& p, int base_param, NodeRef x_q,
                      NodeRef x_kv) const {
        // base_param points at Wq; layout is Wq,bq,Wk,bk,Wv,bv,Wo,bo.
        NodeRef q = tape.add(tape.matmul(x_q, p[base_param + 0]), p[base_param + 1]);
        NodeRef k = tape.add(tape.matmul(x_kv, p[base_param + 2]), p[base_param + 3]);
        NodeRef v = tape.add(tape.matmul(x_kv, p[base_param + 4]), p[base_param + 5]);
        const std::size_t dh = static_cast<std::size_t>(cfg_.d_model / cfg_.heads);
        std::vector<NodeRef> heads;
        for (int h = 0; h < cfg_.heads; ++h) {
            std::size_t c0 = static_cast<std::size_t>(h) * dh;
            heads.push_back(tape.scaled_dot_attention(tape.slice_cols(q, c0, c0 + dh),
                                                      tape.slice_cols(k, c0, c0 + dh),
                                                      tape.slice_cols(v, c0, c0 + dh)));
        }
        NodeRef cat = tape.concat_cols(heads);
        return tape.add(tape.matmul(cat, p[base_param + 6]), p[base_param + 7]);
    }

    NodeRef ffn(Tape<T>& tape, const std::vector<NodeRef>& p, int base_param, NodeRef x) const {
        NodeRef h = tape.gelu(tape.add(tape.matmul(x, p[base_param + 0]), p[base_param + 1]));
        return tape.add(tape.matmul(h, p[base_param + 2]), p[base_param + 3]);
    }

    NodeRef sequence_loss(Tape<T>& tape, const std::vector<NodeRef>& p,
                          const std::vector<int>& src, const std::vector<int>& dec_in,
                          const std::vector<int>& tgt) const {
        NodeRef x = embed_tokens(tape, p, src);
        for (const auto& lay : enc_layers_) {
            NodeRef a = multihead(tape, p, lay.attn, x, x);
            x = tape.layer_norm(tape.add(x, a), p[lay.ln1], p[lay.ln1 + 1]);
            NodeRef f = ffn(tape, p, lay.ffn, x);
            x = tape.layer_norm(tape.add(x, f), p[lay.ln2], p[lay.ln2 + 1]);
        }
        NodeRef y = embed_tokens(tape, p, dec_in);
        for (const auto& lay : dec_layers_) {
            NodeRef a = multihead(tape, p, lay.attn, y, y);
            y = tape.layer_norm(tape.add(y, a), p[lay.ln1], p[lay.ln1 + 1]);
            NodeRef c = multihead(tape, p, lay.cross_attn, y, x);
            y = tape.layer_norm(tape.add(y, c), p[lay.ln2], p[lay.ln2 + 1]);
            NodeRef f = ffn(tape, p, lay.ffn, y);
            y = tape.layer_norm(tape.add(y, f), p[lay.ln3], p[lay.ln3 + 1]);
        }
        NodeRef logits = tape.add(tape.matmul(y, p[out_w_]), p[out_b_]);
        return tape.cross_entropy_loss(logits, tgt);
    }

    struct EncLayer {
        int attn, ffn, ln1, ln2;  // first param id of each group
    };
    struct DecLayer {
        int attn, cross_attn, ffn, ln1, ln2, ln3;
    };

    void build(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> dist(0.0, 0.02);
        RegistryBuilder b;
        const std::size_t d = static_cast<std::size_t>(cfg_.d_model);
        const std::size_t dff = static_cast<std::size_t>(cfg_.d_ffn);
        const std::size_t v = static_cast<std::size_t>(cfg_.vocab);

        auto push_weight = [&](std::size_t rows, std::size_t cols) {
            for (std::size_t i = 0; i < rows * cols; ++i)
                flat_.push_back(static_cast<T>(dist(rng)));
            shapes_.push_back({rows, cols});
        };
        auto push_const = [&](std::size_t rows, std::size_t cols, T val) {
            for (std::size_t i = 0; i < rows * cols; ++i) flat_.push_back(val);
            shapes_.push_back({rows, cols});
        };

        auto attn_block = [&](const std::string& prefix, int layer, Component comp,
                              AttentionRole role) {
            int first = -1;
            const struct {
                ModuleKind kind;
                const char* name;
            } projs[4] = {{ModuleKind::ATTN_Q, "q"},
                          {ModuleKind::ATTN_K, "k"},
                          {ModuleKind::ATTN_V, "v"},
                          {ModuleKind::ATTN_O, "o"}};
            for (const auto& pr : projs) {
                b.begin_module(pr.kind, layer, comp, role, prefix + "." + pr.name);
                int wid = b.add_param(prefix + "." + pr.name, d * d);
                push_weight(d, d);
                b.add_param(prefix + "." + pr.name + "_bias", d);
                push_const(1, d, T(0));
                b.end_module();
                if (first < 0) first = wid;
            }
            return first;
        };
        auto ffn_block = [&](const std::string& prefix, int layer, Component comp) {
            b.begin_module(ModuleKind::FFN_W1, layer, comp, AttentionRole::None, prefix + ".w1");
            int first = b.add_param(prefix + ".w1", d * dff);
            push_weight(d, dff);
            b.end_module();
            b.begin_module(ModuleKind::FFN_W1, layer, comp, AttentionRole::None, prefix + ".b1");
            b.add_param(prefix + ".b1", dff);
            push_const(1, dff, T(0));
            b.end_module();
            b.begin_module(ModuleKind::FFN_W2, layer, comp, AttentionRole::None, prefix + ".w2");
            b.add_param(prefix + ".w2", dff * d);
            push_weight(dff, d);
            b.end_module();
            b.begin_module(ModuleKind::FFN_W2, layer, comp, AttentionRole::None, prefix + ".b2");
            b.add_param(prefix + ".b2", d);
            push_const(1, d, T(0));
            b.end_module();
            return first;
        };
        auto ln_block = [&](const std::string& prefix, int layer, Component comp) {
            b.begin_module(ModuleKind::LN, layer, comp, AttentionRole::None, prefix);
            int gid = b.add_param(prefix + ".gain", d);
            push_const(1, d, T(1));
            b.add_param(prefix + ".shift", d);
            push_const(1, d, T(0));
            b.end_module();
            return gid;
        };

        b.begin_module(ModuleKind::EMBED, -1, Component::Shared, AttentionRole::None, "embed");
        embed_param_ = b.add_param("embed", v * d);
        push_weight(v, d);
        b.end_module();

        for (int i = 0; i < cfg_.enc_layers; ++i) {
            std::string pre = "enc." + std::to_string(i);
            EncLayer lay;
            lay.attn = attn_block(pre + ".attn", i, Component::Encoder, AttentionRole::Self);
            lay.ffn = ffn_block(pre + ".ffn", i, Component::Encoder);
            lay.ln1 = ln_block(pre + ".ln1", i, Component::Encoder);
            lay.ln2 = ln_block(pre + ".ln2", i, Component::Encoder);
            enc_layers_.push_back(lay);
        }
        for (int i = 0; i < cfg_.dec_layers; ++i) {
            std::string pre = "dec." + std::to_string(i);
            DecLayer lay;
            lay.attn = attn_block(pre + ".self_attn", i, Component::Decoder, AttentionRole::Self);
            lay.cross_attn =
                attn_block(pre + ".cross_attn", i, Component::Decoder, AttentionRole::Cross);
            lay.ffn = ffn_block(pre + ".ffn", i, Component::Decoder);
            lay.ln1 = ln_block(pre + ".ln1", i, Component::Decoder);
            lay.ln2 = ln_block(pre + ".ln2", i, Component::Decoder);
            lay.ln3 = ln_block(pre + ".ln3", i, Component::Decoder);
            dec_layers_.push_back(lay);
        }

        b.begin_module(ModuleKind::OUTPUT_PROJ, -1, Component::Shared, AttentionRole::None,
                       "out_proj");
        out_w_ = b.add_param("out_proj.w", d * v);
        push_weight(d, v);
        out_b_ = b.add_param("out_proj.b", v);
        push_const(1, v, T(0));
        b.end_module();

        reg_ = b.finish();
    }

    ModelConfig cfg_;
    ModuleRegistry reg_;
    std::vector<T> flat_;
    std::vector<ParamShape> shapes_;
    std::vector<EncLayer> enc_layers_;
    std::vector<DecLayer> dec_layers_;
    int embed_param_ = -1, out_w_ = -1, out_b_ = -1;
};

}  // namespace mgcm
