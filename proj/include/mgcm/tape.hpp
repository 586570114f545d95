// SPDX-License-Identifier: Apache-2.0
//
// Tape-based reverse-mode automatic differentiation over dense 2-D tensors.
// One tape per forward pass; backward walks the records in exact reverse
// order, which makes repeated backward calls bitwise reproducible.
#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mgcm/tensor.hpp"

namespace mgcm {

inline constexpr double kLayerNormEps = 1e-5;

using NodeRef = std::size_t;

template <typename T>
class Tape {
public:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;                       // allocated lazily at backward()
        int param_id = -1;                    // >= 0 for trainable leaves
        std::function<void(Tape&, NodeRef)> back;  // empty for leaves
    };

    NodeRef leaf(Tensor<T> v, int param_id = -1) {
        Node n;
        n.value = std::move(v);
        n.param_id = param_id;
        nodes_.push_back(std::move(n));
        return nodes_.size() - 1;
    }

    const Tensor<T>& value(NodeRef r) const { return nodes_[r].value; }
    const Tensor<T>& grad(NodeRef r) const { return nodes_[r].grad; }
    Tensor<T>& grad(NodeRef r) { return nodes_[r].grad; }
    int param_id(NodeRef r) const { return nodes_[r].param_id; }
    std::size_t size() const { return nodes_.size(); }

    // ---- ops ------------------------------------------------------------

    NodeRef matmul(NodeRef a, NodeRef b, bool transpose_b = false) {
        const auto& A = nodes_[a].value;
        const auto& B = nodes_[b].value;
        require_2d("matmul", A);
        require_2d("matmul", B);
        const std::size_t m = A.shape[0], k = A.shape[1];
        const std::size_t kb = transpose_b ? B.shape[1] : B.shape[0];
        const std::size_t n = transpose_b ? B.shape[0] : B.shape[1];
        if (k != kb)
            fail("matmul", "inner dimensions disagree: " + A.shape_str() + " x " + B.shape_str());
        Tensor<T> out({m, n});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                T acc = 0;
                for (std::size_t p = 0; p < k; ++p)
                    acc += A.data[i * k + p] * (transpose_b ? B.data[j * k + p] : B.data[p * n + j]);
                out.data[i * n + j] = acc;
            }
        NodeRef r = leaf(std::move(out));
        nodes_[r].back = [a, b, transpose_b, m, k, n](Tape& t, NodeRef self) {
            const auto& g = t.nodes_[self].grad;
            const auto& A2 = t.nodes_[a].value;
            const auto& B2 = t.nodes_[b].value;
            auto& ga = t.ensure_grad(a);
            auto& gb = t.ensure_grad(b);
            if (!transpose_b) {
                // dA += g * B^T ; dB += A^T * g
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        T acc = 0;
                        for (std::size_t j = 0; j < n; ++j)
                            acc += g.data[i * n + j] * B2.data[p * n + j];
                        ga.data[i * k + p] += acc;
                    }
                for (std::size_t p = 0; p < k; ++p)
                    for (std::size_t j = 0; j < n; ++j) {
                        T acc = 0;
                        for (std::size_t i = 0; i < m; ++i)
                            acc += A2.data[i * k + p] * g.data[i * n + j];
                        gb.data[p * n + j] += acc;
                    }
            } else {
                // C = A * B^T with B [n,k]: dA += g * B ; dB += g^T * A
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        T acc = 0;
                        for (std::size_t j = 0; j < n; ++j)
                            acc += g.data[i * n + j] * B2.data[j * k + p];
                        ga.data[i * k + p] += acc;
                    }
                for (std::size_t j = 0; j < n; ++j)
                    for (std::size_t p = 0; p < k; ++p) {
                        T acc = 0;
                        for (std::size_t i = 0; i < m; ++i)
                            acc += g.data[i * n + j] * A2.data[i * k + p];
                        gb.data[j * k + p] += acc;
                    }
            }
        };
        return r;
    }

    /// Elementwise add; also accepts b as a [1,n] bias row-broadcast over a [m,n].
    NodeRef add(NodeRef a, NodeRef b) {
        const auto& A = nodes_[a].value;
        const auto& B = nodes_[b].value;
        require_2d("add", A);
        require_2d("add", B);
        const bool broadcast = (B.shape[0] == 1 && A.shape[1] == B.shape[1] && A.shape[0] != 1);
        if (!broadcast && A.shape != B.shape)
            fail("add", "shape mismatch: " + A.shape_str() + " vs " + B.shape_str());
        Tensor<T> out = A;
        const std::size_t n = A.shape[1];
        for (std::size_t i = 0; i < A.shape[0]; ++i)
            for (std::size_t j = 0; j < n; ++j)
                out.data[i * n + j] += broadcast ? B.data[j] : B.data[i * n + j];
        NodeRef r = leaf(std::move(out));
        nodes_[r].back = [a, b, broadcast, n](Tape& t, NodeRef self) {
            const auto& g = t.nodes_[self].grad;
            auto& ga = t.ensure_grad(a);
            auto& gb = t.ensure_grad(b);
            for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
            if (broadcast) {
                for (std::size_t i = 0; i < g.data.size(); ++i) gb.data[i % n] += g.data[i];
            } else {
                for (std::size_t i = 0; i < g.data.size(); ++i) gb.data[i] += g.data[i];
            }
        };
        return r;
    }

    NodeRef scale(NodeRef a, T c) {
        Tensor<T> out = nodes_[a].value;
        for (auto& x : out.data) x *= c;
        NodeRef r = leaf(std::move(out));
        nodes_[r].back = [a, c](Tape& t, NodeRef self) {
            const auto& g = t.nodes_[self].grad;
            auto& ga = t.ensure_grad(a);
            for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += c * g.data[i];
        };
        return r;
    }

    NodeRef relu(NodeRef a) {
        Tensor<T> out = nodes_[a].value;
        for (auto& x : out.data) x = x > T(0) ? x : T(0);
        NodeRef r = leaf(std::move(out));
        nodes_[r].back = [a](Tape& t, NodeRef self) {
            const auto& g = t.nodes_[self].grad;
            const auto& in = t.nodes_[a].value;
            auto& ga = t.ensure_grad(a);
            for (std::size_t i = 0; i < g.data.size(); ++i)
                if (in.data[i] > T(0)) ga.data[i] += g.data[i];
        };
        return r;
    }

    NodeRef gelu(NodeRef a) {
        const T inv_sqrt2 = T(0.7071067811865475);
        Tensor<T> out = nodes_[a].value;
        for (auto& x : out.data)
            x = T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2));
        NodeRef r = leaf(std::move(out));
        nodes_[r].back = [a, inv_sqrt2](Tape& t, NodeRef self) {
            const T inv_sqrt2pi = T(0.3989422804014327);
            const auto& g = t.nodes_[self].grad;
            const auto& in = t.nodes_[a].value;
            auto& ga = t.ensure_grad(a);
            for (std::size_t i = 0; i < g.data.size(); ++i) {
                T x = in.data[i];
                T phi = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
                T pdf = std::exp(T(-0.5) * x * x) * inv_sqrt2pi;
                ga.data[i] += g.data[i] * (phi + x * pdf);
            }
        };
        return r;
    }

    /// Row gather: table [vocab, d], ids in [0, vocab) -> [ids.size(), d].
    NodeRef embedding_lookup(NodeRef table, const std::vector<int>& ids) {
        const auto& Tb = nodes_[table].value;
        require_2d("embedding_lookup", Tb);
        const std::size_t v = Tb.shape[0], d = Tb.shape[1];
        for (int id : ids)
            if (id < 0 || static_cast<std::size_t>(id) >= v)
                fail("embedding_lookup", "token id " + std::to_string(id) + " outside vocab " +
                                             std::to_string(v));
        Tensor<T> out({ids.size(), d});
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t j = 0; j < d; ++j)
                out.data[i * d + j] = Tb.data[static_cast<std::size_t>(ids[i]) * d + j];
        NodeRef r = leaf(std::move(out));
        nodes_[r].back = [table, ids, d](Tape& t, NodeRef self) {
            const auto& g = t.nodes_[self].grad;
            auto& gt = t.ensure_grad(table);
            for (std::size_t i = 0; i < ids.size(); ++i)
                for (std::size_t j = 0; j < d; ++j)
                    gt.data[static_cast<std::size_t>(ids[i]) * d + j] += g.data[i * d + j];
        };
        return r;
    }

    /// Per-row normalization with learned gain/shift ([1,d] each).
    NodeRef layer_norm(NodeRef x, NodeRef gain, NodeRef shift) {
        const auto& X = nodes_[x].value;
        const auto& G = nodes_[gain].value;
        const auto& S = nodes_[shift].value;
        require_2d("layer_norm", X);
        const std::size_t m = X.shape[0], d = X.shape[1];
        if (G.shape != std::vector<std::size_t>{1, d} || S.shape != std::vector<std::size_t>{1, d})
            fail("layer_norm", "gain/shift must be [1," + std::to_string(d) + "], got " +
                                   G.shape_str() + " and " + S.shape_str());
        Tensor<T> out({m, d});
        std::vector<T> xhat(m * d), inv_sigma(m);
        for (std::size_t i = 0; i < m; ++i) {
            T mean = 0;
            for (std::size_t j = 0; j < d; ++j) mean += X.data[i * d + j];
            mean /= T(d);
            T var = 0;
            for (std::size_t j = 0; j < d; ++j) {
                T c = X.data[i * d + j] - mean;
                var += c * c;
            }
            var /= T(d);
            T is = T(1) / std::sqrt(var + T(kLayerNormEps));
            inv_sigma[i] = is;
            for (std::size_t j = 0; j < d; ++j) {
                T xh = (X.data[i * d + j] - mean) * is;
                xhat[i * d + j] = xh;
                out.data[i * d + j] = xh * G.data[j] + S.data[j];
            }
        }
        NodeRef r = leaf(std::move(out));
        nodes_[r].back = [x, gain, shift, m, d, xhat = std::move(xhat),
                          inv_sigma = std::move(inv_sigma)](Tape& t, NodeRef self) {
            const auto& g = t.nodes_[self].grad;
            const auto& G2 = t.nodes_[gain].value;
            auto& gx = t.ensure_grad(x);
            auto& gg = t.ensure_grad(gain);
            auto& gs = t.ensure_grad(shift);
            for (std::size_t i = 0; i < m; ++i) {
                T sum_dyg = 0, sum_dyg_xh = 0;
                for (std::size_t j = 0; j < d; ++j) {
                    T dyg = g.data[i * d + j] * G2.data[j];
                    sum_dyg += dyg;
                    sum_dyg_xh += dyg * xhat[i * d + j];
                    gg.data[j] += g.data[i * d + j] * xhat[i * d + j];
                    gs.data[j] += g.data[i * d + j];
                }
                for (std::size_t j = 0; j < d; ++j) {
                    T dyg = g.data[i * d + j] * G2.data[j];
                    gx.data[i * d + j] += inv_sigma[i] *
                        (dyg - sum_dyg / T(d) - xhat[i * d + j] * sum_dyg_xh / T(d));
                }
            }
        };
        return r;
    }

    /// Row-wise softmax with max subtraction.
    NodeRef softmax(NodeRef x) {
        const auto& X = nodes_[x].value;
        require_2d("softmax", X);
        const std::size_t m = X.shape[0], d = X.shape[1];
        Tensor<T> out({m, d});
        for (std::size_t i = 0; i < m; ++i) {
            T mx = X.data[i * d];
            for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, X.data[i * d + j]);
            T z = 0;
            for (std::size_t j = 0; j < d; ++j) {
                T e = std::exp(X.data[i * d + j] - mx);
                out.data[i * d + j] = e;
                z += e;
            }
            for (std::size_t j = 0; j < d; ++j) out.data[i * d + j] /= z;
        }
        NodeRef r = leaf(std::move(out));
        nodes_[r].back = [x, m, d](Tape& t, NodeRef self) {
            const auto& g = t.nodes_[self].grad;
            const auto& y = t.nodes_[self].value;
            auto& gx = t.ensure_grad(x);
            for (std::size_t i = 0; i < m; ++i) {
                T dot = 0;
                for (std::size_t j = 0; j < d; ++j) dot += g.data[i * d + j] * y.data[i * d + j];
                for (std::size_t j = 0; j < d; ++j)
                    gx.data[i * d + j] += y.data[i * d + j] * (g.data[i * d + j] - dot);
            }
        };
        return r;
    }

    /// softmax(Q K^T / sqrt(d)) V, recorded as primitive nodes.
    NodeRef scaled_dot_attention(NodeRef q, NodeRef k, NodeRef v) {
        const auto& Q = nodes_[q].value;
        const auto& K = nodes_[k].value;
        const auto& V = nodes_[v].value;
        require_2d("scaled_dot_attention", Q);
        if (Q.shape[1] != K.shape[1] || K.shape[0] != V.shape[0])
            fail("scaled_dot_attention", "incompatible shapes: Q" + Q.shape_str() + " K" +
                                             K.shape_str() + " V" + V.shape_str());
        NodeRef scores = scale(matmul(q, k, /*transpose_b=*/true),
                               T(1) / std::sqrt(T(Q.shape[1])));
        return matmul(softmax(scores), v);
    }

    /// Mean negative log-likelihood over rows, log-sum-exp stabilized.
    NodeRef cross_entropy_loss(NodeRef logits, const std::vector<int>& targets) {
        const auto& L = nodes_[logits].value;
        require_2d("cross_entropy_loss", L);
        const std::size_t m = L.shape[0], v = L.shape[1];
        if (targets.size() != m)
            fail("cross_entropy_loss", "target count " + std::to_string(targets.size()) +
                                           " != rows " + std::to_string(m));
        for (int tgt : targets)
            if (tgt < 0 || static_cast<std::size_t>(tgt) >= v)
                fail("cross_entropy_loss", "target " + std::to_string(tgt) + " outside vocab");
        std::vector<T> probs(m * v);
        T loss = 0;
        for (std::size_t i = 0; i < m; ++i) {
            T mx = L.data[i * v];
            for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, L.data[i * v + j]);
            T z = 0;
            for (std::size_t j = 0; j < v; ++j) {
                T e = std::exp(L.data[i * v + j] - mx);
                probs[i * v + j] = e;
                z += e;
            }
            for (std::size_t j = 0; j < v; ++j) probs[i * v + j] /= z;
            loss += (mx + std::log(z)) - L.data[i * v + static_cast<std::size_t>(targets[i])];
        }
        loss /= T(m);
        NodeRef r = leaf(Tensor<T>({1, 1}, {loss}));
        nodes_[r].back = [logits, targets, m, v, probs = std::move(probs)](Tape& t, NodeRef self) {
            const T g0 = t.nodes_[self].grad.data[0];
            auto& gl = t.ensure_grad(logits);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < v; ++j) {
                    T p = probs[i * v + j];
                    if (j == static_cast<std::size_t>(targets[i])) p -= T(1);
                    gl.data[i * v + j] += g0 * p / T(m);
                }
        };
        return r;
    }

    NodeRef reshape(NodeRef a, std::vector<std::size_t> shape) {
        const auto& A = nodes_[a].value;
        if (Tensor<T>::numel_of(shape) != A.numel())
            fail("reshape", "element count mismatch for " + A.shape_str());
        Tensor<T> out(shape, A.data);
        NodeRef r = leaf(std::move(out));
        nodes_[r].back = [a](Tape& t, NodeRef self) {
            const auto& g = t.nodes_[self].grad;
            auto& ga = t.ensure_grad(a);
            for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
        };
        return r;
    }

    NodeRef slice_cols(NodeRef a, std::size_t c0, std::size_t c1) {
        const auto& A = nodes_[a].value;
        require_2d("slice_cols", A);
        if (c0 >= c1 || c1 > A.shape[1])
            fail("slice_cols", "bad column range on " + A.shape_str());
        const std::size_t m = A.shape[0], n = A.shape[1], w = c1 - c0;
        Tensor<T> out({m, w});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j)
                out.data[i * w + j] = A.data[i * n + c0 + j];
        NodeRef r = leaf(std::move(out));
        nodes_[r].back = [a, c0, m, n, w](Tape& t, NodeRef self) {
            const auto& g = t.nodes_[self].grad;
            auto& ga = t.ensure_grad(a);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < w; ++j)
                    ga.data[i * n + c0 + j] += g.data[i * w + j];
        };
        return r;
    }

    NodeRef concat_cols(const std::vector<NodeRef>& parts) {
        if (parts.empty()) fail("concat_cols", "no inputs");
        const std::size_t m = nodes_[parts[0]].value.shape[0];
        std::size_t total = 0;
        for (NodeRef p : parts) {
            const auto& P = nodes_[p].value;
            require_2d("concat_cols", P);
            if (P.shape[0] != m) fail("concat_cols", "row mismatch " + P.shape_str());
            total += P.shape[1];
        }
        Tensor<T> out({m, total});
        std::size_t off = 0;
        std::vector<std::size_t> offsets;
        for (NodeRef p : parts) {
            const auto& P = nodes_[p].value;
            offsets.push_back(off);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < P.shape[1]; ++j)
                    out.data[i * total + off + j] = P.data[i * P.shape[1] + j];
            off += P.shape[1];
        }
        NodeRef r = leaf(std::move(out));
        nodes_[r].back = [parts, offsets, m, total](Tape& t, NodeRef self) {
            const auto& g = t.nodes_[self].grad;
            for (std::size_t pi = 0; pi < parts.size(); ++pi) {
                auto& gp = t.ensure_grad(parts[pi]);
                const std::size_t w = gp.shape[1];
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < w; ++j)
                        gp.data[i * w + j] += g.data[i * total + offsets[pi] + j];
            }
        };
        return r;
    }

    // ---- backward -------------------------------------------------------

    /// Seeds d(loss)/d(loss)=1 and walks the tape backwards. Loss must be scalar.
    void backward(NodeRef loss) {
        if (nodes_[loss].value.numel() != 1)
            throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                        nodes_[loss].value.shape_str());
        for (auto& n : nodes_) {
            n.grad = Tensor<T>(n.value.shape);
        }
        nodes_[loss].grad.data[0] = T(1);
        for (std::size_t i = loss + 1; i-- > 0;) {
            if (nodes_[i].back) nodes_[i].back(*this, i);
        }
    }

private:
    Tensor<T>& ensure_grad(NodeRef r) { return nodes_[r].grad; }

    static void require_2d(const char* op, const Tensor<T>& t) {
        if (t.shape.size() != 2)
            fail(op, "expected rank-2 tensor, got " + t.shape_str());
    }

    [[noreturn]] static void fail(const std::string& op, const std::string& msg) {
        throw std::invalid_argument(op + ": " + msg);
    }

    std::vector<Node> nodes_;
};

}  // namespace mgcm
