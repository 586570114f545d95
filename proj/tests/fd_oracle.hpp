// SPDX-License-Identifier: Apache-2.0
//
// Test-only central-finite-difference gradient oracle. Rebuilds the graph
// from scratch for every probe, so it stays independent of the tape's
// backward rules.
#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "mgcm/tape.hpp"

namespace mgcm::testing {

// Builds a scalar function of the flat input tensors and returns its value.
using ScalarFn =
    std::function<double(Tape<double>&, const std::vector<NodeRef>& inputs)>;

struct FdCheck {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
};

inline double rel_error(double a, double b) {
    return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-8});
}

/// Compares backward() against central differences (h = 1e-4) for every
/// element of every input tensor.
inline FdCheck check_gradients(std::vector<Tensor<double>> inputs, const ScalarFn& fn,
                               double h = 1e-4) {
    auto eval = [&](const std::vector<Tensor<double>>& ins) {
        Tape<double> tape;
        std::vector<NodeRef> refs;
        for (const auto& t : ins) refs.push_back(tape.leaf(t));
        NodeRef out = fn(tape, refs);
        return tape.value(out).data[0];
    };

    Tape<double> tape;
    std::vector<NodeRef> refs;
    for (const auto& t : inputs) refs.push_back(tape.leaf(t));
    NodeRef out = fn(tape, refs);
    tape.backward(out);

    FdCheck result;
    for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
        for (std::size_t i = 0; i < inputs[ti].data.size(); ++i) {
            auto plus = inputs, minus = inputs;
            plus[ti].data[i] += h;
            minus[ti].data[i] -= h;
            double fd = (eval(plus) - eval(minus)) / (2.0 * h);
            double an = tape.grad(refs[ti]).data[i];
            result.max_rel_error = std::max(result.max_rel_error, rel_error(fd, an));
            ++result.checked;
        }
    }
    return result;
}

inline Tensor<double> random_tensor(std::mt19937_64& rng, std::size_t rows, std::size_t cols,
                                    double lo = -2.0, double hi = 2.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor<double> t({rows, cols});
    for (auto& v : t.data) v = dist(rng);
    return t;
}

/// Weighted sum against a fixed weight column, to reduce any output to a
/// scalar. The weights must be drawn once, outside the rebuilt function.
inline NodeRef weighted_sum(Tape<double>& tape, NodeRef x, const Tensor<double>& w) {
    const std::size_t n = tape.value(x).numel();  // copy: leaf() may reallocate nodes
    NodeRef row = tape.reshape(x, {1, n});
    return tape.matmul(row, tape.leaf(w));
}

}  // namespace mgcm::testing
