// SPDX-License-Identifier: Apache-2.0
#include "mgcm/benchmark.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

namespace mgcm {

BenchmarkMode benchmark_mode_from_string(const std::string& s) {
    if (s == "seq_triplet") return BenchmarkMode::SeqTriplet;
    if (s == "engineered_regression") return BenchmarkMode::EngineeredRegression;
    throw std::invalid_argument("unknown benchmark mode '" + s +
                                "' (want seq_triplet|engineered_regression)");
}

const char* to_string(BenchmarkMode m) {
    return m == BenchmarkMode::SeqTriplet ? "seq_triplet" : "engineered_regression";
}

void BenchmarkSpec::validate() const {
    if (seq_len < 2)
        throw std::invalid_argument("BenchmarkSpec: seq_len must be >= 2, got " +
                                    std::to_string(seq_len));
    if (vocab_size < 4)
        throw std::invalid_argument("BenchmarkSpec: vocab_size must be >= 4, got " +
                                    std::to_string(vocab_size));
    if (dataset_size < 1)
        throw std::invalid_argument("BenchmarkSpec: dataset_size must be >= 1");
    if (conflict_knob < 0.0 || conflict_knob > 1.0)
        throw std::invalid_argument("BenchmarkSpec: conflict_knob must be in [0,1]");
}

Dataset generate_benchmark(const BenchmarkSpec& spec) {
    spec.validate();
    Dataset d;
    d.spec = spec;
    std::mt19937_64 rng(spec.seed);

    if (spec.mode == BenchmarkMode::SeqTriplet) {
        // Token 0 is reserved as BOS; content tokens live in [1, vocab).
        std::vector<int> perm(static_cast<std::size_t>(spec.vocab_size));
        for (int i = 0; i < spec.vocab_size; ++i) perm[static_cast<std::size_t>(i)] = i;
        std::shuffle(perm.begin() + 1, perm.end(), rng);
        std::uniform_int_distribution<int> tok(1, spec.vocab_size - 1);
        for (int s = 0; s < spec.dataset_size; ++s) {
            std::vector<int> src(static_cast<std::size_t>(spec.seq_len));
            for (auto& t : src) t = tok(rng);
            std::vector<int> prim(src.size()), rev(src.rbegin(), src.rend());
            for (std::size_t i = 0; i < src.size(); ++i)
                prim[i] = perm[static_cast<std::size_t>(src[i])];
            d.tgt_aux1.push_back(src);
            d.tgt_aux2.push_back(std::move(rev));
            d.tgt_primary.push_back(std::move(prim));
            d.src.push_back(std::move(src));
        }
        return d;
    }

    // engineered_regression: teachers agree everywhere except the designated
    // block, where the aux1 teacher is interpolated toward the primary's
    // negation by conflict_knob.
    const int p = d.input_dim();
    const int block = spec.seq_len;
    std::normal_distribution<double> gauss(0.0, 1.0);
    d.teacher_primary.resize(static_cast<std::size_t>(p));
    for (auto& v : d.teacher_primary) v = gauss(rng);
    d.teacher_aux1 = d.teacher_primary;
    d.teacher_aux2 = d.teacher_primary;
    const int j0 = kEngineeredDesignatedBlock * block;
    for (int j = j0; j < j0 + block; ++j)
        d.teacher_aux1[static_cast<std::size_t>(j)] *= 1.0 - 2.0 * spec.conflict_knob;

    for (int s = 0; s < spec.dataset_size; ++s) {
        std::vector<double> x(static_cast<std::size_t>(p));
        for (auto& v : x) v = gauss(rng);
        std::array<double, 3> y{0.0, 0.0, 0.0};
        for (int j = 0; j < p; ++j) {
            y[0] += d.teacher_primary[static_cast<std::size_t>(j)] * x[static_cast<std::size_t>(j)];
            y[1] += d.teacher_aux1[static_cast<std::size_t>(j)] * x[static_cast<std::size_t>(j)];
            y[2] += d.teacher_aux2[static_cast<std::size_t>(j)] * x[static_cast<std::size_t>(j)];
        }
        d.x.push_back(std::move(x));
        d.y.push_back(y);
    }
    return d;
}

}  // namespace mgcm
