// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <random>

#include "mgcm/telemetry.hpp"
#include "mgcm/transformer.hpp"

using namespace mgcm;

namespace {

ConflictEvent event(long step, int module_id, int aux, bool conflict) {
    ConflictEvent e;
    e.step_index = step;
    e.module_id = module_id;
    e.auxiliary_index = aux;
    e.dot = conflict ? -1.0 : 1.0;
    e.cosine = conflict ? -0.5 : 0.5;
    e.conflict = conflict;
    e.action = conflict ? ConflictAction::Projected : ConflictAction::None;
    return e;
}

ModuleRegistry qk_registry() {
    RegistryBuilder b;
    b.begin_module(ModuleKind::ATTN_Q, 0, Component::Encoder, AttentionRole::Self, "q");
    b.add_param("q", 2);
    b.end_module();
    b.begin_module(ModuleKind::ATTN_K, 0, Component::Encoder, AttentionRole::Self, "k");
    b.add_param("k", 2);
    b.end_module();
    b.begin_module(ModuleKind::EMBED, -1, Component::Shared, AttentionRole::None, "embed");
    b.add_param("embed", 2);
    b.end_module();
    return b.finish();
}

}  // namespace

TEST_CASE("conflict counting over steps") {
    ConflictStats stats;
    for (long s = 0; s < 10; ++s) stats.record_step({event(s, 0, 0, s < 5)});
    CHECK(stats.probability(0, 0) == doctest::Approx(0.5));
    CHECK_FALSE(stats.probability(1, 0).has_value());  // never observed -> absent
    CHECK(stats.steps_recorded() == 10);
}

TEST_CASE("duplicate pair within a step is rejected") {
    ConflictStats stats;
    CHECK_THROWS_AS(stats.record_step({event(0, 0, 0, true), event(0, 0, 0, false)}),
                    std::invalid_argument);
}

TEST_CASE("report pools counts, not probabilities") {
    auto reg = qk_registry();
    ConflictStats stats;
    for (long s = 0; s < 10; ++s)
        stats.record_step({event(s, 0, 0, true), event(s, 1, 0, false), event(s, 2, 0, true)});
    auto rows = conflict_probability_report(stats, reg, GroupBy::Kind, /*taxonomy_only=*/true);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].group == "Attn");
    CHECK(rows[0].steps == 20);
    CHECK(rows[0].probability == doctest::Approx(0.5));  // (10+0)/(10+10)

    auto with_embed = conflict_probability_report(stats, reg, GroupBy::Kind, false);
    CHECK(with_embed.size() == 2);

    ConflictStats empty;
    CHECK_THROWS_AS(conflict_probability_report(empty, reg, GroupBy::Kind), std::invalid_argument);
}

TEST_CASE("layer grouping numbers encoder then decoder") {
    ToyTransformer<double> model({2, 2, 2, 8, 16, 8}, 1);
    const auto& reg = model.registry();
    ConflictStats stats;
    std::vector<ConflictEvent> evs;
    for (const auto& m : reg.modules) evs.push_back(event(0, m.module_id, 0, false));
    stats.record_step(evs);
    auto rows = conflict_probability_report(stats, reg, GroupBy::Layer, true);
    std::vector<std::string> groups;
    for (const auto& r : rows) groups.push_back(r.group);
    CHECK(std::find(groups.begin(), groups.end(), "1") != groups.end());
    CHECK(std::find(groups.begin(), groups.end(), "4") != groups.end());  // decoder layer 2
    CHECK(std::find(groups.begin(), groups.end(), "none") == groups.end());
}

TEST_CASE("recount from exported CSV matches online counters") {
    std::mt19937_64 rng(5);
    auto reg = qk_registry();
    ConflictStats online;
    std::vector<ConflictEvent> all;
    for (long s = 0; s < 50; ++s) {
        std::vector<ConflictEvent> evs{event(s, 0, 0, rng() & 1), event(s, 1, 0, rng() & 1),
                                       event(s, 2, 0, rng() & 1)};
        online.record_step(evs);
        all.insert(all.end(), evs.begin(), evs.end());
    }
    auto path = (std::filesystem::temp_directory_path() / "mgcm_events_test.csv").string();
    write_events_csv(path, all, reg);
    auto recounted = recount_from_events(read_events_csv(path));
    for (const auto& [key, cell] : online.cells()) {
        auto it = recounted.cells().find(key);
        REQUIRE(it != recounted.cells().end());
        CHECK(it->second.steps_observed == cell.steps_observed);
        CHECK(it->second.conflicts_observed == cell.conflicts_observed);
    }
    std::remove(path.c_str());
}

TEST_CASE("masking detection on the worked example") {
    RegistryBuilder b;
    b.begin_module(ModuleKind::FFN_W1, 0, Component::Encoder, AttentionRole::None, "enc");
    b.add_param("enc", 2);
    b.end_module();
    b.begin_module(ModuleKind::FFN_W1, 0, Component::Decoder, AttentionRole::None, "dec");
    b.add_param("dec", 2);
    b.end_module();
    auto reg = b.finish();

    TaskGradientSet<double> ts;
    ts.primary = {{0.5, 0.4, 0.7, 0.4}, "p"};
    ts.auxiliaries.push_back({{0.9, 0.8, -0.9, 0.7}, "a"});
    auto records = detect_masking(ts, reg);
    REQUIRE(records.size() == 1);
    CHECK(records[0].model_dot == doctest::Approx(0.42).epsilon(1e-12));
    CHECK(records[0].conflicting_module_ids == std::vector<int>{1});

    TaskGradientSet<double> same;
    same.primary = ts.primary;
    same.auxiliaries.push_back(ts.primary);
    CHECK(detect_masking(same, reg).empty());

    TaskGradientSet<double> anti;
    anti.primary = ts.primary;
    anti.auxiliaries.push_back({{-0.5, -0.4, -0.7, -0.4}, "a"});
    CHECK(detect_masking(anti, reg).empty());  // visible conflict, not masked
}

TEST_CASE("memory model reproduces the reference table") {
    struct Row {
        double params, pcgrad_gb, mgcm_gb, saving_pct;
    };
    // reference: extra GPU memory for 0.2/0.5/1.0 B parameters at 4 bytes
    const Row rows[] = {{0.2e9, 3.77, 0.20, 94.69},
                        {0.5e9, 9.41, 0.48, 94.90},
                        {1.0e9, 18.81, 0.95, 94.95}};
    for (const auto& r : rows) {
        auto pc = estimate_extra_memory(StrategyKind::PcgradModel,
                                        static_cast<std::size_t>(r.params), 4);
        auto mg =
            estimate_extra_memory(StrategyKind::Mgcm, static_cast<std::size_t>(r.params), 4);
        CHECK(std::fabs(pc.extra_bytes / 1e9 - r.pcgrad_gb) / r.pcgrad_gb < 0.15);
        CHECK(std::fabs(mg.extra_bytes / 1e9 - r.mgcm_gb) / r.mgcm_gb < 0.15);
        double saving = (1.0 - mg.ratio_vs_pcgrad) * 100.0;
        CHECK(std::fabs(saving - r.saving_pct) < 0.6);
    }
    // asymptotic ratio
    auto big = estimate_extra_memory(StrategyKind::Mgcm, 100000000000ull, 4);
    CHECK(big.ratio_vs_pcgrad == doctest::Approx(0.05).epsilon(0.005));
}

TEST_CASE("memory model edge behaviour") {
    CHECK(estimate_extra_memory(StrategyKind::Sum, 1000, 4).extra_bytes == 0.0);
    CHECK(estimate_extra_memory(StrategyKind::Discard, 1000000, 4).extra_bytes ==
          estimate_extra_memory(StrategyKind::Mgcm, 1000000, 4).extra_bytes);
    CHECK_THROWS_AS(estimate_extra_memory(StrategyKind::Mgcm, 0, 4), std::invalid_argument);
    CHECK_THROWS_AS(estimate_extra_memory(StrategyKind::Mgcm, 10, 3), std::invalid_argument);

    // strictly increasing in parameter count, ratio below 0.06 at scale
    double prev_pc = 0, prev_mg = 0;
    for (std::size_t p = 100000000ull; p <= 400000000ull; p += 100000000ull) {
        auto pc = estimate_extra_memory(StrategyKind::PcgradModel, p, 4);
        auto mg = estimate_extra_memory(StrategyKind::Mgcm, p, 4);
        CHECK(pc.extra_bytes > prev_pc);
        CHECK(mg.extra_bytes > prev_mg);
        CHECK(mg.ratio_vs_pcgrad < 0.06);
        prev_pc = pc.extra_bytes;
        prev_mg = mg.extra_bytes;
    }
}

TEST_CASE("permutation test ties on identical inputs") {
    std::vector<double> a{1.0, 2.0, 3.0, 4.0};
    CHECK(paired_permutation_test(a, a, 1000, 1) == doctest::Approx(1.0));
}

TEST_CASE("permutation test input validation") {
    CHECK_THROWS_AS(paired_permutation_test({1.0, 2.0}, {1.0}, 1000, 1), std::invalid_argument);
    CHECK_THROWS_AS(paired_permutation_test({1.0, 2.0}, {1.0, 2.0}, 10, 1),
                    std::invalid_argument);
    CHECK_THROWS_AS(paired_permutation_test({1.0}, {1.0}, 1000, 1), std::invalid_argument);
}

TEST_CASE("permutation test matches the exhaustive small-n oracle") {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const std::size_t n = 10;
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
        a[i] = gauss(rng) + 0.4;
        b[i] = gauss(rng);
    }
    std::vector<double> diff(n);
    double mean = 0;
    for (std::size_t i = 0; i < n; ++i) {
        diff[i] = a[i] - b[i];
        mean += diff[i];
    }
    mean = std::fabs(mean / static_cast<double>(n));

    long hits = 0;
    const long total = 1L << n;
    for (long mask = 0; mask < total; ++mask) {
        double m = 0;
        for (std::size_t i = 0; i < n; ++i)
            m += (mask >> i) & 1 ? diff[i] : -diff[i];
        if (std::fabs(m / static_cast<double>(n)) >= mean - 1e-15) ++hits;
    }
    double exact = static_cast<double>(hits) / static_cast<double>(total);
    double estimated = paired_permutation_test(a, b, 100000, 4);
    CHECK(std::fabs(estimated - exact) < 0.02);
}

TEST_CASE("permutation test detects a shift") {
    std::mt19937_64 rng(13);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> a(100), b(100);
    for (std::size_t i = 0; i < 100; ++i) {
        a[i] = gauss(rng);
        b[i] = a[i] + 1.0;
    }
    CHECK(paired_permutation_test(a, b, 10000, 2) < 0.01);
}

TEST_CASE("permutation test is deterministic for a seed") {
    std::vector<double> a{1.0, 2.5, 0.5, 3.0, 1.5, 0.2};
    std::vector<double> b{0.9, 2.0, 1.0, 2.0, 1.0, 0.5};
    double p1 = paired_permutation_test(a, b, 2000, 77);
    double p2 = paired_permutation_test(a, b, 2000, 77);
    CHECK(p1 == p2);
    CHECK(p1 > 0.0);
    CHECK(p1 <= 1.0);
}
