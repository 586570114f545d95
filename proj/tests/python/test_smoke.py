# SPDX-License-Identifier: Apache-2.0
"""Smoke tests for the native extension."""
import json

import mgcm_core as m


def test_worked_example_dots():
    gp = [0.5, 0.4, 0.7, 0.4]
    ga = [0.9, 0.8, -0.9, 0.7]
    dot, _cos = m.cos_sim(gp, ga)
    assert abs(dot - 0.42) < 1e-12
    assert abs(m.cos_sim(gp[:2], ga[:2])[0] - 0.77) < 1e-12
    assert abs(m.cos_sim(gp[2:], ga[2:])[0] + 0.35) < 1e-12


def test_projection_is_orthogonal():
    gp = [0.7, 0.4]
    ga = [-0.9, 0.7]
    r = m.project(ga, gp)
    assert abs(sum(x * y for x, y in zip(r, gp))) < 1e-12


def test_module_level_combine_flags_one_conflict():
    reg = m.registry_from_spans([2, 2])
    total, events = m.combine_mgcm([0.5, 0.4, 0.7, 0.4],
                                   [[0.9, 0.8, -0.9, 0.7]], reg)
    assert sum(1 for e in events if e["conflict"]) == 1
    assert abs(total[0] - 1.4) < 1e-12
    assert abs(total[1] - 1.2) < 1e-12


def test_memory_model():
    est = m.estimate_extra_memory("pcgrad", 200_000_000, 4)
    assert abs(est["extra_bytes"] / 1e9 - 3.77) / 3.77 < 0.15
    est = m.estimate_extra_memory("mgcm", 200_000_000, 4)
    assert est["ratio_vs_pcgrad"] < 0.06


def test_permutation_test_identity():
    assert m.paired_permutation_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], 2000, 1) == 1.0


def test_train_run_smoke():
    cfg = {
        "data": {"mode": "engineered_regression", "seq_len": 4,
                 "dataset_size": 16, "conflict_knob": 0.8, "seed": 1},
        "train": {"strategy": "mgcm", "steps": 20, "batch_size": 4,
                  "lr": 0.05, "seed": 1, "precision": "f64"},
    }
    out = json.loads(m.train_run(json.dumps(cfg)))
    assert out["steps_run"] == 20
    assert out["final_primary_loss"] < out["initial_primary_loss"]
