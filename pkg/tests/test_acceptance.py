"""Acceptance criteria.

Each test prints one ``PASS``/``FAIL`` line (visible with ``-s`` or in the
captured output of a failure) and then asserts the same condition.
"""

from __future__ import annotations

import itertools
import random
import time
from importlib.resources import files

import pytest

from perfbridge import stats
from perfbridge.evaluation import (
    DEFAULT_CONFIG,
    evaluate,
    render_evaluation,
)
from perfbridge.graph import (
    DeviationMap,
    GraphMapping,
    propagate_adjustments,
    propagate_bottom_up,
    subsystem_deviation,
)
from perfbridge.perfdata import ComponentId, DependencyGraph, NodeInfo
from perfbridge.qpn import SimConfig, apply_deviation, load_model, model_from_dict, simulate
from perfbridge.stats import DeviationReport
from perfbridge.synth import default_spec, generate_scenario

from oracles import all_paths_weight, pairwise_delta, permutation_p


@pytest.fixture
def line(capsys):
    def emit(n: int, ok: bool, text: str) -> None:
        with capsys.disabled():
            print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'}: {text}")

    return emit


# -- 1 -------------------------------------------------------------------------


def test_criterion_1_statistics_match_enumeration(line):
    rng = random.Random(20240601)
    start = time.perf_counter()
    worst_p = 0.0
    delta_mismatch = 0
    for _ in range(200):
        x = [rng.choice(range(12)) * 0.5 for _ in range(rng.randint(1, 8))]
        y = [rng.choice(range(12)) * 0.5 for _ in range(rng.randint(1, 8))]
        worst_p = max(worst_p, abs(stats.wilcoxon_rank_sum(x, y) - float(permutation_p(x, y))))
        delta_mismatch += stats.cliffs_delta(x, y) != float(pairwise_delta(x, y))
    elapsed = time.perf_counter() - start
    ok = worst_p <= 1e-9 and delta_mismatch == 0 and elapsed < 10
    line(1, ok, f"max |p - p_enum| = {worst_p:.2e}, delta mismatches = {delta_mismatch}, {elapsed:.2f} s")
    assert ok


# -- 2 -------------------------------------------------------------------------


def test_criterion_2_known_values(line):
    p = stats.wilcoxon_rank_sum([1, 2, 3], [4, 5, 6])
    d = stats.cliffs_delta([1, 2], [1, 3])
    ok = p == 0.1 and d == -0.25
    line(2, ok, f"p = {p!r} (want 0.1), delta = {d!r} (want -0.25)")
    assert ok


# -- 3 -------------------------------------------------------------------------


def _single(rate: float, demand: float) -> dict:
    return {
        "places": [{"name": "cpu", "type": "queueing", "subsystem": "S", "service_demand_s": {"r": demand}}],
        "transitions": [{"name": "done", "inputs": [{"place": "cpu", "color": "r"}], "outputs": []}],
        "workload": {"request_classes": [{"name": "r", "arrival_rate_per_s": rate, "class_mix_probability": 1.0, "entry_place": "cpu"}]},
    }


def _tandem(rate: float, s1: float, s2: float) -> dict:
    return {
        "places": [
            {"name": "q1", "type": "queueing", "subsystem": "A", "resource": "cpu_A", "service_demand_s": {"r": s1}},
            {"name": "q2", "type": "queueing", "subsystem": "B", "resource": "cpu_B", "service_demand_s": {"r": s2}},
        ],
        "transitions": [
            {"name": "t1", "inputs": [{"place": "q1", "color": "r"}], "outputs": [{"place": "q2", "color": "r"}]},
            {"name": "t2", "inputs": [{"place": "q2", "color": "r"}], "outputs": []},
        ],
        "workload": {"request_classes": [{"name": "r", "arrival_rate_per_s": rate, "class_mix_probability": 1.0, "entry_place": "q1"}]},
    }


def test_criterion_3_queueing_analytics(line):
    start = time.perf_counter()
    mm1 = simulate(model_from_dict(_single(0.5, 1.0)), SimConfig(duration_s=205_000.0, warmup_s=1_000.0, seed=1))
    rt = mm1.pooled()
    util = next(iter(mm1.utilization.values()))
    mean_s = float(rt.mean()) / 1000.0
    little = mm1.mean_in_system / (mm1.arrival_rate_per_s * mean_s)
    tandem = simulate(model_from_dict(_tandem(0.5, 0.6, 0.8)), SimConfig(duration_s=100_000.0, warmup_s=1_000.0, seed=2))
    tandem_err = max(abs(tandem.utilization["cpu_A"] - 0.3), abs(tandem.utilization["cpu_B"] - 0.4))
    elapsed = time.perf_counter() - start
    ok = (
        rt.size >= 100_000
        and abs(util - 0.5) <= 0.02
        and abs(mean_s - 2.0) <= 0.1
        and tandem_err <= 0.02
        and abs(little - 1.0) <= 0.02
        and elapsed < 60
    )
    line(
        3,
        ok,
        f"M/M/1 n={rt.size} U={util:.4f} R={mean_s:.4f}s L/(lambda R)={little:.4f}; "
        f"tandem max |U - lambda s| = {tandem_err:.4f}; {elapsed:.1f} s",
    )
    assert ok


# -- 4 -------------------------------------------------------------------------


def test_criterion_4_subsystem_update(line):
    b = lambda n: ComponentId("Microservice_B", n)
    g = DependencyGraph(
        {b("B1"): NodeInfo(100.0), b("B2"): NodeInfo(200.0), b("B3"): NodeInfo(20.0)},
        {(b("B1"), b("B3")): 1.0},
    )
    rep = DeviationReport(p_value=0.001, delta=-1.0, magnitude="large", md_ms=200.0, significant=True)
    adjusted = propagate_bottom_up(g, GraphMapping({n: n for n in g.nodes}), DeviationMap({b("B3"): rep}))
    [dev] = subsystem_deviation(g, adjusted)
    model = load_model(files("perfbridge") / "data" / "two_subsystem_model.json")
    before = model.place("Microservice_B").queue.service_demand_s["browse"]
    after = apply_deviation(model, [dev]).place("Microservice_B").queue.service_demand_s["browse"]
    ok = dev.relative_delta == 2 / 3 and before == 0.3 and after == 0.5
    line(4, ok, f"relative_delta = {dev.relative_delta!r}, demand {before!r} -> {after!r}")
    assert ok


# -- 5, 6, 7 -------------------------------------------------------------------


@pytest.fixture(scope="module")
def grid():
    start = time.perf_counter()
    doc = evaluate(generate_scenario(default_spec()), DEFAULT_CONFIG)
    return doc, time.perf_counter() - start


def test_criterion_5_fixed_workload_grid(grid, line):
    doc, elapsed = grid
    s = doc["summary"]
    labels = " ".join(c["outcome"] for c in doc["fixed_workload"])
    ok = s["fixed_cells"] == 9 and s["fixed_agreement"] >= 8 and elapsed < 300
    line(5, ok, f"agreement {s['fixed_agreement']}/{s['fixed_cells']} [{labels}], both grids in {elapsed:.1f} s")
    assert ok


def test_criterion_6_various_workload_grid(grid, line):
    doc, _ = grid
    s = doc["summary"]
    cells = doc["various_workload"]
    has_cpu = all(c["cpu_abs_delta"] for c in cells)
    worst = max(v for c in cells for v in c["cpu_abs_delta"].values())
    ok = s["various_cells"] == 12 and s["various_agreement"] >= 10 and has_cpu
    line(6, ok, f"agreement {s['various_agreement']}/{s['various_cells']}, CPU |Delta| reported in every cell (max {worst:.2f})")
    assert ok


def test_criterion_7_reports_are_reproducible(grid, line):
    doc, _ = grid
    again = evaluate(generate_scenario(default_spec()), DEFAULT_CONFIG)
    same_json = render_evaluation(doc, "json") == render_evaluation(again, "json")
    same_table = render_evaluation(doc, "table") == render_evaluation(again, "table")
    ok = same_json and same_table
    line(7, ok, f"json identical: {same_json}, table identical: {same_table}")
    assert ok


# -- 8 -------------------------------------------------------------------------


def _devmap(mds: dict[ComponentId, float]) -> DeviationMap:
    return DeviationMap(
        {c: DeviationReport(0.001, -1.0 if md > 0 else 1.0, "large", md, True) for c, md in mds.items()}
    )


def test_criterion_8_propagation_properties(line):
    rng = random.Random(8)
    linear_bad = noop_bad = floor_bad = 0
    for _ in range(300):
        n = rng.randint(2, 8)
        ids = [ComponentId("S", f"n{i}") for i in range(n)]
        edges = {
            (ids[i], ids[j]): rng.choice([0.5, 1.0, 2.0, 3.0])
            for i, j in itertools.combinations(range(n), 2)
            if rng.random() < 0.4
        }
        g = DependencyGraph({c: NodeInfo(rng.uniform(50, 100)) for c in ids}, edges)
        ident = GraphMapping({c: c for c in ids})
        chosen = rng.sample(ids, rng.randint(0, n))
        cut = rng.randint(0, len(chosen))
        first = {c: rng.uniform(-2, 2) for c in chosen[:cut]}
        second = {c: rng.uniform(-2, 2) for c in chosen[cut:]}
        base = {t: g.nodes[t].mean_exec_ms for t in g.top_level()}
        a = propagate_adjustments(g, ident, _devmap(first))
        b = propagate_adjustments(g, ident, _devmap(second))
        union = _devmap({**first, **second})
        both = propagate_adjustments(g, ident, union)
        linear_bad += any(abs(both[t] - a[t] - b[t]) > 1e-9 for t in base)
        adjusted = propagate_bottom_up(g, ident, union)
        floor_bad += any(adjusted[t] != max(0.0, base[t] + both[t]) for t in base)
        zero = propagate_bottom_up(g, ident, DeviationMap({}))
        noop_bad += zero != base or subsystem_deviation(g, zero) != []

    c = lambda n: ComponentId("S", n)
    g = DependencyGraph(
        {c("t"): NodeInfo(50.0), c("a"): NodeInfo(10.0), c("b"): NodeInfo(10.0), c("d"): NodeInfo(1.0)},
        {(c("t"), c("a")): 1.0, (c("a"), c("d")): 2.0, (c("t"), c("b")): 2.0, (c("b"), c("d")): 1.0},
    )
    out = propagate_bottom_up(g, GraphMapping({n: n for n in g.nodes}), _devmap({c("d"): 1.0}))
    adj = {}
    for (x, y), w in g.edges.items():
        adj.setdefault(x, []).append((y, w))
    adjustment = out[c("t")] - 50.0
    ok = linear_bad == 0 and noop_bad == 0 and floor_bad == 0 and adjustment == 4.0 == all_paths_weight(adj, c("t"), c("d"))
    line(
        8,
        ok,
        f"linearity failures {linear_bad}/300, no-op failures {noop_bad}/300, "
        f"clamp failures {floor_bad}/300, two-path adjustment {adjustment!r}",
    )
    assert ok
