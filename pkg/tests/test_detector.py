from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import perfbridge.detector as detector
from perfbridge.detector import (
    RegressionVerdict,
    ResponseTimeVerdict,
    build_verdict,
    classify_outcome,
    render_report,
    run_pipeline,
)
from perfbridge.errors import StageError
from perfbridge.qpn import SimConfig, load_model
from perfbridge.stats import DEFAULT_ALPHA
from perfbridge.synth import Injection, default_spec, generate_scenario, inject_slowdown

CFG = SimConfig(duration_s=1500.0, warmup_s=100.0, seed=0)


@pytest.fixture(scope="module")
def scenario():
    return generate_scenario(default_spec())


def _run(sc, updated, config=CFG, **kw):
    return run_pipeline(
        sc.baseline, updated, sc.local_traces, sc.system_traces, sc.model, None, config, **kw
    )


def _verdict(regression: bool, cpu: dict[str, float] | None = None) -> RegressionVerdict:
    mag = "medium" if regression else "negligible"
    rt = ResponseTimeVerdict(1.0, 0.001 if regression else 0.5, -0.4 if regression else 0.0, mag, regression)
    return RegressionVerdict(rt, cpu or {"cpu": 0.0})


# -- pipeline ------------------------------------------------------------------


def test_identical_catalogs_short_circuit(scenario, monkeypatch):
    def boom(*a, **k):
        raise AssertionError("simulation must be skipped")

    monkeypatch.setattr(detector, "simulate", boom)
    v = _run(scenario, scenario.baseline)
    assert not v.overall_regression
    assert v.response_time.mpd_ms == 0.0
    assert v.details["short_circuit"] is True


def test_high_impact_slowdown_regresses(scenario):
    loc = scenario.injection_locations()[0]
    upd = inject_slowdown(scenario.baseline, Injection(loc, 2.50), seed=1)
    v = _run(scenario, upd)
    assert v.overall_regression
    assert v.response_time.magnitude in ("small", "medium", "large")
    assert v.response_time.mpd_ms > 0
    assert v.cpu[f"cpu_{loc.subsystem}"] > 0
    assert [d["subsystem"] for d in v.details["subsystem_deviations"]] == [loc.subsystem]


def test_low_impact_small_slowdown_is_no_regression(scenario):
    loc = scenario.injection_locations()[-1]
    upd = inject_slowdown(scenario.baseline, Injection(loc, 0.10), seed=1)
    assert not _run(scenario, upd).overall_regression


def test_pipeline_is_deterministic(scenario):
    upd = inject_slowdown(scenario.baseline, Injection(scenario.injection_locations()[1], 0.5), seed=2)
    a = render_report(_run(scenario, upd), fmt="json")
    b = render_report(_run(scenario, upd, workers=1), fmt="json")
    assert a == b


def test_direction_consistency(scenario):
    loc = scenario.injection_locations()[1]
    mpds = []
    for seed in range(5):
        upd = inject_slowdown(scenario.baseline, Injection(loc, 0.5), seed=100 + seed)
        v = _run(scenario, upd, SimConfig(duration_s=1500.0, warmup_s=100.0, seed=seed))
        deltas = [d["relative_delta"] for d in v.details["subsystem_deviations"]]
        if deltas and all(d > 0 for d in deltas):
            mpds.append(v.response_time.mpd_ms)
    assert mpds and np.mean(mpds) >= 0


def test_stage_errors_carry_the_stage_name(scenario):
    upd = inject_slowdown(scenario.baseline, Injection(scenario.injection_locations()[0], 2.5), seed=1)
    from importlib.resources import files

    foreign = load_model(files("perfbridge") / "data" / "two_subsystem_model.json")
    with pytest.raises(StageError) as info:
        run_pipeline(
            scenario.baseline, upd, scenario.local_traces, scenario.system_traces, foreign, None, CFG
        )
    assert info.value.stage == "update-model"
    with pytest.raises(StageError) as info:
        run_pipeline(scenario.baseline, upd, scenario.local_traces, [], scenario.model, None, CFG)
    assert info.value.stage == "system-graph"


# -- verdict invariants --------------------------------------------------------


samples = st.lists(st.floats(0.0, 100.0, allow_nan=False), min_size=2, max_size=25)


@settings(max_examples=100, deadline=None)
@given(base=samples, upd=samples, alpha=st.sampled_from([0.01, 0.05, 0.2]))
def test_verdict_invariants(base, upd, alpha):
    v = build_verdict(base, upd, {"cpu": 0.4}, {"cpu": 0.5}, alpha)
    rt = v.response_time
    assert rt.regression == (rt.p_value <= alpha and rt.magnitude != "negligible")
    assert v.overall_regression == rt.regression
    assert rt.mpd_ms == pytest.approx(np.mean(upd) - np.mean(base), abs=1e-9)
    assert v.cpu["cpu"] == pytest.approx(10.0)


# -- outcomes ------------------------------------------------------------------


@pytest.mark.parametrize(
    "oracle,predicted,label",
    [(True, True, "TP"), (False, False, "TN"), (False, True, "FP"), (True, False, "FN")],
)
def test_outcome_labels(oracle, predicted, label):
    assert classify_outcome(_verdict(predicted), _verdict(oracle)).label == label


def test_cpu_abs_delta():
    out = classify_outcome(_verdict(True, {"cpu": 28.82}), _verdict(True, {"cpu": 33.03}))
    assert out.cpu_abs_delta["cpu"] == pytest.approx(4.21, abs=1e-9)


# -- reports -------------------------------------------------------------------


def test_report_with_regression():
    v = _verdict(True, {"cpu_A": 1.0})
    text = render_report(v)
    assert "regression: true" in text
    assert "medium" in text
    doc = json.loads(render_report(v, fmt="json"))
    assert doc["overall_regression"] is True
    assert doc["response_time"]["magnitude"] == "medium"


def test_report_without_oracle_omits_outcome():
    v = _verdict(False)
    assert "Outcome" not in render_report(v)
    out = classify_outcome(v, _verdict(True))
    text = render_report(v, out)
    assert "Outcome" in text and "FN" in text
    assert json.loads(render_report(v, out, fmt="json"))["outcome"]["label"] == "FN"


def test_report_two_resources():
    text = render_report(_verdict(False, {"cpu_A": 1.5, "cpu_B": -0.5}))
    rows = [line for line in text.splitlines() if line.startswith("CPU ")]
    assert len(rows) == 2


def test_report_rejects_unknown_format():
    with pytest.raises(ValueError):
        render_report(_verdict(False), fmt="xml")


def test_default_alpha():
    assert DEFAULT_ALPHA == 0.05


@pytest.mark.parametrize("seed", range(5))
def test_detector_and_oracle_agree_on_extremes(scenario, seed):
    from perfbridge.synth import oracle_end_to_end

    cfg = SimConfig(duration_s=1500.0, warmup_s=100.0, seed=seed)
    loc = scenario.injection_locations()[0]
    for intensity, expected in ((0.0, False), (2.5, True)):
        inj = Injection(loc, intensity)
        upd = inject_slowdown(scenario.baseline, inj, seed=seed + 50)
        assert _run(scenario, upd, cfg).overall_regression is expected
        assert oracle_end_to_end(scenario, inj, config=cfg).overall_regression is expected
