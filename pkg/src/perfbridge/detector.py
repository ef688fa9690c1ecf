"""End-to-end regression detection: local deviations to system-level verdict."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .errors import PerfBridgeError, StageError
from .graph import (
    DeviationMap,
    extract_deviation_subgraph,
    map_to_system_graph,
    propagate_bottom_up,
    subsystem_deviation,
)
from .perfdata import MeasurementCatalog, TraceEvent, build_dependency_graph
from .qpn import QpnModel, SimConfig, WorkloadSpec, apply_deviation, simulate
from .stats import DEFAULT_ALPHA, compare

log = logging.getLogger(__name__)

LABELS = ("TP", "TN", "FP", "FN")


@dataclass(frozen=True)
class ResponseTimeVerdict:
    mpd_ms: float
    p_value: float
    delta: float
    magnitude: str
    regression: bool

    def to_dict(self) -> dict:
        return {
            "mpd_ms": self.mpd_ms,
            "p_value": self.p_value,
            "delta": self.delta,
            "magnitude": self.magnitude,
            "regression": self.regression,
        }


@dataclass(frozen=True)
class RegressionVerdict:
    """System-level verdict.

    Only response time gates ``overall_regression``; CPU MPD (percentage
    points of utilization, per resource) is informational.
    """

    response_time: ResponseTimeVerdict
    cpu: Mapping[str, float]
    per_class: Mapping[str, ResponseTimeVerdict] = field(default_factory=dict)
    details: Mapping[str, Any] = field(default_factory=dict)

    @property
    def overall_regression(self) -> bool:
        return self.response_time.regression

    def to_dict(self) -> dict:
        return {
            "overall_regression": self.overall_regression,
            "response_time": self.response_time.to_dict(),
            "cpu": {r: {"mpd_percent": v} for r, v in sorted(self.cpu.items())},
            "per_class": {c: v.to_dict() for c, v in sorted(self.per_class.items())},
            "details": dict(self.details),
        }


@dataclass(frozen=True)
class OutcomeLabel:
    label: str
    cpu_abs_delta: Mapping[str, float]

    def to_dict(self) -> dict:
        return {"label": self.label, "cpu_abs_delta": dict(sorted(self.cpu_abs_delta.items()))}


def _rt_verdict(base: np.ndarray, upd: np.ndarray, alpha: float) -> ResponseTimeVerdict:
    rep = compare(base, upd, alpha)
    return ResponseTimeVerdict(rep.md_ms, rep.p_value, rep.delta, rep.magnitude, rep.significant)


def build_verdict(
    base_rt: Sequence[float],
    upd_rt: Sequence[float],
    base_util: Mapping[str, float],
    upd_util: Mapping[str, float],
    alpha: float = DEFAULT_ALPHA,
    per_class: Mapping[str, tuple[Sequence[float], Sequence[float]]] | None = None,
    details: Mapping[str, Any] | None = None,
) -> RegressionVerdict:
    """Assemble a verdict from baseline and updated response times (ms) and
    utilizations (fractions)."""
    rt = _rt_verdict(np.asarray(base_rt, float), np.asarray(upd_rt, float), alpha)
    cpu = {r: (upd_util.get(r, 0.0) - base_util.get(r, 0.0)) * 100.0 for r in sorted(set(base_util) | set(upd_util))}
    classes = {}
    for name, (b, u) in sorted((per_class or {}).items()):
        if len(b) and len(u):
            classes[name] = _rt_verdict(np.asarray(b, float), np.asarray(u, float), alpha)
    return RegressionVerdict(rt, cpu, classes, dict(details or {}))


def _stage(name: str, fn: Callable, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except (PerfBridgeError, ValueError, KeyError) as exc:
        raise StageError(name, exc) from exc


def local_deviations(
    baseline: MeasurementCatalog, updated: MeasurementCatalog, alpha: float = DEFAULT_ALPHA
) -> DeviationMap:
    """Compare every component measured in both versions."""
    common = sorted(set(baseline.components()) & set(updated.components()))
    for cid in sorted(set(baseline.components()) ^ set(updated.components())):
        log.warning("component %s measured in only one version; skipped", cid)
    reports = {c: compare(baseline.entries[c], updated.entries[c], alpha) for c in common}
    return DeviationMap.from_reports(reports)


def run_pipeline(
    baseline_catalog: MeasurementCatalog,
    updated_catalog: MeasurementCatalog,
    local_traces: Sequence[TraceEvent],
    system_traces: Sequence[TraceEvent],
    model: QpnModel,
    workload: WorkloadSpec | None,
    config: SimConfig,
    alpha: float = DEFAULT_ALPHA,
    *,
    workers: int = 2,
) -> RegressionVerdict:
    """Predict whether the change between the two catalogs regresses the system.

    Both model variants are simulated with the same ``config`` (hence the
    same random streams).  When no component deviates the simulation is
    skipped and a no-regression verdict is returned.
    """
    deviations = _stage("analyze-local", local_deviations, baseline_catalog, updated_catalog, alpha)
    if workload is not None:
        model = model.with_workload(workload)
    details: dict[str, Any] = {"deviations": deviations.to_dict()}
    if not deviations:
        details.update(subsystem_deviations=[], short_circuit=True)
        zero = ResponseTimeVerdict(0.0, 1.0, 0.0, "negligible", False)
        return RegressionVerdict(zero, {r: 0.0 for r in model.resources()}, {}, details)

    local = _stage("local-graph", build_dependency_graph, local_traces, baseline_catalog)
    system = _stage("system-graph", build_dependency_graph, system_traces, baseline_catalog)
    sub = _stage("extract", extract_deviation_subgraph, local, deviations)
    mapping = _stage("map", map_to_system_graph, sub, system)
    adjusted = _stage("propagate", propagate_bottom_up, system, mapping, deviations)
    subdev = _stage("subsystem-deviation", subsystem_deviation, system, adjusted)
    updated_model = _stage("update-model", apply_deviation, model, subdev)
    details["subsystem_deviations"] = [d.to_dict() for d in subdev]
    details["short_circuit"] = False

    def run(m: QpnModel):
        return _stage("simulate", simulate, m, config)

    if updated_model is model:
        base = upd = run(model)
    elif workers > 1:
        with ThreadPoolExecutor(max_workers=2) as pool:
            base, upd = pool.map(run, (model, updated_model))
    else:
        base, upd = run(model), run(updated_model)
    details["warnings"] = sorted(set(base.warnings) | set(upd.warnings))
    details["baseline"] = {"mean_response_ms": base.mean_response_ms(), "utilization": dict(sorted(base.utilization.items()))}
    details["updated"] = {"mean_response_ms": upd.mean_response_ms(), "utilization": dict(sorted(upd.utilization.items()))}
    per_class = {
        c: (base.response_times_ms[c], upd.response_times_ms.get(c, np.zeros(0)))
        for c in base.response_times_ms
    }
    return _stage(
        "verdict",
        build_verdict,
        base.pooled(),
        upd.pooled(),
        base.utilization,
        upd.utilization,
        alpha,
        per_class,
        details,
    )


def classify_outcome(predicted: RegressionVerdict, oracle: RegressionVerdict) -> OutcomeLabel:
    o, p = oracle.overall_regression, predicted.overall_regression
    label = {(True, True): "TP", (False, False): "TN", (False, True): "FP", (True, False): "FN"}[(o, p)]
    resources = sorted(set(oracle.cpu) | set(predicted.cpu))
    return OutcomeLabel(
        label, {r: abs(oracle.cpu.get(r, 0.0) - predicted.cpu.get(r, 0.0)) for r in resources}
    )


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------


def report_document(verdict: RegressionVerdict, outcome: OutcomeLabel | None = None) -> dict:
    doc = verdict.to_dict()
    if outcome is not None:
        doc["outcome"] = outcome.to_dict()
    return doc


def format_table(headers: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    """Plain-text table with left-aligned, space-padded columns."""
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) if rows else len(str(h)) for i, h in enumerate(headers)]
    line = lambda cells: "  ".join(str(c).ljust(w) for c, w in zip(cells, widths)).rstrip()
    out = [line(headers), line("-" * w for w in widths)]
    out.extend(line(r) for r in rows)
    return "\n".join(out)


def _fmt(x: float, digits: int = 2) -> str:
    return f"{x:+.{digits}f}"


def render_report(
    verdict: RegressionVerdict, outcome: OutcomeLabel | None = None, fmt: str = "table"
) -> str:
    """Render a verdict as JSON (``fmt="json"``) or as an aligned table."""
    if fmt == "json":
        return json.dumps(report_document(verdict, outcome), indent=2, sort_keys=True) + "\n"
    if fmt != "table":
        raise ValueError(f"unknown report format {fmt!r}")
    rt = verdict.response_time
    headers = ["Metric", "MPD", "p-value", "Effect size"]
    if outcome is not None:
        headers += ["Outcome", "|Delta|"]
    rows = [["Response time (ms)", _fmt(rt.mpd_ms), f"{rt.p_value:.3g}", f"{rt.delta:+.3f} ({rt.magnitude})"]]
    if outcome is not None:
        rows[0] += [outcome.label, "-"]
    for res, mpd in sorted(verdict.cpu.items()):
        row = [f"CPU {res} (%)", _fmt(mpd), "-", "-"]
        if outcome is not None:
            row += ["-", f"{outcome.cpu_abs_delta.get(res, 0.0):.2f}"]
        rows.append(row)
    head = f"regression: {'true' if verdict.overall_regression else 'false'}  magnitude: {rt.magnitude}"
    return head + "\n" + format_table(headers, rows) + "\n"
