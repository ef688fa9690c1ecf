"""Grid evaluation of the detector against the end-to-end oracle."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

from .detector import RegressionVerdict, classify_outcome, format_table, run_pipeline
from .qpn import SimConfig, WorkloadSpec
from .synth import (
    STANDARD_INTENSITIES,
    Injection,
    Scenario,
    inject_slowdown,
    oracle_end_to_end,
    workload_variants,
)

DEFAULT_CONFIG = SimConfig(duration_s=1500.0, warmup_s=100.0, replications=1, seed=0)
WORKLOAD_LABELS = ("original", "variant 1", "variant 2", "variant 3")


@dataclass(frozen=True)
class Cell:
    location: str
    intensity: float
    workload: str
    predicted: RegressionVerdict
    oracle: RegressionVerdict
    label: str
    cpu_abs_delta: dict[str, float]

    @property
    def agrees(self) -> bool:
        return self.label in ("TP", "TN")

    def to_dict(self) -> dict:
        return {
            "location": self.location,
            "intensity": self.intensity,
            "workload": self.workload,
            "predicted": _brief(self.predicted),
            "oracle": _brief(self.oracle),
            "outcome": self.label,
            "cpu_abs_delta": dict(sorted(self.cpu_abs_delta.items())),
        }


def _brief(v: RegressionVerdict) -> dict:
    return {
        "regression": v.overall_regression,
        "response_time": v.response_time.to_dict(),
        "cpu_mpd_percent": dict(sorted(v.cpu.items())),
    }


def evaluate_cell(
    scenario: Scenario,
    injection: Injection,
    workload: WorkloadSpec | None,
    config: SimConfig,
    alpha: float = 0.05,
    workload_label: str = "original",
) -> Cell:
    updated = inject_slowdown(
        scenario.baseline, injection, seed=config.seed + 1, noise_cv=scenario.spec.noise_cv
    )
    predicted = run_pipeline(
        scenario.baseline,
        updated,
        scenario.local_traces,
        scenario.system_traces,
        scenario.model,
        workload,
        config,
        alpha,
    )
    oracle = oracle_end_to_end(scenario, injection, workload, config, alpha)
    out = classify_outcome(predicted, oracle)
    return Cell(
        str(injection.location),
        injection.intensity,
        workload_label,
        predicted,
        oracle,
        out.label,
        dict(out.cpu_abs_delta),
    )


def fixed_workload_grid(
    scenario: Scenario,
    config: SimConfig = DEFAULT_CONFIG,
    intensities: Sequence[float] = STANDARD_INTENSITIES,
    alpha: float = 0.05,
) -> list[Cell]:
    """Locations x intensities under the scenario's own workload."""
    return [
        evaluate_cell(scenario, Injection(loc, i), None, config, alpha)
        for loc in scenario.injection_locations()
        for i in intensities
    ]


def minimum_detectable(cells: Sequence[Cell], intensities: Sequence[float] = STANDARD_INTENSITIES) -> dict[str, float]:
    """Smallest intensity per location at which the oracle sees a regression
    (the largest intensity when none does)."""
    out: dict[str, float] = {}
    for loc in dict.fromkeys(c.location for c in cells):
        hits = sorted(c.intensity for c in cells if c.location == loc and c.oracle.overall_regression)
        out[loc] = hits[0] if hits else max(intensities)
    return out


def variant_workload_grid(
    scenario: Scenario,
    fixed: Sequence[Cell],
    config: SimConfig = DEFAULT_CONFIG,
    factor: float = 1.5,
    alpha: float = 0.05,
    intensities: Sequence[float] = STANDARD_INTENSITIES,
) -> list[Cell]:
    """Minimum-detectable injection per location under the original workload
    and its three variants."""
    workloads = [scenario.workload, *workload_variants(scenario.workload, factor, scenario.model)]
    chosen = minimum_detectable(fixed, intensities)
    locations = {str(c): c for c in scenario.injection_locations()}
    return [
        evaluate_cell(scenario, Injection(locations[loc], i), wl, config, alpha, label)
        for loc, i in chosen.items()
        for label, wl in zip(WORKLOAD_LABELS, workloads)
    ]


def evaluate(
    scenario: Scenario,
    config: SimConfig = DEFAULT_CONFIG,
    alpha: float = 0.05,
    factor: float = 1.5,
    intensities: Sequence[float] = STANDARD_INTENSITIES,
) -> dict:
    """Run both grids and return the report document."""
    fixed = fixed_workload_grid(scenario, config, intensities, alpha)
    variants = variant_workload_grid(scenario, fixed, config, factor, alpha, intensities)
    return {
        "scenario_seed": scenario.spec.seed,
        "sim": {
            "duration_s": config.duration_s,
            "warmup_s": config.warmup_s,
            "replications": config.replications,
            "seed": config.seed,
        },
        "intensities": list(intensities),
        "fixed_workload": [c.to_dict() for c in fixed],
        "various_workload": [c.to_dict() for c in variants],
        "summary": {
            "fixed_agreement": sum(c.agrees for c in fixed),
            "fixed_cells": len(fixed),
            "various_agreement": sum(c.agrees for c in variants),
            "various_cells": len(variants),
        },
    }


def _rows(cells: Sequence[dict], with_workload: bool) -> tuple[list[str], list[list[str]]]:
    headers = ["Location", "Intensity"] + (["Workload"] if with_workload else [])
    headers += ["Pred MPD (ms)", "Pred effect", "Oracle MPD (ms)", "Oracle effect", "Outcome", "CPU |Delta| (%)"]
    rows = []
    for c in cells:
        p, o = c["predicted"]["response_time"], c["oracle"]["response_time"]
        row = [c["location"], f"{c['intensity'] * 100:g}%"]
        if with_workload:
            row.append(c["workload"])
        row += [
            f"{p['mpd_ms']:+.2f}",
            f"{p['delta']:+.3f} {p['magnitude']}",
            f"{o['mpd_ms']:+.2f}",
            f"{o['delta']:+.3f} {o['magnitude']}",
            c["outcome"],
            " ".join(f"{r}={v:.2f}" for r, v in c["cpu_abs_delta"].items()),
        ]
        rows.append(row)
    return headers, rows


def render_evaluation(doc: dict, fmt: str = "table") -> str:
    if fmt == "json":
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"
    s = doc["summary"]
    parts = [
        f"Fixed workload: agreement {s['fixed_agreement']}/{s['fixed_cells']}",
        format_table(*_rows(doc["fixed_workload"], False)),
        "",
        f"Various workloads: agreement {s['various_agreement']}/{s['various_cells']}",
        format_table(*_rows(doc["various_workload"], True)),
    ]
    return "\n".join(parts) + "\n"
