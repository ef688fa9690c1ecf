"""Command-line entry point.

Exit codes: 0 clean, 1 regression detected, 2 error (including usage).

Every option except the subcommand can also come from a JSON file given
with ``--config``; keys are the long option names with dashes replaced by
underscores.  Command-line flags win over the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

from .detector import (
    format_table,
    local_deviations,
    render_report,
    run_pipeline,
)
from .errors import PerfBridgeError
from .graph import (
    SubsystemDeviation,
    extract_deviation_subgraph,
    map_to_system_graph,
    propagate_bottom_up,
    subsystem_deviation,
)
from .perfdata import ComponentId, build_dependency_graph, load_measurements, load_traces
from .qpn import SimConfig, apply_deviation, load_model, load_workload, simulate
from .stats import DEFAULT_ALPHA, compare

EXIT_OK, EXIT_REGRESSION, EXIT_ERROR = 0, 1, 2
SEED_ENV = "PERF_BRIDGE_SEED"

_DEFAULTS: dict[str, Any] = {
    "alpha": DEFAULT_ALPHA,
    "duration": 1500.0,
    "warmup": 100.0,
    "replications": 1,
    "format": "table",
    "factor": 1.5,
}


class UsageError(PerfBridgeError):
    pass


@dataclass(frozen=True)
class RunConfig:
    alpha: float
    seed: int
    duration: float
    warmup: float
    replications: int
    out: Path | None
    format: str
    verbose: int = 0

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise UsageError(f"--alpha must lie strictly between 0 and 1, got {self.alpha}")
        if self.format not in ("json", "table"):
            raise UsageError(f"--format must be json or table, got {self.format!r}")

    def sim(self) -> SimConfig:
        return SimConfig(
            duration_s=self.duration,
            warmup_s=self.warmup,
            replications=self.replications,
            seed=self.seed,
        )


# ---------------------------------------------------------------------------
# Argument handling
# ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser, sim: bool = False) -> None:
    p.add_argument("--config", type=Path, help="JSON file with option defaults")
    p.add_argument("--alpha", type=float, help="significance level (default 0.05)")
    p.add_argument("--seed", type=int, help=f"random seed (fallback: ${SEED_ENV}, then 0)")
    p.add_argument("--out", type=Path, help="write the report here instead of stdout")
    p.add_argument("--format", choices=("json", "table"), help="report format (default table)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    if sim:
        p.add_argument("--duration", type=float, help="simulated seconds per replication (default 1500)")
        p.add_argument("--warmup", type=float, help="warm-up seconds excluded (default 100)")
        p.add_argument("--replications", type=int, help="independent replications (default 1)")


def _measurements(p: argparse.ArgumentParser) -> None:
    p.add_argument("--baseline", type=Path, help="baseline measurement CSV")
    p.add_argument("--updated", type=Path, help="updated measurement CSV")
    p.add_argument("--baseline-version", help="version label to read from the baseline file")
    p.add_argument("--updated-version", help="version label to read from the updated file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="perfbridge",
        description="Predict system-level performance regressions from component benchmarks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze-local", help="compare component measurements of two versions")
    _common(p)
    _measurements(p)
    p.set_defaults(func=cmd_analyze_local, required=("baseline", "updated"))

    p = sub.add_parser("propagate", help="lift local deviations to subsystem deviations")
    _common(p)
    _measurements(p)
    p.add_argument("--local-traces", type=Path)
    p.add_argument("--system-traces", type=Path)
    p.set_defaults(
        func=cmd_propagate, required=("baseline", "updated", "local_traces", "system_traces")
    )

    p = sub.add_parser("predict", help="simulate a model, optionally with subsystem deviations")
    _common(p, sim=True)
    p.add_argument("--model", type=Path)
    p.add_argument("--workload", type=Path, help="workload JSON overriding the model's")
    p.add_argument("--deviations", type=Path, help="output of 'propagate' (JSON)")
    p.set_defaults(func=cmd_predict, required=("model",))

    p = sub.add_parser("detect", help="run the full pipeline and gate on the verdict")
    _common(p, sim=True)
    _measurements(p)
    p.add_argument("--local-traces", type=Path)
    p.add_argument("--system-traces", type=Path)
    p.add_argument("--model", type=Path)
    p.add_argument("--workload", type=Path, help="workload JSON overriding the model's")
    p.set_defaults(
        func=cmd_detect,
        required=("baseline", "updated", "local_traces", "system_traces", "model"),
    )

    p = sub.add_parser("evaluate", help="detector vs oracle on a synthetic scenario grid")
    _common(p, sim=True)
    p.add_argument("--scenario", type=Path, help="scenario spec JSON (default: built-in)")
    p.add_argument("--factor", type=float, help="workload variant intensity factor (default 1.5)")
    p.add_argument("--intensities", help="comma-separated injection intensities (default 0.1,0.5,2.5)")
    p.set_defaults(func=cmd_evaluate, required=())

    p = sub.add_parser("generate", help="write a synthetic scenario's input files")
    _common(p)
    p.add_argument("--scenario", type=Path, help="scenario spec JSON (default: built-in)")
    p.add_argument("--out-dir", type=Path)
    p.add_argument("--inject", help="COMPONENT=INTENSITY, e.g. Catalog:Catalog.f3=2.5")
    p.set_defaults(func=cmd_generate, required=("out_dir",))
    return parser


_PATH_KEYS = {
    "baseline", "updated", "local_traces", "system_traces", "model", "workload",
    "deviations", "scenario", "out", "out_dir",
}


def resolve(args: argparse.Namespace) -> argparse.Namespace:
    """Merge config file, environment and defaults into ``args``."""
    values = vars(args)
    if args.config is not None:
        try:
            cfg = json.loads(args.config.read_text(encoding="utf-8"))
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config} is not valid JSON: {exc}") from None
        if not isinstance(cfg, dict):
            raise UsageError(f"config {args.config} must hold a JSON object")
        for key, value in cfg.items():
            key = key.replace("-", "_")
            if key not in values or key in ("command", "func", "config", "required"):
                raise UsageError(f"unknown config key {key!r} for {args.command}")
            if values[key] is None:
                values[key] = Path(value) if key in _PATH_KEYS and value is not None else value
    if values.get("seed") is None:
        env = os.environ.get(SEED_ENV)
        try:
            values["seed"] = int(env) if env not in (None, "") else 0
        except ValueError:
            raise UsageError(f"${SEED_ENV} must be an integer, got {env!r}") from None
    for key, value in _DEFAULTS.items():
        if key in values and values[key] is None:
            values[key] = value
    missing = [k for k in args.required if values.get(k) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))
    for key in sorted(_PATH_KEYS - {"out", "out_dir"}):
        path = values.get(key)
        if path is not None and not Path(path).is_file():
            raise UsageError(f"--{key.replace('_', '-')}: file not found: {path}")
    return args


def run_config(args: argparse.Namespace) -> RunConfig:
    values = {k: v for k, v in vars(args).items() if v is not None}
    if "duration" in values and values.get("warmup", 0.0) >= values["duration"]:
        raise UsageError("--warmup must be shorter than --duration")
    return RunConfig(
        alpha=float(values["alpha"]),
        seed=int(values["seed"]),
        duration=float(values.get("duration", _DEFAULTS["duration"])),
        warmup=float(values.get("warmup", _DEFAULTS["warmup"])),
        replications=int(values.get("replications", _DEFAULTS["replications"])),
        out=args.out,
        format=values["format"],
        verbose=args.verbose,
    )


def _emit(text: str, rc: RunConfig) -> None:
    if rc.out is None:
        sys.stdout.write(text)
    else:
        rc.out.parent.mkdir(parents=True, exist_ok=True)
        rc.out.write_text(text, encoding="utf-8")


def _dump(doc: Any) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _catalogs(args):
    return (
        load_measurements(args.baseline, args.baseline_version),
        load_measurements(args.updated, args.updated_version),
    )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_analyze_local(args, rc: RunConfig) -> int:
    base, upd = _catalogs(args)
    common = sorted(set(base.components()) & set(upd.components()))
    reports = {c: compare(base.entries[c], upd.entries[c], rc.alpha) for c in common}
    deviations = local_deviations(base, upd, rc.alpha)
    if rc.format == "json":
        doc = {
            "alpha": rc.alpha,
            "deviations": deviations.to_dict(),
            "reports": {str(c): r.to_dict() for c, r in reports.items()},
        }
        _emit(_dump(doc), rc)
    else:
        rows = [
            [str(c), f"{r.md_ms:+.4f}", f"{r.p_value:.3g}", f"{r.delta:+.3f}", r.magnitude, "yes" if r.significant else "no"]
            for c, r in reports.items()
        ]
        text = f"deviated components: {len(deviations)}\n"
        text += format_table(["Component", "MD (ms)", "p-value", "delta", "magnitude", "deviated"], rows) + "\n"
        _emit(text, rc)
    return EXIT_OK


def _propagation(args, rc: RunConfig) -> dict:
    base, upd = _catalogs(args)
    deviations = local_deviations(base, upd, rc.alpha)
    local = build_dependency_graph(load_traces(args.local_traces), base)
    system = build_dependency_graph(load_traces(args.system_traces), base)
    sub = extract_deviation_subgraph(local, deviations)
    mapping = map_to_system_graph(sub, system)
    adjusted = propagate_bottom_up(system, mapping, deviations)
    subdev = subsystem_deviation(system, adjusted)
    return {
        "deviations": deviations.to_dict(),
        "mapping": {str(a): str(b) for a, b in sorted(mapping.pairs.items())},
        "adjusted_top_level_ms": {str(c): v for c, v in sorted(adjusted.items())},
        "subsystem_deviations": [d.to_dict() for d in subdev],
    }


def cmd_propagate(args, rc: RunConfig) -> int:
    doc = _propagation(args, rc)
    if rc.format == "json":
        _emit(_dump(doc), rc)
    else:
        rows = [
            [d["subsystem"], f"{d['baseline_total_ms']:.4f}", f"{d['adjusted_total_ms']:.4f}", f"{d['relative_delta']:+.4%}"]
            for d in doc["subsystem_deviations"]
        ]
        text = f"deviated components: {len(doc['deviations'])}\n"
        text += format_table(["Subsystem", "Baseline (ms)", "Adjusted (ms)", "Relative change"], rows) + "\n"
        _emit(text, rc)
    return EXIT_OK


def _model(args):
    model = load_model(args.model)
    if args.workload is not None:
        model = model.with_workload(load_workload(args.workload))
    return model


def cmd_predict(args, rc: RunConfig) -> int:
    model = _model(args)
    if args.deviations is not None:
        try:
            doc = json.loads(args.deviations.read_text(encoding="utf-8"))
            items = doc["subsystem_deviations"] if isinstance(doc, dict) else doc
            devs = [SubsystemDeviation.from_dict(d) for d in items]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise UsageError(f"malformed deviations file {args.deviations}: {exc}") from None
        model = apply_deviation(model, devs)
    result = simulate(model, rc.sim())
    summary = result.summary()
    if rc.format == "json":
        _emit(_dump(summary), rc)
    else:
        rows = [
            [cls, str(v["count"]), _opt(v["mean"]), _opt(v["p50"]), _opt(v["p95"])]
            for cls, v in summary["response_time_ms"].items()
        ]
        text = format_table(["Class", "Completed", "Mean (ms)", "p50 (ms)", "p95 (ms)"], rows) + "\n\n"
        text += format_table(
            ["Resource", "Utilization"],
            [[r, f"{u:.2%}"] for r, u in summary["utilization"].items()],
        ) + "\n"
        for w in summary["warnings"]:
            text += f"warning: {w}\n"
        _emit(text, rc)
    return EXIT_OK


def _opt(x) -> str:
    return "-" if x is None else f"{x:.2f}"


def cmd_detect(args, rc: RunConfig) -> int:
    base, upd = _catalogs(args)
    model = load_model(args.model)
    workload = load_workload(args.workload) if args.workload is not None else None
    verdict = run_pipeline(
        base,
        upd,
        load_traces(args.local_traces),
        load_traces(args.system_traces),
        model,
        workload,
        rc.sim(),
        rc.alpha,
    )
    _emit(render_report(verdict, fmt=rc.format), rc)
    return EXIT_REGRESSION if verdict.overall_regression else EXIT_OK


def _spec(args):
    from .synth import ScenarioSpec, default_spec

    if args.scenario is None:
        return default_spec()
    try:
        return ScenarioSpec.from_dict(json.loads(args.scenario.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, TypeError) as exc:
        raise UsageError(f"malformed scenario file {args.scenario}: {exc}") from None


def cmd_evaluate(args, rc: RunConfig) -> int:
    from .evaluation import evaluate, render_evaluation
    from .synth import STANDARD_INTENSITIES, generate_scenario

    intensities = STANDARD_INTENSITIES
    if args.intensities:
        try:
            intensities = tuple(float(x) for x in str(args.intensities).split(","))
        except ValueError:
            raise UsageError(f"bad --intensities value {args.intensities!r}") from None
    scenario = generate_scenario(_spec(args))
    doc = evaluate(scenario, rc.sim(), rc.alpha, float(args.factor), intensities)
    _emit(render_evaluation(doc, rc.format), rc)
    return EXIT_OK


def cmd_generate(args, rc: RunConfig) -> int:
    from .synth import Injection, generate_scenario, inject_slowdown, write_scenario

    scenario = generate_scenario(_spec(args))
    updated = None
    if args.inject:
        loc, sep, intensity = args.inject.rpartition("=")
        if not sep:
            raise UsageError("--inject expects COMPONENT=INTENSITY")
        try:
            inj = Injection(ComponentId.parse(loc), float(intensity))
        except ValueError as exc:
            raise UsageError(f"bad --inject value {args.inject!r}: {exc}") from None
        updated = inject_slowdown(scenario.baseline, inj, rc.seed, scenario.spec.noise_cv)
    paths = write_scenario(scenario, args.out_dir, updated)
    locations = [str(c) for c in scenario.injection_locations()]
    doc = {"files": {k: str(v) for k, v in sorted(paths.items())}, "injection_locations": locations}
    _emit(_dump(doc) if rc.format == "json" else "".join(f"{k}: {v}\n" for k, v in sorted(paths.items())), rc)
    return EXIT_OK


# ---------------------------------------------------------------------------


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    func: Callable[[argparse.Namespace, RunConfig], int] = args.func
    try:
        resolve(args)
        rc = run_config(args)
        return func(args, rc)
    except (PerfBridgeError, ValueError) as exc:
        print(f"perfbridge {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"perfbridge {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
