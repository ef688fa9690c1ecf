"""Synthetic evaluation scenarios with a ground-truth oracle.

A scenario is a small microservice-style system: each subsystem owns a DAG
of components with integer call multiplicities, every request class visits a
fixed sequence of subsystems, and a visit runs all top-level components of
the subsystem once.  From this ground truth the generator derives the inputs
the detector sees (traces, benchmark measurements, a QPN model whose service
demands are the summed top-level timings).

:func:`oracle_end_to_end` plays the role of a full system performance test:
it simulates every component execution of every request, with the injected
busy-wait, and never looks at the QPN model.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InputError
from .perfdata import (
    ComponentId,
    MeasurementCatalog,
    TraceEvent,
    build_dependency_graph,
    load_measurements,
    load_traces,
    write_measurements,
    write_traces,
)
from .qpn import (
    Arc,
    Mode,
    Place,
    QpnModel,
    QueueSpec,
    RequestClass,
    SimConfig,
    Transition,
    WorkloadSpec,
    load_model,
    load_workload,
    offered_load,
    save_model,
    validate_model,
)
from .qpn import kernel
from .qpn.simulate import _poisson_times

STANDARD_INTENSITIES = (0.10, 0.50, 2.50)
INTENSITY_LABELS = {0.10: "Low", 0.50: "Medium", 2.50: "High"}

_ORACLE_ARRIVAL, _ORACLE_EXEC, _MEASURE, _STRUCTURE = 11, 12, 13, 14


def _rng(seed: int, kind: int, *names: str) -> np.random.Generator:
    key = (kind, *(zlib.crc32(n.encode("utf-8")) for n in names))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


def lognormal(rng: np.random.Generator, mean: float, cv: float, size) -> np.ndarray:
    """Lognormal draws with the given mean and coefficient of variation."""
    if cv <= 0:
        return np.full(size, float(mean))
    sigma2 = math.log1p(cv * cv)
    return rng.lognormal(math.log(mean) - sigma2 / 2, math.sqrt(sigma2), size)


# ---------------------------------------------------------------------------
# Specification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassSpec:
    name: str
    mix: float
    route: tuple[str, ...]


@dataclass(frozen=True)
class ScenarioSpec:
    """Parameters of a generated scenario.

    ``component_counts`` fixes the number of components per subsystem;
    times are in milliseconds.
    ``visit_cv`` is the coefficient of variation of the total work of one
    subsystem visit in the oracle (1.0 matches an exponential service
    time); ``noise_cv`` is the benchmark measurement noise.
    """

    subsystems: tuple[str, ...] = ("Microservice_A", "Microservice_B")
    component_counts: tuple[int, ...] = (3, 4)
    self_time_ms: tuple[float, float] = (0.5, 5.0)
    multiplicity: tuple[int, int] = (1, 3)
    edge_probability: float = 0.5
    classes: tuple[ClassSpec, ...] = (
        ClassSpec("browse", 0.6, ("Microservice_A", "Microservice_B")),
        ClassSpec("login", 0.4, ("Microservice_A",)),
    )
    total_rate_per_s: float = 10.0
    servers: int = 1
    noise_cv: float = 0.05
    visit_cv: float = 1.0
    iterations: int = 30
    traces_per_entry: int = 5
    seed: int = 0

    def __post_init__(self):
        if len(self.subsystems) != len(self.component_counts):
            raise InputError("subsystems and component_counts differ in length")
        if any(k < 1 for k in self.component_counts):
            raise InputError("each subsystem needs at least one component")
        if not (0 < self.self_time_ms[0] <= self.self_time_ms[1]):
            raise InputError("self_time_ms must be a positive (low, high) range")
        if not (1 <= self.multiplicity[0] <= self.multiplicity[1]):
            raise InputError("multiplicity must be an integer range starting at >= 1")
        total = math.fsum(c.mix for c in self.classes)
        if abs(total - 1.0) > 1e-9:
            raise InputError(f"class mixes sum to {total}, not 1")
        for c in self.classes:
            unknown = set(c.route) - set(self.subsystems)
            if unknown or not c.route:
                raise InputError(f"class {c.name}: bad route {c.route}")
        if self.iterations < 1 or self.traces_per_entry < 1:
            raise InputError("iterations and traces_per_entry must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["classes"] = [asdict(c) for c in self.classes]
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioSpec":
        data = dict(data)
        if "classes" in data:
            data["classes"] = tuple(
                ClassSpec(c["name"], float(c["mix"]), tuple(c["route"])) for c in data["classes"]
            )
        for key in ("subsystems", "component_counts", "self_time_ms", "multiplicity"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


def default_spec() -> ScenarioSpec:
    """The shipped evaluation scenario."""
    return ScenarioSpec(
        subsystems=("Frontend", "Catalog", "Orders"),
        component_counts=(5, 7, 6),
        self_time_ms=(0.3, 4.0),
        multiplicity=(1, 4),
        edge_probability=0.35,
        classes=(
            ClassSpec("browse", 0.5, ("Frontend", "Catalog")),
            ClassSpec("order", 0.3, ("Frontend", "Catalog", "Orders")),
            ClassSpec("login", 0.2, ("Frontend",)),
        ),
        total_rate_per_s=3.5,
        seed=2024,
    )


# ---------------------------------------------------------------------------
# Scenario
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Injection:
    location: ComponentId
    intensity: float

    def __post_init__(self):
        if not (self.intensity >= 0 and math.isfinite(self.intensity)):
            raise InputError(f"injection intensity must be >= 0, got {self.intensity!r}")

    @property
    def label(self) -> str:
        return INTENSITY_LABELS.get(self.intensity, f"{self.intensity:g}")


@dataclass
class Scenario:
    spec: ScenarioSpec
    self_ms: dict[ComponentId, float]
    calls: dict[tuple[ComponentId, ComponentId], int]
    inclusive_ms: dict[ComponentId, float]
    executions: dict[ComponentId, int]  # per visit of the component's subsystem
    local_traces: list[TraceEvent]
    system_traces: list[TraceEvent]
    baseline: MeasurementCatalog
    model: QpnModel
    workload: WorkloadSpec
    system_graph: object = field(repr=False, default=None)

    def components(self, subsystem: str | None = None) -> list[ComponentId]:
        return sorted(c for c in self.self_ms if subsystem is None or c.subsystem == subsystem)

    def top_level(self, subsystem: str) -> list[ComponentId]:
        called = {b for (a, b) in self.calls if a.subsystem == b.subsystem}
        return [c for c in self.components(subsystem) if c not in called]

    def subsystem_total_ms(self, subsystem: str) -> float:
        return math.fsum(self.inclusive_ms[t] for t in self.top_level(subsystem))

    def visit_rates(self, workload: WorkloadSpec | None = None) -> dict[str, float]:
        workload = workload or self.workload
        rates = workload.effective_rates()
        out = {s: 0.0 for s in self.spec.subsystems}
        for c in self.spec.classes:
            for s in c.route:
                out[s] += rates.get(c.name, 0.0)
        return out

    def impact(self, cid: ComponentId, workload: WorkloadSpec | None = None) -> float:
        """Added utilization of the component's subsystem per unit intensity."""
        rate = self.visit_rates(workload)[cid.subsystem]
        return rate * self.executions[cid] * self.inclusive_ms[cid] / 1000.0 / self.spec.servers

    def execution_shape(self, subsystem: str) -> float:
        """Gamma shape of one component execution such that a whole visit
        has coefficient of variation ``spec.visit_cv`` (0 = deterministic)."""
        if self.spec.visit_cv <= 0:
            return 0.0
        comps = self.components(subsystem)
        first = math.fsum(self.executions[c] * self.self_ms[c] for c in comps)
        second = math.fsum(self.executions[c] * self.self_ms[c] ** 2 for c in comps)
        # visit variance = second / shape
        return second / (self.spec.visit_cv * first) ** 2

    def injection_locations(self) -> list[ComponentId]:
        """Three locations: highest, median and lowest impact."""
        ranked = sorted(self.components(), key=lambda c: (-self.impact(c), c))
        return [ranked[0], ranked[len(ranked) // 2], ranked[-1]]


def _call_tree(rng, sub, k, spec):
    names = [ComponentId(sub, f"{sub}.f{i + 1}") for i in range(k)]
    lo, hi = spec.self_time_ms
    self_ms = {c: float(np.round(rng.uniform(lo, hi), 4)) for c in names}
    calls: dict[tuple[ComponentId, ComponentId], int] = {}
    for j in range(1, k):
        for i in range(j):
            if rng.random() < spec.edge_probability:
                calls[(names[i], names[j])] = int(rng.integers(spec.multiplicity[0], spec.multiplicity[1] + 1))
    return names, self_ms, calls


def generate_scenario(spec: ScenarioSpec) -> Scenario:
    """Build a consistent scenario from ``spec``; deterministic per seed."""
    rng = _rng(spec.seed, _STRUCTURE, "structure")
    self_ms: dict[ComponentId, float] = {}
    calls: dict[tuple[ComponentId, ComponentId], int] = {}
    order: dict[str, list[ComponentId]] = {}
    for sub, k in zip(spec.subsystems, spec.component_counts):
        names, s, c = _call_tree(rng, sub, k, spec)
        self_ms.update(s)
        calls.update(c)
        order[sub] = names

    children: dict[ComponentId, list[tuple[ComponentId, int]]] = {c: [] for c in self_ms}
    for (a, b), m in sorted(calls.items()):
        children[a].append((b, m))
    inclusive: dict[ComponentId, float] = {}
    for sub in spec.subsystems:
        for c in reversed(order[sub]):
            inclusive[c] = self_ms[c] + sum(m * inclusive[b] for b, m in children[c])

    called = {b for (_, b) in calls}
    executions: dict[ComponentId, int] = {c: 0 for c in self_ms}
    for sub in spec.subsystems:
        for c in order[sub]:
            if c not in called:
                executions[c] += 1
        for c in order[sub]:
            for b, m in children[c]:
                executions[b] += executions[c] * m

    # traces: one call tree per top-level component and trace
    def expand(tid, parent, node, out, trng):
        out.append(TraceEvent(tid, parent, node, float(lognormal(trng, inclusive[node], spec.noise_cv, 1)[0])))
        for b, m in children[node]:
            for _ in range(m):
                expand(tid, node, b, out, trng)

    local, system = [], []
    trng = _rng(spec.seed, _STRUCTURE, "traces")
    for sub in spec.subsystems:
        for top in (c for c in order[sub] if c not in called):
            for i in range(spec.traces_per_entry):
                expand(f"test-{top.component}-{i}", None, top, local, trng)
    for cls in spec.classes:
        for i in range(spec.traces_per_entry):
            tid = f"req-{cls.name}-{i}"
            for sub in cls.route:
                for top in (c for c in order[sub] if c not in called):
                    expand(tid, None, top, system, trng)

    baseline = MeasurementCatalog(
        "baseline",
        {
            c: tuple(float(v) for v in lognormal(_rng(spec.seed, _MEASURE, "baseline", str(c)), inclusive[c], spec.noise_cv, spec.iterations))
            for c in sorted(self_ms)
        },
    )

    total = spec.total_rate_per_s
    workload = WorkloadSpec(
        tuple(
            RequestClass(c.name, total * c.mix, c.mix, f"{c.route[0]}")
            for c in spec.classes
        )
    )
    model = _build_model(spec, {s: math.fsum(inclusive[t] for t in order[s] if t not in called) for s in spec.subsystems}, workload)
    for place, rho in offered_load(model).items():
        if rho >= 1.0:
            raise InputError(f"scenario is unstable at {place}: offered load {rho:.3f} >= 1")

    scenario = Scenario(
        spec=spec,
        self_ms=self_ms,
        calls=calls,
        inclusive_ms=inclusive,
        executions=executions,
        local_traces=local,
        system_traces=system,
        baseline=baseline,
        model=model,
        workload=workload,
    )
    scenario.system_graph = build_dependency_graph(system, baseline)
    return scenario


def _build_model(spec: ScenarioSpec, totals_ms: dict[str, float], workload: WorkloadSpec) -> QpnModel:
    places = []
    for sub in spec.subsystems:
        colors = [c.name for c in spec.classes if sub in c.route]
        if not colors:
            continue
        demand = totals_ms[sub] / 1000.0
        places.append(
            Place(
                sub,
                QueueSpec(
                    subsystem=sub,
                    service_demand_s={c: demand for c in colors},
                    resource=f"cpu_{sub}",
                    servers=spec.servers,
                ),
            )
        )
    transitions = []
    for sub in spec.subsystems:
        modes = []
        for c in spec.classes:
            if sub not in c.route:
                continue
            idx = c.route.index(sub)
            out = (Arc(c.route[idx + 1], c.name),) if idx + 1 < len(c.route) else ()
            modes.append((c.name, (Arc(sub, c.name),), out))
        if not modes:
            continue
        p = 1.0 / len(modes)
        probs = [p] * len(modes)
        probs[-1] = 1.0 - p * (len(modes) - 1)
        transitions.append(
            Transition(
                f"{sub}_done",
                tuple(Mode(name, pr, ins, outs) for (name, ins, outs), pr in zip(modes, probs)),
            )
        )
    model = QpnModel(tuple(places), tuple(transitions), workload, {}, name="synthetic")
    validate_model(model)
    return model


# ---------------------------------------------------------------------------
# Injection
# ---------------------------------------------------------------------------


def inject_slowdown(
    baseline: MeasurementCatalog,
    injection: Injection,
    seed: int,
    noise_cv: float = 0.05,
    version: str = "updated",
) -> MeasurementCatalog:
    """Re-measure every component; the injected one runs ``1 + intensity`` times slower.

    Each component keeps its sample size; means are the baseline sample
    means, with fresh lognormal noise.
    """
    if injection.location not in baseline:
        raise InputError(f"injection location {injection.location} not in catalog")
    entries = {}
    for cid in baseline.components():
        sample = baseline.entries[cid]
        mean = float(np.mean(sample))
        if cid == injection.location:
            mean *= 1.0 + injection.intensity
        rng = _rng(seed, _MEASURE, "updated", str(cid))
        entries[cid] = tuple(float(v) for v in lognormal(rng, mean, noise_cv, len(sample))) if mean > 0 else tuple(0.0 for _ in sample)
    return MeasurementCatalog(version, entries)


# ---------------------------------------------------------------------------
# Oracle
# ---------------------------------------------------------------------------


def _oracle_run(scenario: Scenario, workload: WorkloadSpec, injection: Injection | None, config: SimConfig, seed: int):
    spec = scenario.spec
    rates = workload.effective_rates()
    subs = list(spec.subsystems)
    sub_idx = {s: i for i, s in enumerate(subs)}
    times, classes, routes = [], [], []
    for ci, c in enumerate(spec.classes):
        t = _poisson_times(_rng(seed, _ORACLE_ARRIVAL, c.name), rates.get(c.name, 0.0), config.duration_s)
        times.append(t)
        classes.append(np.full(t.size, ci))
    arrival = np.concatenate(times) if times else np.zeros(0)
    cls = np.concatenate(classes).astype(np.int64) if classes else np.zeros(0, dtype=np.int64)
    perm = np.lexsort((np.arange(arrival.size), cls, arrival))
    arrival, cls = arrival[perm], cls[perm]

    lens = np.array([len(c.route) for c in spec.classes], dtype=np.int64)[cls]
    ptr = np.zeros(arrival.size + 1, dtype=np.int64)
    np.cumsum(lens, out=ptr[1:])
    station = np.empty(int(ptr[-1]), dtype=np.int32)
    work = np.zeros(int(ptr[-1]))
    # visit positions per subsystem
    for ci, c in enumerate(spec.classes):
        members = np.flatnonzero(cls == ci)
        for hop, sub in enumerate(c.route):
            station[ptr[members] + hop] = sub_idx[sub]
    for sub in subs:
        slots = np.flatnonzero(station == sub_idx[sub])
        shape = scenario.execution_shape(sub)
        for comp in scenario.components(sub):
            n_exec = scenario.executions[comp]
            if n_exec == 0:
                continue
            mean = scenario.self_ms[comp]
            rng = _rng(seed, _ORACLE_EXEC, str(comp))
            if shape > 0:
                # sum of n_exec i.i.d. gamma(shape, mean/shape) executions
                draw = rng.gamma(shape * n_exec, mean / shape, slots.size)
            else:
                draw = np.full(slots.size, mean * n_exec)
            work[slots] += draw
            if injection is not None and injection.location == comp:
                work[slots] += n_exec * injection.intensity * scenario.inclusive_ms[comp]
    work /= 1000.0
    servers = np.full(len(subs), spec.servers, dtype=np.int32)
    is_ps = np.zeros(len(subs), dtype=np.int8)
    completion, busy, _, _ = kernel.run_stations(
        arrival, ptr, station, work, servers, is_ps, config.warmup_s, config.duration_s
    )
    done = ~np.isnan(completion) & (completion >= config.warmup_s)
    rt = (completion[done] - arrival[done]) * 1000.0
    util = busy / (servers * config.window_s)
    return rt, util


def oracle_predictions(
    scenario: Scenario,
    injection: Injection | None,
    workload: WorkloadSpec | None,
    config: SimConfig,
) -> tuple[np.ndarray, dict[str, float]]:
    """Pooled end-to-end response times (ms) and utilization per resource."""
    workload = workload or scenario.workload
    rts, utils = [], []
    for i in range(config.replications):
        rt, util = _oracle_run(scenario, workload, injection, config, config.seed + i)
        rts.append(rt)
        utils.append(util)
    util = np.mean(utils, axis=0)
    names = [f"cpu_{s}" for s in scenario.spec.subsystems]
    return np.concatenate(rts), {n: float(min(1.0, u)) for n, u in zip(names, util)}


def oracle_end_to_end(
    scenario: Scenario,
    injection: Injection | None,
    workload: WorkloadSpec | None = None,
    config: SimConfig | None = None,
    alpha: float = 0.05,
):
    """Ground-truth verdict from component-level simulation of the whole system."""
    from .detector import build_verdict

    config = config or SimConfig(duration_s=1500.0, warmup_s=100.0, seed=scenario.spec.seed)
    base_rt, base_util = oracle_predictions(scenario, None, workload, config)
    if injection is None or injection.intensity == 0:
        upd_rt, upd_util = base_rt, base_util
    else:
        upd_rt, upd_util = oracle_predictions(scenario, injection, workload, config)
    return build_verdict(base_rt, upd_rt, base_util, upd_util, alpha=alpha)


# ---------------------------------------------------------------------------
# Workload variants
# ---------------------------------------------------------------------------


def _check_stable(model: QpnModel | None, workload: WorkloadSpec, label: str, factor: float):
    if model is None:
        return
    for place, rho in offered_load(model.with_workload(workload)).items():
        if rho >= 1.0:
            raise InputError(
                f"{label} drives {place} to offered load {rho:.3f} >= 1; "
                f"use an intensity factor below {factor / rho:.3f}"
            )


def workload_variants(
    base: WorkloadSpec, factor: float = 1.5, model: QpnModel | None = None
) -> list[WorkloadSpec]:
    """Three variants: scaled intensity, reversed class mix, and both.

    Class rates are kept proportional to the mix.  With ``model`` given,
    each variant is checked for stability against it.
    """
    base.validate()
    if factor <= 0:
        raise InputError("variant factor must be > 0")
    classes = base.request_classes
    total = base.total_rate

    def build(scale: float, mixes: Sequence[float]) -> WorkloadSpec:
        return WorkloadSpec(
            tuple(
                replace(c, arrival_rate_per_s=total * scale * m, class_mix_probability=m)
                for c, m in zip(classes, mixes)
            )
        )

    original_mix = [c.class_mix_probability for c in classes]
    swapped = original_mix[::-1]
    v1 = WorkloadSpec(
        tuple(replace(c, arrival_rate_per_s=c.arrival_rate_per_s * factor) for c in classes)
    )
    v2 = build(1.0, swapped)
    v3 = build(factor, swapped)
    for label, v in (("variant 1", v1), ("variant 2", v2), ("variant 3", v3)):
        _check_stable(model, v, label, factor)
    return [v1, v2, v3]


# ---------------------------------------------------------------------------
# File round trip
# ---------------------------------------------------------------------------


def write_scenario(scenario: Scenario, directory: str | Path, updated: MeasurementCatalog | None = None) -> dict[str, Path]:
    """Write the detector-facing artifacts of ``scenario`` into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {
        "baseline": d / "baseline.csv",
        "local_traces": d / "local_traces.csv",
        "system_traces": d / "system_traces.csv",
        "model": d / "model.json",
        "workload": d / "workload.json",
        "spec": d / "scenario.json",
    }
    write_measurements([scenario.baseline], paths["baseline"])
    write_traces(scenario.local_traces, paths["local_traces"])
    write_traces(scenario.system_traces, paths["system_traces"])
    save_model(scenario.model, paths["model"])
    paths["workload"].write_text(json.dumps(scenario.workload.to_dict(), indent=2) + "\n", encoding="utf-8")
    paths["spec"].write_text(json.dumps(scenario.spec.to_dict(), indent=2) + "\n", encoding="utf-8")
    if updated is not None:
        paths["updated"] = d / "updated.csv"
        write_measurements([updated], paths["updated"])
    return paths


def read_scenario_files(directory: str | Path) -> dict:
    d = Path(directory)
    out = {
        "baseline": load_measurements(d / "baseline.csv"),
        "local_traces": load_traces(d / "local_traces.csv"),
        "system_traces": load_traces(d / "system_traces.csv"),
        "model": load_model(d / "model.json"),
        "workload": load_workload(d / "workload.json"),
    }
    if (d / "updated.csv").exists():
        out["updated"] = load_measurements(d / "updated.csv")
    return out
