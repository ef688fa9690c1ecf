"""Discrete-event simulation of open QPN models.

Two engines are available:

``routing``
    For models in which every transition mode moves one token from one
    place to at most one other place (the usual shape of architectural
    performance models).  Because routing choices and service requirements
    do not depend on the system state, each request's whole path and its
    service times can be drawn up front; the contention dynamics are then
    played out by the station kernel (compiled when available).
``general``
    Token-level interpretation of arbitrary QPNs (arc weights, multi-input
    modes, stuck tokens), written in plain Python.

``simulate`` picks ``routing`` whenever the model allows it.

Randomness: every stochastic source (arrivals of one class, service at one
place, mode choice of one transition) has its own generator derived from the
seed and the source's name, so changing a service demand leaves every other
draw untouched.
"""

from __future__ import annotations

import logging
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from ..errors import InputError, ModelValidationError
from . import kernel
from .model import QpnModel, validate_model

log = logging.getLogger(__name__)

_ARRIVAL, _SERVICE, _CHOICE = 1, 2, 3


def stream(seed: int, kind: int, name: str) -> np.random.Generator:
    key = (kind, zlib.crc32(name.encode("utf-8")))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


@dataclass(frozen=True)
class SimConfig:
    duration_s: float
    warmup_s: float = 0.0
    replications: int = 1
    seed: int = 0
    max_route_length: int = 10_000

    def __post_init__(self):
        if not (self.duration_s > 0 and math.isfinite(self.duration_s)):
            raise InputError("duration_s must be a positive number")
        if not (0 <= self.warmup_s < self.duration_s):
            raise InputError("warmup_s must satisfy 0 <= warmup_s < duration_s")
        if self.replications < 1:
            raise InputError("replications must be >= 1")

    @property
    def window_s(self) -> float:
        return self.duration_s - self.warmup_s


@dataclass
class PredictionResult:
    """Pooled output of all replications.

    ``response_times_ms`` holds one value per request completed after the
    warm-up, keyed by request class.  ``utilization`` is the mean busy
    fraction of each resource over the measurement window.
    """

    response_times_ms: dict[str, np.ndarray]
    utilization: dict[str, float]
    completed: int
    arrived: int
    in_system_at_end: int
    mean_in_system: float
    arrival_rate_per_s: float
    replications: int
    engine: str = "routing"
    warnings: list[str] = field(default_factory=list)

    def pooled(self) -> np.ndarray:
        parts = [self.response_times_ms[k] for k in sorted(self.response_times_ms)]
        return np.concatenate(parts) if parts else np.zeros(0)

    def mean_response_ms(self) -> float:
        pooled = self.pooled()
        return float(pooled.mean()) if pooled.size else math.nan

    def summary(self) -> dict:
        return {
            "engine": self.engine,
            "replications": self.replications,
            "arrived": self.arrived,
            "completed": self.completed,
            "in_system_at_end": self.in_system_at_end,
            "mean_in_system": self.mean_in_system,
            "arrival_rate_per_s": self.arrival_rate_per_s,
            "utilization": dict(sorted(self.utilization.items())),
            "response_time_ms": {
                cls: {
                    "count": int(v.size),
                    "mean": float(v.mean()) if v.size else None,
                    "p50": float(np.percentile(v, 50)) if v.size else None,
                    "p95": float(np.percentile(v, 95)) if v.size else None,
                }
                for cls, v in sorted(self.response_times_ms.items())
            },
            "warnings": list(self.warnings),
        }


@dataclass
class _RunOutput:
    classes: np.ndarray  # class index per request
    arrival: np.ndarray
    completion: np.ndarray
    busy_area: np.ndarray  # per station
    system_area: float
    in_system: int


# ---------------------------------------------------------------------------
# Routing compilation
# ---------------------------------------------------------------------------


@dataclass
class RoutingPlan:
    """State machine over (place, color) for routable models."""

    states: list[tuple[str, str]]
    index: dict[tuple[str, str], int]
    station_of: np.ndarray  # station index per state, -1 for ordinary places
    demand: np.ndarray  # service demand (s) per state, 0 for ordinary places
    deterministic: np.ndarray  # bool per state
    transition_of: list[str | None]  # consuming transition per state
    next_cum: list[np.ndarray]  # cumulative mode probabilities per state
    next_state: list[np.ndarray]  # successor state per mode (-1 = leaves the system)
    stations: list[str]  # queueing place names
    resources: list[str]
    servers: np.ndarray
    is_ps: np.ndarray


def compile_routing(model: QpnModel) -> RoutingPlan | None:
    """Return a :class:`RoutingPlan`, or None when the model needs the general engine."""
    consumers: dict[tuple[str, str], str] = {}
    modes_of: dict[tuple[str, str], list[tuple[float, tuple[str, str] | None]]] = {}
    for t in model.transitions:
        for m in t.modes:
            if len(m.inputs) != 1 or m.inputs[0].weight != 1:
                return None
            if len(m.outputs) > 1 or any(a.weight != 1 for a in m.outputs):
                return None
            src = (m.inputs[0].place, m.inputs[0].color)
            if consumers.setdefault(src, t.name) != t.name:
                return None
            dst = (m.outputs[0].place, m.outputs[0].color) if m.outputs else None
            modes_of.setdefault(src, []).append((m.probability, dst))

    starts = [(c.entry_place, c.name) for c in model.workload.request_classes]
    starts += [k for k, n in sorted(model.initial_marking.items()) if n > 0]
    states: list[tuple[str, str]] = []
    index: dict[tuple[str, str], int] = {}
    frontier = list(starts)
    while frontier:
        st = frontier.pop(0)
        if st in index:
            continue
        index[st] = len(states)
        states.append(st)
        options = modes_of.get(st)
        if not options or sum(p for p, _ in options) <= 0:
            return None  # token would be stranded
        frontier.extend(d for _, d in options if d is not None)

    stations = [p.name for p in model.queueing_places]
    st_index = {name: i for i, name in enumerate(stations)}
    station_of = np.full(len(states), -1, dtype=np.int32)
    demand = np.zeros(len(states))
    deterministic = np.zeros(len(states), dtype=bool)
    transition_of: list[str | None] = []
    next_cum, next_state = [], []
    for i, (pname, color) in enumerate(states):
        place = model.place(pname)
        if place.queue is not None:
            station_of[i] = st_index[pname]
            demand[i] = place.queue.service_demand_s[color]
            deterministic[i] = place.queue.distribution == "deterministic"
        options = modes_of[(pname, color)]
        probs = np.array([p for p, _ in options], dtype=float)
        cum = np.cumsum(probs / probs.sum())
        cum[-1] = 1.0
        next_cum.append(cum)
        next_state.append(np.array([index[d] if d is not None else -1 for _, d in options]))
        transition_of.append(consumers[(pname, color)])
    qp = model.queueing_places
    return RoutingPlan(
        states=states,
        index=index,
        station_of=station_of,
        demand=demand,
        deterministic=deterministic,
        transition_of=transition_of,
        next_cum=next_cum,
        next_state=next_state,
        stations=stations,
        resources=[p.resource for p in qp],
        servers=np.array([p.queue.servers for p in qp], dtype=np.int32),
        is_ps=np.array([p.queue.discipline == "PS" for p in qp], dtype=np.int8),
    )


def offered_load(model: QpnModel, plan: RoutingPlan | None = None) -> dict[str, float]:
    """Per queueing place: arrival rate x demand / servers from the traffic equations."""
    plan = plan or compile_routing(model)
    if plan is None:
        return {}
    k = len(plan.states)
    P = np.zeros((k, k))
    for i in range(k):
        cum = plan.next_cum[i]
        probs = np.diff(np.concatenate(([0.0], cum)))
        for p, j in zip(probs, plan.next_state[i]):
            if j >= 0:
                P[i, j] += p
    external = np.zeros(k)
    for cls, rate in model.workload.effective_rates().items():
        cls_entry = next(c.entry_place for c in model.workload.request_classes if c.name == cls)
        external[plan.index[(cls_entry, cls)]] += rate
    try:
        visits = np.linalg.solve(np.eye(k) - P.T, external)
    except np.linalg.LinAlgError:
        return {}
    load: dict[str, float] = {name: 0.0 for name in plan.stations}
    for i, (pname, _) in enumerate(plan.states):
        s = plan.station_of[i]
        if s >= 0:
            load[pname] += float(visits[i] * plan.demand[i] / plan.servers[s])
    return load


def stability_warnings(model: QpnModel, plan: RoutingPlan | None = None) -> list[str]:
    return [
        f"unstable configuration at {name}: offered load {rho:.3f} >= 1"
        for name, rho in sorted(offered_load(model, plan).items())
        if rho >= 1.0
    ]


# ---------------------------------------------------------------------------
# Arrival generation
# ---------------------------------------------------------------------------


def _poisson_times(rng: np.random.Generator, rate: float, horizon: float) -> np.ndarray:
    if rate <= 0 or horizon <= 0:
        return np.zeros(0)
    expected = rate * horizon
    chunk = int(expected + 6.0 * math.sqrt(expected) + 16)
    times = np.cumsum(rng.standard_exponential(chunk)) / rate
    while times[-1] <= horizon:
        more = np.cumsum(rng.standard_exponential(chunk)) / rate + times[-1]
        times = np.concatenate([times, more])
    return times[times <= horizon]


def _requests(model: QpnModel, seed: int, horizon: float):
    """All requests of one run in arrival order.

    Returns arrival times, class index per request, start-state key per
    request, the list of start states ``(place, color)`` and class names.
    Initial-marking tokens become requests arriving at time 0.
    """
    classes = model.workload.request_classes
    rates = model.workload.effective_rates()
    names = _class_names(model)
    name_idx = {n: i for i, n in enumerate(names)}
    starts = [(c.entry_place, c.name) for c in classes]
    times, cls_idx, order, start_idx = [], [], [], []
    marking = [(k, n) for k, n in sorted(model.initial_marking.items()) if n > 0]
    for (pname, color), n in marking:
        times.append(np.zeros(n))
        cls_idx.append(np.full(n, name_idx[color]))
        order.append(np.full(n, -1))
        start_idx.append(np.full(n, len(starts)))
        starts.append((pname, color))
    for i, c in enumerate(classes):
        t = _poisson_times(stream(seed, _ARRIVAL, c.name), rates[c.name], horizon)
        times.append(t)
        cls_idx.append(np.full(t.size, i))
        order.append(np.full(t.size, i))
        start_idx.append(np.full(t.size, i))
    t = np.concatenate(times) if times else np.zeros(0)
    ci = np.concatenate(cls_idx).astype(np.int64) if times else np.zeros(0, dtype=np.int64)
    oi = np.concatenate(order).astype(np.int64) if times else np.zeros(0, dtype=np.int64)
    si = np.concatenate(start_idx).astype(np.int64) if times else np.zeros(0, dtype=np.int64)
    # time first, then marking before arrivals, then class order, then sequence
    perm = np.lexsort((np.arange(t.size), oi, t))
    return t[perm], ci[perm], si[perm], starts, names


# ---------------------------------------------------------------------------
# Routing engine
# ---------------------------------------------------------------------------


def _sample_routes(model: QpnModel, plan: RoutingPlan, seed: int, start_states: np.ndarray, max_len: int):
    n = start_states.size
    service_rng = {name: stream(seed, _SERVICE, name) for name in plan.stations}
    choice_rng = {t: stream(seed, _CHOICE, t) for t in sorted({t for t in plan.transition_of if t})}
    active = np.arange(n, dtype=np.int64)
    state = start_states.astype(np.int64)
    v_req, v_step, v_station, v_work = [], [], [], []
    for step in range(max_len + 1):
        if active.size == 0:
            break
        if step == max_len:
            raise ModelValidationError(
                f"routing did not terminate within {max_len} steps for {active.size} requests"
            )
        order = np.lexsort((active, state))
        active, state = active[order], state[order]
        bounds = np.flatnonzero(np.diff(state)) + 1
        starts = np.concatenate(([0], bounds))
        ends = np.concatenate((bounds, [state.size]))
        new_state = np.empty_like(state)
        for a, b in zip(starts, ends):
            s = int(state[a])
            reqs = active[a:b]
            st = int(plan.station_of[s])
            if st >= 0:
                if plan.deterministic[s]:
                    w = np.full(reqs.size, plan.demand[s])
                else:
                    w = plan.demand[s] * service_rng[plan.stations[st]].standard_exponential(reqs.size)
                v_req.append(reqs)
                v_step.append(np.full(reqs.size, step))
                v_station.append(np.full(reqs.size, st, dtype=np.int32))
                v_work.append(w)
            cum = plan.next_cum[s]
            if cum.size == 1:
                new_state[a:b] = plan.next_state[s][0]
            else:
                u = choice_rng[plan.transition_of[s]].random(reqs.size)
                pick = np.minimum(np.searchsorted(cum, u, side="right"), cum.size - 1)
                new_state[a:b] = plan.next_state[s][pick]
        keep = new_state >= 0
        active, state = active[keep], new_state[keep]

    if v_req:
        req = np.concatenate(v_req)
        stp = np.concatenate(v_step)
        sta = np.concatenate(v_station)
        wrk = np.concatenate(v_work)
        perm = np.lexsort((stp, req))
        req, sta, wrk = req[perm], sta[perm], wrk[perm]
    else:
        req = np.zeros(0, dtype=np.int64)
        sta = np.zeros(0, dtype=np.int32)
        wrk = np.zeros(0)
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(req, minlength=n), out=ptr[1:])
    return ptr, sta, wrk


def _run_routing(model: QpnModel, plan: RoutingPlan, config: SimConfig, seed: int, run_stations) -> _RunOutput:
    arrival, cls_idx, start_key, starts, _ = _requests(model, seed, config.duration_s)
    start_state = np.array([plan.index[starts[k]] for k in start_key], dtype=np.int64)
    ptr, sta, wrk = _sample_routes(model, plan, seed, start_state, config.max_route_length)
    completion, busy, sys_area, in_sys = run_stations(
        arrival, ptr, sta, wrk, plan.servers, plan.is_ps, config.warmup_s, config.duration_s
    )
    return _RunOutput(cls_idx, arrival, completion, busy, sys_area, in_sys)


# ---------------------------------------------------------------------------
# Public entry point
# ---------------------------------------------------------------------------


def simulate(
    model: QpnModel,
    config: SimConfig,
    *,
    engine: str = "auto",
    workers: int = 1,
    backend: str = "auto",
) -> PredictionResult:
    """Simulate ``model`` for ``config.replications`` runs and pool the results.

    Replication ``i`` uses seed ``config.seed + i``.  ``workers > 1`` runs
    replications on a thread pool (the compiled kernel releases the GIL).
    ``backend`` selects the station kernel: ``auto``, ``cython`` or ``python``.
    """
    validate_model(model)
    plan = compile_routing(model) if engine in ("auto", "routing") else None
    if engine == "routing" and plan is None:
        raise ModelValidationError("model is not a routing network; use engine='general'")
    if engine not in ("auto", "routing", "general"):
        raise InputError(f"unknown engine {engine!r}")
    if backend == "auto":
        run_stations = kernel.run_stations
    elif backend == "python":
        run_stations = kernel.run_stations_py
    elif backend == "cython":
        if kernel.run_stations_compiled is None:
            raise InputError("compiled kernel is not available")
        run_stations = kernel.run_stations_compiled
    else:
        raise InputError(f"unknown backend {backend!r}")

    warnings: list[str] = []
    if plan is not None:
        warnings += stability_warnings(model, plan)
        used = "routing"

        def one(i: int) -> _RunOutput:
            return _run_routing(model, plan, config, config.seed + i, run_stations)

        resources = plan.resources
        servers = plan.servers
    else:
        from .engine import run_general

        used = "general"
        log.info("stability not checked for non-routing model %s", model.name)

        def one(i: int) -> _RunOutput:
            return run_general(model, config, config.seed + i)

        qp = model.queueing_places
        resources = [p.resource for p in qp]
        servers = np.array([p.queue.servers for p in qp], dtype=np.int32)
    for w in warnings:
        log.warning(w)

    reps = range(config.replications)
    if workers > 1 and config.replications > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(one, reps))
    else:
        runs = [one(i) for i in reps]
    names = _class_names(model)
    return _pool(runs, names, resources, servers, config, used, warnings)


def _class_names(model: QpnModel) -> list[str]:
    names = [c.name for c in model.workload.request_classes]
    extra = sorted({c for (_, c), n in model.initial_marking.items() if n > 0} - set(names))
    return names + extra


def _pool(
    runs: Iterable[_RunOutput],
    names: list[str],
    resources: list[str],
    servers: np.ndarray,
    config: SimConfig,
    engine: str,
    warnings: list[str],
) -> PredictionResult:
    runs = list(runs)
    window = config.window_s
    rts: dict[str, list[np.ndarray]] = {n: [] for n in names}
    busy = np.zeros(len(resources))
    completed = arrived = in_sys = 0
    area = 0.0
    window_arrivals = 0
    for run in runs:
        done = ~np.isnan(run.completion)
        completed += int(done.sum())
        arrived += int(run.arrival.size)
        in_sys += run.in_system
        area += run.system_area
        window_arrivals += int(np.count_nonzero(run.arrival >= config.warmup_s))
        busy += run.busy_area
        measured = done & (run.completion >= config.warmup_s)
        rt = (run.completion[measured] - run.arrival[measured]) * 1000.0
        cls = run.classes[measured]
        for i, n in enumerate(names):
            rts[n].append(rt[cls == i])
    busy_by: dict[str, float] = {}
    cap_by: dict[str, float] = {}
    for r, b, c in zip(resources, busy, servers):
        busy_by[r] = busy_by.get(r, 0.0) + float(b)
        cap_by[r] = cap_by.get(r, 0.0) + float(c)
    util = {
        r: min(1.0, max(0.0, busy_by[r] / (len(runs) * window * cap_by[r]))) for r in busy_by
    }
    return PredictionResult(
        response_times_ms={n: np.concatenate(v) if v else np.zeros(0) for n, v in rts.items()},
        utilization=util,
        completed=completed,
        arrived=arrived,
        in_system_at_end=in_sys,
        mean_in_system=area / (len(runs) * window),
        arrival_rate_per_s=window_arrivals / (len(runs) * window),
        replications=len(runs),
        engine=engine,
        warnings=list(warnings),
    )
