"""Queueing Petri Net model: data types, JSON document format and validation.

Tokens are colored by request class.  Ordinary places only hold tokens;
queueing places put arriving tokens through a queue served by ``servers``
identical servers and then hold them in their depository.  All transitions
are immediate: a transition mode fires as soon as its input arcs are
satisfied, with the choice among enabled modes of one transition drawn from
their probabilities.

The document format is described in ``docs/model-format.md``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from ..errors import ModelValidationError

DISCIPLINES = ("FCFS", "PS")
DISTRIBUTIONS = ("exponential", "deterministic")
PROB_TOL = 1e-9


@dataclass(frozen=True)
class QueueSpec:
    subsystem: str
    service_demand_s: Mapping[str, float]
    resource: str = ""
    servers: int = 1
    discipline: str = "FCFS"
    distribution: str = "exponential"


@dataclass(frozen=True)
class Place:
    name: str
    queue: QueueSpec | None = None

    @property
    def is_queueing(self) -> bool:
        return self.queue is not None

    @property
    def resource(self) -> str:
        return (self.queue.resource or self.name) if self.queue else ""


@dataclass(frozen=True)
class Arc:
    place: str
    color: str
    weight: int = 1


@dataclass(frozen=True)
class Mode:
    name: str
    probability: float
    inputs: tuple[Arc, ...]
    outputs: tuple[Arc, ...] = ()


@dataclass(frozen=True)
class Transition:
    name: str
    modes: tuple[Mode, ...]


@dataclass(frozen=True)
class RequestClass:
    name: str
    arrival_rate_per_s: float
    class_mix_probability: float
    entry_place: str = ""


@dataclass(frozen=True)
class WorkloadSpec:
    """Open workload.

    The aggregate arrival rate is the sum of the class rates; class ``c``
    receives ``aggregate * class_mix_probability[c]`` of it.  Keeping the
    class rates proportional to the mix makes the two views agree.
    """

    request_classes: tuple[RequestClass, ...]

    @property
    def total_rate(self) -> float:
        return math.fsum(c.arrival_rate_per_s for c in self.request_classes)

    def effective_rates(self) -> dict[str, float]:
        total = self.total_rate
        return {c.name: total * c.class_mix_probability for c in self.request_classes}

    def validate(self) -> None:
        if not self.request_classes:
            raise ModelValidationError("workload has no request classes")
        names = [c.name for c in self.request_classes]
        if len(set(names)) != len(names):
            raise ModelValidationError(f"duplicate request class names in {names}")
        for c in self.request_classes:
            if not c.name:
                raise ModelValidationError("request class with empty name")
            if not (c.arrival_rate_per_s > 0 and math.isfinite(c.arrival_rate_per_s)):
                raise ModelValidationError(
                    f"request class {c.name}: arrival_rate_per_s must be > 0"
                )
            if not (0.0 <= c.class_mix_probability <= 1.0):
                raise ModelValidationError(
                    f"request class {c.name}: class_mix_probability must lie in [0, 1]"
                )
        total = math.fsum(c.class_mix_probability for c in self.request_classes)
        if abs(total - 1.0) > PROB_TOL:
            raise ModelValidationError(f"class mix probabilities sum to {total!r}, not 1")

    def to_dict(self) -> dict:
        return {
            "request_classes": [
                {
                    "name": c.name,
                    "arrival_rate_per_s": c.arrival_rate_per_s,
                    "class_mix_probability": c.class_mix_probability,
                    **({"entry_place": c.entry_place} if c.entry_place else {}),
                }
                for c in self.request_classes
            ]
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "WorkloadSpec":
        try:
            classes = tuple(
                RequestClass(
                    name=str(c["name"]),
                    arrival_rate_per_s=float(c["arrival_rate_per_s"]),
                    class_mix_probability=float(c["class_mix_probability"]),
                    entry_place=str(c.get("entry_place", "")),
                )
                for c in data["request_classes"]
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelValidationError(f"malformed workload: {exc!r}") from None
        spec = cls(classes)
        spec.validate()
        return spec


@dataclass(frozen=True)
class QpnModel:
    places: tuple[Place, ...]
    transitions: tuple[Transition, ...]
    workload: WorkloadSpec
    initial_marking: Mapping[tuple[str, str], int] = field(default_factory=dict)
    name: str = "model"

    # -- lookups ---------------------------------------------------------------

    def place(self, name: str) -> Place:
        for p in self.places:
            if p.name == name:
                return p
        raise KeyError(name)

    @property
    def queueing_places(self) -> list[Place]:
        return [p for p in self.places if p.is_queueing]

    def subsystems(self) -> list[str]:
        return sorted({p.queue.subsystem for p in self.queueing_places})

    def resources(self) -> list[str]:
        return sorted({p.resource for p in self.queueing_places})

    def with_workload(self, workload: WorkloadSpec) -> "QpnModel":
        """Copy with ``workload`` substituted; entry places are inherited by
        class name when the new spec omits them."""
        entries = {c.name: c.entry_place for c in self.workload.request_classes}
        classes = tuple(
            c if c.entry_place else replace(c, entry_place=entries.get(c.name, ""))
            for c in workload.request_classes
        )
        model = replace(self, workload=WorkloadSpec(classes))
        validate_model(model)
        return model

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        places = []
        for p in self.places:
            if p.queue is None:
                places.append({"name": p.name, "type": "ordinary"})
            else:
                q = p.queue
                places.append(
                    {
                        "name": p.name,
                        "type": "queueing",
                        "subsystem": q.subsystem,
                        "resource": q.resource or p.name,
                        "servers": q.servers,
                        "discipline": q.discipline,
                        "distribution": q.distribution,
                        "service_demand_s": dict(q.service_demand_s),
                    }
                )

        def arcs(items: Iterable[Arc]):
            return [{"place": a.place, "color": a.color, "weight": a.weight} for a in items]

        return {
            "name": self.name,
            "places": places,
            "transitions": [
                {
                    "name": t.name,
                    "modes": [
                        {
                            "name": m.name,
                            "probability": m.probability,
                            "inputs": arcs(m.inputs),
                            "outputs": arcs(m.outputs),
                        }
                        for m in t.modes
                    ],
                }
                for t in self.transitions
            ],
            "workload": self.workload.to_dict(),
            "initial_marking": [
                {"place": p, "color": c, "count": n}
                for (p, c), n in sorted(self.initial_marking.items())
            ],
        }


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def _arc(data: Mapping, where: str) -> Arc:
    try:
        weight = data.get("weight", 1)
        if isinstance(weight, bool) or int(weight) != weight:
            raise ModelValidationError(f"{where}: arc weight must be an integer")
        return Arc(str(data["place"]), str(data["color"]), int(weight))
    except KeyError as exc:
        raise ModelValidationError(f"{where}: arc missing field {exc}") from None


def _mode(data: Mapping, where: str, default_name: str) -> Mode:
    name = str(data.get("name", default_name))
    where = f"{where}/{name}"
    return Mode(
        name=name,
        probability=float(data.get("probability", 1.0)),
        inputs=tuple(_arc(a, f"{where} input") for a in data.get("inputs", ())),
        outputs=tuple(_arc(a, f"{where} output") for a in data.get("outputs", ())),
    )


def model_from_dict(data: Mapping[str, Any]) -> QpnModel:
    """Build and validate a model from its document form."""
    for section in ("places", "transitions", "workload"):
        if section not in data:
            raise ModelValidationError(f"model document lacks the '{section}' section")
    places = []
    for i, p in enumerate(data["places"]):
        name = p.get("name")
        if not name:
            raise ModelValidationError(f"place #{i} has no name")
        kind = p.get("type", "queueing" if "service_demand_s" in p else "ordinary")
        if kind == "ordinary":
            places.append(Place(str(name)))
        elif kind == "queueing":
            try:
                demands = {str(k): float(v) for k, v in p["service_demand_s"].items()}
                queue = QueueSpec(
                    subsystem=str(p["subsystem"]),
                    service_demand_s=demands,
                    resource=str(p.get("resource", name)),
                    servers=p.get("servers", 1),
                    discipline=str(p.get("discipline", "FCFS")).upper(),
                    distribution=str(p.get("distribution", "exponential")).lower(),
                )
            except KeyError as exc:
                raise ModelValidationError(f"queueing place {name}: missing field {exc}") from None
            places.append(Place(str(name), queue))
        else:
            raise ModelValidationError(f"place {name}: unknown type {kind!r}")
    transitions = []
    for i, t in enumerate(data["transitions"]):
        name = str(t.get("name", f"t{i}"))
        if "modes" in t:
            modes = tuple(
                _mode(m, f"transition {name}", f"m{j}") for j, m in enumerate(t["modes"])
            )
        else:
            modes = (_mode(t, f"transition {name}", "m0"),)
        transitions.append(Transition(name, modes))
    marking = {}
    for entry in data.get("initial_marking", ()):
        key = (str(entry["place"]), str(entry["color"]))
        marking[key] = marking.get(key, 0) + int(entry.get("count", 1))
    model = QpnModel(
        places=tuple(places),
        transitions=tuple(transitions),
        workload=WorkloadSpec.from_dict(data["workload"]),
        initial_marking=marking,
        name=str(data.get("name", "model")),
    )
    validate_model(model)
    return model


def load_model(source: str | Path) -> QpnModel:
    path = Path(source)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelValidationError(f"{path.name}: not a valid JSON document ({exc})") from None
    if not isinstance(data, dict):
        raise ModelValidationError(f"{path.name}: top level must be an object")
    return model_from_dict(data)


def save_model(model: QpnModel, dest: str | Path) -> None:
    Path(dest).write_text(json.dumps(model.to_dict(), indent=2) + "\n", encoding="utf-8")


def load_workload(source: str | Path) -> WorkloadSpec:
    data = json.loads(Path(source).read_text(encoding="utf-8"))
    if "workload" in data:
        data = data["workload"]
    return WorkloadSpec.from_dict(data)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def validate_model(model: QpnModel) -> None:
    """Check every structural invariant; raise naming the offending element."""
    names = [p.name for p in model.places]
    if len(set(names)) != len(names):
        raise ModelValidationError("duplicate place names")
    by_name = {p.name: p for p in model.places}
    for p in model.queueing_places:
        q = p.queue
        where = f"queueing place {p.name}"
        if not q.subsystem:
            raise ModelValidationError(f"{where}: empty subsystem")
        if isinstance(q.servers, bool) or not isinstance(q.servers, int) or q.servers < 1:
            raise ModelValidationError(f"{where}: servers must be an integer >= 1")
        if q.discipline not in DISCIPLINES:
            raise ModelValidationError(f"{where}: discipline must be one of {DISCIPLINES}")
        if q.distribution not in DISTRIBUTIONS:
            raise ModelValidationError(f"{where}: distribution must be one of {DISTRIBUTIONS}")
        if not q.service_demand_s:
            raise ModelValidationError(f"{where}: no service demands")
        for color, s in q.service_demand_s.items():
            if not (s > 0 and math.isfinite(s)):
                raise ModelValidationError(
                    f"{where}: service demand for color {color!r} must be > 0, got {s!r}"
                )

    def check_arc(arc: Arc, where: str, entering: bool):
        if arc.place not in by_name:
            raise ModelValidationError(f"{where}: arc references unknown place {arc.place!r}")
        if arc.weight < 1:
            raise ModelValidationError(f"{where}: arc weight must be >= 1")
        place = by_name[arc.place]
        if place.is_queueing and arc.color not in place.queue.service_demand_s:
            raise ModelValidationError(
                f"{where}: queueing place {arc.place} has no service demand for color {arc.color!r}"
            )

    tnames = [t.name for t in model.transitions]
    if len(set(tnames)) != len(tnames):
        raise ModelValidationError("duplicate transition names")
    for t in model.transitions:
        if not t.modes:
            raise ModelValidationError(f"transition {t.name}: no firing modes")
        total = 0.0
        for m in t.modes:
            where = f"transition {t.name}/{m.name}"
            if not (m.probability >= 0 and math.isfinite(m.probability)):
                raise ModelValidationError(f"{where}: invalid probability {m.probability!r}")
            if not m.inputs:
                raise ModelValidationError(f"{where}: a mode needs at least one input arc")
            for a in m.inputs:
                check_arc(a, where, entering=False)
            for a in m.outputs:
                check_arc(a, where, entering=True)
            total += m.probability
        if abs(total - 1.0) > PROB_TOL:
            raise ModelValidationError(
                f"transition {t.name}: firing-mode probabilities sum to {total!r}, not 1"
            )

    model.workload.validate()
    for c in model.workload.request_classes:
        if not c.entry_place:
            raise ModelValidationError(f"request class {c.name}: no entry_place")
        check_arc(Arc(c.entry_place, c.name), f"request class {c.name}", entering=True)
    for (pname, color), n in model.initial_marking.items():
        check_arc(Arc(pname, color), f"initial marking {pname}/{color}", entering=True)
        if n < 0:
            raise ModelValidationError(f"initial marking {pname}/{color}: negative count")


# ---------------------------------------------------------------------------
# Parameter update
# ---------------------------------------------------------------------------


def apply_deviation(model: QpnModel, deviations: Sequence[Any]) -> QpnModel:
    """Scale the service demands of each deviated subsystem's queueing places.

    ``deviations`` are :class:`~perfbridge.graph.SubsystemDeviation` objects
    (anything with ``subsystem`` and ``relative_delta``).  Every color's
    demand becomes ``s * (1 + relative_delta)``, evaluated as
    ``s * adjusted / baseline`` when both totals are present so that a
    demand equal to the baseline total maps onto the adjusted total
    without rounding drift.  All other parameters are left untouched.
    """
    subsystems = set(model.subsystems())
    unmatched = sorted({d.subsystem for d in deviations} - subsystems)
    if unmatched:
        raise ModelValidationError(
            "deviations for subsystems without a queueing place: " + ", ".join(unmatched)
        )
    scalings: dict[str, list[tuple[float, float]]] = {}
    for d in deviations:
        if not d.relative_delta > -1:
            raise ModelValidationError(
                f"subsystem {d.subsystem}: relative delta {d.relative_delta!r} must be > -1"
            )
        base = getattr(d, "baseline_total_ms", None)
        new = getattr(d, "adjusted_total_ms", None)
        ratio = (new, base) if base and new is not None else (1 + d.relative_delta, 1.0)
        scalings.setdefault(d.subsystem, [])
        if ratio[0] != ratio[1]:
            scalings[d.subsystem].append(ratio)
    if not scalings:
        return model
    places = []
    for p in model.places:
        if p.queue is not None and p.queue.subsystem in scalings:
            demands = {}
            for c, s in p.queue.service_demand_s.items():
                for num, den in scalings[p.queue.subsystem]:
                    s = s * num / den
                demands[c] = s
            p = replace(p, queue=replace(p.queue, service_demand_s=demands))
        places.append(p)
    return replace(model, places=tuple(places))
