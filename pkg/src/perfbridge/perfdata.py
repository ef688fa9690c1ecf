"""Ingestion of component measurements and call traces.

Two file formats are supported, both plain comma-separated UTF-8 text:

* measurements: header ``subsystem,component,version,iteration,duration_ms``,
  one row per benchmark iteration;
* traces: records ``trace_id,caller_subsystem,caller_component,
  callee_subsystem,callee_component,duration_ms``; a caller of ``ROOT``
  marks an entry-point call.  A header line and ``#`` comments are allowed.

Traces and a measurement catalog are combined into a :class:`DependencyGraph`,
an immutable DAG whose nodes carry mean execution times and whose edges carry
the average number of calls per invocation of the caller.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from graphlib import CycleError, TopologicalSorter
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import GraphError, InputError, ParseError
from .stats import check_sample

log = logging.getLogger(__name__)

MEASUREMENT_HEADER = ("subsystem", "component", "version", "iteration", "duration_ms")
TRACE_HEADER = (
    "trace_id",
    "caller_subsystem",
    "caller_component",
    "callee_subsystem",
    "callee_component",
    "duration_ms",
)
ROOT = "ROOT"


@dataclass(frozen=True, order=True)
class ComponentId:
    subsystem: str
    component: str

    def __post_init__(self):
        if not self.subsystem or not self.component:
            raise InputError(f"empty component identifier: {self.subsystem!r}/{self.component!r}")

    def __str__(self) -> str:
        return f"{self.subsystem}:{self.component}"

    @classmethod
    def parse(cls, text: str) -> "ComponentId":
        sub, sep, comp = text.partition(":")
        if not sep:
            raise InputError(f"component id must look like 'subsystem:component', got {text!r}")
        return cls(sub, comp)


@dataclass
class MeasurementCatalog:
    """Execution-time samples (ms) per component for one code version."""

    version: str
    entries: dict[ComponentId, tuple[float, ...]] = field(default_factory=dict)

    def __post_init__(self):
        for cid, sample in self.entries.items():
            check_sample(sample, str(cid))

    def __contains__(self, cid: object) -> bool:
        return cid in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def mean(self, cid: ComponentId) -> float:
        return float(np.mean(self.entries[cid]))

    def components(self) -> list[ComponentId]:
        return sorted(self.entries)


@dataclass(frozen=True)
class TraceEvent:
    trace_id: str
    caller: ComponentId | None  # None is the ROOT marker
    callee: ComponentId
    duration_ms: float

    def __post_init__(self):
        if not (self.duration_ms >= 0 and math.isfinite(self.duration_ms)):
            raise InputError(f"trace {self.trace_id}: invalid duration {self.duration_ms!r}")
        if self.caller == self.callee:
            raise InputError(f"trace {self.trace_id}: {self.callee} calls itself")


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------


def _parse_duration(text: str, where: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"duration {text!r} is not a number", where) from None
    if not math.isfinite(value) or value < 0:
        raise ParseError(f"duration {text!r} must be a finite non-negative number", where)
    return value


def read_measurements(source: str | Path) -> dict[str, MeasurementCatalog]:
    """Parse a measurement file into one catalog per version tag."""
    path = Path(source)
    name = path.name
    samples: dict[str, dict[ComponentId, list[float]]] = defaultdict(lambda: defaultdict(list))
    seen: set[tuple[str, ComponentId, int]] = set()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("no measurements", name)
        if tuple(h.strip() for h in header) != MEASUREMENT_HEADER:
            raise ParseError(f"expected header {','.join(MEASUREMENT_HEADER)}", f"{name}:1")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            where = f"{name}:{lineno}"
            if len(row) != 5:
                raise ParseError(f"expected 5 fields, got {len(row)}", where)
            sub, comp, version, iteration, duration = (c.strip() for c in row)
            try:
                cid = ComponentId(sub, comp)
            except InputError as exc:
                raise ParseError(str(exc), where) from None
            if not version:
                raise ParseError("empty version tag", where)
            try:
                it = int(iteration)
            except ValueError:
                raise ParseError(f"iteration {iteration!r} is not an integer", where) from None
            key = (version, cid, it)
            if key in seen:
                raise ParseError(f"duplicate iteration {it} for {cid} ({version})", where)
            seen.add(key)
            samples[version][cid].append(_parse_duration(duration, where))
    if not samples:
        raise ParseError("no measurements", name)
    return {
        version: MeasurementCatalog(version, {cid: tuple(v) for cid, v in entries.items()})
        for version, entries in samples.items()
    }


def load_measurements(source: str | Path, version: str | None = None) -> MeasurementCatalog:
    """Load the catalog of one version from a measurement file.

    When ``version`` is omitted the file must contain exactly one version.
    """
    catalogs = read_measurements(source)
    if version is None:
        if len(catalogs) != 1:
            raise InputError(
                f"{Path(source).name} holds versions {sorted(catalogs)}; pick one explicitly"
            )
        return next(iter(catalogs.values()))
    if version not in catalogs:
        raise InputError(f"version {version!r} not found in {Path(source).name}")
    return catalogs[version]


def write_measurements(catalogs: Iterable[MeasurementCatalog], dest: str | Path) -> None:
    with Path(dest).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MEASUREMENT_HEADER)
        for cat in catalogs:
            for cid in cat.components():
                for i, value in enumerate(cat.entries[cid]):
                    writer.writerow([cid.subsystem, cid.component, cat.version, i, repr(value)])


def iter_traces(source: str | Path) -> Iterator[TraceEvent]:
    path = Path(source)
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            cells = [c.strip() for c in row]
            if tuple(cells) == TRACE_HEADER:
                continue
            where = f"{path.name}:{lineno}"
            if len(cells) != 6:
                raise ParseError(f"expected 6 fields, got {len(cells)}", where)
            tid, csub, ccomp, dsub, dcomp, duration = cells
            if not tid:
                raise ParseError("empty trace id", where)
            try:
                caller = None if csub == ROOT else ComponentId(csub, ccomp)
                callee = ComponentId(dsub, dcomp)
                yield TraceEvent(tid, caller, callee, _parse_duration(duration, where))
            except ParseError:
                raise
            except InputError as exc:
                raise ParseError(str(exc), where) from None


def load_traces(source: str | Path) -> list[TraceEvent]:
    events = list(iter_traces(source))
    if not events:
        raise ParseError("no trace records", Path(source).name)
    return events


def write_traces(events: Iterable[TraceEvent], dest: str | Path) -> None:
    with Path(dest).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for ev in events:
            if ev.caller is None:
                caller = (ROOT, ROOT)
            else:
                caller = (ev.caller.subsystem, ev.caller.component)
            writer.writerow(
                [ev.trace_id, *caller, ev.callee.subsystem, ev.callee.component, repr(ev.duration_ms)]
            )


# ---------------------------------------------------------------------------
# Dependency graph
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NodeInfo:
    mean_exec_ms: float
    is_top_level: bool = False
    measured: bool = True
    deviated: bool = False
    invocations: int = 0


class DependencyGraph:
    """Immutable labeled DAG of components.

    ``nodes`` maps each component to its :class:`NodeInfo`; ``edges`` maps
    ``(caller, callee)`` to the average number of calls per caller invocation.
    The top-level flag is derived here: a node is top-level when no node of
    the same subsystem calls it.
    """

    __slots__ = ("_nodes", "_edges", "_children", "_parents", "_order", "warnings")

    def __init__(
        self,
        nodes: Mapping[ComponentId, NodeInfo],
        edges: Mapping[tuple[ComponentId, ComponentId], float],
        warnings: Sequence[str] = (),
    ):
        children: dict[ComponentId, list[ComponentId]] = {n: [] for n in nodes}
        parents: dict[ComponentId, list[ComponentId]] = {n: [] for n in nodes}
        for (a, b), w in edges.items():
            if a not in nodes or b not in nodes:
                missing = a if a not in nodes else b
                raise GraphError(f"edge {a} -> {b} references unknown node {missing}")
            if not (w >= 0 and math.isfinite(w)):
                raise GraphError(f"edge {a} -> {b} has invalid multiplicity {w!r}")
            children[a].append(b)
            parents[b].append(a)
        for lst in (*children.values(), *parents.values()):
            lst.sort()
        sorter = TopologicalSorter({n: parents[n] for n in sorted(nodes)})
        try:
            order = tuple(sorter.static_order())
        except CycleError as exc:
            cycle = " -> ".join(str(c) for c in exc.args[1])
            raise GraphError(f"not a DAG: cycle {cycle}") from None
        fixed = {}
        for n, info in nodes.items():
            top = not any(p.subsystem == n.subsystem for p in parents[n])
            fixed[n] = info if info.is_top_level == top else replace(info, is_top_level=top)
        self._nodes = dict(sorted(fixed.items()))
        self._edges = dict(sorted(edges.items()))
        self._children = {n: tuple(c) for n, c in children.items()}
        self._parents = {n: tuple(p) for n, p in parents.items()}
        self._order = order
        self.warnings = tuple(warnings)

    # -- container protocol ---------------------------------------------------

    @property
    def nodes(self) -> Mapping[ComponentId, NodeInfo]:
        return self._nodes

    @property
    def edges(self) -> Mapping[tuple[ComponentId, ComponentId], float]:
        return self._edges

    def __contains__(self, cid: object) -> bool:
        return cid in self._nodes

    def __len__(self) -> int:
        return len(self._nodes)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DependencyGraph):
            return NotImplemented
        return self._nodes == other._nodes and self._edges == other._edges

    def __repr__(self) -> str:
        return f"DependencyGraph({len(self._nodes)} nodes, {len(self._edges)} edges)"

    # -- queries ----------------------------------------------------------------

    def children(self, cid: ComponentId) -> tuple[ComponentId, ...]:
        return self._children[cid]

    def parents(self, cid: ComponentId) -> tuple[ComponentId, ...]:
        return self._parents[cid]

    def topological_order(self) -> tuple[ComponentId, ...]:
        """Callers before callees."""
        return self._order

    def subsystems(self) -> list[str]:
        return sorted({n.subsystem for n in self._nodes})

    def top_level(self, subsystem: str | None = None) -> list[ComponentId]:
        return [
            n
            for n, info in self._nodes.items()
            if info.is_top_level and (subsystem is None or n.subsystem == subsystem)
        ]

    def induced(self, keep: Iterable[ComponentId], mark: Iterable[ComponentId] = ()) -> "DependencyGraph":
        """Induced subgraph on ``keep``; nodes in ``mark`` get ``deviated=True``."""
        keep = set(keep)
        marked = set(mark)
        nodes = {
            n: replace(info, deviated=n in marked)
            for n, info in self._nodes.items()
            if n in keep
        }
        edges = {e: w for e, w in self._edges.items() if e[0] in keep and e[1] in keep}
        return DependencyGraph(nodes, edges, self.warnings)

    def to_dict(self) -> dict:
        return {
            "nodes": [
                {
                    "id": str(n),
                    "mean_exec_ms": info.mean_exec_ms,
                    "is_top_level": info.is_top_level,
                    "measured": info.measured,
                    "deviated": info.deviated,
                }
                for n, info in self._nodes.items()
            ],
            "edges": [
                {"caller": str(a), "callee": str(b), "calls_per_invocation": w}
                for (a, b), w in self._edges.items()
            ],
            "warnings": list(self.warnings),
        }


def build_dependency_graph(
    traces: Sequence[TraceEvent], catalog: MeasurementCatalog
) -> DependencyGraph:
    """Build the component dependency DAG from call traces.

    An edge's multiplicity is the total number of caller->callee calls
    divided by the total number of invocations of the caller.  Node means come
    from ``catalog``; components without measurements get a mean of 0 and a
    warning.
    """
    if not traces:
        raise InputError("no trace events")
    invocations: dict[ComponentId, int] = defaultdict(int)
    calls: dict[tuple[ComponentId, ComponentId], int] = defaultdict(int)
    for ev in traces:
        invocations[ev.callee] += 1
        if ev.caller is not None:
            invocations.setdefault(ev.caller, 0)
            calls[(ev.caller, ev.callee)] += 1

    warnings = []
    nodes = {}
    for cid in sorted(invocations):
        if cid in catalog:
            nodes[cid] = NodeInfo(catalog.mean(cid), invocations=invocations[cid])
        else:
            warnings.append(f"component {cid} has no measurements; mean set to 0")
            nodes[cid] = NodeInfo(0.0, measured=False, invocations=invocations[cid])
    edges = {}
    for (a, b), n in calls.items():
        if invocations[a] == 0:
            raise GraphError(f"{a} calls {b} but is never invoked itself")
        edges[(a, b)] = n / invocations[a]
    for w in warnings:
        log.warning(w)
    return DependencyGraph(nodes, edges, warnings)
