"""Mapping local performance deviations onto the system dependency graph.

The steps are:

1. :func:`extract_deviation_subgraph` keeps the deviated components of the
   local graph together with every ancestor, up to the top-level components.
2. :func:`map_to_system_graph` aligns that subgraph with the system-level
   graph through a label-anchored maximum common subgraph search.
3. :func:`propagate_bottom_up` pushes each mean difference up to the
   top-level components, scaled by the expected number of calls.
4. :func:`subsystem_deviation` sums top-level timings per subsystem and
   reports the relative change.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping

from .errors import GraphError, InputError
from .perfdata import ComponentId, DependencyGraph
from .stats import DeviationReport

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DeviationMap:
    """Significantly deviated components and their comparison reports."""

    entries: Mapping[ComponentId, DeviationReport] = field(default_factory=dict)

    def __post_init__(self):
        for cid, rep in self.entries.items():
            if not rep.significant or rep.magnitude == "negligible":
                raise InputError(f"{cid} is not a significant deviation")

    @classmethod
    def from_reports(cls, reports: Mapping[ComponentId, DeviationReport]) -> "DeviationMap":
        """Keep only the significant reports."""
        return cls({c: r for c, r in sorted(reports.items()) if r.significant})

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(sorted(self.entries))

    def __contains__(self, cid: object) -> bool:
        return cid in self.entries

    def md(self, cid: ComponentId) -> float:
        return self.entries[cid].md_ms

    def to_dict(self) -> dict:
        return {str(c): self.entries[c].to_dict() for c in sorted(self.entries)}

    @classmethod
    def from_dict(cls, data: Mapping[str, dict]) -> "DeviationMap":
        return cls({ComponentId.parse(k): DeviationReport.from_dict(v) for k, v in data.items()})


@dataclass(frozen=True)
class GraphMapping:
    """Injective map from local-subgraph nodes to system-graph nodes."""

    pairs: Mapping[ComponentId, ComponentId]

    def __len__(self) -> int:
        return len(self.pairs)

    def check(self, local: DependencyGraph, system: DependencyGraph) -> None:
        """Raise :class:`GraphError` unless the mapping is injective,
        label-consistent and edge-preserving."""
        if len(set(self.pairs.values())) != len(self.pairs):
            raise GraphError("mapping is not injective")
        for src, dst in self.pairs.items():
            if src not in local or dst not in system:
                raise GraphError(f"mapping pair {src} -> {dst} references unknown node")
            if src != dst:
                raise GraphError(f"mapping pair {src} -> {dst} is not label-consistent")
        for a, b in local.edges:
            if a in self.pairs and b in self.pairs:
                if (self.pairs[a], self.pairs[b]) not in system.edges:
                    raise GraphError(f"local edge {a} -> {b} has no image in the system graph")


@dataclass(frozen=True)
class SubsystemDeviation:
    subsystem: str
    baseline_total_ms: float
    adjusted_total_ms: float
    relative_delta: float

    @classmethod
    def between(cls, subsystem: str, baseline_total: float, adjusted_total: float):
        if baseline_total <= 0:
            raise GraphError(f"degenerate subsystem timing for {subsystem}: total {baseline_total}")
        return cls(
            subsystem,
            baseline_total,
            adjusted_total,
            (adjusted_total - baseline_total) / baseline_total,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "SubsystemDeviation":
        return cls(**data)


# ---------------------------------------------------------------------------
# Subgraph extraction
# ---------------------------------------------------------------------------


def extract_deviation_subgraph(local: DependencyGraph, deviations: DeviationMap) -> DependencyGraph:
    """Induced subgraph of deviated nodes plus all their ancestors."""
    missing = [c for c in deviations if c not in local]
    if missing:
        raise GraphError("deviated components missing from local graph: " + ", ".join(map(str, missing)))
    keep: set[ComponentId] = set()
    stack = list(deviations)
    while stack:
        node = stack.pop()
        if node in keep:
            continue
        keep.add(node)
        stack.extend(local.parents(node))
    return local.induced(keep, mark=deviations)


# ---------------------------------------------------------------------------
# Maximum common subgraph
# ---------------------------------------------------------------------------


def map_to_system_graph(local_sub: DependencyGraph, system: DependencyGraph) -> GraphMapping:
    """Maximum label-anchored common subgraph of ``local_sub`` and ``system``.

    Component ids are unique within a graph, so a node can only map onto its
    namesake and every candidate mapping is a subset of the shared labels;
    the label constraint leaves no non-trivial automorphisms to break.  A
    subset is feasible when every local edge inside it also exists in the
    system graph, i.e. it is an independent set of the "conflict graph" of
    local edges missing from the system.  Nodes without conflicts are always
    taken; the conflicting ones are resolved by branch and bound.

    Among maximum mappings, the one covering more deviated nodes wins, then
    the lexicographically smallest sorted id tuple.
    """
    if len(local_sub) == 0:
        return GraphMapping({})
    candidates = sorted(n for n in local_sub.nodes if n in system)
    if not candidates:
        raise GraphError("no common components between local and system graphs")
    cand = set(candidates)
    conflicts: dict[ComponentId, set[ComponentId]] = {}
    for a, b in local_sub.edges:
        if a in cand and b in cand and (a, b) not in system.edges:
            conflicts.setdefault(a, set()).add(b)
            conflicts.setdefault(b, set()).add(a)
    free = [n for n in candidates if n not in conflicts]
    contested = sorted(conflicts, key=lambda n: (-len(conflicts[n]), n))
    deviated = {n for n, info in local_sub.nodes.items() if info.deviated}

    def rank(chosen: Iterable[ComponentId]):
        chosen = sorted(chosen)
        # larger is better: size, deviated coverage, then lexicographically smallest
        return (len(chosen), sum(1 for n in chosen if n in deviated)), chosen

    best_key, best_set = rank(())
    best: list = [best_key, best_set]

    def better(sel: list[ComponentId]) -> bool:
        key, ids = rank(sel)
        if key != best[0]:
            return key > best[0]
        return ids < best[1]

    def search(i: int, chosen: list[ComponentId], blocked: set[ComponentId]):
        if len(chosen) + (len(contested) - i) < best[0][0]:
            return
        if i == len(contested):
            if better(chosen):
                best[0], best[1] = rank(chosen)
            return
        node = contested[i]
        if node not in blocked:
            chosen.append(node)
            search(i + 1, chosen, blocked | conflicts[node])
            chosen.pop()
        search(i + 1, chosen, blocked)

    search(0, [], set())
    selected = sorted(free + list(best[1]))
    mapping = GraphMapping({n: n for n in selected})
    mapping.check(local_sub, system)
    return mapping


# ---------------------------------------------------------------------------
# Propagation
# ---------------------------------------------------------------------------


def expected_calls(system: DependencyGraph, top: ComponentId, target: ComponentId) -> float:
    """Expected invocations of ``target`` per invocation of ``top`` through
    call paths that stay inside ``top``'s subsystem."""
    memo: dict[ComponentId, float] = {}
    for node in reversed(system.topological_order()):
        if node.subsystem != top.subsystem:
            continue
        acc = 1.0 if node == target else 0.0
        for child in system.children(node):
            if child.subsystem == node.subsystem:
                acc += system.edges[(node, child)] * memo.get(child, 0.0)
        memo[node] = acc
    return memo.get(top, 0.0)


def propagate_adjustments(
    system: DependencyGraph, mapping: GraphMapping, deviations: DeviationMap
) -> dict[ComponentId, float]:
    """Unclamped change (ms) of every top-level system node's mean.

    Each mapped deviated component contributes its mean difference times the
    expected number of its invocations per top-level invocation (the sum over
    call paths of the product of edge multiplicities).  The result is linear
    in the deviation map.
    """
    shift: dict[ComponentId, float] = {}
    for cid in deviations:
        target = mapping.pairs.get(cid)
        if target is None:
            log.warning("deviated component %s not present in system graph; dropped", cid)
            continue
        if target not in system:
            raise GraphError(f"mapping target {target} not in system graph")
        shift[target] = shift.get(target, 0.0) + deviations.md(cid)

    # accumulated[n] = sum over deviated d of md(d) * paths(n -> d), callees first
    accumulated: dict[ComponentId, float] = {}
    for node in reversed(system.topological_order()):
        acc = shift.get(node, 0.0)
        for child in system.children(node):
            if child.subsystem == node.subsystem:
                acc += system.edges[(node, child)] * accumulated[child]
        accumulated[node] = acc
    return {top: accumulated[top] for top in system.top_level()}


def propagate_bottom_up(
    system: DependencyGraph, mapping: GraphMapping, deviations: DeviationMap
) -> dict[ComponentId, float]:
    """Adjusted mean execution time (ms) of every top-level system node,
    floored at zero.  See :func:`propagate_adjustments`."""
    adjustments = propagate_adjustments(system, mapping, deviations)
    return {
        top: max(0.0, system.nodes[top].mean_exec_ms + adj) for top, adj in adjustments.items()
    }


def subsystem_deviation(
    system: DependencyGraph, adjusted: Mapping[ComponentId, float]
) -> list[SubsystemDeviation]:
    """Relative change of each subsystem's summed top-level timing.

    Subsystems whose total is unchanged are omitted.
    """
    out = []
    for sub in system.subsystems():
        tops = system.top_level(sub)
        base = sum(system.nodes[t].mean_exec_ms for t in tops)
        new = sum(adjusted.get(t, system.nodes[t].mean_exec_ms) for t in tops)
        if new == base:
            continue
        out.append(SubsystemDeviation.between(sub, base, new))
    return out
