from __future__ import annotations

import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perfbridge.errors import GraphError, InputError
from perfbridge.graph import (
    DeviationMap,
    GraphMapping,
    SubsystemDeviation,
    expected_calls,
    extract_deviation_subgraph,
    map_to_system_graph,
    propagate_adjustments,
    propagate_bottom_up,
    subsystem_deviation,
)
from perfbridge.perfdata import ComponentId, DependencyGraph, NodeInfo
from perfbridge.stats import DeviationReport

from oracles import all_paths_weight, brute_force_mcs_size


def cid(name, sub="B"):
    return ComponentId(sub, name)


def graph(nodes, edges):
    """nodes: {name: mean}; edges: {(a, b): multiplicity}; subsystem from 'sub:' prefix."""

    def _id(n):
        return ComponentId.parse(n) if ":" in n else cid(n)

    return DependencyGraph(
        {_id(n): NodeInfo(m) for n, m in nodes.items()},
        {(_id(a), _id(b)): w for (a, b), w in edges.items()},
    )


def dev(md):
    return DeviationReport(p_value=0.001, delta=-1.0, magnitude="large", md_ms=md, significant=True)


def devmap(**mds):
    return DeviationMap({cid(k): dev(v) for k, v in mds.items()})


# Fig. 2 shape: B1 -> B3, B1 -> B4, B2 -> B5 ; B3 and B4 deviated
FIG2 = graph(
    {"B1": 100.0, "B2": 200.0, "B3": 30.0, "B4": 20.0, "B5": 50.0},
    {("B1", "B3"): 1.0, ("B1", "B4"): 1.0, ("B2", "B5"): 1.0},
)


# ---------------------------------------------------------------------------
# DeviationMap
# ---------------------------------------------------------------------------


def test_deviation_map_rejects_insignificant():
    bad = DeviationReport(0.5, 0.0, "negligible", 0.0, False)
    with pytest.raises(InputError):
        DeviationMap({cid("B1"): bad})
    assert len(DeviationMap.from_reports({cid("B1"): bad, cid("B2"): dev(1.0)})) == 1


# ---------------------------------------------------------------------------
# extract_deviation_subgraph
# ---------------------------------------------------------------------------


def test_extract_empty():
    assert len(extract_deviation_subgraph(FIG2, DeviationMap({}))) == 0


def test_extract_fig2():
    sub = extract_deviation_subgraph(FIG2, devmap(B3=1.0, B4=1.0))
    assert set(sub.nodes) == {cid("B1"), cid("B3"), cid("B4")}
    assert set(sub.edges) == {(cid("B1"), cid("B3")), (cid("B1"), cid("B4"))}
    assert sub.nodes[cid("B3")].deviated and not sub.nodes[cid("B1")].deviated


def test_extract_top_level_only():
    sub = extract_deviation_subgraph(FIG2, devmap(B2=1.0))
    assert set(sub.nodes) == {cid("B2")}
    assert len(sub.edges) == 0


def test_extract_missing():
    with pytest.raises(GraphError, match="Z"):
        extract_deviation_subgraph(FIG2, devmap(Z=1.0))


# ---------------------------------------------------------------------------
# map_to_system_graph
# ---------------------------------------------------------------------------


def test_mapping_full_when_identical():
    sub = extract_deviation_subgraph(FIG2, devmap(B3=1.0, B4=1.0))
    m = map_to_system_graph(sub, FIG2)
    assert set(m.pairs) == set(sub.nodes)
    m.check(sub, FIG2)


def test_mapping_no_common():
    other = graph({"sub:Q": 1.0}, {})
    with pytest.raises(GraphError, match="no common components"):
        map_to_system_graph(FIG2, other)


def test_mapping_missing_node():
    local = graph({"A": 1, "B": 1, "C": 1}, {("A", "B"): 1, ("A", "C"): 1})
    system = graph({"A": 1, "B": 1}, {("A", "B"): 1})
    m = map_to_system_graph(local, system)
    assert m.pairs == {cid("A"): cid("A"), cid("B"): cid("B")}


def test_mapping_tie_break_prefers_deviated():
    # local A->B, but system lacks that edge: only one of {A, B} can be kept
    local = DependencyGraph(
        {cid("A"): NodeInfo(1.0), cid("B"): NodeInfo(1.0, deviated=True)},
        {(cid("A"), cid("B")): 1.0},
    )
    system = graph({"A": 1, "B": 1}, {})
    assert map_to_system_graph(local, system).pairs == {cid("B"): cid("B")}
    local2 = graph({"A": 1, "B": 1}, {("A", "B"): 1.0})
    assert map_to_system_graph(local2, system).pairs == {cid("A"): cid("A")}


def test_mapping_check_rejects_bad_pairs():
    local = graph({"A": 1, "B": 1}, {("A", "B"): 1.0})
    system = graph({"A": 1, "B": 1}, {})
    with pytest.raises(GraphError):
        GraphMapping({cid("A"): cid("A"), cid("B"): cid("B")}).check(local, system)
    with pytest.raises(GraphError):
        GraphMapping({cid("A"): cid("B")}).check(local, system)


NAMES = ["A", "B", "C", "D", "E", "F"]


@st.composite
def graph_pair(draw):
    """Two DAGs over ≤ 6 labels (edges only go forward in NAMES order)."""
    pairs = list(itertools.combinations(NAMES, 2))

    def one():
        nodes = draw(st.sets(st.sampled_from(NAMES), min_size=1, max_size=6))
        edges = [p for p in pairs if p[0] in nodes and p[1] in nodes and draw(st.booleans())]
        return nodes, edges

    return one(), one()


@settings(max_examples=150, deadline=None)
@given(graph_pair())
def test_mapping_is_maximum(pair):
    (ln, le), (sn, se) = pair
    local = graph({n: 1.0 for n in ln}, {e: 1.0 for e in le})
    system = graph({n: 1.0 for n in sn}, {e: 1.0 for e in se})
    if not set(ln) & set(sn):
        with pytest.raises(GraphError):
            map_to_system_graph(local, system)
        return
    m = map_to_system_graph(local, system)
    m.check(local, system)
    assert len(m) == brute_force_mcs_size(ln, le, sn, se)


# ---------------------------------------------------------------------------
# propagate_bottom_up
# ---------------------------------------------------------------------------


def _identity(g):
    return GraphMapping({n: n for n in g.nodes})


def test_propagate_single_edge():
    g = graph({"B1": 10.0, "B3": 3.0}, {("B1", "B3"): 1.0})
    out = propagate_bottom_up(g, _identity(g), devmap(B3=2.0))
    assert out == {cid("B1"): 12.0}


def test_propagate_multiplicity_three():
    g = graph({"B1": 10.0, "B3": 3.0}, {("B1", "B3"): 3.0})
    out = propagate_bottom_up(g, _identity(g), devmap(B3=2.0))
    assert out == {cid("B1"): 16.0}


def test_propagate_two_paths():
    g = graph(
        {"t": 50.0, "a": 10.0, "b": 10.0, "d": 1.0},
        {("t", "a"): 1.0, ("a", "d"): 2.0, ("t", "b"): 2.0, ("b", "d"): 1.0},
    )
    out = propagate_bottom_up(g, _identity(g), devmap(d=1.0))
    assert out[cid("t")] == 54.0
    edges = {}
    for (a, b), w in g.edges.items():
        edges.setdefault(a, []).append((b, w))
    assert expected_calls(g, cid("t"), cid("d")) == all_paths_weight(edges, cid("t"), cid("d")) == 4.0


def test_propagate_top_level_self():
    out = propagate_bottom_up(FIG2, _identity(FIG2), devmap(B2=-5.0))
    assert out[cid("B2")] == 195.0
    assert out[cid("B1")] == 100.0


def test_propagate_floor_at_zero():
    g = graph({"B1": 1.0, "B3": 1.0}, {("B1", "B3"): 1.0})
    assert propagate_bottom_up(g, _identity(g), devmap(B3=-5.0)) == {cid("B1"): 0.0}


def test_propagate_unmapped_dropped():
    g = graph({"B1": 10.0, "B3": 3.0}, {("B1", "B3"): 1.0})
    out = propagate_bottom_up(g, GraphMapping({cid("B1"): cid("B1")}), devmap(B3=2.0))
    assert out == {cid("B1"): 10.0}


def test_propagate_stays_inside_subsystem():
    g = graph(
        {"A:a1": 10.0, "B1": 5.0, "B3": 1.0},
        {("A:a1", "B1"): 1.0, ("B1", "B3"): 2.0},
    )
    out = propagate_bottom_up(g, _identity(g), devmap(B3=1.0))
    assert out[cid("B1")] == 7.0
    assert out[ComponentId("A", "a1")] == 10.0


@st.composite
def dag_and_two_maps(draw):
    n = draw(st.integers(3, 7))
    names = [f"n{i}" for i in range(n)]
    edges = {}
    for i, j in itertools.combinations(range(n), 2):
        if draw(st.booleans()):
            edges[(names[i], names[j])] = draw(st.sampled_from([0.5, 1.0, 2.0, 3.0]))
    nodes = {name: draw(st.floats(50.0, 100.0)) for name in names}
    chosen = draw(st.lists(st.sampled_from(names), unique=True, min_size=0, max_size=n))
    split = draw(st.integers(0, len(chosen)))
    mds = {c: draw(st.floats(-2.0, 2.0)) for c in chosen}
    first = {c: mds[c] for c in chosen[:split]}
    second = {c: mds[c] for c in chosen[split:]}
    return graph(nodes, edges), first, second


@settings(max_examples=100, deadline=None)
@given(dag_and_two_maps())
def test_propagate_linearity(data):
    g, first, second = data
    ident = _identity(g)
    a = propagate_adjustments(g, ident, devmap(**first))
    b = propagate_adjustments(g, ident, devmap(**second))
    both = propagate_adjustments(g, ident, devmap(**first, **second))
    adjusted = propagate_bottom_up(g, ident, devmap(**first, **second))
    for t in g.top_level():
        assert both[t] == pytest.approx(a[t] + b[t], abs=1e-9)
        assert adjusted[t] == max(0.0, g.nodes[t].mean_exec_ms + both[t])


@settings(max_examples=50, deadline=None)
@given(dag_and_two_maps())
def test_propagate_zero_map_noop(data):
    g, _, _ = data
    out = propagate_bottom_up(g, _identity(g), DeviationMap({}))
    assert out == {t: g.nodes[t].mean_exec_ms for t in g.top_level()}
    assert subsystem_deviation(g, out) == []


@settings(max_examples=50, deadline=None)
@given(dag_and_two_maps())
def test_propagate_matches_path_enumeration(data):
    g, first, second = data
    mds = {**first, **second}
    out = propagate_bottom_up(g, _identity(g), devmap(**mds))
    edges = {}
    for (a, b), w in g.edges.items():
        edges.setdefault(a, []).append((b, w))
    for t in g.top_level():
        expect = g.nodes[t].mean_exec_ms + sum(
            md * all_paths_weight(edges, t, cid(d)) for d, md in mds.items()
        )
        assert out[t] == pytest.approx(max(0.0, expect), abs=1e-9)


# ---------------------------------------------------------------------------
# subsystem_deviation
# ---------------------------------------------------------------------------


def test_subsystem_fig2d():
    g = graph({"B1": 100.0, "B2": 200.0}, {})
    out = subsystem_deviation(g, {cid("B1"): 300.0, cid("B2"): 200.0})
    assert len(out) == 1
    assert out[0].relative_delta == pytest.approx(2 / 3, rel=1e-15)
    assert out[0].baseline_total_ms == 300.0 and out[0].adjusted_total_ms == 500.0


def test_subsystem_unchanged_is_empty():
    assert subsystem_deviation(FIG2, {t: FIG2.nodes[t].mean_exec_ms for t in FIG2.top_level()}) == []


def test_subsystem_ten_to_twelve():
    g = graph({"B1": 10.0}, {})
    (d,) = subsystem_deviation(g, {cid("B1"): 12.0})
    assert d.relative_delta == pytest.approx(0.2, rel=1e-15)
    assert d.relative_delta == (d.adjusted_total_ms - d.baseline_total_ms) / d.baseline_total_ms


def test_subsystem_degenerate():
    g = graph({"B1": 0.0}, {})
    with pytest.raises(GraphError, match="degenerate"):
        subsystem_deviation(g, {cid("B1"): 1.0})


def test_subsystem_deviation_roundtrip():
    d = SubsystemDeviation.between("B", 300.0, 500.0)
    assert SubsystemDeviation.from_dict(d.to_dict()) == d
