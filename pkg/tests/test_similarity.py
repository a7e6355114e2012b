import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rumex.errors import SizeLimitExceeded
from rumex.graph import ModalitySchema, induced_subgraph
from rumex.similarity import (
    ExactMatch, Graded, Node, all_measures, ged, ged_result, ged_similarity, graphsim, mcs, mcs_similarity, node_sim,
)

from conftest import build

TINY = ModalitySchema(["a", "b"], {"a": 1, "b": 1})


def tiny_graph(rng, n, p):
    nodes = [(f"x{i}", "ab"[int(rng.integers(2))], [float(rng.integers(2))]) for i in range(n)]
    edges = [(f"x{i}", f"x{j}") for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    return build(TINY, nodes, edges, edge_feat=lambda u, v: [float(rng.integers(2))])


def same_node(g1, u, g2, v):
    return g1.modality(u) == g2.modality(v) and np.array_equal(g1.features(u), g2.features(v))


def same_edge(g1, e1, g2, e2):
    return np.array_equal(g1.edge_features(*e1), g2.edge_features(*e2))


def partial_maps(g1, g2):
    """Every injective partial map from g1 nodes to g2 nodes (None = unmapped)."""
    ids1, ids2 = list(g1.node_ids), list(g2.node_ids)
    for targets in itertools.product([None, *ids2], repeat=len(ids1)):
        used = [t for t in targets if t is not None]
        if len(used) == len(set(used)):
            yield dict(zip(ids1, targets))


def brute_mcs(g1, g2):
    best = 0
    for m in partial_maps(g1, g2):
        if any(v is not None and not same_node(g1, u, g2, v) for u, v in m.items()):
            continue
        nodes = sum(v is not None for v in m.values())
        edges = sum(
            1 for u, w in g1.edges()
            if m[u] is not None and m[w] is not None and g2.has_edge(m[u], m[w])
            and same_edge(g1, (u, w), g2, (m[u], m[w]))
        )
        best = max(best, nodes + edges)
    return best


def brute_ged(g1, g2):
    best = math.inf
    for m in partial_maps(g1, g2):
        cost = sum(1 if v is None else (0 if same_node(g1, u, g2, v) else 1) for u, v in m.items())
        cost += g2.n_nodes - sum(v is not None for v in m.values())
        covered = set()
        for u, w in g1.edges():
            a, b = m[u], m[w]
            if a is not None and b is not None and g2.has_edge(a, b):
                covered.add(frozenset((a, b)))
                cost += 0 if same_edge(g1, (u, w), g2, (a, b)) else 1
            else:
                cost += 1
        cost += sum(frozenset(e) not in covered for e in g2.edges())
        best = min(best, cost)
    return best


def worked_pair():
    """Shared 5-cycle; each side adds one private node wired by two edges."""
    s = ModalitySchema(["user", "tweet"], {"user": 1, "tweet": 1})
    core = [(f"c{i}", "user", [float(i)]) for i in range(5)]
    ring = [(f"c{i}", f"c{(i + 1) % 5}") for i in range(5)]
    g1 = build(s, core + [("x", "tweet", [10.0])], ring + [("x", "c0"), ("x", "c2")])
    g2 = build(s, core + [("y", "tweet", [20.0])], ring + [("y", "c1"), ("y", "c3")])
    return g1, g2


def test_worked_example_is_exact():
    g1, g2 = worked_pair()
    r = mcs(g1, g2)
    assert (r.common_nodes, r.common_edges) == (5, 5)
    assert r.total_elements - 2 * (r.common_nodes + r.common_edges) == 6  # 2 nodes + 4 edges differ
    assert mcs_similarity(g1, g2) == 0.625


def test_node_sim_examples():
    u = Node("user", np.array([0.0]))
    assert node_sim(u, u) == 1.0
    assert node_sim(u, Node("tweet", np.array([0.0]))) == 0.0
    assert node_sim(u, Node("user", np.array([1.0])), Graded(1.0)) == pytest.approx(math.exp(-1), abs=1e-12)
    assert node_sim(u, Node("user", np.array([0.05])), ExactMatch(0.1)) == 1.0


def test_identity_and_disjoint_modalities():
    g1, _ = worked_pair()
    assert mcs_similarity(g1, g1) == 1.0
    assert graphsim(g1, g1) == 1.0
    assert ged(g1, g1) == 0.0 and ged_similarity(g1, g1) == 1.0
    only_a = build(TINY, [("p", "a", [0.0])], [])
    only_b = build(TINY, [("q", "b", [0.0])], [])
    assert mcs_similarity(only_a, only_b) == 0.0


def test_graphsim_hand_scored_pair():
    s = ModalitySchema(["user"], {"user": 2})
    g1 = build(s, [("a", "user", [0.0, 0.0]), ("b", "user", [1.0, 1.0])], [("a", "b")])
    g2 = build(s, [("a", "user", [0.0, 0.0]), ("b", "user", [1.0, 5.0])], [("a", "b")])
    # Jaccard over {modality, (i, f_i)}: 1.0 for a, 2/4 for b, edge gets the mean
    assert graphsim(g1, g2) == pytest.approx((1.0 + 0.5 + 0.75) / 3, abs=1e-12)
    assert graphsim(g1, g1) == mcs_similarity(g1, g1)


def test_ged_single_edge_deletion():
    g1, _ = worked_pair()
    cut = induced_subgraph(g1, g1.node_ids)
    cut = type(cut)(cut.graph, cut.nodes, cut.edges[1:])
    assert ged(g1, cut) == 1.0


def test_size_limit_and_beam_fallback():
    s = ModalitySchema(["user"], {"user": 1})
    nodes = [(f"n{i}", "user", [float(i)]) for i in range(14)]
    g = build(s, nodes, [(f"n{i}", f"n{i+1}") for i in range(13)])
    with pytest.raises(SizeLimitExceeded):
        mcs(g, g)
    approx = mcs(g, g, approximate=True)
    assert not approx.exact and approx.score == 1.0
    r = ged_result(g, g)
    assert not r.exact and r.cost == 0.0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 4), st.integers(1, 4))
def test_mcs_and_ged_match_brute_force(seed, n1, n2):
    rng = np.random.default_rng(seed)
    g1, g2 = tiny_graph(rng, n1, 0.6), tiny_graph(rng, n2, 0.6)
    r = mcs(g1, g2)
    assert r.exact
    assert r.common_nodes + r.common_edges == brute_mcs(g1, g2)
    res = ged_result(g1, g2)
    assert res.exact and res.cost == brute_ged(g1, g2)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000))
def test_symmetry_range_and_triangle(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (tiny_graph(rng, int(rng.integers(1, 6)), 0.5) for _ in range(3))
    for fn in (mcs_similarity, graphsim, ged_similarity):
        v = fn(a, b)
        assert 0.0 <= v <= 1.0
        assert v == pytest.approx(fn(b, a), abs=1e-12)
    assert ged(a, b) == ged(b, a)
    assert ged(a, c) <= ged(a, b) + ged(b, c)


def test_all_measures_keys():
    g1, g2 = worked_pair()
    out = all_measures(g1, g2)
    assert set(out) == {"mcs", "mcs_exact", "graphsim", "ged", "ged_exact", "ged_similarity"}
    # relabel x as y (1), then drop two private edges and add two (4)
    assert out["mcs"] == 0.625 and out["ged"] == 5.0 and out["ged_exact"]
