import itertools
import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rumex.errors import EmptySeedSet, InfeasibleEdgeCount
from rumex.events import AddEdge, AddNode, DetectRumour, replay
from rumex.graph import ModalitySchema
from rumex.propagation import (
    PropagationConfig, gen_base_graph, simulate, simulate_infection, simulate_influence, simulate_stream,
)

from conftest import build

SCHEMA = ModalitySchema(["user", "tweet"], {"user": 2, "tweet": 2})


def line(n):
    return build(SCHEMA, [(f"p{i}", "user", [0, 0]) for i in range(n)], [(f"p{i}", f"p{i+1}") for i in range(n - 1)])


def star(leaves):
    nodes = [("c", "user", [0, 0])] + [(f"l{i}", "tweet", [0, 0]) for i in range(leaves)]
    return build(SCHEMA, nodes, [("c", f"l{i}") for i in range(leaves)])


def si_expected_size(g, seeds, p, steps):
    """Exact mean outbreak size of synchronous SI by enumerating the chain."""
    ids = list(g.node_ids)
    dist = {frozenset(seeds): 1.0}
    for _ in range(steps):
        nxt = {}
        for inf, w in dist.items():
            sus = [v for v in ids if v not in inf]
            probs = [1 - (1 - p) ** sum(u in inf for u in g.neighbors(v)) for v in sus]
            for hits in itertools.product((0, 1), repeat=len(sus)):
                pr = math.prod(q if h else 1 - q for q, h in zip(probs, hits))
                if pr == 0:
                    continue
                key = inf | {v for v, h in zip(sus, hits) if h}
                nxt[key] = nxt.get(key, 0.0) + w * pr
        dist = nxt
    return sum(len(s) * w for s, w in dist.items())


def transmits_from_seeds(casc):
    """All output nodes are reachable from the seeds along transmitting edges."""
    adj = {n: set() for n in casc.nodes}
    for u, v in casc.edges:
        adj[u].add(v)
        adj[v].add(u)
    seen, todo = set(casc.seeds), deque(casc.seeds)
    while todo:
        for w in adj[todo.popleft()]:
            if w not in seen:
                seen.add(w)
                todo.append(w)
    return seen == set(casc.nodes)


def test_gen_base_graph_examples():
    one = gen_base_graph(SCHEMA, 1, 0, rng_seed=3)
    assert one.n_nodes == 1 and one.n_edges == 0
    a = gen_base_graph(SCHEMA, 100, 300, rng_seed=7)
    b = gen_base_graph(SCHEMA, 100, 300, rng_seed=7)
    assert a.n_nodes == 100 and a.n_edges == 300 and a.is_connected()
    assert list(a.edges()) == list(b.edges())
    assert all(np.array_equal(a.features(n), b.features(n)) for n in a.node_ids)
    with pytest.raises(InfeasibleEdgeCount):
        gen_base_graph(SCHEMA, 4, 7)


def test_locality_limits_edge_span():
    g = gen_base_graph(SCHEMA, 200, 600, rng_seed=1, locality=10)
    assert g.is_connected()
    span = max(abs(g.index_of(u) - g.index_of(v)) for u, v in g.edges())
    assert span <= 10


def test_si_zero_prob_and_saturation():
    g = gen_base_graph(SCHEMA, 40, 80, rng_seed=2)
    none = simulate_infection(g, PropagationConfig("SI", 0.0, seed_count=3, rng_seed=5))
    assert set(none.nodes) == set(none.seeds) and len(none.seeds) == 3
    full = simulate_infection(g, PropagationConfig("SI", 1.0, max_steps=40, rng_seed=5))
    assert set(full.nodes) == set(g.node_ids)
    assert transmits_from_seeds(full)


def test_si_path_matches_markov_chain():
    g = line(3)
    exact = si_expected_size(g, {"p0"}, 0.5, steps=3)
    sizes = np.array([
        len(simulate_infection(g, PropagationConfig("SI", 0.5, max_steps=3, rng_seed=s), seeds=["p0"]).nodes)
        for s in range(10_000)
    ])
    assert abs(sizes.mean() - exact) <= 3 * sizes.std() / math.sqrt(sizes.size)


def test_markov_oracle_sanity():
    # two steps on a 3-path from an end: 1 + 3/4 (b ever) + 1/4 (c)
    assert si_expected_size(line(3), {"p0"}, 0.5, steps=2) == pytest.approx(2.0)


def test_ic_star_leaf_frequency():
    g = star(3)
    counts = np.zeros(3)
    runs = 10_000
    for s in range(runs):
        got = set(simulate_influence(g, PropagationConfig("IC", 0.5, rng_seed=s), seeds=["c"]).nodes)
        counts += [f"l{i}" in got for i in range(3)]
    tol = 3 * math.sqrt(0.25 / runs)
    assert np.all(np.abs(counts / runs - 0.5) <= tol)


def test_ic_zero_and_lt_cascade():
    g = gen_base_graph(SCHEMA, 50, 120, rng_seed=4)
    ic = simulate_influence(g, PropagationConfig("IC", 0.0, seed_count=2, rng_seed=1))
    assert set(ic.nodes) == set(ic.seeds)
    lt = simulate_influence(
        g, PropagationConfig("LT", lt_threshold=0.0, edge_weight_range=(0.1, 1.0), max_steps=100, rng_seed=1)
    )
    assert set(lt.nodes) == set(g.node_ids)
    assert transmits_from_seeds(lt)


def test_sir_keeps_recovered_nodes():
    g = line(6)
    casc = simulate_infection(g, PropagationConfig("SIR", 1.0, recovery_prob=1.0, max_steps=10), seeds=["p0"])
    # every node recovers right after infecting, yet all were infected once
    assert set(casc.nodes) == set(g.node_ids)


def test_empty_seed_set():
    with pytest.raises(EmptySeedSet):
        simulate(line(3), PropagationConfig("SI", 0.5), seeds=[])


def test_bad_config():
    with pytest.raises(ValueError):
        PropagationConfig("SI", 1.5)
    with pytest.raises(ValueError):
        PropagationConfig("XX")
    with pytest.raises(ValueError):
        PropagationConfig("SI", max_steps=0)


@settings(max_examples=30, deadline=None)
@given(
    st.integers(0, 1000), st.sampled_from(["SI", "SIS", "SIR", "IC", "LT"]),
    st.floats(0, 1), st.integers(1, 3),
)
def test_cascade_invariants(seed, model, p, seeds):
    g = gen_base_graph(SCHEMA, 30, 50, rng_seed=seed)
    cfg = PropagationConfig(model, p, recovery_prob=0.3, seed_count=seeds, rng_seed=seed)
    a, b = simulate(g, cfg), simulate(g, cfg)
    assert a == b
    assert set(a.seeds) <= set(a.nodes)
    assert transmits_from_seeds(a)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000), st.sampled_from(["SI", "IC"]), st.floats(0, 1), st.floats(0, 1))
def test_monotone_in_probability(seed, model, p1, p2):
    lo, hi = sorted((p1, p2))
    g = gen_base_graph(SCHEMA, 30, 60, rng_seed=seed)
    small = simulate(g, PropagationConfig(model, lo, max_steps=4, seed_count=2, rng_seed=seed))
    big = simulate(g, PropagationConfig(model, hi, max_steps=4, seed_count=2, rng_seed=seed))
    assert set(small.nodes) <= set(big.nodes)


def test_stream_counts_and_rumours_replay():
    events = simulate_stream(
        SCHEMA, 300, 700, 20, PropagationConfig("IC", 0.3, max_steps=4, seed_count=2),
        rng_seed=9, locality=20, max_rumour_nodes=15,
    )
    kinds = [type(e) for e in events]
    assert kinds.count(AddNode) == 300
    assert kinds.count(AddEdge) == 700
    assert kinds.count(DetectRumour) == 20
    graph, log = replay(SCHEMA, events)  # raises if a rumour is disconnected
    assert len(log) == 20
    assert all(r.n_nodes <= 15 for r in log)
    again = simulate_stream(
        SCHEMA, 300, 700, 20, PropagationConfig("IC", 0.3, max_steps=4, seed_count=2),
        rng_seed=9, locality=20, max_rumour_nodes=15,
    )
    assert again == events
