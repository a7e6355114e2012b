"""Synthetic multi-modal graphs and rumour cascades (SI/SIS/SIR, IC, LT).

All randomness is consumed in a fixed pattern that does not depend on the
simulation state: infection models draw one uniform per directed edge and one
per node every step, IC draws one uniform per directed edge up front, LT draws
thresholds and directed weights up front. Runs that share a seed therefore
share their random bits, so cascades are monotone in the infection
probability.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import EmptySeedSet, InfeasibleEdgeCount
from .events import AddEdge, AddNode, DetectRumour, StreamEvent
from .graph import ModalitySchema, MsgGraph, edge_key

MODELS = ("SI", "SIS", "SIR", "IC", "LT")

FeatureSampler = Callable[[np.random.Generator, str, int], np.ndarray]


def gaussian_features(rng: np.random.Generator, modality: str, dim: int) -> np.ndarray:
    return rng.normal(size=dim)


@dataclass(frozen=True)
class PropagationConfig:
    model: str = "IC"
    infection_prob: float = 0.1
    recovery_prob: float = 0.0
    lt_threshold: float | None = None  # None: per-node thresholds ~ U(0, 1)
    edge_weight_range: tuple[float, float] = (0.0, 1.0)
    max_steps: int = 10
    seed_count: int = 1
    rng_seed: int = 0

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        for name in ("infection_prob", "recovery_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.lt_threshold is not None and not 0.0 <= self.lt_threshold <= 1.0:
            raise ValueError("lt_threshold must lie in [0, 1]")
        lo, hi = self.edge_weight_range
        if lo > hi:
            raise ValueError("edge_weight_range must be (low, high) with low <= high")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass(frozen=True)
class Cascade:
    """Ever-infected/activated nodes plus the edges that carried the rumour."""

    nodes: tuple[str, ...]
    edges: tuple[tuple[str, str], ...]
    seeds: tuple[str, ...]

    def to_event(self, rumour_id: str) -> DetectRumour:
        return DetectRumour(rumour_id, self.nodes)


# -- base graphs ------------------------------------------------------------------


def gen_base_graph(
    schema: ModalitySchema,
    n_nodes: int,
    n_edges: int,
    feature_sampler: FeatureSampler = gaussian_features,
    rng_seed: int = 0,
    *,
    modality_weights: Sequence[float] | None = None,
    locality: int | None = None,
) -> MsgGraph:
    """Connected random graph: a random recursive tree plus extra random edges.

    With ``locality`` set, every edge joins nodes at most ``locality`` positions
    apart in creation order, which gives the graph local clustering.
    """
    return _build(schema, n_nodes, n_edges, feature_sampler, rng_seed, modality_weights, locality)[0]


def _allowed_pairs(n: int, locality: int | None) -> int:
    if locality is None or locality >= n - 1:
        return n * (n - 1) // 2
    w = locality
    return sum(min(w, i) for i in range(n))


def _build(schema, n, m, sampler, seed, weights, locality):
    if n < 0 or m < 0:
        raise InfeasibleEdgeCount("node and edge counts must be non-negative")
    if m > n * (n - 1) // 2 or m > _allowed_pairs(n, locality):
        raise InfeasibleEdgeCount(f"{m} edges do not fit into {n} nodes")
    if n > 0 and m < n - 1:
        raise InfeasibleEdgeCount(f"a connected graph on {n} nodes needs at least {n - 1} edges")
    rng = np.random.default_rng(seed)
    mods = schema.node_modalities
    p = None if weights is None else np.asarray(weights, dtype=float) / np.sum(weights)
    node_mod = rng.choice(len(mods), size=n, p=p) if n else np.empty(0, dtype=int)
    g = MsgGraph(schema)
    for i in range(n):
        name = mods[node_mod[i]]
        g.add_node(f"n{i}", name, sampler(rng, name, schema.node_dim(name)))
    edges: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    for i in range(1, n):
        lo = 0 if locality is None else max(0, i - locality)
        j = int(rng.integers(lo, i))
        edges.append((j, i))
        seen.add((j, i))
    extra = m - len(edges)
    if extra > 0:
        total = _allowed_pairs(n, locality)
        if extra > total // 2:
            pool = [
                (j, i)
                for i in range(n)
                for j in range(0 if locality is None else max(0, i - locality), i)
                if (j, i) not in seen
            ]
            for k in rng.permutation(len(pool))[:extra]:
                edges.append(pool[k])
        else:
            while extra > 0:
                i = int(rng.integers(1, n))
                lo = 0 if locality is None else max(0, i - locality)
                j = int(rng.integers(lo, i))
                if (j, i) in seen:
                    continue
                seen.add((j, i))
                edges.append((j, i))
                extra -= 1
    for j, i in edges:
        a, b = mods[node_mod[j]], mods[node_mod[i]]
        dim = schema.edge_dim(a, b)
        g.add_edge(f"n{j}", f"n{i}", sampler(rng, edge_key(a, b), dim))
    return g, edges


# -- cascades -----------------------------------------------------------------------


def _directed(graph: MsgGraph) -> tuple[np.ndarray, np.ndarray]:
    pairs = []
    for i, j in graph.edge_index_pairs():
        pairs.append((i, j))
        pairs.append((j, i))
    pairs.sort()
    arr = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    return arr[:, 0], arr[:, 1]


def _pick_seeds(graph: MsgGraph, cfg: PropagationConfig, rng: np.random.Generator, seeds):
    """Seeds as a connected set, plus the tree edges that connect them."""
    if seeds is not None:
        idx = [graph.index_of(s) for s in seeds]
        if not idx:
            raise EmptySeedSet("seed set is empty")
        return idx, []
    if cfg.seed_count < 1 or graph.n_nodes == 0:
        raise EmptySeedSet("need at least one seed node")
    chosen = [int(rng.integers(graph.n_nodes))]
    tree: list[tuple[int, int]] = []
    members = set(chosen)
    while len(chosen) < cfg.seed_count:
        frontier = sorted({(u, v) for u in chosen for v in graph.neighbors_idx(u) if v not in members})
        if not frontier:
            break
        u, v = frontier[int(rng.integers(len(frontier)))]
        chosen.append(v)
        members.add(v)
        tree.append((u, v))
    return chosen, tree


def _result(graph: MsgGraph, reached: np.ndarray, edges, seeds) -> Cascade:
    nodes = tuple(graph.id_of(i) for i in np.flatnonzero(reached))
    return Cascade(
        nodes=nodes,
        edges=tuple((graph.id_of(u), graph.id_of(v)) for u, v in edges),
        seeds=tuple(graph.id_of(s) for s in seeds),
    )


def simulate_infection(graph: MsgGraph, cfg: PropagationConfig, seeds: Sequence[str] | None = None) -> Cascade:
    """Discrete-time SI / SIS / SIR with synchronous rounds.

    Each step every infected node tries each susceptible neighbour once. SIS
    recoveries return to susceptible, SIR recoveries are removed for good;
    recovered nodes stay in the output because they were infected.
    """
    if cfg.model not in ("SI", "SIS", "SIR"):
        raise ValueError(f"simulate_infection does not handle {cfg.model}")
    rng = np.random.default_rng(cfg.rng_seed)
    seed_idx, tree = _pick_seeds(graph, cfg, rng, seeds)
    n = graph.n_nodes
    src, dst = _directed(graph)
    state = np.zeros(n, dtype=np.int8)  # 0 susceptible, 1 infected, 2 removed
    state[seed_idx] = 1
    ever = state == 1
    edges = list(tree)
    for _ in range(cfg.max_steps):
        u_edge = rng.random(src.size)
        u_node = rng.random(n)
        infected = state == 1
        if not infected.any():
            break
        hit = infected[src] & (state[dst] == 0) & (u_edge < cfg.infection_prob)
        if cfg.model == "SI" and not (infected[src] & (state[dst] == 0)).any():
            break
        newly = np.zeros(n, dtype=bool)
        for k in np.flatnonzero(hit):
            v = dst[k]
            if newly[v]:
                continue
            newly[v] = True
            if not ever[v]:
                edges.append((int(src[k]), int(v)))
        if cfg.model != "SI":
            recover = infected & (u_node < cfg.recovery_prob)
            state[recover] = 0 if cfg.model == "SIS" else 2
        state[newly] = 1
        ever |= newly
    return _result(graph, ever, edges, seed_idx)


def simulate_influence(graph: MsgGraph, cfg: PropagationConfig, seeds: Sequence[str] | None = None) -> Cascade:
    """Independent cascade or linear threshold diffusion in synchronous rounds."""
    if cfg.model not in ("IC", "LT"):
        raise ValueError(f"simulate_influence does not handle {cfg.model}")
    rng = np.random.default_rng(cfg.rng_seed)
    seed_idx, tree = _pick_seeds(graph, cfg, rng, seeds)
    n = graph.n_nodes
    src, dst = _directed(graph)
    active = np.zeros(n, dtype=bool)
    active[seed_idx] = True
    edges = list(tree)
    if cfg.model == "IC":
        u_edge = rng.random(src.size)
        fresh = active.copy()
        for _ in range(cfg.max_steps):
            hit = fresh[src] & ~active[dst] & (u_edge < cfg.infection_prob)
            newly = np.zeros(n, dtype=bool)
            for k in np.flatnonzero(hit):
                v = dst[k]
                if not newly[v]:
                    newly[v] = True
                    edges.append((int(src[k]), int(v)))
            if not newly.any():
                break
            active |= newly
            fresh = newly
        return _result(graph, active, edges, seed_idx)

    theta = (
        np.full(n, cfg.lt_threshold) if cfg.lt_threshold is not None else rng.random(n)
    )
    lo, hi = cfg.edge_weight_range
    weight = rng.uniform(lo, hi, size=src.size)
    for _ in range(cfg.max_steps):
        influence = np.zeros(n)
        np.add.at(influence, dst, weight * active[src])
        newly = ~active & (influence > theta)
        if not newly.any():
            break
        for v in np.flatnonzero(newly):
            cand = np.flatnonzero((dst == v) & active[src])
            best = cand[np.argmax(weight[cand])]
            edges.append((int(src[best]), int(v)))
        active |= newly
    return _result(graph, active, edges, seed_idx)


def simulate(graph: MsgGraph, cfg: PropagationConfig, seeds: Sequence[str] | None = None) -> Cascade:
    if cfg.model in ("IC", "LT"):
        return simulate_influence(graph, cfg, seeds)
    return simulate_infection(graph, cfg, seeds)


# -- event streams --------------------------------------------------------------------


def simulate_stream(
    schema: ModalitySchema,
    n_nodes: int,
    n_edges: int,
    n_rumours: int,
    cfg: PropagationConfig,
    *,
    rng_seed: int = 0,
    locality: int | None = None,
    warmup: float = 0.2,
    max_rumour_nodes: int | None = None,
    feature_sampler: FeatureSampler = gaussian_features,
) -> list[StreamEvent]:
    """Grow a base graph node by node and detect cascades along the way.

    Node ``i`` arrives with its edges to earlier nodes. After a ``warmup``
    fraction of nodes, ``n_rumours`` cascades are simulated on the graph as it
    stands at evenly spaced arrival points. Cascades larger than
    ``max_rumour_nodes`` are cut back to their first-reached nodes.
    """
    full, edge_list = _build(schema, n_nodes, n_edges, feature_sampler, rng_seed, None, locality)
    by_later: dict[int, list[int]] = {}
    for j, i in edge_list:
        by_later.setdefault(i, []).append(j)
    start = int(warmup * n_nodes)
    span = max(n_nodes - start, 1)
    triggers: dict[int, int] = {}
    for r in range(n_rumours):
        at = min(n_nodes - 1, start + (r * span) // max(n_rumours, 1))
        triggers[at] = triggers.get(at, 0) + 1
    events: list[StreamEvent] = []
    live = MsgGraph(schema)
    rumour_no = 0
    for i in range(n_nodes):
        nid = f"n{i}"
        ev = AddNode(nid, full.modality(nid), tuple(full.features(nid).tolist()))
        events.append(ev)
        live.add_node(ev.id, ev.modality, ev.features)
        for j in sorted(by_later.get(i, [])):
            u = f"n{j}"
            e = AddEdge(u, nid, tuple(full.edge_features(u, nid).tolist()))
            events.append(e)
            live.add_edge(e.u, e.v, e.features)
        for _ in range(triggers.get(i, 0)):
            run = PropagationConfig(**{**cfg.__dict__, "rng_seed": rng_seed * 1_000_003 + rumour_no})
            casc = simulate(live, run)
            nodes = _truncate(live, casc, max_rumour_nodes)
            events.append(DetectRumour(f"r{rumour_no}", nodes))
            rumour_no += 1
    return events


def _truncate(graph: MsgGraph, casc: Cascade, limit: int | None) -> tuple[str, ...]:
    if limit is None or len(casc.nodes) <= limit:
        return casc.nodes
    keep = list(casc.seeds)
    for u, v in casc.edges:
        if len(keep) >= limit:
            break
        if v not in keep:
            keep.append(v)
    keep = keep[:limit]
    # cascade edges are in arrival order, so every kept node's parent is kept
    return tuple(n for n in graph.node_ids if n in set(keep))
