"""Classical graph similarity measures: node kernels, MCS, graphsim and GED.

All three graph measures search over node mappings. Exact search is used up to
``node_bound`` nodes; larger inputs either raise :class:`SizeLimitExceeded`
(MCS/graphsim with ``approximate=False``) or fall back to a beam search whose
result is flagged ``exact=False``. Beam results are computed in both directions
and the better one kept, which keeps every measure symmetric.
"""

from __future__ import annotations

import heapq
import itertools
import math
from collections import Counter
from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np

from .errors import SizeLimitExceeded
from .graph import MsgGraph, Subgraph

DEFAULT_NODE_BOUND = 12
DEFAULT_BEAM_WIDTH = 100


@dataclass(frozen=True)
class ExactMatch:
    """Elements are similar iff same modality and features agree within ``eps``."""

    eps: float = 0.0

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError("eps must be >= 0")


@dataclass(frozen=True)
class Graded:
    """RBF-style similarity ``exp(-||f(u) - f(v)||_2 / scale)``."""

    scale: float = 1.0

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be > 0")


SimilarityKernel = Union[ExactMatch, Graded]


class Node(NamedTuple):
    modality: str
    features: np.ndarray


def node_record(graph: MsgGraph, node_id: str) -> Node:
    return Node(graph.modality(node_id), graph.features(node_id))


def feature_sim(fa: np.ndarray, fb: np.ndarray, kernel: SimilarityKernel) -> float:
    if fa.shape != fb.shape:
        return 0.0
    if isinstance(kernel, ExactMatch):
        return 1.0 if np.max(np.abs(fa - fb), initial=0.0) <= kernel.eps else 0.0
    return float(math.exp(-float(np.linalg.norm(fa - fb)) / kernel.scale))


def features_equal(fa: np.ndarray, fb: np.ndarray, kernel: SimilarityKernel) -> bool:
    """Kernel equality used by MCS/GED matching (``sim == 1``)."""
    if fa.shape != fb.shape:
        return False
    eps = kernel.eps if isinstance(kernel, ExactMatch) else 0.0
    return bool(np.max(np.abs(fa - fb), initial=0.0) <= eps)


def node_sim(u: Node, v: Node, kernel: SimilarityKernel = Graded()) -> float:
    if u.modality != v.modality:
        return 0.0
    return feature_sim(np.asarray(u.features), np.asarray(v.features), kernel)


# -- compact graph form used by the searches --------------------------------


class _Compact:
    __slots__ = ("ids", "mods", "feats", "adj", "edges", "n", "m")

    def __init__(self, g: MsgGraph | Subgraph):
        if isinstance(g, Subgraph):
            g = g.to_graph()
        self.ids = list(g.node_ids)
        self.n = len(self.ids)
        self.mods = [g.modality_idx(i) for i in range(self.n)]
        self.feats = [g.features_idx(i) for i in range(self.n)]
        self.adj = [set(g.neighbors_idx(i)) for i in range(self.n)]
        self.edges = {(i, j): g.edge_features_idx(i, j) for i, j in g.edge_index_pairs()}
        self.m = len(self.edges)

    def efeat(self, i: int, j: int) -> np.ndarray | None:
        return self.edges.get((i, j) if i < j else (j, i))

    def order(self) -> list[int]:
        """Search order: repeatedly take the highest-degree node adjacent to the
        already ordered part, so edges get scored early."""
        remaining = set(range(self.n))
        out: list[int] = []
        while remaining:
            frontier = [i for i in remaining if self.adj[i] & set(out)] or list(remaining)
            nxt = max(frontier, key=lambda i: (len(self.adj[i]), -i))
            out.append(nxt)
            remaining.discard(nxt)
        return out


def _check_nonempty(a: _Compact, b: _Compact) -> None:
    if a.n == 0 or b.n == 0:
        raise ValueError("similarity measures need non-empty graphs")


# -- maximum common subgraph ---------------------------------------------------


@dataclass(frozen=True)
class MCSResult:
    mapping: dict[str, str]  # g1 node id -> g2 node id
    common_nodes: int
    common_edges: int
    total_elements: int  # |V1| + |V2| + |E1| + |E2|
    weighted: float  # sum of pair scores (graphsim); equals common count for MCS
    exact: bool

    @property
    def score(self) -> float:
        c = self.common_nodes + self.common_edges
        denom = self.total_elements - c
        return 1.0 if denom == 0 else float(self.weighted) / denom


def _jaccard(fa: np.ndarray, fb: np.ndarray, eps: float) -> float:
    # sets {modality} U {(i, f_i)}; components within eps count as shared
    d = fa.shape[0]
    shared = int(np.sum(np.abs(fa - fb) <= eps))
    return (1 + shared) / (1 + 2 * d - shared)


class _MCSProblem:
    def __init__(self, g1: _Compact, g2: _Compact, kernel: SimilarityKernel, modality_only: bool):
        self.g1, self.g2 = g1, g2
        self.kernel = kernel
        self.modality_only = modality_only
        eps = kernel.eps if isinstance(kernel, ExactMatch) else 0.0
        self.compat: list[list[int]] = []
        self.pair_score: dict[tuple[int, int], float] = {}
        for i in range(g1.n):
            row = []
            for j in range(g2.n):
                if g1.mods[i] != g2.mods[j]:
                    continue
                if modality_only:
                    row.append(j)
                    self.pair_score[(i, j)] = _jaccard(g1.feats[i], g2.feats[j], eps)
                elif features_equal(g1.feats[i], g2.feats[j], kernel):
                    row.append(j)
                    self.pair_score[(i, j)] = 1.0
            self.compat.append(row)
        self.order = g1.order()
        # g1 edges whose later endpoint (in search order) sits at position p
        pos = {v: p for p, v in enumerate(self.order)}
        self.edges_closing_at = [0] * (g1.n + 1)
        for i, j in g1.edges:
            self.edges_closing_at[max(pos[i], pos[j])] += 1
        self.suffix_edges = list(itertools.accumulate(reversed(self.edges_closing_at)))[::-1]

    def edge_gain(self, mapping: dict[int, int], i: int, j: int) -> tuple[int, float]:
        g1, g2 = self.g1, self.g2
        count, weight = 0, 0.0
        si = self.pair_score[(i, j)]
        for i2 in g1.adj[i]:
            j2 = mapping.get(i2)
            if j2 is None or j2 not in g2.adj[j]:
                continue
            if not self.modality_only and not features_equal(
                g1.efeat(i, i2), g2.efeat(j, j2), self.kernel
            ):
                continue
            count += 1
            weight += 0.5 * (si + self.pair_score[(i2, j2)])
        return count, weight

    def bound(self, pos: int, used: set[int], count: int) -> int:
        rest = self.order[pos:]
        free2 = self.g2.n - len(used)
        node_ub = min(sum(1 for i in rest if any(j not in used for j in self.compat[i])), free2)
        edge_ub = self.suffix_edges[pos] if pos < len(self.suffix_edges) else 0
        return count + node_ub + edge_ub

    def exact(self) -> tuple[dict[int, int], int, int, float]:
        best = [({}, 0, 0, 0.0)]  # mapping, nodes, edges, weighted

        def better(c, w, bc, bw):
            return c > bc or (c == bc and w > bw + 1e-12)

        def rec(pos, mapping, used, nodes, edges, weight):
            b = best[0]
            if better(nodes + edges, weight, b[1] + b[2], b[3]):
                best[0] = (dict(mapping), nodes, edges, weight)
                b = best[0]
            if pos == len(self.order):
                return
            ub = self.bound(pos, used, nodes + edges)
            if ub < b[1] + b[2] or (ub == b[1] + b[2] and weight + (ub - nodes - edges) <= b[3] + 1e-12):
                return
            i = self.order[pos]
            for j in self.compat[i]:
                if j in used:
                    continue
                ec, ew = self.edge_gain(mapping, i, j)
                mapping[i] = j
                used.add(j)
                rec(pos + 1, mapping, used, nodes + 1, edges + ec, weight + self.pair_score[(i, j)] + ew)
                used.discard(j)
                del mapping[i]
            rec(pos + 1, mapping, used, nodes, edges, weight)

        rec(0, {}, set(), 0, 0, 0.0)
        return best[0]

    def beam(self, width: int) -> tuple[dict[int, int], int, int, float]:
        states = [({}, frozenset(), 0, 0, 0.0)]
        for pos, i in enumerate(self.order):
            nxt = []
            for mapping, used, nodes, edges, weight in states:
                nxt.append((mapping, used, nodes, edges, weight))
                for j in self.compat[i]:
                    if j in used:
                        continue
                    ec, ew = self.edge_gain(mapping, i, j)
                    m2 = dict(mapping)
                    m2[i] = j
                    nxt.append((m2, used | {j}, nodes + 1, edges + ec, weight + self.pair_score[(i, j)] + ew))
            nxt.sort(key=lambda s: (-(s[2] + s[3]), -s[4], sorted(s[0].items())))
            states = nxt[:width]
        mapping, _, nodes, edges, weight = states[0]
        return mapping, nodes, edges, weight


def _mcs(g1, g2, kernel, modality_only, node_bound, approximate, beam_width) -> MCSResult:
    a, b = _Compact(g1), _Compact(g2)
    _check_nonempty(a, b)
    total = a.n + b.n + a.m + b.m
    if max(a.n, b.n) <= node_bound:
        mapping, nodes, edges, weight = _MCSProblem(a, b, kernel, modality_only).exact()
        exact = True
    else:
        if not approximate:
            raise SizeLimitExceeded(
                f"exact MCS refuses graphs above {node_bound} nodes (got {a.n}, {b.n})"
            )
        m1 = _MCSProblem(a, b, kernel, modality_only).beam(beam_width)
        m2 = _MCSProblem(b, a, kernel, modality_only).beam(beam_width)
        if (m2[1] + m2[2], m2[3]) > (m1[1] + m1[2], m1[3]):
            mapping = {i: j for j, i in m2[0].items()}
            _, nodes, edges, weight = m2
        else:
            mapping, nodes, edges, weight = m1
        exact = False
    if not modality_only:
        weight = float(nodes + edges)
    return MCSResult(
        mapping={a.ids[i]: b.ids[j] for i, j in sorted(mapping.items())},
        common_nodes=nodes,
        common_edges=edges,
        total_elements=total,
        weighted=weight,
        exact=exact,
    )


def mcs(
    g1: MsgGraph | Subgraph,
    g2: MsgGraph | Subgraph,
    kernel: SimilarityKernel = ExactMatch(),
    *,
    node_bound: int = DEFAULT_NODE_BOUND,
    approximate: bool = False,
    beam_width: int = DEFAULT_BEAM_WIDTH,
) -> MCSResult:
    """Maximum common subgraph under kernel equality of nodes and edges."""
    return _mcs(g1, g2, kernel, False, node_bound, approximate, beam_width)


def mcs_similarity(g1, g2, kernel: SimilarityKernel = ExactMatch(), **kw) -> float:
    """``common / (common + differing)`` counting nodes and edges of both graphs."""
    return mcs(g1, g2, kernel, **kw).score


def graphsim(
    g1: MsgGraph | Subgraph,
    g2: MsgGraph | Subgraph,
    kernel: SimilarityKernel = ExactMatch(),
    *,
    node_bound: int = DEFAULT_NODE_BOUND,
    approximate: bool = False,
    beam_width: int = DEFAULT_BEAM_WIDTH,
) -> float:
    """Modality-aware MCS: nodes map by modality, each mapped pair is scored by
    the Jaccard similarity of its modality-feature sets, each common edge by the
    mean of its endpoint scores."""
    return _mcs(g1, g2, kernel, True, node_bound, approximate, beam_width).score


# -- graph edit distance ------------------------------------------------------


@dataclass(frozen=True)
class GEDResult:
    cost: float
    exact: bool
    mapping: dict[str, str | None]


class _GEDProblem:
    def __init__(self, g1: _Compact, g2: _Compact, kernel: SimilarityKernel):
        self.g1, self.g2, self.kernel = g1, g2, kernel
        self.order = g1.order()
        n1 = g1.n
        self.node_eq = [
            [g1.mods[i] == g2.mods[j] and features_equal(g1.feats[i], g2.feats[j], kernel) for j in range(g2.n)]
            for i in range(n1)
        ]
        pos = {v: p for p, v in enumerate(self.order)}
        # g1 edges touching positions >= p
        self.e1_rem = [sum(1 for i, j in g1.edges if max(pos[i], pos[j]) >= p) for p in range(n1 + 1)]
        hashable = not isinstance(kernel, ExactMatch) or kernel.eps == 0.0
        self.labels1 = [(g1.mods[i], g1.feats[i].tobytes()) for i in range(n1)] if hashable else None
        self.labels2 = [(g2.mods[j], g2.feats[j].tobytes()) for j in range(g2.n)] if hashable else None

    def step_cost(self, mapping: tuple[int, ...], pos: int, j: int) -> int:
        g1, g2 = self.g1, self.g2
        i = self.order[pos]
        cost = 0 if (j >= 0 and self.node_eq[i][j]) else 1
        for p in range(pos):
            i2 = self.order[p]
            e1 = g1.efeat(i, i2)
            j2 = mapping[p]
            e2 = g2.efeat(j, j2) if (j >= 0 and j2 >= 0) else None
            if e1 is not None and e2 is not None:
                cost += 0 if features_equal(e1, e2, self.kernel) else 1
            elif e1 is not None or e2 is not None:
                cost += 1
        return cost

    def completion_cost(self, used: int) -> int:
        g2 = self.g2
        cost = sum(1 for j in range(g2.n) if not used >> j & 1)
        cost += sum(1 for i, j in g2.edges if not (used >> i & 1) or not (used >> j & 1))
        return cost

    def heuristic(self, pos: int, used: int) -> int:
        g2 = self.g2
        rest1 = self.order[pos:]
        free2 = [j for j in range(g2.n) if not used >> j & 1]
        if self.labels1 is not None:
            c1 = Counter(self.labels1[i] for i in rest1)
            c2 = Counter(self.labels2[j] for j in free2)
            matched = sum((c1 & c2).values())
            node_lb = max(len(rest1), len(free2)) - matched
        else:
            node_lb = abs(len(rest1) - len(free2))
        e2_rem = sum(1 for i, j in g2.edges if not (used >> i & 1) or not (used >> j & 1))
        return node_lb + abs(self.e1_rem[pos] - e2_rem)

    def children(self, used: int):
        for j in list(range(self.g2.n)) + [-1]:
            if j >= 0 and used >> j & 1:
                continue
            yield j

    def astar(self, max_expansions: int) -> tuple[int, tuple[int, ...]] | None:
        n1 = self.g1.n
        counter = itertools.count()
        heap = [(self.heuristic(0, 0), 0, next(counter), (), 0, 0, False)]
        expansions = 0
        while heap:
            f, _, _, mapping, used, g, done = heapq.heappop(heap)
            if done:
                return g, mapping
            expansions += 1
            if expansions > max_expansions:
                return None
            pos = len(mapping)
            if pos == n1:
                total = g + self.completion_cost(used)
                heapq.heappush(heap, (total, -pos, next(counter), mapping, used, total, True))
                continue
            for j in self.children(used):
                g2 = g + self.step_cost(mapping, pos, j)
                used2 = used | (1 << j) if j >= 0 else used
                h = self.heuristic(pos + 1, used2)
                heapq.heappush(heap, (g2 + h, -(pos + 1), next(counter), mapping + (j,), used2, g2, False))
        return None  # unreachable: the empty mapping always completes

    def beam(self, width: int) -> tuple[int, tuple[int, ...]]:
        states = [((), 0, 0)]
        for pos in range(self.g1.n):
            nxt = []
            for mapping, used, g in states:
                for j in self.children(used):
                    g2 = g + self.step_cost(mapping, pos, j)
                    used2 = used | (1 << j) if j >= 0 else used
                    nxt.append((g2 + self.heuristic(pos + 1, used2), g2, mapping + (j,), used2))
            nxt.sort(key=lambda s: (s[0], s[1], s[2]))
            states = [(m, u, g) for _, g, m, u in nxt[:width]]
        best = min(((g + self.completion_cost(u), m) for m, u, g in states), key=lambda t: (t[0], t[1]))
        return best

    def to_mapping(self, mapping: tuple[int, ...]) -> dict[str, str | None]:
        return {
            self.g1.ids[self.order[p]]: (self.g2.ids[j] if j >= 0 else None) for p, j in enumerate(mapping)
        }


def ged_result(
    g1: MsgGraph | Subgraph,
    g2: MsgGraph | Subgraph,
    kernel: SimilarityKernel = ExactMatch(),
    *,
    node_bound: int = DEFAULT_NODE_BOUND,
    beam_width: int = DEFAULT_BEAM_WIDTH,
    max_expansions: int = 200_000,
) -> GEDResult:
    """Unit-cost graph edit distance (insert/delete/substitute nodes and edges)."""
    a, b = _Compact(g1), _Compact(g2)
    if max(a.n, b.n) <= node_bound:
        # search from the larger side: fewer deletion branches per level
        fwd = a.n >= b.n
        prob = _GEDProblem(a, b, kernel) if fwd else _GEDProblem(b, a, kernel)
        found = prob.astar(max_expansions)
        if found is not None:
            cost, mapping = found
            m = prob.to_mapping(mapping)
            if not fwd:
                m = _invert(m, a.ids)
            return GEDResult(float(cost), True, m)
    p1, p2 = _GEDProblem(a, b, kernel), _GEDProblem(b, a, kernel)
    c1, m1 = p1.beam(beam_width)
    c2, m2 = p2.beam(beam_width)
    if c1 <= c2:
        return GEDResult(float(c1), False, p1.to_mapping(m1))
    return GEDResult(float(c2), False, _invert(p2.to_mapping(m2), a.ids))


def _invert(m: dict[str, str | None], ids1: list[str]) -> dict[str, str | None]:
    inv = {v: k for k, v in m.items() if v is not None}
    return {i: inv.get(i) for i in ids1}


def ged(g1, g2, kernel: SimilarityKernel = ExactMatch(), **kw) -> float:
    return ged_result(g1, g2, kernel, **kw).cost


def ged_similarity(g1, g2, kernel: SimilarityKernel = ExactMatch(), **kw) -> float:
    a = g1.to_graph() if isinstance(g1, Subgraph) else g1
    b = g2.to_graph() if isinstance(g2, Subgraph) else g2
    total = a.n_nodes + a.n_edges + b.n_nodes + b.n_edges
    if total == 0:
        return 1.0
    cost = ged(a, b, kernel, **kw)
    return float(min(1.0, max(0.0, 1.0 - cost / total)))


def all_measures(g1, g2, kernel: SimilarityKernel = ExactMatch(), *, approximate: bool = True) -> dict:
    """Every classical measure for one pair; used by the ``sim`` CLI command."""
    m = mcs(g1, g2, kernel, approximate=approximate)
    gr = ged_result(g1, g2, kernel)
    a = g1.to_graph() if isinstance(g1, Subgraph) else g1
    b = g2.to_graph() if isinstance(g2, Subgraph) else g2
    total = a.n_nodes + a.n_edges + b.n_nodes + b.n_edges
    return {
        "mcs": m.score,
        "mcs_exact": m.exact,
        "graphsim": graphsim(g1, g2, kernel, approximate=approximate),
        "ged": gr.cost,
        "ged_exact": gr.exact,
        "ged_similarity": float(min(1.0, max(0.0, 1.0 - gr.cost / total))) if total else 1.0,
    }
