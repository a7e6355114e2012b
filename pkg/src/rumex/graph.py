"""Multi-modal social graph (MSG) and rumour subgraph views.

Node ids are opaque strings on the outside and dense integers inside. Every node
and edge carries a float64 feature vector whose length is fixed by its modality;
an edge's modality is the unordered pair of its endpoint modalities.
"""

from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import (
    DisconnectedRumour,
    DuplicateId,
    FeatureDimMismatch,
    SchemaMismatch,
    UnknownNode,
)

DEFAULT_EDGE_DIM = 1


def edge_key(a: str, b: str) -> str:
    """Canonical name of the edge modality joining node modalities ``a`` and ``b``."""
    return "|".join(sorted((a, b)))


class ModalitySchema:
    """Immutable description of node modalities and per-modality feature dims.

    ``edge_feature_dims`` is keyed by :func:`edge_key`; edge modalities that are
    not listed get ``DEFAULT_EDGE_DIM``.
    """

    __slots__ = ("_mods", "_index", "_node_dims", "_edge_dims")

    def __init__(
        self,
        node_modalities: Sequence[str],
        feature_dims: Mapping[str, int],
        edge_feature_dims: Mapping[str, int] | None = None,
    ):
        mods = tuple(node_modalities)
        if not mods:
            raise SchemaMismatch("schema needs at least one node modality")
        if len(set(mods)) != len(mods):
            raise SchemaMismatch(f"duplicate modality names in {mods}")
        for m in mods:
            if "|" in m:
                raise SchemaMismatch(f"modality name {m!r} may not contain '|'")
        extra = set(feature_dims) - set(mods)
        if extra:
            raise SchemaMismatch(f"feature dims given for unknown modalities {sorted(extra)}")
        node_dims = {}
        for m in mods:
            if m not in feature_dims:
                raise SchemaMismatch(f"no feature dim for modality {m!r}")
            d = int(feature_dims[m])
            if d < 1:
                raise SchemaMismatch(f"feature dim of {m!r} must be >= 1, got {d}")
            node_dims[m] = d
        pairs = {edge_key(a, b) for i, a in enumerate(mods) for b in mods[i:]}
        edge_dims = {p: DEFAULT_EDGE_DIM for p in pairs}
        for key, d in (edge_feature_dims or {}).items():
            a, _, b = key.partition("|")
            canon = edge_key(a, b)
            if canon not in pairs:
                raise SchemaMismatch(f"unknown edge modality {key!r}")
            if int(d) < 1:
                raise SchemaMismatch(f"feature dim of {key!r} must be >= 1, got {d}")
            edge_dims[canon] = int(d)
        object.__setattr__(self, "_mods", mods)
        object.__setattr__(self, "_index", {m: i for i, m in enumerate(mods)})
        object.__setattr__(self, "_node_dims", node_dims)
        object.__setattr__(self, "_edge_dims", dict(sorted(edge_dims.items())))

    def __setattr__(self, name, value):
        raise AttributeError("ModalitySchema is immutable")

    @property
    def node_modalities(self) -> tuple[str, ...]:
        return self._mods

    @property
    def edge_modalities(self) -> tuple[str, ...]:
        return tuple(self._edge_dims)

    def modality_index(self, modality: str) -> int:
        try:
            return self._index[modality]
        except KeyError:
            raise SchemaMismatch(f"unknown modality {modality!r}") from None

    def node_dim(self, modality: str) -> int:
        self.modality_index(modality)
        return self._node_dims[modality]

    def edge_dim(self, a: str, b: str) -> int:
        return self._edge_dims[edge_key(a, b)]

    def to_dict(self) -> dict:
        return {
            "node_modalities": list(self._mods),
            "feature_dims": dict(self._node_dims),
            "edge_feature_dims": dict(self._edge_dims),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModalitySchema":
        unknown = set(d) - {"node_modalities", "feature_dims", "edge_feature_dims", "type"}
        if unknown:
            raise SchemaMismatch(f"unknown schema keys {sorted(unknown)}")
        return cls(d["node_modalities"], d["feature_dims"], d.get("edge_feature_dims"))

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def __eq__(self, other) -> bool:
        return isinstance(other, ModalitySchema) and self.to_dict() == other.to_dict()

    def __hash__(self) -> int:
        return hash(self.fingerprint())

    def __repr__(self) -> str:
        return f"ModalitySchema({list(self._mods)}, {self._node_dims})"


def _as_features(values, dim: int, what: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64).reshape(-1)
    if arr.shape[0] != dim:
        raise FeatureDimMismatch(f"{what}: expected {dim} features, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise FeatureDimMismatch(f"{what}: features must be finite")
    arr.flags.writeable = False
    return arr


class MsgGraph:
    """Undirected multi-modal graph with feature vectors on nodes and edges.

    Mutation is append-only (nodes and edges are never removed). Feature arrays
    are read-only, so :meth:`snapshot` can share them safely.
    """

    def __init__(self, schema: ModalitySchema):
        self.schema = schema
        self._ids: list[str] = []
        self._index: dict[str, int] = {}
        self._mod: list[int] = []
        self._feat: list[np.ndarray] = []
        self._adj: list[list[int]] = []
        self._edges: dict[tuple[int, int], np.ndarray] = {}

    # -- mutation ---------------------------------------------------------
    def add_node(self, node_id: str, modality: str, features) -> int:
        if node_id in self._index:
            raise DuplicateId(f"node {node_id!r} already exists")
        m = self.schema.modality_index(modality)
        f = _as_features(features, self.schema.node_dim(modality), f"node {node_id!r}")
        idx = len(self._ids)
        self._ids.append(node_id)
        self._index[node_id] = idx
        self._mod.append(m)
        self._feat.append(f)
        self._adj.append([])
        return idx

    def add_edge(self, u: str, v: str, features) -> None:
        i, j = self.index_of(u), self.index_of(v)
        if i == j:
            raise DuplicateId(f"self-loop on {u!r} is not allowed")
        key = (i, j) if i < j else (j, i)
        if key in self._edges:
            raise DuplicateId(f"edge ({u!r}, {v!r}) already exists")
        mods = self.schema.node_modalities
        dim = self.schema.edge_dim(mods[self._mod[i]], mods[self._mod[j]])
        self._edges[key] = _as_features(features, dim, f"edge ({u!r}, {v!r})")
        self._adj[i].append(j)
        self._adj[j].append(i)

    # -- queries ------------------------------------------------------------
    @property
    def n_nodes(self) -> int:
        return len(self._ids)

    @property
    def n_edges(self) -> int:
        return len(self._edges)

    @property
    def node_ids(self) -> tuple[str, ...]:
        return tuple(self._ids)

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._index

    def index_of(self, node_id: str) -> int:
        try:
            return self._index[node_id]
        except KeyError:
            raise UnknownNode(f"unknown node {node_id!r}") from None

    def id_of(self, idx: int) -> str:
        return self._ids[idx]

    def modality(self, node_id: str) -> str:
        return self.schema.node_modalities[self._mod[self.index_of(node_id)]]

    def modality_idx(self, idx: int) -> int:
        return self._mod[idx]

    def features(self, node_id: str) -> np.ndarray:
        return self._feat[self.index_of(node_id)]

    def features_idx(self, idx: int) -> np.ndarray:
        return self._feat[idx]

    def neighbors(self, node_id: str) -> list[str]:
        return [self._ids[j] for j in self._adj[self.index_of(node_id)]]

    def neighbors_idx(self, idx: int) -> list[int]:
        return self._adj[idx]

    def degree(self, node_id: str) -> int:
        return len(self._adj[self.index_of(node_id)])

    def max_degree(self) -> int:
        return max((len(a) for a in self._adj), default=0)

    def has_edge(self, u: str, v: str) -> bool:
        i, j = self.index_of(u), self.index_of(v)
        return ((i, j) if i < j else (j, i)) in self._edges

    def edge_features(self, u: str, v: str) -> np.ndarray:
        i, j = self.index_of(u), self.index_of(v)
        try:
            return self._edges[(i, j) if i < j else (j, i)]
        except KeyError:
            raise UnknownNode(f"no edge ({u!r}, {v!r})") from None

    def edge_features_idx(self, i: int, j: int) -> np.ndarray:
        return self._edges[(i, j) if i < j else (j, i)]

    def edges(self) -> Iterator[tuple[str, str]]:
        """Edges in insertion order, each once."""
        for i, j in self._edges:
            yield self._ids[i], self._ids[j]

    def edge_index_pairs(self) -> list[tuple[int, int]]:
        return list(self._edges)

    def nodes_of_modality(self, modality: str) -> list[int]:
        m = self.schema.modality_index(modality)
        return [i for i, mi in enumerate(self._mod) if mi == m]

    # -- structure helpers ----------------------------------------------------
    def is_connected(self, node_ids: Iterable[str] | None = None) -> bool:
        """Whether ``node_ids`` (default: all nodes) induce a connected subgraph."""
        members = (
            set(range(self.n_nodes)) if node_ids is None else {self.index_of(n) for n in node_ids}
        )
        if not members:
            return True
        start = next(iter(members))
        seen = {start}
        queue = deque([start])
        while queue:
            i = queue.popleft()
            for j in self._adj[i]:
                if j in members and j not in seen:
                    seen.add(j)
                    queue.append(j)
        return len(seen) == len(members)

    def hop_distances(self, idx: int, max_hops: int) -> dict[int, int]:
        """BFS distances (in hops) from node index ``idx`` up to ``max_hops``."""
        dist = {idx: 0}
        queue = deque([idx])
        while queue:
            i = queue.popleft()
            if dist[i] == max_hops:
                continue
            for j in self._adj[i]:
                if j not in dist:
                    dist[j] = dist[i] + 1
                    queue.append(j)
        return dist

    def induced(self, node_ids: Iterable[str]) -> "Subgraph":
        return induced_subgraph(self, node_ids)

    def snapshot(self) -> "MsgGraph":
        """Structural copy sharing the (read-only) feature arrays."""
        g = MsgGraph(self.schema)
        g._ids = list(self._ids)
        g._index = dict(self._index)
        g._mod = list(self._mod)
        g._feat = list(self._feat)
        g._adj = [list(a) for a in self._adj]
        g._edges = dict(self._edges)
        return g

    def __eq__(self, other) -> bool:
        if not isinstance(other, MsgGraph) or self.schema != other.schema:
            return False
        if set(self._ids) != set(other._ids) or self.n_edges != other.n_edges:
            return False
        for nid in self._ids:
            if self.modality(nid) != other.modality(nid):
                return False
            if not np.array_equal(self.features(nid), other.features(nid)):
                return False
        for u, v in self.edges():
            if not other.has_edge(u, v):
                return False
            if not np.array_equal(self.edge_features(u, v), other.edge_features(u, v)):
                return False
        return True

    __hash__ = None  # mutable

    def __repr__(self) -> str:
        return f"MsgGraph(nodes={self.n_nodes}, edges={self.n_edges})"


@dataclass(frozen=True, eq=False)
class Subgraph:
    """Read-only induced view over a parent graph.

    ``edges`` is frozen at construction time, so later edges added to the parent
    among the same nodes do not leak into the view.
    """

    graph: MsgGraph
    nodes: tuple[str, ...]
    edges: tuple[tuple[str, str], ...]

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def degree(self, node_id: str) -> int:
        return sum(node_id in e for e in self.edges)

    def is_connected(self) -> bool:
        if not self.nodes:
            return True
        adj: dict[str, list[str]] = {n: [] for n in self.nodes}
        for u, v in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        seen = {self.nodes[0]}
        stack = [self.nodes[0]]
        while stack:
            for w in adj[stack.pop()]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return len(seen) == len(self.nodes)

    def to_graph(self) -> MsgGraph:
        """Materialise as a standalone :class:`MsgGraph` (features shared)."""
        g = MsgGraph(self.graph.schema)
        for n in self.nodes:
            g.add_node(n, self.graph.modality(n), self.graph.features(n))
        for u, v in self.edges:
            g.add_edge(u, v, self.graph.edge_features(u, v))
        return g

    def induced(self, node_ids: Iterable[str]) -> "Subgraph":
        keep = set(node_ids)
        missing = keep - set(self.nodes)
        if missing:
            raise UnknownNode(f"nodes not in subgraph: {sorted(missing)}")
        nodes = tuple(n for n in self.nodes if n in keep)
        edges = tuple(e for e in self.edges if e[0] in keep and e[1] in keep)
        return Subgraph(self.graph, nodes, edges)

    def same_shape(self, other: "Subgraph") -> bool:
        return set(self.nodes) == set(other.nodes) and {frozenset(e) for e in self.edges} == {
            frozenset(e) for e in other.edges
        }

    def __eq__(self, other) -> bool:
        if not isinstance(other, Subgraph):
            return NotImplemented
        return self.graph is other.graph and self.same_shape(other)

    def __hash__(self) -> int:
        return hash((id(self.graph), frozenset(self.nodes)))


@dataclass(frozen=True, eq=False)
class RumourSubgraph(Subgraph):
    """A detected rumour: a connected induced subgraph with an arrival number."""

    rumour_id: str = ""
    arrival_seq: int = 0


def induced_subgraph(graph: MsgGraph, node_ids: Iterable[str]) -> Subgraph:
    """Induced subgraph on ``node_ids``; node order follows the parent graph."""
    wanted = set(node_ids)
    idx = sorted(graph.index_of(n) for n in wanted)
    members = set(idx)
    edges = []
    for i in idx:
        for j in graph.neighbors_idx(i):
            if j > i and j in members:
                edges.append((graph.id_of(i), graph.id_of(j)))
    return Subgraph(graph, tuple(graph.id_of(i) for i in idx), tuple(edges))


def make_rumour(graph: MsgGraph, rumour_id: str, node_ids: Iterable[str], seq: int) -> RumourSubgraph:
    nodes = list(node_ids)
    if not nodes:
        raise DisconnectedRumour(f"rumour {rumour_id!r} has no nodes")
    view = induced_subgraph(graph, nodes)
    if not view.is_connected():
        raise DisconnectedRumour(f"rumour {rumour_id!r} does not induce a connected subgraph")
    return RumourSubgraph(view.graph, view.nodes, view.edges, rumour_id=rumour_id, arrival_seq=seq)
