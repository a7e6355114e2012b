"""Heterogeneous message-passing graph embedding (numpy, hand-written backprop).

One layer, for every node ``v``::

    m(u -> v)   = M[mod(u), mod(v)] @ z_u                     (send)
    c_v         = sum_u act(W_agg @ m(u -> v) + b)            (receive)
    z_v'        = act(W_comb @ [c_v ; z_v ; e_v])             (update)

``z_v`` starts as a per-modality linear lift of the node features and ``e_v``
is the mean of the lifted features of ``v``'s incident edges (fixed across
layers). Training minimises a skip-gram style loss: same-modality nodes within
``num_layers`` hops are pulled together, far nodes of other modalities pushed
apart.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import IoError, NoEdges, NonFiniteLoss, SchemaMismatch, ZeroVector
from .graph import ModalitySchema, MsgGraph, Subgraph, edge_key

LOG_CLAMP = 1e-12
CHECKPOINT_FORMAT = "rumex-hmpgcn/1"

_ACTIVATIONS = {"tanh", "relu", "identity"}


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 8
    num_layers: int = 2
    q_plus: int = 5
    q_minus: int = 5
    learning_rate: float = 0.05
    epochs: int = 50
    rng_seed: int = 0
    activation: str = "tanh"

    def __post_init__(self):
        if self.embed_dim < 1 or self.num_layers < 1:
            raise ValueError("embed_dim and num_layers must be >= 1")
        if self.q_plus < 1 or self.q_minus < 1:
            raise ValueError("q_plus and q_minus must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {sorted(_ACTIVATIONS)}")


def _act(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(x)
    if kind == "relu":
        return np.maximum(x, 0.0)
    return x


def _act_grad(pre: np.ndarray, out: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return 1.0 - out * out
    if kind == "relu":
        return (pre > 0).astype(np.float64)
    return np.ones_like(pre)


def param_shapes(schema: ModalitySchema, cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d = cfg.embed_dim
    mods = schema.node_modalities
    shapes: dict[str, tuple[int, ...]] = {}
    for m in mods:
        shapes[f"proj/{m}"] = (d, schema.node_dim(m))
    for key in schema.edge_modalities:
        a, b = key.split("|")
        shapes[f"edge_proj/{key}"] = (d, schema.edge_dim(a, b))
    for l in range(cfg.num_layers):
        for s in mods:
            for t in mods:
                shapes[f"msg/{l}/{s}->{t}"] = (d, d)
        shapes[f"agg_w/{l}"] = (d, d)
        shapes[f"agg_b/{l}"] = (d,)
        shapes[f"combine_w/{l}"] = (d, 3 * d)
    return shapes


def init_params(schema: ModalitySchema, cfg: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    bound = 1.0 / math.sqrt(cfg.embed_dim)
    return {
        name: rng.uniform(-bound, bound, size=shape) for name, shape in param_shapes(schema, cfg).items()
    }


@dataclass(frozen=True, eq=False)
class EmbeddingModel:
    """Trained parameters. Treat as immutable; updates publish a new version."""

    schema: ModalitySchema
    config: ModelConfig
    params: Mapping[str, np.ndarray]
    version: int = 0
    loss_trace: tuple[float, ...] = ()

    def __post_init__(self):
        frozen = {}
        for k, v in self.params.items():
            arr = np.array(v, dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise NonFiniteLoss(f"parameter {k} is not finite")
            arr.flags.writeable = False
            frozen[k] = arr
        expected = param_shapes(self.schema, self.config)
        if set(frozen) != set(expected) or any(frozen[k].shape != s for k, s in expected.items()):
            raise SchemaMismatch("parameter shapes do not match schema/config")
        object.__setattr__(self, "params", frozen)

    @classmethod
    def initial(cls, schema: ModalitySchema, config: ModelConfig) -> "EmbeddingModel":
        rng = np.random.default_rng(config.rng_seed)
        return cls(schema, config, init_params(schema, config, rng))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in sorted(self.params)])

    # -- checkpoint -----------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "schema": self.schema.to_dict(),
            "schema_hash": self.schema.fingerprint(),
            "config": asdict(self.config),
            "version": self.version,
            "loss_trace": list(self.loss_trace),
            "params": {
                k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in sorted(self.params.items())
            },
        }

    @classmethod
    def from_dict(cls, d: Mapping, schema: ModalitySchema | None = None) -> "EmbeddingModel":
        if d.get("format") != CHECKPOINT_FORMAT:
            raise SchemaMismatch(f"unsupported checkpoint format {d.get('format')!r}")
        stored = ModalitySchema.from_dict(d["schema"])
        if stored.fingerprint() != d.get("schema_hash"):
            raise SchemaMismatch("checkpoint schema hash is corrupt")
        if schema is not None and schema.fingerprint() != d["schema_hash"]:
            raise SchemaMismatch("checkpoint was trained for a different schema")
        params = {
            k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in d["params"].items()
        }
        return cls(
            stored,
            ModelConfig(**d["config"]),
            params,
            version=int(d["version"]),
            loss_trace=tuple(d.get("loss_trace", ())),
        )

    def save(self, path: str | Path) -> None:
        try:
            Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))
        except OSError as exc:
            raise IoError(f"cannot write {path}: {exc}") from None

    @classmethod
    def load(cls, path: str | Path, schema: ModalitySchema | None = None) -> "EmbeddingModel":
        try:
            d = json.loads(Path(path).read_text())
        except OSError as exc:
            raise IoError(f"cannot read {path}: {exc}") from None
        return cls.from_dict(d, schema)


# -- forward / backward ---------------------------------------------------------


class _Prepared:
    """Index arrays for one graph, grouped the way the parameters are."""

    def __init__(self, graph: MsgGraph):
        schema = graph.schema
        mods = schema.node_modalities
        n = graph.n_nodes
        self.n = n
        self.ids = graph.node_ids
        self.mod = np.array([graph.modality_idx(i) for i in range(n)], dtype=np.int64)
        self.node_groups = []
        for mi, name in enumerate(mods):
            idx = np.flatnonzero(self.mod == mi)
            if idx.size:
                X = np.stack([graph.features_idx(i) for i in idx])
                self.node_groups.append((name, idx, X))
        deg = np.zeros(n)
        edge_groups: dict[str, tuple[list, list, list]] = {}
        directed: dict[tuple[str, str], tuple[list, list]] = {}
        for i, j in graph.edge_index_pairs():
            deg[i] += 1
            deg[j] += 1
            si, sj = mods[self.mod[i]], mods[self.mod[j]]
            u, v, F = edge_groups.setdefault(edge_key(si, sj), ([], [], []))
            u.append(i)
            v.append(j)
            F.append(graph.edge_features_idx(i, j))
            for a, b, sa, sb in ((i, j, si, sj), (j, i, sj, si)):
                src, dst = directed.setdefault((sa, sb), ([], []))
                src.append(a)
                dst.append(b)
        self.deg = deg
        self.inv_deg = np.where(deg > 0, 1.0 / np.maximum(deg, 1.0), 0.0)
        self.edge_groups = [
            (k, np.array(u), np.array(v), np.stack(F)) for k, (u, v, F) in sorted(edge_groups.items())
        ]
        self.directed = [(s, t, np.array(a), np.array(b)) for (s, t), (a, b) in sorted(directed.items())]


def _forward(prep: _Prepared, params: Mapping[str, np.ndarray], cfg: ModelConfig, keep: bool = False):
    d, act = cfg.embed_dim, cfg.activation
    z = np.zeros((prep.n, d))
    for name, idx, X in prep.node_groups:
        z[idx] = X @ params[f"proj/{name}"].T
    E = np.zeros((prep.n, d))
    for key, u, v, F in prep.edge_groups:
        Y = F @ params[f"edge_proj/{key}"].T
        np.add.at(E, u, Y * prep.inv_deg[u, None])
        np.add.at(E, v, Y * prep.inv_deg[v, None])
    layers = []
    for l in range(cfg.num_layers):
        W_agg, b = params[f"agg_w/{l}"], params[f"agg_b/{l}"]
        C = np.zeros((prep.n, d))
        msgs = []
        for s, t, src, dst in prep.directed:
            M = params[f"msg/{l}/{s}->{t}"]
            m = z[src] @ M.T
            pre = m @ W_agg.T + b
            h = _act(pre, act)
            np.add.at(C, dst, h)
            if keep:
                msgs.append((s, t, src, dst, m, pre, h))
        x = np.concatenate([C, z, E], axis=1)
        o = x @ params[f"combine_w/{l}"].T
        z_new = _act(o, act)
        if keep:
            layers.append((z, x, o, z_new, msgs))
        z = z_new
    return z, (E, layers)


def _backward(prep: _Prepared, params, cfg: ModelConfig, cache, dz: np.ndarray) -> dict[str, np.ndarray]:
    d, act = cfg.embed_dim, cfg.activation
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    _, layers = cache
    dE = np.zeros((prep.n, d))
    for l in reversed(range(cfg.num_layers)):
        z_in, x, o, z_out, msgs = layers[l]
        W_c = params[f"combine_w/{l}"]
        do = dz * _act_grad(o, z_out, act)
        grads[f"combine_w/{l}"] += do.T @ x
        dx = do @ W_c
        dC, dz_in, dE_l = dx[:, :d], dx[:, d : 2 * d].copy(), dx[:, 2 * d :]
        dE += dE_l
        W_agg = params[f"agg_w/{l}"]
        for s, t, src, dst, m, pre, h in msgs:
            dpre = dC[dst] * _act_grad(pre, h, act)
            grads[f"agg_w/{l}"] += dpre.T @ m
            grads[f"agg_b/{l}"] += dpre.sum(axis=0)
            dm = dpre @ W_agg
            M = params[f"msg/{l}/{s}->{t}"]
            grads[f"msg/{l}/{s}->{t}"] += dm.T @ z_in[src]
            np.add.at(dz_in, src, dm @ M)
        dz = dz_in
    for name, idx, X in prep.node_groups:
        grads[f"proj/{name}"] += dz[idx].T @ X
    for key, u, v, F in prep.edge_groups:
        dY = dE[u] * prep.inv_deg[u, None] + dE[v] * prep.inv_deg[v, None]
        grads[f"edge_proj/{key}"] += dY.T @ F
    return grads


def _as_graph(g: MsgGraph | Subgraph) -> MsgGraph:
    return g.to_graph() if isinstance(g, Subgraph) else g


def _check_schema(graph: MsgGraph, model: EmbeddingModel) -> None:
    if graph.schema != model.schema:
        raise SchemaMismatch("graph schema does not match the model's schema")


@dataclass(frozen=True, eq=False)
class NodeEmbeddings:
    ids: tuple[str, ...]
    vectors: np.ndarray  # (n, d), row i belongs to ids[i]
    model_version: int

    def __getitem__(self, node_id: str) -> np.ndarray:
        return self.vectors[self.ids.index(node_id)]

    def as_dict(self) -> dict[str, np.ndarray]:
        return dict(zip(self.ids, self.vectors))


def forward(graph: MsgGraph | Subgraph, model: EmbeddingModel) -> NodeEmbeddings:
    """Embed every node of ``graph``; a :class:`Subgraph` gets truncated passing."""
    g = _as_graph(graph)
    _check_schema(g, model)
    prep = _Prepared(g)
    z, _ = _forward(prep, model.params, model.config)
    return NodeEmbeddings(prep.ids, z, model.version)


# -- sampling and loss -------------------------------------------------------------


@dataclass(frozen=True)
class PairSample:
    """Flattened positive/negative pairs with their per-pair weights."""

    pos_v: np.ndarray
    pos_u: np.ndarray
    pos_w: np.ndarray
    neg_v: np.ndarray
    neg_u: np.ndarray
    neg_w: np.ndarray

    @classmethod
    def from_lists(cls, items: Iterable[tuple[int, Iterable[int], Iterable[int]]], q_plus: int, q_minus: int):
        """``items``: ``(v, positives, negatives)``; weight is ``Q / |pool sample|``."""
        cols: dict[str, list] = {k: [] for k in ("pv", "pu", "pw", "nv", "nu", "nw")}
        for v, pos, neg in items:
            pos, neg = list(pos), list(neg)
            for u in pos:
                cols["pv"].append(v)
                cols["pu"].append(u)
                cols["pw"].append(q_plus / len(pos))
            for u in neg:
                cols["nv"].append(v)
                cols["nu"].append(u)
                cols["nw"].append(q_minus / len(neg))
        i = lambda k: np.array(cols[k], dtype=np.int64)
        f = lambda k: np.array(cols[k], dtype=np.float64)
        return cls(i("pv"), i("pu"), f("pw"), i("nv"), i("nu"), f("nw"))


class SamplingPools:
    """Positive / negative pools for every node, computed once per graph.

    Positives: same modality, 1..hops away. Negatives: other modality and more
    than ``hops`` away. The negative pool is stored implicitly as "all nodes of
    other modalities" minus a small excluded set, and indexed without
    materialising it.
    """

    def __init__(self, graph: MsgGraph, hops: int):
        self.graph = graph
        self.hops = hops
        n = graph.n_nodes
        mod = np.array([graph.modality_idx(i) for i in range(n)], dtype=np.int64)
        self._others = {m: np.flatnonzero(mod != m) for m in np.unique(mod)}
        self.pos: list[np.ndarray] = []
        self._neg_excl: list[np.ndarray] = []
        self._mod = mod
        for v in range(n):
            near = graph.hop_distances(v, hops)
            same = sorted(u for u in near if u != v and mod[u] == mod[v])
            self.pos.append(np.array(same, dtype=np.int64))
            others = self._others[mod[v]]
            excl = np.searchsorted(others, sorted(u for u in near if mod[u] != mod[v]))
            # shifted positions let searchsorted map a rank in the pool to a rank in `others`
            self._neg_excl.append(excl - np.arange(len(excl)))

    def neg_size(self, v: int) -> int:
        return len(self._others[self._mod[v]]) - len(self._neg_excl[v])

    def neg_pool(self, v: int) -> np.ndarray:
        others = self._others[self._mod[v]]
        return self._neg_at(v, np.arange(self.neg_size(v)))

    def _neg_at(self, v: int, ranks: np.ndarray) -> np.ndarray:
        others = self._others[self._mod[v]]
        shift = np.searchsorted(self._neg_excl[v], ranks, side="right")
        return others[ranks + shift]

    @staticmethod
    def _draw(rng: np.random.Generator, size: int, q: int) -> np.ndarray:
        if size == 0:
            return np.empty(0, dtype=np.int64)
        if size >= q:
            return rng.choice(size, size=q, replace=False)
        return rng.integers(0, size, size=q)

    def sample_node(self, v: int, q_plus: int, q_minus: int, rng: np.random.Generator):
        pos = self.pos[v][self._draw(rng, len(self.pos[v]), q_plus)]
        neg = self._neg_at(v, self._draw(rng, self.neg_size(v), q_minus))
        return pos, neg

    def sample(self, q_plus: int, q_minus: int, rng: np.random.Generator) -> PairSample:
        items = (
            (v, *self.sample_node(v, q_plus, q_minus, rng)) for v in range(self.graph.n_nodes)
        )
        return PairSample.from_lists(items, q_plus, q_minus)


def sample_pairs(
    graph: MsgGraph, v: str, hops: int, q_plus: int, q_minus: int, rng: np.random.Generator
) -> tuple[list[str], list[str]]:
    """Sample positives/negatives for one node; an empty list means an empty pool."""
    pools = SamplingPools(graph, hops)
    pos, neg = pools.sample_node(graph.index_of(v), q_plus, q_minus, rng)
    return [graph.id_of(i) for i in pos], [graph.id_of(i) for i in neg]


def _loss_and_grad(z: np.ndarray, pairs: PairSample) -> tuple[float, np.ndarray]:
    cap = -math.log(LOG_CLAMP)
    dz = np.zeros_like(z)
    total = 0.0
    for v, u, w, sign in (
        (pairs.pos_v, pairs.pos_u, pairs.pos_w, 1.0),
        (pairs.neg_v, pairs.neg_u, pairs.neg_w, -1.0),
    ):
        if v.size == 0:
            continue
        s = np.einsum("ij,ij->i", z[v], z[u])
        nll = np.logaddexp(0.0, -sign * s)  # -log sigmoid(sign * s)
        clamped = nll > cap
        total += float(np.sum(w * np.minimum(nll, cap)))
        # d nll / ds = -sign * sigmoid(-sign * s)
        g = w * (-sign) * 0.5 * (1.0 - np.tanh(0.5 * sign * s))
        g[clamped] = 0.0
        np.add.at(dz, v, g[:, None] * z[u])
        np.add.at(dz, u, g[:, None] * z[v])
    return total, dz


def loss(z: np.ndarray | NodeEmbeddings, pairs: PairSample) -> float:
    """Negative-sampling loss summed over nodes; empty pools contribute 0."""
    vec = z.vectors if isinstance(z, NodeEmbeddings) else np.asarray(z, dtype=np.float64)
    return _loss_and_grad(vec, pairs)[0]


def loss_and_gradients(
    graph: MsgGraph, params: Mapping[str, np.ndarray], cfg: ModelConfig, pairs: PairSample
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and its exact gradient w.r.t. every parameter (backprop)."""
    prep = _Prepared(graph)
    z, cache = _forward(prep, params, cfg, keep=True)
    value, dz = _loss_and_grad(z, pairs)
    return value, _backward(prep, params, cfg, cache, dz)


def loss_value(graph: MsgGraph, params: Mapping[str, np.ndarray], cfg: ModelConfig, pairs: PairSample) -> float:
    z, _ = _forward(_Prepared(graph), params, cfg)
    return _loss_and_grad(z, pairs)[0]


# -- training ----------------------------------------------------------------------


def train(
    graph: MsgGraph,
    config: ModelConfig,
    init: EmbeddingModel | None = None,
    *,
    rng: np.random.Generator | None = None,
) -> EmbeddingModel:
    """Full-batch SGD; a fresh pair sample is drawn every epoch.

    The reported loss is the node sum; the step uses the node-averaged gradient
    so ``learning_rate`` does not have to shrink with graph size. Passing
    ``init`` warm-starts from its parameters and bumps its version.
    """
    if graph.n_nodes == 0:
        raise ValueError("cannot train on an empty graph")
    if init is not None:
        _check_schema(graph, init)
    rng = rng if rng is not None else np.random.default_rng(config.rng_seed)
    if init is None:
        params = init_params(graph.schema, config, rng)
        version, trace = 0, []
    else:
        params = {k: v.copy() for k, v in init.params.items()}
        version, trace = init.version + 1, list(init.loss_trace)
    prep = _Prepared(graph)
    pools = SamplingPools(graph, config.num_layers)
    step = config.learning_rate / graph.n_nodes
    for epoch in range(config.epochs):
        z, cache = _forward(prep, params, config, keep=True)
        pairs = pools.sample(config.q_plus, config.q_minus, rng)
        value, dz = _loss_and_grad(z, pairs)
        if not math.isfinite(value):
            raise NonFiniteLoss(f"loss became {value} at epoch {epoch}")
        grads = _backward(prep, params, config, cache, dz)
        for k in params:
            params[k] = params[k] - step * grads[k]
        trace.append(value)
    return EmbeddingModel(graph.schema, config, params, version=version, loss_trace=tuple(trace))


def refresh(model: EmbeddingModel, graph: MsgGraph, iters: int) -> EmbeddingModel:
    """Continue SGD from ``model`` for ``iters`` epochs; publishes version + 1."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    cfg = replace(model.config, epochs=iters)
    rng = np.random.default_rng([model.config.rng_seed, model.version + 1])
    new = train(graph, cfg, init=model, rng=rng)
    # keep the original epoch budget in the published config
    return EmbeddingModel(new.schema, model.config, new.params, new.version, new.loss_trace)


def evaluation_loss(model: EmbeddingModel, graph: MsgGraph, seed: int = 12345) -> float:
    """Loss on a fixed pair sample; comparable across models on the same graph."""
    pools = SamplingPools(graph, model.config.num_layers)
    pairs = pools.sample(model.config.q_plus, model.config.q_minus, np.random.default_rng(seed))
    return loss_value(graph, model.params, model.config, pairs)


# -- subgraph embeddings --------------------------------------------------------------


def embed_subgraph_nodes(subgraph: MsgGraph | Subgraph, model: EmbeddingModel) -> np.ndarray:
    """Mean of the truncated node embeddings."""
    emb = forward(subgraph, model)
    if not emb.ids:
        raise ValueError("cannot embed an empty subgraph")
    return emb.vectors.mean(axis=0)


def degree_weighted(z: np.ndarray, degrees: np.ndarray, n_edges: int) -> np.ndarray:
    return (degrees[:, None] * z).sum(axis=0) / (2.0 * n_edges)


def embed_subgraph_edges(subgraph: MsgGraph | Subgraph, model: EmbeddingModel) -> np.ndarray:
    """Mean over subgraph edges of the mean of their endpoint embeddings,
    computed as the within-subgraph-degree weighted sum of node embeddings."""
    g = _as_graph(subgraph)
    if g.n_edges == 0:
        raise NoEdges("edge-based embedding needs at least one edge")
    emb = forward(g, model)
    deg = np.array([g.degree(n) for n in emb.ids], dtype=np.float64)
    return degree_weighted(emb.vectors, deg, g.n_edges)


def embed_subgraph(
    subgraph: MsgGraph | Subgraph, model: EmbeddingModel, composition: str = "edges"
) -> np.ndarray:
    """Edge-based composition with node-based fallback for edgeless subgraphs."""
    if composition == "edges":
        try:
            return embed_subgraph_edges(subgraph, model)
        except NoEdges:
            return embed_subgraph_nodes(subgraph, model)
    if composition == "nodes":
        return embed_subgraph_nodes(subgraph, model)
    raise ValueError(f"unknown composition {composition!r}")


def embedding_similarity(z1: np.ndarray, z2: np.ndarray) -> float:
    """Cosine similarity mapped to [0, 1]."""
    n1, n2 = float(np.linalg.norm(z1)), float(np.linalg.norm(z2))
    if n1 == 0.0 or n2 == 0.0:
        raise ZeroVector("cosine similarity of a zero vector is undefined")
    cos = float(np.dot(z1, z2)) / (n1 * n2)
    return min(1.0, max(0.0, (cos + 1.0) / 2.0))
