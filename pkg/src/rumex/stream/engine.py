"""Stream loop: ingest events, keep rumour embeddings indexed, maintain the
median cache and drift detector, and answer explanation queries."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from ..embedding import EmbeddingModel, embed_subgraph, refresh
from ..errors import ConfigError, IoError, ModelMissing, UnknownNode, ZeroVector
from ..events import (
    AddEdge,
    AddNode,
    DetectRumour,
    ExplainQuery,
    RumourLog,
    StreamEvent,
    apply_event,
    read_events,
    write_events,
)
from ..graph import ModalitySchema, MsgGraph, RumourSubgraph, Subgraph, induced_subgraph
from ..selection import (
    Candidate,
    CandidatePool,
    Explanation,
    SelectionConfig,
    greedy_select,
    select,
)
from ..similarity import ExactMatch, Graded, ged_similarity, graphsim, mcs_similarity
from ..utility import UtilityConfig, coverage_modality
from .cache import MedianCache, cos_sim01
from .drift import DRIFT, DriftDetector
from .index import VectorIndex, normalize

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class EngineConfig:
    # multi-pass swap enumerates all swap sizes up to k by default; at index
    # over-fetch sizes that is minutes per query, so the engine caps it
    selection: SelectionConfig = field(default_factory=lambda: SelectionConfig(max_swap=2))
    composition: str = "edges"
    kernel_scale: float = 1.0
    n_medians: int = 4
    eps_cache: float | None = 0.02
    reservoir: int = 256
    overfetch_factor: int = 4
    overfetch_min: int = 64
    drift_window: int = 50
    arl0: float = 500.0
    kappa: float | None = None
    refresh_iters: int = 5
    auto_refresh: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        if self.composition not in ("edges", "nodes"):
            raise ConfigError("composition must be 'edges' or 'nodes'")
        if self.n_medians < 1 or self.reservoir < 1:
            raise ConfigError("n_medians and reservoir must be >= 1")
        if self.overfetch_factor < 1 or self.overfetch_min < 1:
            raise ConfigError("over-fetch settings must be >= 1")
        if self.drift_window < 2:
            raise ConfigError("drift_window must be >= 2")
        if self.refresh_iters < 1:
            raise ConfigError("refresh_iters must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["selection"] = self.selection.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EngineConfig":
        d = dict(d)
        sel = dict(d.pop("selection"))
        sel["utility"] = UtilityConfig(**sel["utility"])
        return cls(selection=SelectionConfig(**sel), **d)


def _cache_cfg(cfg: SelectionConfig) -> SelectionConfig:
    return replace(cfg, strategy="onepass")


class StreamState:
    """Single-owner stream state. Not thread-safe; callers serialise access."""

    def __init__(self, schema: ModalitySchema, config: EngineConfig | None = None, model: EmbeddingModel | None = None):
        self.schema = schema
        self.config = config or EngineConfig()
        self.graph = MsgGraph(schema)
        self.log = RumourLog()
        self.model: EmbeddingModel | None = None
        self.index: VectorIndex | None = None
        self.versions: dict[str, int] = {}
        self.cache = self._new_cache()
        self.detector = self._new_detector()
        self.drift_events: list[dict] = []
        self.skipped: list[str] = []
        if model is not None:
            self.set_model(model)

    def _new_cache(self) -> MedianCache:
        c = self.config
        return MedianCache(c.n_medians, _cache_cfg(c.selection), c.reservoir, c.eps_cache, c.rng_seed)

    def _new_detector(self) -> DriftDetector:
        c = self.config
        return DriftDetector(kappa=c.kappa, window=c.drift_window, arl0=c.arl0)

    @property
    def kernel(self) -> Graded:
        return Graded(self.config.kernel_scale)

    @property
    def model_version(self) -> int | None:
        return None if self.model is None else self.model.version

    # -- ingestion ----------------------------------------------------------------

    def ingest(self, ev: StreamEvent):
        """Apply one event; explain queries are answered and returned."""
        if isinstance(ev, ExplainQuery):
            return self.explain(ev)
        if isinstance(ev, DetectRumour) and self.model is not None:
            self._sync()
            out = apply_event(self.graph, ev, self.log)
            self._observe(out, live=True)
            return out
        return apply_event(self.graph, ev, self.log)

    def ingest_all(self, events) -> list[Explanation]:
        answers = []
        for ev in events:
            res = self.ingest(ev)
            if isinstance(res, Explanation):
                answers.append(res)
        return answers

    def _embed(self, sub: Subgraph) -> np.ndarray:
        return embed_subgraph(sub, self.model, self.config.composition)

    def _observe(self, rumour: RumourSubgraph, live: bool) -> None:
        try:
            z = normalize(self._embed(rumour))
        except ZeroVector:
            log.warning("rumour %s has a zero embedding and is not indexed", rumour.rumour_id)
            self.skipped.append(rumour.rumour_id)
            return
        self.index.insert(rumour.rumour_id, z)
        self.versions[rumour.rumour_id] = self.model.version
        u = self.config.selection.utility
        cov = coverage_modality(rumour, self.graph, u.alpha, u.delta, self.kernel)
        self.cache.observe(rumour.rumour_id, rumour.arrival_seq, z, cov, self.index.vector)
        anchors = self.cache.medians() if len(self.cache) == self.cache.n_medians else None
        if self.detector.feed(z, anchors) == DRIFT:
            self.drift_events.append(
                {"rumour_id": rumour.rumour_id, "arrival_seq": rumour.arrival_seq, "model_version": self.model.version}
            )
            if live and self.config.auto_refresh:
                self.refresh_model(self.config.refresh_iters)

    # -- model lifecycle ---------------------------------------------------------------

    def set_model(self, model: EmbeddingModel) -> None:
        if model.schema != self.schema:
            raise ConfigError("model schema does not match the stream schema")
        same = self.model is not None and np.array_equal(self.model.flat(), model.flat())
        if not same:
            self.index = VectorIndex(model.config.embed_dim)
            self.versions = {}
            self.cache = self._new_cache()
            self.detector = self._new_detector()
        self.model = model
        self._sync()

    def refresh_model(self, iters: int | None = None) -> EmbeddingModel:
        """Warm-start a few epochs on the current graph and publish v+1.

        Stored embeddings are refreshed lazily on next use.
        """
        if self.model is None:
            raise ModelMissing("no model to refresh")
        self.model = refresh(self.model, self.graph, iters or self.config.refresh_iters)
        self.detector.reset()
        return self.model

    def _sync(self) -> None:
        """Bring every stored embedding to the current model version and index
        rumours that arrived before a model existed."""
        if self.model is None:
            raise ModelMissing("no embedding model has been trained or loaded")
        v = self.model.version
        stale = [r for r, ver in self.versions.items() if ver != v]
        for rid in stale:
            self.index.update(rid, self._embed(self.log[rid]))
            self.versions[rid] = v
        if stale:
            self.cache.reembed(self.index.vector)
        for rumour in self.log:
            if rumour.rumour_id not in self.versions and rumour.rumour_id not in self.skipped:
                self._observe(rumour, live=False)

    # -- explanation ----------------------------------------------------------------------

    def query_config(self, q: ExplainQuery, base: SelectionConfig | None = None) -> SelectionConfig:
        base = base or self.config.selection
        return replace(base, k=q.k, utility=replace(base.utility, gamma=q.gamma))

    def _query_vector(self, q: ExplainQuery) -> tuple[np.ndarray, Subgraph, set[str]]:
        if q.rumour_id is not None:
            if q.rumour_id not in self.log:
                raise UnknownNode(f"unknown rumour {q.rumour_id!r}")
            r = self.log[q.rumour_id]
            z = self.index.vector(r.rumour_id) if r.rumour_id in self.index else normalize(self._embed(r))
            return z, r, {r.rumour_id}
        sub = induced_subgraph(self.graph, q.node_ids)
        return normalize(self._embed(sub)), sub, set()

    def _candidate(self, rid: str, sim: float) -> Candidate:
        r = self.log[rid]
        u = self.config.selection.utility
        cov = coverage_modality(r, self.graph, u.alpha, u.delta, self.kernel)
        return Candidate(rid, r.arrival_seq, sim, cov)

    def _pool(self, scored: list[tuple[str, float]], gamma: float, pair_fn=None) -> CandidatePool:
        kept = [(rid, s) for rid, s in scored if s >= gamma]
        cands = [self._candidate(rid, s) for rid, s in kept]
        if not cands:
            return CandidatePool((), np.zeros((0, 0)))
        if pair_fn is not None:
            return CandidatePool.build(cands, lambda a, b: pair_fn(self.log[a.rumour_id], self.log[b.rumour_id]))
        vecs = np.stack([self.index.vector(c.rumour_id) for c in cands])
        pair = np.clip((vecs @ vecs.T + 1.0) / 2.0, 0.0, 1.0)
        return CandidatePool(tuple(cands), pair)

    def _empty(self, q: ExplainQuery, cfg: SelectionConfig) -> Explanation:
        return Explanation(q.query_id, (), 0.0, cfg.strategy, cfg.to_dict(), self.model_version)

    def explain(self, q: ExplainQuery, cfg: SelectionConfig | None = None) -> Explanation:
        cfg = self.query_config(q, cfg)
        if self.model is None:
            raise ModelMissing("no embedding model has been trained or loaded")
        self._sync()
        if len(self.index) == 0:
            return self._empty(q, cfg)
        if cfg.utility.sim_source != "embedding":
            return self.full_scan_explain(q, cfg)
        z, _, exclude = self._query_vector(q)
        cached = self._fast_path(q, z, cfg, exclude)
        if cached is not None:
            return cached
        m = max(self.config.overfetch_factor * cfg.k, self.config.overfetch_min) + len(exclude)
        hits = [(rid, min(1.0, max(0.0, (c + 1.0) / 2.0))) for rid, c in self.index.knn(z, m) if rid not in exclude]
        pool = self._pool(hits, cfg.gamma)
        return select(pool, cfg, q.query_id, self.model_version)

    def _fast_path(self, q, z, cfg: SelectionConfig, exclude: set[str]) -> Explanation | None:
        if self.cache.eps_cache is None or _cache_cfg(cfg) != self.cache.cfg:
            return None
        slot = self.cache.lookup(z)
        if slot is None:
            return None
        i = self.cache.slots.index(slot)
        if slot.stale:
            self._reseed(i)
        expl = slot.state.explanation(q.query_id, self.model_version)
        if exclude & set(expl.ids):
            return None
        return replace(expl, cached=True)

    def _reseed(self, i: int) -> None:
        """Rebuild a stale median state with greedy over indexed candidates."""
        slot = self.cache.slots[i]
        cfg = self.cache.cfg
        m = max(self.config.overfetch_factor * cfg.k, self.config.overfetch_min)
        hits = [(rid, cos_sim01(slot.vector, self.index.vector(rid))) for rid, _ in self.index.knn(slot.vector, m)]
        pool = self._pool(hits, cfg.gamma)
        expl = greedy_select(pool, replace(cfg, strategy="greedy"))
        pos = {c.rumour_id: j for j, c in enumerate(pool.candidates)}
        idx = [pos[r] for r in expl.ids]
        self.cache.reseed(i, [pool.candidates[j] for j in idx], pool.pair_sim[np.ix_(idx, idx)], self.index.vector)

    def full_scan_explain(self, q: ExplainQuery, cfg: SelectionConfig | None = None) -> Explanation:
        """Greedy over every stored rumour, scored by the configured measure."""
        cfg = cfg or self.query_config(q)
        if self.model is None:
            raise ModelMissing("no embedding model has been trained or loaded")
        self._sync()
        z, sub, exclude = self._query_vector(q)
        ids = [r for r in self.index.ids if r not in exclude]
        source = cfg.utility.sim_source
        if source == "embedding":
            pool = self._pool([(rid, cos_sim01(z, self.index.vector(rid))) for rid in ids], cfg.gamma)
        else:
            fn = _MEASURES[source]
            pool = self._pool([(rid, fn(self.log[rid], sub)) for rid in ids], cfg.gamma, fn)
        return greedy_select(pool, replace(cfg, strategy="greedy"), q.query_id, self.model_version)

    # -- reporting and persistence ---------------------------------------------------------------

    def summary(self) -> dict:
        return {
            "nodes": self.graph.n_nodes,
            "edges": self.graph.n_edges,
            "rumours": len(self.log),
            "indexed": 0 if self.index is None else len(self.index),
            "model_version": self.model_version,
            "medians": len(self.cache),
            "drift_alarms": len(self.drift_events),
        }

    def drift_report(self) -> dict:
        d = self.detector
        return {
            "calibrated": d.calibrated,
            "anchors": 0 if d.anchors is None else int(len(d.anchors)),
            "kappa": d.kappa,
            "h": d.h,
            "statistic": d.stat,
            "observed": d.observed,
            "events": list(self.drift_events),
            "model_version": self.model_version,
        }

    def graph_events(self) -> list[StreamEvent]:
        g = self.graph
        events: list[StreamEvent] = [
            AddNode(n, g.modality(n), tuple(g.features(n).tolist())) for n in g.node_ids
        ]
        events += [AddEdge(u, v, tuple(g.edge_features(u, v).tolist())) for u, v in g.edges()]
        events += [DetectRumour(r.rumour_id, r.nodes) for r in self.log]
        return events

    def save(self, directory: str | Path) -> None:
        path = Path(directory)
        try:
            path.mkdir(parents=True, exist_ok=True)
            with open(path / "graph.jsonl", "w", encoding="utf-8") as fp:
                write_events(fp, self.schema, self.graph_events())
            if self.model is not None:
                self.model.save(path / "model.json")
            elif (path / "model.json").exists():
                (path / "model.json").unlink()
            state = {
                "format": CHECKPOINT_VERSION,
                "config": self.config.to_dict(),
                "versions": self.versions,
                "skipped": self.skipped,
                "drift_events": self.drift_events,
                "index": None if self.index is None else self.index.to_dict(),
                "cache": self.cache.to_dict(),
                "detector": self.detector.to_dict(),
            }
            _dump(path / "state.json", state)
        except OSError as exc:
            raise IoError(f"cannot write checkpoint {path}: {exc}") from None

    @classmethod
    def load(cls, directory: str | Path, config: EngineConfig | None = None) -> "StreamState":
        path = Path(directory)
        if not (path / "state.json").exists():
            raise IoError(f"{path} is not a checkpoint directory")
        schema, events = read_events(path / "graph.jsonl")
        try:
            state = json.loads((path / "state.json").read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise IoError(f"cannot read {path / 'state.json'}: {exc}") from None
        saved_cfg = EngineConfig.from_dict(state["config"])
        self = cls(schema, config or saved_cfg)
        for ev in events:
            apply_event(self.graph, ev, self.log)
        if (path / "model.json").exists():
            self.model = EmbeddingModel.load(path / "model.json", schema)
        if state["index"] is not None:
            self.index = VectorIndex.from_dict(state["index"])
        self.versions = dict(state["versions"])
        self.skipped = list(state["skipped"])
        self.drift_events = list(state["drift_events"])
        self.detector = DriftDetector.from_dict(state["detector"])
        self.cache = MedianCache.from_dict(state["cache"], _cache_cfg(self.config.selection))
        self.cache.eps_cache = self.config.eps_cache
        if _cache_cfg(self.config.selection) != _cache_cfg(saved_cfg.selection):
            self.cache.reset_states()  # cached answers were built for other settings
        return self


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True) + "\n", encoding="utf-8")


def _approx(fn: Callable) -> Callable[[Subgraph, Subgraph], float]:
    return lambda a, b: fn(a, b, ExactMatch(), approximate=True)


_MEASURES: dict[str, Callable[[Subgraph, Subgraph], float]] = {
    "mcs": _approx(mcs_similarity),
    "graphsim": _approx(graphsim),
    "ged": lambda a, b: ged_similarity(a, b, ExactMatch()),
}
