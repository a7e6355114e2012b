"""Coverage and utility scoring of explanation sets.

Utilities are evaluated over a :class:`SimTable`: per-candidate relevance to
the query, a symmetric candidate-by-candidate similarity matrix and a
per-candidate modality coverage. Members are addressed by table position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError
from .graph import MsgGraph, Subgraph
from .similarity import Graded, SimilarityKernel, feature_sim

MODES = ("content", "modality", "hybrid")
SIM_SOURCES = ("embedding", "mcs", "graphsim", "ged")


@dataclass(frozen=True)
class UtilityConfig:
    """``lambda1=None`` means: use the monotonicity bound of the candidate pool."""

    lambda1: float | None = None
    lambda2: float = 0.5
    alpha: float = 0.25
    delta: float = 1.0
    gamma: float = 0.5
    mode: str = "hybrid"
    sim_source: str = "embedding"
    enforce_bound: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.sim_source not in SIM_SOURCES:
            raise ConfigError(f"sim_source must be one of {SIM_SOURCES}")
        if self.lambda1 is not None and self.lambda1 < 0:
            raise ConfigError("lambda1 must be >= 0")
        if self.lambda2 < 0:
            raise ConfigError("lambda2 must be >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.delta < 0:
            raise ConfigError("delta must be >= 0")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if self.mode != "content" and self.alpha > self.gamma:
            raise ConfigError("alpha must not exceed gamma when modality coverage is used")


# -- distances and coverage ---------------------------------------------------------


def _members(s: Subgraph | MsgGraph) -> tuple[MsgGraph, list[str]]:
    if isinstance(s, Subgraph):
        return s.graph, list(s.nodes)
    return s, list(s.node_ids)


def dist_node_to_subgraph(
    graph: MsgGraph, v: str, s: Subgraph, kernel: SimilarityKernel = Graded()
) -> float:
    """``min`` over nodes ``u`` of ``s`` of ``1 - node_sim(v, u)``."""
    src, nodes = _members(s)
    if not nodes:
        raise ValueError("subgraph must be non-empty")
    mod, fv = graph.modality(v), graph.features(v)
    best = 1.0
    for u in nodes:
        if src.modality(u) == mod:
            best = min(best, 1.0 - feature_sim(fv, src.features(u), kernel))
    return best


def dist_modality_to_subgraph(
    modality: str, s: Subgraph, graph: MsgGraph, kernel: SimilarityKernel = Graded()
) -> float:
    """``min`` over graph nodes of ``modality`` of their distance to ``s``.

    ``inf`` when the graph has no node of that modality. Nodes of different
    modalities have similarity 0, so only same-modality members of ``s`` can
    bring the distance below 1.
    """
    src, nodes = _members(s)
    if not nodes:
        raise ValueError("subgraph must be non-empty")
    if src is graph and any(graph.modality(u) == modality for u in nodes):
        return 0.0  # the member itself is a graph node of that modality
    pool = graph.nodes_of_modality(modality)
    if not pool:
        return math.inf
    inside = [src.features(u) for u in nodes if src.modality(u) == modality]
    if not inside:
        return 1.0
    a = np.stack([graph.features_idx(i) for i in pool])
    b = np.stack(inside)
    if isinstance(kernel, Graded):
        d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1))
        return float(1.0 - np.exp(-d / kernel.scale).max())
    diff = np.abs(a[:, None, :] - b[None, :, :]).max(axis=-1, initial=0.0)
    return 0.0 if bool((diff <= kernel.eps).any()) else 1.0


def coverage_modality(
    s: Subgraph, graph: MsgGraph, alpha: float, delta: float, kernel: SimilarityKernel = Graded()
) -> float:
    """Sum of ``alpha ** dist(a, s)`` over modalities within ``delta`` of ``s``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    total = 0.0
    for a in graph.schema.node_modalities:
        d = dist_modality_to_subgraph(a, s, graph, kernel)
        if d <= delta:
            total += 1.0 if d == 0.0 else alpha**d
    return total


# -- utilities ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimTable:
    q_sim: np.ndarray
    pair_sim: np.ndarray
    cov: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        q = np.asarray(self.q_sim, dtype=np.float64).reshape(-1)
        n = q.size
        p = np.asarray(self.pair_sim, dtype=np.float64).reshape(n, n).copy()
        np.fill_diagonal(p, 0.0)
        c = np.zeros(n) if self.cov is None else np.asarray(self.cov, dtype=np.float64).reshape(n)
        for name, arr in (("q_sim", q), ("pair_sim", p), ("cov", c)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return self.q_sim.size


def utility_content(S: Sequence[int], table: SimTable, lambda1: float) -> float:
    """``2 sum sim(s, q) - lambda1 * sum over ordered pairs s != s' of sim(s, s')``."""
    idx = np.asarray(list(S), dtype=np.int64)
    if idx.size == 0:
        return 0.0
    rel = float(table.q_sim[idx].sum())
    red = float(table.pair_sim[np.ix_(idx, idx)].sum())
    return 2.0 * rel - lambda1 * red


def utility_modality(S: Sequence[int], table: SimTable, lambda2: float) -> float:
    idx = np.asarray(list(S), dtype=np.int64)
    if idx.size == 0:
        return 0.0
    q = table.q_sim[idx]
    return float(q.sum() + lambda2 * (q * table.cov[idx]).sum())


def utility_hybrid(S: Sequence[int], table: SimTable, lambda1: float, lambda2: float) -> float:
    return utility_content(S, table, lambda1) + utility_modality(S, table, lambda2)


@dataclass(frozen=True)
class Lambda1Check:
    ok: bool
    bound: float
    witness: int | None  # table position with the largest row sum

    def to_dict(self, ids: Sequence[str] | None = None) -> dict:
        w = self.witness
        return {
            "ok": self.ok,
            "bound": self.bound if math.isfinite(self.bound) else None,
            "witness": (ids[w] if ids is not None and w is not None else w),
        }


def lambda1_bound(pair_sim: np.ndarray, gamma: float) -> tuple[float, int | None]:
    p = np.asarray(pair_sim, dtype=np.float64)
    if p.size == 0:
        return math.inf, None
    rows = p.sum(axis=1) - np.diag(p)
    w = int(np.argmax(rows))
    if rows[w] <= 0.0:
        return math.inf, None
    return gamma / float(rows[w]), w


def check_lambda1_bound(pair_sim: np.ndarray, gamma: float, lambda1: float) -> Lambda1Check:
    """``lambda1 <= gamma / max_s sum_{s' != s} sim(s, s')`` over the pool."""
    bound, w = lambda1_bound(pair_sim, gamma)
    return Lambda1Check(ok=lambda1 <= bound, bound=bound, witness=w)


class Utility:
    """A utility of the configured mode bound to one candidate table."""

    def __init__(self, table: SimTable, cfg: UtilityConfig):
        self.table = table
        self.cfg = cfg
        if cfg.lambda1 is None:
            bound, _ = lambda1_bound(table.pair_sim, cfg.gamma)
            self.lambda1 = bound if math.isfinite(bound) else 0.0
        else:
            self.lambda1 = float(cfg.lambda1)
        self.check = check_lambda1_bound(table.pair_sim, cfg.gamma, self.lambda1)
        if cfg.enforce_bound and not self.check.ok:
            raise ConfigError(
                f"lambda1={self.lambda1} exceeds the monotonicity bound {self.check.bound:.6g}"
            )

    def __call__(self, S: Iterable[int]) -> float:
        S = list(S)
        if self.cfg.mode == "content":
            return utility_content(S, self.table, self.lambda1)
        if self.cfg.mode == "modality":
            return utility_modality(S, self.table, self.cfg.lambda2)
        return utility_hybrid(S, self.table, self.lambda1, self.cfg.lambda2)

    def gain(self, S: Sequence[int], s: int) -> float:
        """Marginal gain of adding ``s`` to ``S``, computed in closed form."""
        t = self.table
        q = float(t.q_sim[s])
        red = 2.0 * float(t.pair_sim[s, list(S)].sum()) if S else 0.0
        content = 2.0 * q - self.lambda1 * red
        modality = q * (1.0 + self.cfg.lambda2 * float(t.cov[s]))
        if self.cfg.mode == "content":
            return content
        if self.cfg.mode == "modality":
            return modality
        return content + modality
