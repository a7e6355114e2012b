"""Explanation selection: gamma filtering, greedy, multi-pass swap, one-pass
streaming swap and an exhaustive oracle.

Ties are always broken by the lowest ``arrival_seq`` (then rumour id), and
swap search enumerates swap sizes ``1..max_swap``, removal sets over member
positions and insertion sets over candidate positions, all in lexicographic
order.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from itertools import combinations
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, StaleQuery, TooManySubsets
from .utility import SimTable, Utility, UtilityConfig

STRATEGIES = ("greedy", "swap", "onepass")
MAX_SUBSETS = 50_000
_EPS = 1e-12


@dataclass(frozen=True)
class Candidate:
    rumour_id: str
    arrival_seq: int
    sim: float
    cov: float = 0.0

    @property
    def order_key(self) -> tuple:
        return (self.arrival_seq, self.rumour_id)


@dataclass(frozen=True)
class CandidatePool:
    """Candidates plus their pairwise similarity matrix (same order)."""

    candidates: tuple[Candidate, ...]
    pair_sim: np.ndarray

    @classmethod
    def build(
        cls, candidates: Sequence[Candidate], pair_fn: Callable[[Candidate, Candidate], float] | None = None
    ) -> "CandidatePool":
        n = len(candidates)
        p = np.zeros((n, n))
        if pair_fn is not None:
            for i in range(n):
                for j in range(i + 1, n):
                    p[i, j] = p[j, i] = pair_fn(candidates[i], candidates[j])
        return cls(tuple(candidates), p)

    def table(self) -> SimTable:
        return SimTable(
            np.array([c.sim for c in self.candidates]),
            self.pair_sim,
            np.array([c.cov for c in self.candidates]),
        )

    def __len__(self) -> int:
        return len(self.candidates)

    def subset(self, idx: Sequence[int]) -> "CandidatePool":
        idx = list(idx)
        return CandidatePool(tuple(self.candidates[i] for i in idx), self.pair_sim[np.ix_(idx, idx)])


@dataclass(frozen=True)
class SelectionConfig:
    k: int = 5
    strategy: str = "greedy"
    passes: int = 50
    beta: float = 2.0
    max_swap: int | None = None
    utility: UtilityConfig = field(default_factory=UtilityConfig)

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}")
        if self.passes < 1:
            raise ConfigError("passes must be >= 1")
        if self.beta < 1:
            raise ConfigError("beta must be >= 1")
        if self.max_swap is not None and self.max_swap < 1:
            raise ConfigError("max_swap must be >= 1")

    @property
    def gamma(self) -> float:
        return self.utility.gamma

    def to_dict(self) -> dict:
        d = asdict(self)
        d["utility"] = asdict(self.utility)
        return d


@dataclass(frozen=True)
class Member:
    rumour_id: str
    sim: float
    gain: float


@dataclass(frozen=True)
class Explanation:
    query_id: str
    members: tuple[Member, ...]
    utility: float
    strategy: str
    config: dict
    model_version: int | None = None
    cached: bool = False
    warnings: tuple[str, ...] = ()

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(m.rumour_id for m in self.members)

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "members": [asdict(m) for m in self.members],
            "utility": self.utility,
            "strategy": self.strategy,
            "config": self.config,
            "model_version": self.model_version,
            "cached": self.cached,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Explanation":
        return cls(
            query_id=d["query_id"],
            members=tuple(Member(**m) for m in d["members"]),
            utility=float(d["utility"]),
            strategy=d["strategy"],
            config=d["config"],
            model_version=d.get("model_version"),
            cached=bool(d.get("cached", False)),
            warnings=tuple(d.get("warnings", ())),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def filter_candidates(
    rumours: Iterable, q, gamma: float, sim_fn: Callable[[object, object], float]
) -> list[tuple[object, float]]:
    """Rumours with ``sim(s, q) >= gamma``, by descending score then arrival."""
    out = [(s, float(sim_fn(s, q))) for s in rumours]
    out = [(s, v) for s, v in out if v >= gamma]
    out.sort(key=lambda sv: (-sv[1], getattr(sv[0], "arrival_seq", 0), getattr(sv[0], "rumour_id", "")))
    return out


def _qualified(pool: CandidatePool, gamma: float) -> list[int]:
    return [i for i, c in enumerate(pool.candidates) if c.sim >= gamma]


def _restrict(pool: CandidatePool, gamma: float) -> CandidatePool:
    idx = _qualified(pool, gamma)
    return pool if len(idx) == len(pool) else pool.subset(idx)


def _explanation(pool, util, chosen, gains, cfg, query_id, model_version, strategy) -> Explanation:
    members = tuple(
        Member(pool.candidates[i].rumour_id, pool.candidates[i].sim, float(g)) for i, g in zip(chosen, gains)
    )
    warnings = ()
    if not util.check.ok:
        warnings = (f"lambda1 {util.lambda1:.6g} exceeds monotonicity bound {util.check.bound:.6g}",)
    config = cfg.to_dict()
    # the automatic lambda1 depends on the pool, so record the value used
    config["lambda1_used"] = util.lambda1
    return Explanation(
        query_id=query_id,
        members=members,
        utility=float(util(chosen)),
        strategy=strategy,
        config=config,
        model_version=model_version,
        warnings=warnings,
    )


def _gains_in_order(util: Utility, chosen: Sequence[int]) -> list[float]:
    return [util.gain(list(chosen[:i]), s) for i, s in enumerate(chosen)]


def greedy_select(
    pool: CandidatePool, cfg: SelectionConfig, query_id: str = "q", model_version: int | None = None
) -> Explanation:
    pool = _restrict(pool, cfg.gamma)
    util = Utility(pool.table(), cfg.utility)
    left = _qualified(pool, cfg.gamma)
    chosen: list[int] = []
    gains: list[float] = []
    while left and len(chosen) < cfg.k:
        best, best_gain = None, -math.inf
        for i in left:
            g = util.gain(chosen, i)
            if g > best_gain + _EPS or (
                abs(g - best_gain) <= _EPS and pool.candidates[i].order_key < pool.candidates[best].order_key
            ):
                best, best_gain = i, g
        if best_gain <= 0.0:
            break
        chosen.append(best)
        gains.append(best_gain)
        left.remove(best)
    return _explanation(pool, util, chosen, gains, cfg, query_id, model_version, "greedy")


def top_k_by_sim(pool: CandidatePool, k: int, gamma: float) -> list[int]:
    idx = _qualified(pool, gamma)
    idx.sort(key=lambda i: (-pool.candidates[i].sim, pool.candidates[i].order_key))
    return idx[:k]


def swap_select(
    pool: CandidatePool,
    cfg: SelectionConfig,
    initial: Sequence[int] | None = None,
    query_id: str = "q",
    model_version: int | None = None,
) -> Explanation:
    """Local search that replaces ``S'`` inside the set by an equally large ``T``
    outside it whenever the utility strictly increases. One improving swap is
    applied per pass. ``initial`` indexes the gamma-qualified candidates in
    pool order."""
    pool = _restrict(pool, cfg.gamma)
    util = Utility(pool.table(), cfg.utility)
    qual = _qualified(pool, cfg.gamma)
    S = list(initial) if initial is not None else top_k_by_sim(pool, cfg.k, cfg.gamma)
    if len(S) > cfg.k or any(i not in qual for i in S):
        raise ConfigError("initial set must hold at most k gamma-qualified candidates")
    canon = sorted(qual, key=lambda i: pool.candidates[i].order_key)
    cap = min(cfg.max_swap or cfg.k, cfg.k)
    for _ in range(cfg.passes):
        current = util(S)
        members = sorted(S, key=lambda i: pool.candidates[i].order_key)
        outside = [i for i in canon if i not in S]
        found = None
        for t in range(1, min(cap, len(members), len(outside)) + 1):
            for out in combinations(members, t):
                keep = [i for i in S if i not in out]
                for ins in combinations(outside, t):
                    trial = keep + list(ins)
                    if util(trial) > current + _EPS:
                        found = trial
                        break
                if found:
                    break
            if found:
                break
        if found is None:
            break
        S = found
    S.sort(key=lambda i: (-pool.candidates[i].sim, pool.candidates[i].order_key))
    return _explanation(pool, util, S, _gains_in_order(util, S), cfg, query_id, model_version, "swap")


def _n_subsets(n: int, k: int) -> int:
    return sum(math.comb(n, i) for i in range(min(n, k) + 1))


def brute_force_select(
    pool: CandidatePool, cfg: SelectionConfig, query_id: str = "q", model_version: int | None = None
) -> Explanation:
    pool = _restrict(pool, cfg.gamma)
    util = Utility(pool.table(), cfg.utility)
    qual = sorted(_qualified(pool, cfg.gamma), key=lambda i: pool.candidates[i].order_key)
    if _n_subsets(len(qual), cfg.k) > MAX_SUBSETS:
        raise TooManySubsets(f"more than {MAX_SUBSETS} subsets to enumerate")
    best: list[int] = []
    best_val = 0.0
    for size in range(1, min(cfg.k, len(qual)) + 1):
        for combo in combinations(qual, size):
            v = util(combo)
            if v > best_val + _EPS:
                best, best_val = list(combo), v
    return _explanation(pool, util, best, _gains_in_order(util, best), cfg, query_id, model_version, "exhaustive")


# -- one-pass streaming swap ----------------------------------------------------------------


@dataclass
class OnePassState:
    """Members of the running explanation for one fixed query.

    Only members are stored: their candidate records and the pairwise
    similarities among them. Rejected rumours leave no trace.
    """

    query_key: str
    cfg: SelectionConfig
    members: list[Candidate] = field(default_factory=list)
    pair_sim: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    stale: bool = False

    def pool(self) -> CandidatePool:
        return CandidatePool(tuple(self.members), self.pair_sim)

    def utility(self) -> float:
        return Utility(self.pool().table(), self.cfg.utility)(range(len(self.members)))

    def explanation(self, query_id: str | None = None, model_version: int | None = None) -> Explanation:
        pool = self.pool()
        util = Utility(pool.table(), self.cfg.utility)
        order = sorted(range(len(pool)), key=lambda i: (-pool.candidates[i].sim, pool.candidates[i].order_key))
        return _explanation(
            pool, util, order, _gains_in_order(util, order), self.cfg,
            query_id or self.query_key, model_version, "onepass",
        )

    def to_dict(self) -> dict:
        return {
            "query_key": self.query_key,
            "members": [asdict(m) for m in self.members],
            "pair_sim": self.pair_sim.tolist(),
            "stale": self.stale,
        }

    @classmethod
    def from_dict(cls, d: dict, cfg: SelectionConfig) -> "OnePassState":
        n = len(d["members"])
        return cls(
            query_key=d["query_key"],
            cfg=cfg,
            members=[Candidate(**m) for m in d["members"]],
            pair_sim=np.asarray(d["pair_sim"], dtype=np.float64).reshape(n, n),
            stale=bool(d.get("stale", False)),
        )


def onepass_update(
    state: OnePassState, cand: Candidate, sims_to_members: Sequence[float], query_key: str
) -> bool:
    """Offer one new rumour to the running set; returns whether the set changed.

    ``sims_to_members`` holds the newcomer's similarity to each current
    member, in member order.
    """
    if query_key != state.query_key:
        raise StaleQuery(f"state is bound to query {state.query_key!r}, got {query_key!r}")
    cfg = state.cfg
    if cand.sim < cfg.gamma:
        return False
    row = np.asarray(sims_to_members, dtype=np.float64).reshape(-1)
    n = len(state.members)
    if row.size != n:
        raise ValueError("sims_to_members must align with the current members")
    grown = np.zeros((n + 1, n + 1))
    grown[:n, :n] = state.pair_sim
    grown[n, :n] = grown[:n, n] = row
    if n < cfg.k:
        state.members.append(cand)
        state.pair_sim = grown
        return True
    table = CandidatePool(tuple(state.members) + (cand,), grown).table()
    util = Utility(table, cfg.utility)
    current = util(range(n))
    best, best_val = None, -math.inf
    for out in range(n):
        v = util([i for i in range(n + 1) if i != out])
        if v > best_val + _EPS:
            best, best_val = out, v
    if best is None or best_val <= cfg.beta * current + _EPS:
        return False
    keep = [i for i in range(n + 1) if i != best]
    state.members = [table_member for i, table_member in enumerate(list(state.members) + [cand]) if i != best]
    state.pair_sim = grown[np.ix_(keep, keep)]
    return True


def select(
    pool: CandidatePool, cfg: SelectionConfig, query_id: str = "q", model_version: int | None = None
) -> Explanation:
    """Run the configured strategy over a candidate snapshot.

    The one-pass strategy streams the pool in arrival order.
    """
    if cfg.strategy == "greedy":
        return greedy_select(pool, cfg, query_id, model_version)
    if cfg.strategy == "swap":
        return swap_select(pool, cfg, None, query_id, model_version)
    state = OnePassState(query_id, cfg)
    order = sorted(range(len(pool)), key=lambda i: pool.candidates[i].order_key)
    pos: list[int] = []
    for i in order:
        if onepass_update(state, pool.candidates[i], [pool.pair_sim[i, j] for j in pos], query_id):
            ids = {m.rumour_id for m in state.members}
            pos = [j for j in pos if pool.candidates[j].rumour_id in ids] + [i]
    return state.explanation(query_id, model_version)


def recompute_utility(expl: Explanation, pool: CandidatePool, ucfg: UtilityConfig) -> float:
    """Utility of an explanation's members re-evaluated against ``pool``.

    An automatic ``lambda1`` is replaced by the value the explanation used.
    """
    if ucfg.lambda1 is None and expl.config.get("lambda1_used") is not None:
        ucfg = replace(ucfg, lambda1=expl.config["lambda1_used"])
    index = {c.rumour_id: i for i, c in enumerate(pool.candidates)}
    return Utility(pool.table(), ucfg)([index[r] for r in expl.ids])
