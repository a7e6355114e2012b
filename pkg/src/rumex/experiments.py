"""Reproducible experiment presets behind ``rumex bench``.

Each preset takes a seed plus keyword overrides of its config dataclass and
returns ``(columns, rows)``; :func:`to_tsv` renders them. Rows hold only
quantities that are a pure function of the seed, so two runs print the same
bytes. Wall-clock timings are left to the caller.
"""

from __future__ import annotations

import csv
import io
import math
from collections import deque
from dataclasses import dataclass, fields, replace
from typing import Callable

import numpy as np

from .embedding import ModelConfig, embed_subgraph, embedding_similarity, train
from .errors import ConfigError
from .events import DetectRumour, ExplainQuery
from .graph import ModalitySchema, MsgGraph, Subgraph, induced_subgraph
from .propagation import PropagationConfig, gen_base_graph, simulate_stream
from .selection import (
    Candidate,
    CandidatePool,
    Explanation,
    SelectionConfig,
    brute_force_select,
    recompute_utility,
    select,
)
from .similarity import ged_result
from .stream.drift import DRIFT, DriftDetector
from .stream.engine import EngineConfig, StreamState
from .utility import UtilityConfig

Rows = list[dict]

DEFAULT_SCHEMA = ModalitySchema(["user", "tweet", "hashtag"], {"user": 4, "tweet": 4, "hashtag": 3})


def to_tsv(columns: list[str], rows: Rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r[c]) for c in columns])
    return buf.getvalue()


def _cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6f}"
    return str(v)


def pearson(x, y) -> float:
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.std() == 0.0 or y.std() == 0.0:
        return math.nan
    return float(np.corrcoef(x, y)[0, 1])


def _with(cfg, overrides: dict):
    known = {f.name for f in fields(cfg)}
    bad = sorted(set(overrides) - known)
    if bad:
        raise ConfigError(f"unknown settings for this preset: {', '.join(bad)}")
    return replace(cfg, **overrides)


# -- embedding vs edit distance -------------------------------------------------------


@dataclass(frozen=True)
class CorrelationConfig:
    n_nodes: int = 2000
    n_edges: int = 6000
    locality: int = 30
    feature_scale: float = 0.3
    n_pairs: int = 500
    max_deleted: int = 7
    ball_size: int = 12
    embed_dim: int = 32
    num_layers: int = 1
    learning_rate: float = 0.01
    epochs: int = 50
    samples: int = 5


def bfs_ball(graph: MsgGraph, start: int, size: int, rng: np.random.Generator) -> list[str]:
    """Up to ``size`` nodes in breadth-first order, neighbours visited in random order."""
    order, seen, queue = [start], {start}, deque([start])
    while queue and len(order) < size:
        nb = list(graph.neighbors_idx(queue.popleft()))
        rng.shuffle(nb)
        for j in nb:
            if j not in seen and len(order) < size:
                seen.add(j)
                order.append(j)
                queue.append(j)
    return [graph.id_of(i) for i in order]


def delete_edges(sub: Subgraph, k: int, rng: np.random.Generator, tries: int = 200) -> Subgraph | None:
    """``sub`` minus ``k`` random edges, resampled until it stays connected."""
    edges = list(sub.edges)
    for _ in range(tries):
        drop = set(rng.choice(len(edges), size=k, replace=False).tolist())
        cand = Subgraph(sub.graph, sub.nodes, tuple(e for i, e in enumerate(edges) if i not in drop))
        if cand.is_connected():
            return cand
    return None


def edge_deletion_pairs(
    graph: MsgGraph, n_pairs: int, max_deleted: int, ball_size: int, rng: np.random.Generator
) -> list[tuple[Subgraph, Subgraph, int]]:
    """Pairs ``(s, s')`` where ``s'`` drops ``k`` edges of ``s``, ``k`` uniform on 1..max.

    ``k`` is drawn first and balls are resampled until one has at least ``k``
    independent cycles, so ``k`` stays uniform.
    """
    out = []
    while len(out) < n_pairs:
        k = int(rng.integers(1, max_deleted + 1))
        while True:
            sub = induced_subgraph(graph, bfs_ball(graph, int(rng.integers(graph.n_nodes)), ball_size, rng))
            if sub.n_nodes < ball_size or sub.n_edges - sub.n_nodes + 1 < k:
                continue
            other = delete_edges(sub, k, rng)
            if other is not None:
                break
        out.append((sub, other, k))
    return out


def correlation(seed: int = 0, **overrides) -> tuple[list[str], Rows]:
    cfg = _with(CorrelationConfig(), overrides)
    scale = cfg.feature_scale
    graph = gen_base_graph(
        DEFAULT_SCHEMA, cfg.n_nodes, cfg.n_edges, lambda rng, _m, d: rng.normal(size=d) * scale,
        rng_seed=seed, locality=cfg.locality,
    )
    model = train(graph, ModelConfig(
        embed_dim=cfg.embed_dim, num_layers=cfg.num_layers, learning_rate=cfg.learning_rate,
        epochs=cfg.epochs, q_plus=cfg.samples, q_minus=cfg.samples, rng_seed=seed,
    ))
    pairs = edge_deletion_pairs(graph, cfg.n_pairs, cfg.max_deleted, cfg.ball_size, np.random.default_rng(seed + 1))
    geds, exact = [], 0
    for a, b, _ in pairs:
        res = ged_result(a, b)
        geds.append(res.cost)
        exact += res.exact
    dataset = f"synthetic-{cfg.n_nodes}"
    trace = model.loss_trace
    rows = []
    for comp in ("edges", "nodes"):
        sims = [embedding_similarity(embed_subgraph(a, model, comp), embed_subgraph(b, model, comp)) for a, b, _ in pairs]
        rows.append({
            "measure": f"embedding-{comp}",
            "dataset": dataset,
            "pairs": len(pairs),
            "exact_ged": exact,
            "pearson_r": pearson(sims, geds),
            "mean_sim": float(np.mean(sims)),
            "loss_first": trace[0] if trace else math.nan,
            "loss_last": trace[-1] if trace else math.nan,
        })
    cols = ["measure", "dataset", "pairs", "exact_ged", "pearson_r", "mean_sim", "loss_first", "loss_last"]
    return cols, rows


# -- approximation quality against the exhaustive optimum ------------------------------------


@dataclass(frozen=True)
class ApproximationConfig:
    instances: int = 1000
    max_candidates: int = 12
    max_k: int = 4
    gamma: float = 0.5
    lambda2: float = 0.5
    cov_low: float = 1.0
    cov_high: float = 4.0
    beta: float = 2.0


BOUNDS = {"greedy": 1.0 - 1.0 / math.e, "swap": 0.5, "onepass": 0.25}


def random_pool(rng: np.random.Generator, n: int, gamma: float, cov_low: float, cov_high: float) -> CandidatePool:
    """Relevance uniform on ``[gamma, 1]``, symmetric pair similarities on ``[0, 1]``."""
    q = rng.uniform(gamma, 1.0, n)
    cov = rng.uniform(cov_low, cov_high, n)
    p = np.triu(rng.uniform(0.0, 1.0, (n, n)), 1)
    cands = tuple(Candidate(f"c{i}", i, float(q[i]), float(cov[i])) for i in range(n))
    return CandidatePool(cands, p + p.T)


def approximation_ratios(seed: int = 0, **overrides) -> dict[str, list[float]]:
    """Per strategy, the ratio to the optimum on every random instance.

    Greedy and swap maximise the hybrid utility with the pool's own
    monotonicity bound for ``lambda1``; one-pass maximises the modality
    utility, streaming candidates in arrival order.
    """
    cfg = _with(ApproximationConfig(), overrides)
    rng = np.random.default_rng(seed)
    ratios: dict[str, list[float]] = {s: [] for s in BOUNDS}
    for _ in range(cfg.instances):
        n = int(rng.integers(2, cfg.max_candidates + 1))
        k = int(rng.integers(1, cfg.max_k + 1))
        pool = random_pool(rng, n, cfg.gamma, cfg.cov_low, cfg.cov_high)
        for strategy in BOUNDS:
            mode = "modality" if strategy == "onepass" else "hybrid"
            ucfg = UtilityConfig(gamma=cfg.gamma, lambda2=cfg.lambda2, mode=mode)
            scfg = SelectionConfig(k=k, strategy=strategy, beta=cfg.beta, utility=ucfg)
            opt = brute_force_select(pool, scfg).utility
            got = select(pool, scfg).utility
            ratios[strategy].append(got / opt if opt > 0 else 1.0)
    return ratios


def approximation(seed: int = 0, **overrides) -> tuple[list[str], Rows]:
    ratios = approximation_ratios(seed, **overrides)
    rows = []
    for strategy, r in ratios.items():
        arr = np.asarray(r)
        rows.append({
            "strategy": strategy,
            "instances": arr.size,
            "bound": BOUNDS[strategy],
            "min_ratio": float(arr.min()),
            "mean_ratio": float(arr.mean()),
            "violations": int((arr < BOUNDS[strategy] - 1e-12).sum()),
        })
    return ["strategy", "instances", "bound", "min_ratio", "mean_ratio", "violations"], rows


# -- streaming end to end ----------------------------------------------------------------------


@dataclass(frozen=True)
class StreamingConfig:
    n_nodes: int = 3000
    n_edges: int = 6800
    n_rumours: int = 200
    locality: int = 50
    max_rumour_nodes: int = 40
    infection_prob: float = 0.3
    max_steps: int = 5
    seed_count: int = 2
    epochs: int = 30
    queries: int = 50
    k: int = 5
    gamma: float = 0.5
    lambda1: float = 0.002
    strategy: str = "greedy"
    mode: str = "hybrid"
    max_swap: int = 1
    eps_cache: float | None = None


def stream_events(cfg: StreamingConfig, seed: int):
    prop = PropagationConfig(
        model="IC", infection_prob=cfg.infection_prob, max_steps=cfg.max_steps, seed_count=cfg.seed_count,
    )
    return simulate_stream(
        DEFAULT_SCHEMA, cfg.n_nodes, cfg.n_edges, cfg.n_rumours, prop,
        rng_seed=seed, locality=cfg.locality, max_rumour_nodes=cfg.max_rumour_nodes,
    )


def run_stream(cfg: StreamingConfig, seed: int) -> StreamState:
    """Ingest the warm-up prefix, train on it, then stream the rest live."""
    events = stream_events(cfg, seed)
    first = next((i for i, ev in enumerate(events) if isinstance(ev, DetectRumour)), len(events))
    ucfg = UtilityConfig(lambda1=cfg.lambda1, gamma=cfg.gamma, mode=cfg.mode)
    scfg = SelectionConfig(k=cfg.k, strategy=cfg.strategy, max_swap=cfg.max_swap, utility=ucfg)
    state = StreamState(DEFAULT_SCHEMA, EngineConfig(selection=scfg, eps_cache=cfg.eps_cache, rng_seed=seed))
    state.ingest_all(events[:first])
    state.set_model(train(state.graph, ModelConfig(epochs=cfg.epochs, rng_seed=seed)))
    state.ingest_all(events[first:])
    return state


def query_ids(state: StreamState, n: int) -> list[str]:
    ids = [r.rumour_id for r in state.log]
    step = max(len(ids) // max(n, 1), 1)
    return ids[::step][:n]


def check_explanation(expl: Explanation, state: StreamState, q: ExplainQuery, cfg: SelectionConfig) -> list[str]:
    """Reasons an explanation is invalid; empty when it is valid."""
    problems = []
    ids = expl.ids
    if len(ids) > cfg.k:
        problems.append("more than k members")
    if len(set(ids)) != len(ids):
        problems.append("duplicate members")
    if q.rumour_id in ids:
        problems.append("query rumour explains itself")
    if any(m.sim < cfg.gamma for m in expl.members):
        problems.append("member below gamma")
    z = state.index.vector(q.rumour_id)
    truth = [min(1.0, max(0.0, (float(z @ state.index.vector(r)) + 1.0) / 2.0)) for r in ids]
    if any(abs(t - m.sim) > 1e-9 for t, m in zip(truth, expl.members)):
        problems.append("member similarity does not match the index")
    if ids:
        pool = state._pool([(r, m.sim) for r, m in zip(ids, expl.members)], 0.0)
        if abs(recompute_utility(expl, pool, cfg.utility) - expl.utility) > 1e-9 * max(1.0, abs(expl.utility)):
            problems.append("utility not recomputable")
    return problems


def streaming(seed: int = 0, **overrides) -> tuple[list[str], Rows]:
    cfg = _with(StreamingConfig(), overrides)
    state = run_stream(cfg, seed)
    rows = []
    for n, rid in enumerate(query_ids(state, cfg.queries)):
        q = ExplainQuery(f"q{n}", rumour_id=rid, k=cfg.k, gamma=cfg.gamma)
        expl = state.explain(q)
        full = state.full_scan_explain(q)
        scfg = state.query_config(q)
        rows.append({
            "query": q.query_id,
            "rumour": rid,
            "members": len(expl.ids),
            "utility": expl.utility,
            "full_scan_utility": full.utility,
            "ratio": expl.utility / full.utility if full.utility > 0 else 1.0,
            "cached": expl.cached,
            "valid": not check_explanation(expl, state, q, scfg),
        })
    cols = ["query", "rumour", "members", "utility", "full_scan_utility", "ratio", "cached", "valid"]
    return cols, rows


# -- explanation-size sweep ---------------------------------------------------------------------


@dataclass(frozen=True)
class SelectionSweepConfig:
    n_nodes: int = 1500
    n_edges: int = 3400
    n_rumours: int = 100
    queries: int = 20
    ks: tuple[int, ...] = (5, 10, 15)
    gamma: float = 0.5
    lambda1: float = 0.002
    max_swap: int = 1
    epochs: int = 30


def selection(seed: int = 0, **overrides) -> tuple[list[str], Rows]:
    """Mean utility per (mode, strategy, k) on index-path queries, relative to
    full-scan greedy under the same utility."""
    cfg = _with(SelectionSweepConfig(), overrides)
    base = StreamingConfig(
        n_nodes=cfg.n_nodes, n_edges=cfg.n_edges, n_rumours=cfg.n_rumours, epochs=cfg.epochs,
        gamma=cfg.gamma, lambda1=cfg.lambda1,
    )
    state = run_stream(base, seed)
    qids = query_ids(state, cfg.queries)
    rows = []
    for mode in ("content", "modality", "hybrid"):
        ucfg = UtilityConfig(lambda1=cfg.lambda1, gamma=cfg.gamma, mode=mode)
        for strategy in ("greedy", "swap", "onepass"):
            for k in cfg.ks:
                scfg = SelectionConfig(k=k, strategy=strategy, max_swap=cfg.max_swap, utility=ucfg)
                utils, ratios, sizes = [], [], []
                for n, rid in enumerate(qids):
                    q = ExplainQuery(f"q{n}", rumour_id=rid, k=k, gamma=cfg.gamma)
                    expl = state.explain(q, scfg)
                    full = state.full_scan_explain(q, state.query_config(q, scfg))
                    utils.append(expl.utility)
                    sizes.append(len(expl.ids))
                    ratios.append(expl.utility / full.utility if full.utility > 0 else 1.0)
                rows.append({
                    "mode": mode, "strategy": strategy, "k": k, "queries": len(qids),
                    "mean_size": float(np.mean(sizes)), "mean_utility": float(np.mean(utils)),
                    "mean_ratio": float(np.mean(ratios)), "min_ratio": float(np.min(ratios)),
                })
    return ["mode", "strategy", "k", "queries", "mean_size", "mean_utility", "mean_ratio", "min_ratio"], rows


# -- drift detection ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DriftConfig:
    runs: int = 1000
    dim: int = 4
    window: int = 50
    arl0: float = 500.0
    shift: float = 2.0
    horizon: int = 50
    null_steps: int = 1000


def drift_rates(seed: int = 0, **overrides) -> dict:
    """Detection rate after a mean shift of ``shift`` standard deviations
    (Mahalanobis length, random direction) and the false-alarm rate per
    sample on unshifted streams."""
    cfg = _with(DriftConfig(), overrides)
    rng = np.random.default_rng(seed)
    detected, delays = 0, []
    for _ in range(cfg.runs):
        det = DriftDetector(window=cfg.window, arl0=cfg.arl0)
        det.calibrate(rng.standard_normal((cfg.window, cfg.dim)))
        u = rng.standard_normal(cfg.dim)
        u *= cfg.shift / np.linalg.norm(u)
        for t in range(cfg.horizon):
            if det.observe_zeta(rng.standard_normal(cfg.dim) + u) == DRIFT:
                detected += 1
                delays.append(t + 1)
                break
    alarms = 0
    for _ in range(cfg.runs):
        det = DriftDetector(window=cfg.window, arl0=cfg.arl0)
        det.calibrate(rng.standard_normal((cfg.window, cfg.dim)))
        alarms += sum(det.observe_zeta(x) == DRIFT for x in rng.standard_normal((cfg.null_steps, cfg.dim)))
    return {
        "runs": cfg.runs,
        "detection_rate": detected / cfg.runs,
        "mean_delay": float(np.mean(delays)) if delays else math.nan,
        "false_alarm_rate": alarms / (cfg.runs * cfg.null_steps),
        "target_rate": 1.0 / cfg.arl0,
        "h": det.h,
        "kappa": det.kappa,
    }


def drift(seed: int = 0, **overrides) -> tuple[list[str], Rows]:
    r = drift_rates(seed, **overrides)
    return list(r), [r]


PRESETS: dict[str, Callable[..., tuple[list[str], Rows]]] = {
    "correlation": correlation,
    "approximation": approximation,
    "streaming": streaming,
    "selection": selection,
    "drift": drift,
}


def preset_defaults(name: str) -> dict:
    """Setting names of a preset with their default values."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    cfg = {
        "correlation": CorrelationConfig,
        "approximation": ApproximationConfig,
        "streaming": StreamingConfig,
        "selection": SelectionSweepConfig,
        "drift": DriftConfig,
    }[name]
    return {f.name: getattr(cfg(), f.name) for f in fields(cfg)}


def run_preset(name: str, seed: int = 0, **overrides) -> tuple[list[str], Rows]:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name](seed, **overrides)
