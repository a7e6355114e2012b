"""Acceptance gate: ten criteria, each reported as one PASS/FAIL line.

Run with pytest (lines are repeated in the terminal summary) or directly with
``python3 tests/test_acceptance.py``.
"""

import json
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

from rumex.cli import main
from rumex.embedding import (
    EmbeddingModel, ModelConfig, SamplingPools, degree_weighted, embed_subgraph_edges, forward,
    loss_and_gradients, loss_value,
)
from rumex.experiments import BOUNDS, StreamingConfig, approximation_ratios, drift_rates, run_preset
from rumex.graph import ModalitySchema, induced_subgraph
from rumex.propagation import gen_base_graph
from rumex.similarity import mcs_similarity
from rumex.stream.index import VectorIndex
from rumex.utility import SimTable, Utility, UtilityConfig

from conftest import build, random_graph

RESULTS: list[str] = []


def report(n: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def timed(fn, *args, **kw):
    t = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t


def test_criterion_01_worked_mcs_example():
    s = ModalitySchema(["user", "tweet"], {"user": 1, "tweet": 1})
    core = [(f"c{i}", "user", [float(i)]) for i in range(5)]
    ring = [(f"c{i}", f"c{(i + 1) % 5}") for i in range(5)]
    g1 = build(s, core + [("x", "tweet", [10.0])], ring + [("x", "c0"), ("x", "c2")])
    g2 = build(s, core + [("y", "tweet", [20.0])], ring + [("y", "c1"), ("y", "c3")])
    sim, dt = timed(mcs_similarity, g1, g2)
    report(1, sim == 0.625 and dt < 1.0, f"mcs similarity {sim!r} (want 0.625 exactly) in {dt:.3f}s")


def _utility_violations(rng, n, gamma):
    q = rng.uniform(gamma, 1.0, n)
    p = np.triu(rng.uniform(gamma, 1.0, (n, n)), 1)
    table = SimTable(q, p + p.T, rng.uniform(0.0, 3.0, n))
    order = [int(i) for i in rng.permutation(n)]
    x, rest = order[-1], order[:-1]
    bad = 0
    for mode in ("content", "modality", "hybrid"):
        # lambda1 = None puts lambda1 exactly at the monotonicity bound
        u = Utility(table, UtilityConfig(lambda1=None, gamma=gamma, alpha=0.0, mode=mode))
        chain = [u(rest[:i]) for i in range(n)]
        bad += sum(b < a - 1e-12 for a, b in zip(chain, chain[1:]))
        gains = [u(rest[:i] + [x]) - chain[i] for i in range(n)]
        bad += sum(g < -1e-12 for g in gains)
        bad += sum(gains[i] < gains[j] - 1e-12 for i in range(n) for j in range(i + 1, n))
    return bad


def test_criterion_02_submodularity_suite():
    def run():
        rng = np.random.default_rng(2)
        return sum(
            _utility_violations(rng, int(rng.integers(1, 11)), float(rng.uniform(0.05, 0.95)))
            for _ in range(10_000)
        )
    bad, dt = timed(run)
    report(2, bad == 0 and dt < 10.0, f"10000 instances, {bad} violations in {dt:.1f}s")


def test_criterion_03_approximation_ratios():
    ratios, dt = timed(approximation_ratios, 0, instances=1000, max_candidates=12, max_k=4, beta=2.0)
    worst = {s: min(r) for s, r in ratios.items()}
    bad = sum(r < BOUNDS[s] - 1e-12 for s, rs in ratios.items() for r in rs)
    detail = ", ".join(f"{s} min {worst[s]:.3f} (bound {BOUNDS[s]:.3f})" for s in BOUNDS)
    report(3, bad == 0 and dt < 60.0, f"{detail}; {bad} violations in {dt:.1f}s")


def test_criterion_04_gradient_check():
    def run():
        schema = ModalitySchema(["user", "tweet"], {"user": 3, "tweet": 2})
        g = random_graph(schema, 6, 0.5, seed=0, connected=True)
        cfg = ModelConfig(embed_dim=4, num_layers=2, rng_seed=0)
        params = dict(EmbeddingModel.initial(schema, cfg).params)
        pairs = SamplingPools(g, 2).sample(5, 5, np.random.default_rng(0))
        _, grads = loss_and_gradients(g, params, cfg, pairs)
        h, worst, count = 1e-5, 0.0, 0
        for name, w in params.items():
            for idx in np.ndindex(w.shape):
                plus, minus = dict(params), dict(params)
                plus[name], minus[name] = w.copy(), w.copy()
                plus[name][idx] += h
                minus[name][idx] -= h
                num = (loss_value(g, plus, cfg, pairs) - loss_value(g, minus, cfg, pairs)) / (2 * h)
                ana = grads[name][idx]
                # floor keeps exactly-zero gradients from dividing noise by zero
                worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), 1e-8))
                count += 1
        return worst, count
    (worst, count), dt = timed(run)
    report(4, worst <= 1e-4 and dt < 30.0, f"max relative error {worst:.2e} over {count} parameters in {dt:.1f}s")


def test_criterion_05_edge_mean_identity():
    schema = ModalitySchema(["user", "tweet", "hashtag"], {"user": 4, "tweet": 4, "hashtag": 3})
    g = gen_base_graph(schema, 400, 1000, rng_seed=5, locality=20)
    model = EmbeddingModel.initial(schema, ModelConfig(embed_dim=8, num_layers=2, rng_seed=5))
    rng = np.random.default_rng(5)
    ids = list(g.node_ids)

    def run():
        worst, done = 0.0, 0
        while done < 1000:
            start = ids[int(rng.integers(len(ids)))]
            nodes = [start] + g.neighbors(start)[: int(rng.integers(1, 8))]
            sub = induced_subgraph(g, nodes)
            if not sub.edges:
                continue
            z = forward(sub, model)
            edge_mean = np.mean([(z[u] + z[v]) / 2 for u, v in sub.edges], axis=0)
            deg = np.array([sum(n in e for e in sub.edges) for n in z.ids], dtype=float)
            worst = max(
                worst,
                np.abs(edge_mean - degree_weighted(z.vectors, deg, len(sub.edges))).max(),
                np.abs(edge_mean - embed_subgraph_edges(sub, model)).max(),
            )
            done += 1
        return worst
    worst, dt = timed(run)
    report(5, worst <= 1e-12 and dt < 5.0, f"1000 subgraphs, max deviation {worst:.1e} in {dt:.2f}s")


def test_criterion_06_embedding_ged_correlation():
    (cols, rows), dt = timed(run_preset, "correlation", 0)
    by = {r["measure"]: r for r in rows}
    r_edges = by["embedding-edges"]["pearson_r"]
    others = ", ".join(f"{m} r={row['pearson_r']:.3f}" for m, row in by.items() if m != "embedding-edges")
    report(
        6, r_edges <= -0.6 and dt < 300.0,
        f"pearson r {r_edges:.3f} (want <= -0.6) on {by['embedding-edges']['pairs']} pairs; {others}; {dt:.0f}s",
    )


def test_criterion_07_index_exactness():
    def run():
        rng = np.random.default_rng(7)
        idx = VectorIndex(16)
        for i in range(1000):
            idx.insert(f"s{i:04d}", rng.normal(size=16))
        hits = 0
        for _ in range(100):
            q = rng.normal(size=16)
            hits += idx.knn(q, 10) == idx.linear_knn(q, 10)
        return hits
    hits, dt = timed(run)
    report(7, hits == 100 and dt < 5.0, f"{hits}/100 queries match the linear scan (m=10, 1000 vectors) in {dt:.2f}s")


def test_criterion_08_drift_detection():
    out, dt = timed(drift_rates, 0, runs=1000, shift=2.0, horizon=50)
    limit = 2.0 * out["target_rate"]
    ok = out["detection_rate"] >= 0.95 and out["false_alarm_rate"] <= limit and dt < 120.0
    report(
        8, ok,
        f"detection {out['detection_rate']:.3f} within 50 samples (want >= 0.95), "
        f"false alarms {out['false_alarm_rate']:.4f}/sample (limit {limit:.4f}) in {dt:.0f}s",
    )


def test_criterion_09_streaming_end_to_end():
    (cols, rows), dt = timed(run_preset, "streaming", 0)
    c = StreamingConfig()
    events = c.n_nodes + c.n_edges + c.n_rumours
    valid = sum(r["valid"] for r in rows)
    worst = min(r["ratio"] for r in rows)
    ok = len(rows) == 50 and valid == 50 and worst >= 0.95 and dt < 300.0 and events == 10_000
    report(
        9, ok,
        f"{events} events, {c.n_rumours} rumours, {valid}/{len(rows)} valid, "
        f"worst index/full-scan ratio {worst:.3f} in {dt:.0f}s",
    )


def _cli_outputs(base: Path) -> list[bytes]:
    ev, ck = base / "ev.jsonl", base / "ck"
    small = {
        "correlation": ["n_nodes=200", "n_edges=500", "n_pairs=20", "epochs=3"],
        "approximation": ["instances=20"],
        "streaming": ["n_nodes=300", "n_edges=680", "n_rumours=20", "queries=5", "epochs=3", "locality=20"],
        "selection": ["n_nodes=300", "n_edges=680", "n_rumours=20", "queries=3", "epochs=3"],
        "drift": ["runs=20", "null_steps=200"],
    }
    commands = [
        ["simulate", "--nodes", "300", "--edges", "680", "--rumours", "15", "--seed", "3", "--out", str(ev)],
        ["ingest", str(ev), "--checkpoint", str(ck), "--seed", "3"],
        ["train", "--checkpoint", str(ck), "--epochs", "3", "--seed", "3"],
        ["explain", "--checkpoint", str(ck), "--rumour", "r4", "--k", "3", "--gamma", "0.3"],
        ["explain", "--checkpoint", str(ck), "--node-ids", "n1,n2,n3", "--k", "3", "--gamma", "0.3", "--full-scan"],
        ["sim", "r1", "r2", "--checkpoint", str(ck)],
        ["drift-report", "--checkpoint", str(ck)],
    ]
    for name, sets in small.items():
        commands.append(["bench", name, "--seed", "3", "--out", str(base / f"{name}.tsv")]
                        + [a for s in sets for a in ("--set", s)])
    outs = []
    for argv in commands:
        with _capture() as buf:
            code = main(argv)
        if code != 0:
            raise RuntimeError(f"{argv[0]} exited {code}")
        outs.append(buf.getvalue().encode())
    outs.append(ev.read_bytes())
    outs += [(base / f"{name}.tsv").read_bytes() for name in small]
    outs += [(ck / f).read_bytes() for f in ("graph.jsonl", "state.json", "model.json")]
    return outs


class _capture:
    def __enter__(self):
        import io
        self.buf, self.old = io.StringIO(), sys.stdout
        sys.stdout = self.buf
        return self.buf

    def __exit__(self, *exc):
        sys.stdout = self.old


def test_criterion_10_cli_determinism(tmp_path):
    def run():
        a, b = tmp_path / "a", tmp_path / "b"
        a.mkdir()
        b.mkdir()
        return _cli_outputs(a), _cli_outputs(b)
    (first, second), dt = timed(run)
    same = sum(x == y for x, y in zip(first, second))
    json.loads(first[3])  # explain output is strict JSON
    report(10, same == len(first), f"{same}/{len(first)} outputs byte-identical across two runs in {dt:.1f}s")


if __name__ == "__main__":
    import tempfile

    for name, fn in sorted(globals().items()):
        if name.startswith("test_criterion_"):
            try:
                if "tmp_path" in fn.__code__.co_varnames[: fn.__code__.co_argcount]:
                    with tempfile.TemporaryDirectory() as d:
                        fn(Path(d))
                else:
                    fn()
            except AssertionError:
                pass
