import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rumex.embedding import ModelConfig, train
from rumex.errors import DuplicateId, ModelMissing, NotCalibrated, ZeroVector
from rumex.events import AddNode, ExplainQuery, replay
from rumex.experiments import DEFAULT_SCHEMA, StreamingConfig, check_explanation, run_stream
from rumex.propagation import PropagationConfig, simulate_stream
from rumex.selection import SelectionConfig
from rumex.stream.cache import MedianCache
from rumex.stream.drift import DRIFT, NO_DRIFT, DriftDetector, calibrate_h, default_kappa
from rumex.stream.engine import StreamState
from rumex.stream.index import VectorIndex, normalize
from rumex.utility import UtilityConfig


# -- index ----------------------------------------------------------------------------


def test_index_small_examples():
    idx = VectorIndex(3)
    idx.insert("only", np.array([1.0, 2.0, 3.0]))
    assert idx.knn(np.array([-5.0, 0.0, 1.0]), 1)[0][0] == "only"
    assert abs(np.linalg.norm(idx.vector("only")) - 1.0) <= 1e-9
    with pytest.raises(DuplicateId):
        idx.insert("only", np.ones(3))
    with pytest.raises(ZeroVector):
        idx.insert("zero", np.zeros(3))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 300), st.integers(2, 10), st.integers(1, 20))
def test_knn_equals_linear_scan(seed, n, dim, m):
    rng = np.random.default_rng(seed)
    idx = VectorIndex(dim)
    vecs = rng.normal(size=(n, dim))
    vecs[n // 2:] = vecs[: n - n // 2]  # duplicates force id tie-breaks
    for i, v in enumerate(vecs):
        idx.insert(f"id{i:04d}", v)
    for _ in range(5):
        q = rng.normal(size=dim)
        assert [i for i, _ in idx.knn(q, m)] == [i for i, _ in idx.linear_knn(q, m)]
    probe = f"id{int(rng.integers(n)):04d}"
    assert idx.knn(idx.vector(probe), 1)[0][1] == pytest.approx(1.0)


def test_index_update_and_round_trip():
    rng = np.random.default_rng(0)
    idx = VectorIndex(4)
    for i in range(100):
        idx.insert(f"v{i}", rng.normal(size=4))
    idx.update("v5", np.array([0, 0, 0, 1.0]))
    assert idx.knn(np.array([0, 0, 0, 1.0]), 1)[0][0] == "v5"
    back = VectorIndex.from_dict(json.loads(json.dumps(idx.to_dict())))
    q = rng.normal(size=4)
    assert back.knn(q, 7) == idx.knn(q, 7)


# -- median cache ----------------------------------------------------------------------------


def onepass_cfg(**u):
    return SelectionConfig(k=3, strategy="onepass", utility=UtilityConfig(gamma=0.0, alpha=0.0, **u))


def test_cache_seeding_and_identical_stream():
    cache = MedianCache(3, onepass_cfg())
    rng = np.random.default_rng(1)
    for i in range(3):
        cache.observe(f"r{i}", i, rng.normal(size=4))
    assert [s.rep_id for s in cache.slots] == ["r0", "r1", "r2"]

    same = MedianCache(2, onepass_cfg())
    v = np.array([1.0, 2.0, 0.5])
    for i in range(40):
        same.observe(f"r{i}", i, v)
        assert not any(s.stale for s in same.slots)
    assert same.slots[0].count == 40 and same.slots[1].count == 1


def test_cache_finds_two_clusters():
    rng = np.random.default_rng(2)
    centres = normalize(rng.normal(size=8)), normalize(rng.normal(size=8))
    cache = MedianCache(2, onepass_cfg())
    for i in range(400):
        c = centres[int(rng.integers(2))]
        cache.observe(f"r{i}", i, c + 0.05 * rng.normal(size=8))
    meds = cache.medians()
    for c in centres:
        assert (1.0 - meds @ c).min() <= 0.1


def test_cached_states_are_valid_explanations():
    rng = np.random.default_rng(3)
    cfg = SelectionConfig(k=3, strategy="onepass", utility=UtilityConfig(gamma=0.6, alpha=0.0, mode="modality"))
    cache = MedianCache(3, cfg)
    for i in range(120):
        cache.observe(f"r{i}", i, rng.normal(size=5), cov=float(rng.uniform(0, 3)))
    for slot in cache.slots:
        e = slot.state.explanation()
        assert len(e.members) <= 3 and all(m.sim >= 0.6 for m in e.members)
        assert e.query_id == slot.rep_id


# -- drift ------------------------------------------------------------------------------------


def test_drift_null_and_constant_streams():
    rng = np.random.default_rng(4)
    det = DriftDetector(h=1e9)
    with pytest.raises(NotCalibrated):
        det.observe_zeta(np.zeros(4))
    det.calibrate(rng.normal(size=(50, 4)))
    assert all(det.observe_zeta(rng.normal(size=4)) == NO_DRIFT for _ in range(500))
    flat = DriftDetector()
    flat.calibrate(rng.normal(size=(50, 4)))
    for _ in range(100):
        flat.observe_zeta(flat.mu0)
        assert flat.stat == 0.0


def test_drift_alarm_resets_statistic():
    rng = np.random.default_rng(5)
    det = DriftDetector(kappa=default_kappa(4), arl0=500)
    det.calibrate(rng.normal(size=(50, 4)))
    out = [det.observe_zeta(rng.normal(size=4) + 3.0) for _ in range(50)]
    assert DRIFT in out
    first = out.index(DRIFT)
    assert det.alarms >= 1 and det.stat >= 0.0
    det2 = DriftDetector(kappa=det.kappa, h=det.h, mu0=det.mu0, sigma0=det.sigma0)
    for z in [rng.normal(size=4) + 3.0 for _ in range(first + 1)]:
        if det2.observe_zeta(z) == DRIFT:
            assert det2.stat == 0.0
            break


def test_calibrated_threshold_grows_with_arl():
    k = default_kappa(4)
    assert calibrate_h(4, k, 100.0, runs=100, steps=500) < calibrate_h(4, k, 1000.0, runs=100, steps=500)


def test_detector_round_trip():
    rng = np.random.default_rng(6)
    a = rng.normal(size=(3, 5))
    det = DriftDetector(anchors=a / np.linalg.norm(a, axis=1, keepdims=True))
    for _ in range(60):
        det.feed(rng.normal(size=5))
    back = DriftDetector.from_dict(json.loads(json.dumps(det.to_dict())))
    z = rng.normal(size=5)
    assert back.observe(z) == det.observe(z) and back.stat == det.stat


# -- engine -------------------------------------------------------------------------------------


SMALL = StreamingConfig(
    n_nodes=400, n_edges=900, n_rumours=40, locality=20, max_rumour_nodes=15, epochs=10, queries=10
)


@pytest.fixture(scope="module")
def small_state():
    return run_stream(SMALL, seed=3)


def test_engine_needs_model():
    state = StreamState(DEFAULT_SCHEMA)
    state.ingest(AddNode("a", "user", (0.0,) * 4))
    with pytest.raises(ModelMissing):
        state.explain(ExplainQuery("q", node_ids=("a",)))


def test_empty_history_gives_empty_explanation():
    events = simulate_stream(DEFAULT_SCHEMA, 60, 120, 0, PropagationConfig(), rng_seed=1)
    g, _ = replay(DEFAULT_SCHEMA, events)
    state = StreamState(DEFAULT_SCHEMA, model=train(g, ModelConfig(epochs=2)))
    state.ingest_all(events)
    e = state.explain(ExplainQuery("q", node_ids=("n0", "n1")))
    assert e.members == () and e.utility == 0.0


def test_query_equal_to_stored_rumour(small_state):
    r = next(iter(small_state.log))
    e = small_state.explain(ExplainQuery("q", node_ids=r.nodes, k=1, gamma=0.3))
    assert e.ids == (r.rumour_id,) and e.members[0].sim == pytest.approx(1.0)
    by_id = small_state.explain(ExplainQuery("q", rumour_id=r.rumour_id, k=3, gamma=0.3))
    assert r.rumour_id not in by_id.ids


def test_index_path_is_valid_and_close_to_full_scan(small_state):
    cfg = small_state.config.selection
    for rid in [r.rumour_id for r in small_state.log][::5]:
        q = ExplainQuery(f"q-{rid}", rumour_id=rid, k=SMALL.k, gamma=SMALL.gamma)
        e = small_state.explain(q)
        assert check_explanation(e, small_state, q, small_state.query_config(q, cfg)) == []
        full = small_state.full_scan_explain(q)
        assert e.utility >= 0.95 * full.utility - 1e-12


def test_checkpoint_round_trip(small_state, tmp_path):
    small_state.save(tmp_path / "ck")
    back = StreamState.load(tmp_path / "ck")
    assert back.summary() == small_state.summary()
    q = ExplainQuery("q", rumour_id="r7", k=4, gamma=0.5)
    assert back.explain(q).to_json() == small_state.explain(q).to_json()
    back.save(tmp_path / "ck2")
    for name in ("graph.jsonl", "state.json", "model.json"):
        assert (tmp_path / "ck" / name).read_bytes() == (tmp_path / "ck2" / name).read_bytes()


def test_engine_determinism():
    a, b = run_stream(SMALL, seed=5), run_stream(SMALL, seed=5)
    q = ExplainQuery("q", rumour_id="r11", k=5, gamma=0.5)
    assert a.summary() == b.summary()
    assert a.explain(q).to_json() == b.explain(q).to_json()


def test_refresh_bumps_version_and_explanations_record_it():
    state = run_stream(SMALL, seed=7)
    v = state.model_version
    q = ExplainQuery("q", rumour_id="r3", k=3, gamma=0.5)
    assert state.explain(q).model_version == v
    state.refresh_model(2)
    assert state.model_version == v + 1
    after = state.explain(q)
    assert after.model_version == v + 1
    assert all(ver == v + 1 for ver in state.versions.values())


def test_rumours_before_model_are_indexed_on_set_model():
    events = simulate_stream(
        DEFAULT_SCHEMA, 200, 450, 10, PropagationConfig(infection_prob=0.3, seed_count=2), rng_seed=2, locality=20,
    )
    state = StreamState(DEFAULT_SCHEMA)
    state.ingest_all(events)
    assert state.summary()["indexed"] == 0
    state.set_model(train(state.graph, ModelConfig(epochs=3)))
    assert state.summary()["indexed"] + len(state.skipped) == 10


def test_non_embedding_measures_use_full_scan(small_state):
    q = ExplainQuery("q", rumour_id="r2", k=2, gamma=0.3)
    base = small_state.config.selection
    cfg = replace(base, utility=replace(base.utility, sim_source="ged"))
    e = small_state.explain(q, cfg)
    assert len(e.members) <= 2 and "r2" not in e.ids
