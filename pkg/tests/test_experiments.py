import csv
import io
import math

import pytest

from rumex.errors import ConfigError
from rumex.experiments import PRESETS, preset_defaults, run_preset, to_tsv


SMALL = {
    "correlation": dict(n_nodes=200, n_edges=500, n_pairs=20, epochs=3, embed_dim=8),
    "approximation": dict(instances=20, max_candidates=7),
    "streaming": dict(n_nodes=300, n_edges=680, n_rumours=20, queries=5, epochs=3, locality=20),
    "selection": dict(n_nodes=300, n_edges=680, n_rumours=20, queries=3, ks=(2, 4), epochs=3),
    "drift": dict(runs=10, null_steps=200),
}


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_run_small_and_deterministic(name):
    cols, rows = run_preset(name, 1, **SMALL[name])
    assert cols and rows and all(set(cols) <= set(r) for r in rows)
    assert run_preset(name, 1, **SMALL[name]) == (cols, rows)
    parsed = list(csv.reader(io.StringIO(to_tsv(cols, rows)), delimiter="\t"))
    assert parsed[0] == cols and len(parsed) == len(rows) + 1


def test_unknown_preset_and_setting():
    with pytest.raises(ConfigError):
        run_preset("nope")
    with pytest.raises(ConfigError):
        run_preset("drift", 0, not_a_setting=1)
    assert set(SMALL["drift"]) <= set(preset_defaults("drift"))


def test_tsv_cells():
    text = to_tsv(["a", "b", "c"], [{"a": 0.5, "b": None, "c": True}, {"a": math.inf, "b": "x", "c": 3}])
    lines = text.split("\n")
    assert lines[0] == "a\tb\tc" and len(lines) == 4 and lines[-1] == ""


def test_streaming_rows_are_valid():
    cols, rows = run_preset("streaming", 2, **SMALL["streaming"])
    assert all(r["valid"] for r in rows)
    assert all(r["ratio"] is None or r["ratio"] >= 0.0 for r in rows)
