import json

import pytest

from rumex.cli import EXIT_USAGE, main
from rumex.config import RunConfig, parse_config, parse_schema, parse_value
from rumex.errors import ConfigError
from rumex.events import DetectRumour, read_events
from rumex.experiments import preset_defaults


# -- config file ------------------------------------------------------------------------------


def test_parse_values():
    assert parse_value("true") is True and parse_value("none") is None
    assert parse_value("3") == 3 and parse_value("0.5") == 0.5 and parse_value("1e-3") == 1e-3
    assert parse_value("'a b'") == "a b" and parse_value("greedy") == "greedy"
    assert parse_value("[5, 10, 'x']") == [5, 10, "x"] and parse_value("[]") == []
    with pytest.raises(ConfigError):
        parse_value("two words")


def test_parse_config_grammar():
    run = parse_config(
        """
        # global run settings
        seed = 4
        [utility]
        gamma = 0.6   # threshold
        lambda1 = none
        mode = "content"
        [selection]
        k = 7
        [bench.drift]
        runs = 10
        """,
        preset_defaults,
    )
    assert run.seed == 4 and run.get("lambda1") is None
    sel = run.selection()
    assert (sel.k, sel.gamma, sel.utility.mode, sel.utility.lambda1) == (7, 0.6, "content", None)
    assert run.bench == {"drift": {"runs": 10}}


@pytest.mark.parametrize("text", [
    "bogus = 1",
    "[utility]\nk = 3",
    "k = 3\nk = 4",
    "[nowhere]\nk = 3",
    "k = 'three'",
    "mode = fancy",
    "k 3",
    "[bench.drift]\nnot_a_setting = 1",
    "[bench.drift]\nruns = 1.5",
    "[bench.unknown]\nruns = 1",
])
def test_bad_config_is_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text, preset_defaults)


def test_flags_override_file_values():
    run = parse_config("k = 3\ngamma = 0.7").merged({"k": 9})
    assert run.selection().k == 9 and run.selection().gamma == 0.7
    assert RunConfig().selection().k == RunConfig().merged({}).selection().k
    with pytest.raises(ConfigError):
        RunConfig().merged({"k": "nine"})


def test_schema_strings():
    s = parse_schema("user:4, tweet:2")
    assert s.node_modalities == ("user", "tweet") and s.node_dim("tweet") == 2
    for bad in ("user", "user:x", ":3"):
        with pytest.raises(ConfigError):
            parse_schema(bad)


# -- command line ------------------------------------------------------------------------------


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


SIM_ARGS = ("--nodes", "150", "--edges", "330", "--rumours", "8", "--locality", "20")


def test_usage_errors_are_json(capsys, tmp_path):
    code, _, err = run(capsys, "explain", "--checkpoint", str(tmp_path), "--rumour", "r0", "--k", "0")
    assert code == EXIT_USAGE and json.loads(err)["error"] == "ConfigError"
    code, _, err = run(capsys, "bench", "drift", "--set", "nonsense=1")
    assert code == EXIT_USAGE and json.loads(err)["error"] == "ConfigError"
    code, _, err = run(capsys, "frobnicate")
    assert code == EXIT_USAGE


def test_simulate_then_ingest_counts(capsys, tmp_path):
    events = tmp_path / "ev.jsonl"
    code, _, _ = run(capsys, "simulate", *SIM_ARGS, "--out", str(events))
    assert code == 0
    _, evs = read_events(events)
    assert sum(isinstance(e, DetectRumour) for e in evs) == 8
    code, out, _ = run(capsys, "ingest", str(events), "--checkpoint", str(tmp_path / "ck"))
    assert code == 0
    summary = json.loads(out)["summary"]
    assert summary["nodes"] == 150 and summary["rumours"] == 8


def test_si_with_zero_probability_keeps_only_seeds(capsys, tmp_path):
    events = tmp_path / "ev.jsonl"
    run(capsys, "simulate", *SIM_ARGS, "--propagation", "SI", "--infection-prob", "0", "--seed-count", "3",
        "--out", str(events))
    _, evs = read_events(events)
    assert all(len(e.node_ids) == 3 for e in evs if isinstance(e, DetectRumour))


def pipeline(capsys, base, seed="7"):
    events, ck = base / "ev.jsonl", base / "ck"
    outs = []
    for argv in (
        ("simulate", *SIM_ARGS, "--seed", seed, "--out", str(events)),
        ("ingest", str(events), "--checkpoint", str(ck), "--seed", seed),
        ("train", "--checkpoint", str(ck), "--epochs", "3", "--seed", seed),
        ("explain", "--checkpoint", str(ck), "--rumour", "r2", "--k", "3", "--gamma", "0.3"),
        ("sim", "r1", "r2", "--checkpoint", str(ck)),
        ("drift-report", "--checkpoint", str(ck)),
    ):
        code, out, err = run(capsys, *argv)
        assert code == 0, err
        outs.append(out)
    return events.read_bytes(), outs


def test_pipeline_is_byte_identical(capsys, tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    ev_a, out_a = pipeline(capsys, tmp_path / "a")
    ev_b, out_b = pipeline(capsys, tmp_path / "b")
    assert ev_a == ev_b
    # ingest output names no paths, so every stdout stream must match
    assert out_a == out_b
    expl = json.loads(out_a[3])
    assert expl["query_id"] == "q" and "r2" not in [m["rumour_id"] for m in expl["members"]]


def test_explain_with_node_ids_and_config_file(capsys, tmp_path):
    events, ck = tmp_path / "ev.jsonl", tmp_path / "ck"
    run(capsys, "simulate", *SIM_ARGS, "--out", str(events))
    run(capsys, "ingest", str(events), "--checkpoint", str(ck))
    run(capsys, "train", "--checkpoint", str(ck), "--epochs", "2")
    cfg = tmp_path / "run.cfg"
    cfg.write_text("[selection]\nk = 2\n[utility]\ngamma = 0.3\n")
    code, out, err = run(capsys, "explain", "--config", str(cfg), "--checkpoint", str(ck), "--node-ids", "n0,n1")
    assert code == 0, err
    e = json.loads(out)
    assert len(e["members"]) <= 2 and e["config"]["k"] == 2


def test_bench_writes_tsv(capsys):
    code, out, _ = run(capsys, "bench", "drift", "--set", "runs=5", "--set", "null_steps=100")
    assert code == 0
    header, *rows = out.strip().split("\n")
    assert "\t" in header and len(rows) >= 1
