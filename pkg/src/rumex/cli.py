"""``rumex`` command line.

Data goes to stdout (JSON, JSONL or TSV), logs to stderr. On failure the
process exits nonzero and prints ``{"error": ..., "message": ...}`` on
stderr. JSON is written with sorted keys so fixed seeds give identical bytes.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import __version__
from .embedding import EmbeddingModel, embed_subgraph, embedding_similarity, train
from .errors import ConfigError, IoError, RumexError, UnknownNode
from .events import ExplainQuery, read_events, replay, write_events
from .experiments import preset_defaults, run_preset, to_tsv
from .config import RunConfig, coerce_like, load_config, parse_value
from .graph import MsgGraph, Subgraph
from .propagation import simulate_stream
from .similarity import all_measures
from .stream.engine import StreamState

log = logging.getLogger("rumex")

EXIT_ERROR = 1
EXIT_USAGE = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _finite(obj):
    """Replace non-finite floats by ``None`` so the output is strict JSON."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def dumps(obj) -> str:
    return json.dumps(_finite(obj), sort_keys=True, indent=2, allow_nan=False)


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {out}: {exc}") from None


# -- argument parsing ---------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    """Global options; accepted before or after the subcommand."""
    S = argparse.SUPPRESS
    p.add_argument("--seed", type=int, default=S, help="random seed (default 0)")
    p.add_argument("--checkpoint", default=S, help="state directory")
    p.add_argument("--config", default=S, help="key = value config file")
    p.add_argument("-v", "--verbose", action="store_true", default=S, help="log progress to stderr")


def _flag(p: argparse.ArgumentParser, name: str, kind=parse_value, help: str | None = None) -> None:
    p.add_argument("--" + name.replace("_", "-"), dest=name, type=kind, default=argparse.SUPPRESS, help=help)


def _utility_flags(p) -> None:
    for name in ("lambda1", "lambda2", "alpha", "delta", "gamma"):
        _flag(p, name)
    _flag(p, "mode", str, "content, modality or hybrid")
    _flag(p, "sim_source", str, "embedding, mcs, graphsim or ged")
    p.add_argument("--enforce-bound", dest="enforce_bound", action="store_true", default=argparse.SUPPRESS)


def _selection_flags(p) -> None:
    for name in ("k", "passes", "beta", "max_swap"):
        _flag(p, name)
    _flag(p, "strategy", str, "greedy, swap or onepass")


def _engine_flags(p) -> None:
    for name in ("kernel_scale", "n_medians", "eps_cache", "reservoir", "drift_window", "arl0", "kappa",
                 "refresh_iters"):
        _flag(p, name)
    _flag(p, "composition", str, "edges or nodes")
    p.add_argument("--no-auto-refresh", dest="auto_refresh", action="store_false", default=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rumex", description="Example-based explanations for streaming rumour subgraphs.")
    parser.add_argument("--version", action="version", version=f"rumex {__version__}")
    _common(parser)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="write a synthetic event stream as JSONL")
    _common(p)
    _flag(p, "schema", str, "modalities as name:dim,name:dim")
    _flag(p, "propagation", str, "SI, SIS, SIR, IC or LT")
    for name in ("nodes", "edges", "rumours", "infection_prob", "recovery_prob", "lt_threshold", "max_steps",
                 "seed_count", "locality", "max_rumour_nodes", "warmup"):
        _flag(p, name)
    _flag(p, "out", str, "output file (default stdout)")

    p = sub.add_parser("ingest", help="apply an event file to the checkpoint")
    _common(p)
    p.add_argument("events", nargs="?", default=argparse.SUPPRESS, help="JSONL event file")
    _utility_flags(p)
    _selection_flags(p)
    _engine_flags(p)

    p = sub.add_parser("train", help="train the embedding model on the checkpoint graph")
    _common(p)
    for name in ("embed_dim", "num_layers", "q_plus", "q_minus", "learning_rate", "epochs"):
        _flag(p, name)
    _flag(p, "activation", str, "tanh, relu or identity")

    p = sub.add_parser("explain", help="explain a stored rumour or an inline node set")
    _common(p)
    target = p.add_mutually_exclusive_group(required=True)
    target.add_argument("--rumour", help="id of a stored rumour")
    target.add_argument("--node-ids", dest="node_ids", help="comma-separated node ids")
    p.add_argument("--query-id", default="q")
    p.add_argument("--full-scan", action="store_true", help="greedy over every stored rumour")
    _utility_flags(p)
    _selection_flags(p)

    p = sub.add_parser("bench", help="run an experiment preset and print TSV")
    _common(p)
    p.add_argument("preset", help="correlation, approximation, streaming, selection or drift")
    p.add_argument("--set", dest="settings", action="append", default=[], metavar="KEY=VALUE",
                   help="preset setting (repeatable)")
    _flag(p, "out", str, "output file (default stdout)")

    p = sub.add_parser("sim", help="all similarity scores between two subgraphs")
    _common(p)
    p.add_argument("first", help="stored rumour id or JSONL event file")
    p.add_argument("second", help="stored rumour id or JSONL event file")
    p.add_argument("--exact", action="store_true", help="exact search instead of the approximate fallback")

    p = sub.add_parser("drift-report", help="drift detector status and alarm history")
    _common(p)
    return parser


# -- commands --------------------------------------------------------------------------


def _checkpoint(ns, run: RunConfig) -> Path:
    path = getattr(ns, "checkpoint", None) or run.get("checkpoint")
    if path is None:
        raise ConfigError("this command needs --checkpoint")
    return Path(path)


def _load_state(ns, run: RunConfig) -> StreamState:
    path = _checkpoint(ns, run)
    state = StreamState.load(path)
    cfg = run.engine(state.config)
    return state if cfg == state.config else StreamState.load(path, cfg)


def cmd_simulate(ns, run: RunConfig) -> None:
    schema = run.schema()
    for key in ("nodes", "edges", "rumours"):
        if run.sim(key) < 0:
            raise ConfigError(f"{key} must be >= 0")
    events = simulate_stream(
        schema, run.sim("nodes"), run.sim("edges"), run.sim("rumours"), run.propagation(),
        rng_seed=run.seed, locality=run.sim("locality"), warmup=run.sim("warmup"),
        max_rumour_nodes=run.sim("max_rumour_nodes"),
    )
    out = run.get("out")
    if out is None:
        write_events(sys.stdout, schema, events)
        return
    try:
        with open(out, "w", encoding="utf-8") as fp:
            write_events(fp, schema, events)
    except OSError as exc:
        raise IoError(f"cannot write {out}: {exc}") from None


def cmd_ingest(ns, run: RunConfig) -> None:
    events_path = run.get("events")
    if events_path is None:
        raise ConfigError("ingest needs an event file")
    path = _checkpoint(ns, run)
    schema, events = read_events(events_path)
    if (path / "state.json").exists():
        state = _load_state(ns, run)
        if state.schema != schema:
            raise ConfigError("event file schema differs from the checkpoint schema")
    else:
        state = StreamState(schema, run.engine())
    answers = state.ingest_all(events)
    state.save(path)
    log.info("ingested %d events into %s", len(events), path)
    _emit(dumps({"summary": state.summary(), "explanations": [a.to_dict() for a in answers]}) + "\n", None)


def cmd_train(ns, run: RunConfig) -> None:
    path = _checkpoint(ns, run)
    state = _load_state(ns, run)
    if state.graph.n_nodes == 0:
        raise ConfigError("the checkpoint graph is empty; ingest events first")
    model = train(state.graph, run.model())
    if state.model is not None:
        model = replace(model, version=state.model.version + 1)
    state.set_model(model)
    state.save(path)
    trace = model.loss_trace
    _emit(dumps({
        "model_version": model.version,
        "epochs": model.config.epochs,
        "loss_first": trace[0] if trace else None,
        "loss_last": trace[-1] if trace else None,
        "summary": state.summary(),
    }) + "\n", None)


def cmd_explain(ns, run: RunConfig) -> None:
    state = _load_state(ns, run)
    cfg = run.selection(state.config.selection)
    nodes = None if ns.node_ids is None else tuple(n.strip() for n in ns.node_ids.split(",") if n.strip())
    if nodes is not None and not nodes:
        raise ConfigError("--node-ids needs at least one node id")
    q = ExplainQuery(ns.query_id, rumour_id=ns.rumour, node_ids=nodes, k=cfg.k, gamma=cfg.gamma)
    expl = state.full_scan_explain(q, cfg) if ns.full_scan else state.explain(q, cfg)
    _emit(dumps(expl.to_dict()) + "\n", None)


def cmd_bench(ns, run: RunConfig) -> None:
    defaults = preset_defaults(ns.preset)
    settings = dict(run.bench.get(ns.preset, {}))
    for item in ns.settings:
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        if key not in defaults:
            raise ConfigError(f"preset {ns.preset!r} has no setting {key!r}")
        settings[key] = coerce_like(defaults[key], parse_value(value), key)
    cols, rows = run_preset(ns.preset, run.seed, **settings)
    _emit(to_tsv(cols, rows), run.get("out"))


def _resolve_graph(ref: str, state: StreamState | None) -> MsgGraph | Subgraph:
    if state is not None and ref in state.log:
        return state.log[ref]
    if Path(ref).is_file():
        schema, events = read_events(ref)
        graph, _ = replay(schema, events)
        return graph
    if state is None:
        raise IoError(f"{ref!r} is not a file and no checkpoint was given")
    raise UnknownNode(f"{ref!r} is neither a stored rumour nor a file")


def cmd_sim(ns, run: RunConfig) -> None:
    path = getattr(ns, "checkpoint", None) or run.get("checkpoint")
    state = _load_state(ns, run) if path is not None else None
    a, b = _resolve_graph(ns.first, state), _resolve_graph(ns.second, state)
    out = all_measures(a, b, approximate=not ns.exact)
    model: EmbeddingModel | None = None if state is None else state.model
    schema_a = a.graph.schema if isinstance(a, Subgraph) else a.schema
    schema_b = b.graph.schema if isinstance(b, Subgraph) else b.schema
    if model is not None and model.schema == schema_a == schema_b:
        comp = state.config.composition
        out["embedding"] = embedding_similarity(embed_subgraph(a, model, comp), embed_subgraph(b, model, comp))
        out["model_version"] = model.version
    _emit(dumps(out) + "\n", None)


def cmd_drift_report(ns, run: RunConfig) -> None:
    state = _load_state(ns, run)
    _emit(dumps(state.drift_report()) + "\n", None)


COMMANDS = {
    "simulate": cmd_simulate,
    "ingest": cmd_ingest,
    "train": cmd_train,
    "explain": cmd_explain,
    "bench": cmd_bench,
    "sim": cmd_sim,
    "drift-report": cmd_drift_report,
}

# namespace entries that are not config keys
_LOCAL = {"command", "config", "verbose", "rumour", "node_ids", "query_id", "full_scan", "preset", "settings",
          "first", "second", "exact"}


def run_command(argv: Sequence[str]) -> None:
    ns = build_parser().parse_args(list(argv))
    logging.basicConfig(
        level=logging.INFO if getattr(ns, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    file_cfg = load_config(getattr(ns, "config", None), preset_defaults)
    flags = {k: v for k, v in vars(ns).items() if k not in _LOCAL}
    run = file_cfg.merged(flags)
    # validate every component config before any file is touched
    run.engine()
    run.model()
    COMMANDS[ns.command](ns, run)


def main(argv: Sequence[str] | None = None) -> int:
    try:
        run_command(sys.argv[1:] if argv is None else argv)
    except ConfigError as exc:
        sys.stderr.write(json.dumps(exc.to_dict(), sort_keys=True) + "\n")
        return EXIT_USAGE
    except RumexError as exc:
        sys.stderr.write(json.dumps(exc.to_dict(), sort_keys=True) + "\n")
        return EXIT_ERROR
    except (ValueError, OSError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
        return EXIT_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
