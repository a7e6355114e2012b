"""Stream events, JSONL (de)serialisation and event application.

A JSONL event file starts with one ``{"type": "schema", ...}`` header line,
followed by one event per line; line order is the sequence order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator, Union

from .errors import DuplicateId, IoError, RumexError
from .graph import ModalitySchema, MsgGraph, RumourSubgraph, make_rumour


class EventFormatError(RumexError, ValueError):
    code = "EventFormatError"


@dataclass(frozen=True)
class AddNode:
    id: str
    modality: str
    features: tuple[float, ...]


@dataclass(frozen=True)
class AddEdge:
    u: str
    v: str
    features: tuple[float, ...]


@dataclass(frozen=True)
class DetectRumour:
    id: str
    node_ids: tuple[str, ...]


@dataclass(frozen=True)
class ExplainQuery:
    query_id: str
    rumour_id: str | None = None
    node_ids: tuple[str, ...] | None = None
    k: int = 5
    gamma: float = 0.5


StreamEvent = Union[AddNode, AddEdge, DetectRumour, ExplainQuery]

_FIELDS = {
    "add_node": (AddNode, {"id", "modality", "features"}, set()),
    "add_edge": (AddEdge, {"u", "v", "features"}, set()),
    "rumour": (DetectRumour, {"id", "node_ids"}, set()),
    "explain": (ExplainQuery, {"query_id"}, {"rumour_id", "node_ids", "k", "gamma"}),
}
_TYPE_OF = {cls: name for name, (cls, _, _) in _FIELDS.items()}


def event_to_dict(ev: StreamEvent) -> dict:
    out = {"type": _TYPE_OF[type(ev)]}
    for key, value in ev.__dict__.items():
        if value is None:
            continue
        out[key] = list(value) if isinstance(value, tuple) else value
    return out


def event_from_dict(d: dict) -> StreamEvent:
    kind = d.get("type")
    if kind not in _FIELDS:
        raise EventFormatError(f"unknown event type {kind!r}")
    cls, required, optional = _FIELDS[kind]
    keys = set(d) - {"type"}
    if missing := required - keys:
        raise EventFormatError(f"{kind}: missing fields {sorted(missing)}")
    if unknown := keys - required - optional:
        raise EventFormatError(f"{kind}: unknown fields {sorted(unknown)}")
    kwargs = {}
    for key in keys:
        value = d[key]
        if key in ("features", "node_ids"):
            if not isinstance(value, list):
                raise EventFormatError(f"{kind}.{key} must be a list")
            value = tuple(float(x) for x in value) if key == "features" else tuple(map(str, value))
        elif key in ("id", "u", "v", "query_id", "rumour_id", "modality"):
            value = str(value)
        elif key == "k":
            value = int(value)
        elif key == "gamma":
            value = float(value)
        kwargs[key] = value
    if cls is ExplainQuery and (kwargs.get("rumour_id") is None) == (kwargs.get("node_ids") is None):
        raise EventFormatError("explain needs exactly one of rumour_id / node_ids")
    return cls(**kwargs)


def write_events(fp: IO[str], schema: ModalitySchema, events: Iterable[StreamEvent]) -> None:
    header = {"type": "schema", **schema.to_dict()}
    fp.write(json.dumps(header, sort_keys=True) + "\n")
    for ev in events:
        fp.write(json.dumps(event_to_dict(ev), sort_keys=True) + "\n")


def iter_events(fp: IO[str]) -> tuple[ModalitySchema, Iterator[StreamEvent]]:
    """Parse the header eagerly and return ``(schema, lazy event iterator)``."""
    first = fp.readline()
    if not first.strip():
        raise EventFormatError("event file is empty; expected a schema header")
    try:
        header = json.loads(first)
    except json.JSONDecodeError as exc:
        raise EventFormatError(f"line 1: {exc}") from None
    if header.get("type") != "schema":
        raise EventFormatError("first line must be a schema header")
    schema = ModalitySchema.from_dict(header)

    def _gen() -> Iterator[StreamEvent]:
        for lineno, line in enumerate(fp, start=2):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EventFormatError(f"line {lineno}: {exc}") from None
            try:
                yield event_from_dict(d)
            except EventFormatError as exc:
                raise EventFormatError(f"line {lineno}: {exc}") from None

    return schema, _gen()


def read_events(path: str | Path) -> tuple[ModalitySchema, list[StreamEvent]]:
    try:
        with open(path, encoding="utf-8") as fp:
            schema, it = iter_events(fp)
            return schema, list(it)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from None


@dataclass
class RumourLog:
    """Registered rumours in arrival order."""

    rumours: dict[str, RumourSubgraph] = field(default_factory=dict)

    @property
    def next_seq(self) -> int:
        return len(self.rumours)

    def __len__(self) -> int:
        return len(self.rumours)

    def __iter__(self) -> Iterator[RumourSubgraph]:
        return iter(self.rumours.values())

    def __getitem__(self, rumour_id: str) -> RumourSubgraph:
        return self.rumours[rumour_id]

    def __contains__(self, rumour_id: str) -> bool:
        return rumour_id in self.rumours


def apply_event(graph: MsgGraph, ev: StreamEvent, log: RumourLog | None = None):
    """Apply one mutation event.

    Returns the graph for ``AddNode``/``AddEdge`` and the new
    :class:`RumourSubgraph` for ``DetectRumour``. ``ExplainQuery`` is not a
    mutation and is returned unchanged for the caller to dispatch.
    """
    if isinstance(ev, AddNode):
        graph.add_node(ev.id, ev.modality, ev.features)
        return graph
    if isinstance(ev, AddEdge):
        graph.add_edge(ev.u, ev.v, ev.features)
        return graph
    if isinstance(ev, DetectRumour):
        if log is None:
            log = RumourLog()
        if ev.id in log:
            raise DuplicateId(f"rumour {ev.id!r} already registered")
        rumour = make_rumour(graph, ev.id, ev.node_ids, log.next_seq)
        log.rumours[ev.id] = rumour
        return rumour
    if isinstance(ev, ExplainQuery):
        return ev
    raise EventFormatError(f"not a stream event: {ev!r}")


def replay(schema: ModalitySchema, events: Iterable[StreamEvent]) -> tuple[MsgGraph, RumourLog]:
    graph = MsgGraph(schema)
    log = RumourLog()
    for ev in events:
        apply_event(graph, ev, log)
    return graph, log
