"""Run configuration: a small ``key = value`` file format plus flag overrides.

Grammar, one statement per line::

    # comment                  (also after a value: ``k = 5  # five``)
    key = value
    [section]                  groups the keys that follow
    [bench.<preset>]           overrides for one ``bench`` preset

Values are ``true``/``false``, ``none``, integers, floats, quoted strings,
bare words, or ``[a, b, ...]`` lists of those. Outside ``bench`` sections
keys are globally unique, so a section header only documents grouping, but a
key placed under the wrong section is rejected. Unknown keys, bad types and
duplicate keys are errors; nothing runs until the whole file validates.
Command-line flags override file values.
"""

from __future__ import annotations

import ast
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Mapping

from .embedding import ModelConfig
from .errors import ConfigError, IoError
from .graph import ModalitySchema
from .propagation import MODELS, PropagationConfig
from .selection import STRATEGIES, SelectionConfig
from .stream.engine import EngineConfig
from .utility import MODES, SIM_SOURCES, UtilityConfig


def _int(v):
    if isinstance(v, bool) or not isinstance(v, int):
        raise TypeError("an integer")
    return v


def _float(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise TypeError("a number")
    return float(v)


def _bool(v):
    if not isinstance(v, bool):
        raise TypeError("true or false")
    return v


def _str(v):
    if not isinstance(v, str):
        raise TypeError("a string")
    return v


def _optional(fn):
    return lambda v: None if v is None else fn(v)


def _choice(options):
    def check(v):
        if v not in options:
            raise TypeError(f"one of {', '.join(options)}")
        return v
    return check


# section -> key -> validator
SECTIONS: dict[str, dict[str, Callable[[Any], Any]]] = {
    "paths": {"events": _str, "checkpoint": _str, "out": _str},
    "run": {"seed": _int},
    "utility": {
        "lambda1": _optional(_float), "lambda2": _float, "alpha": _float, "delta": _float,
        "gamma": _float, "mode": _choice(MODES), "sim_source": _choice(SIM_SOURCES),
        "enforce_bound": _bool,
    },
    "selection": {
        "k": _int, "strategy": _choice(STRATEGIES), "passes": _int, "beta": _float,
        "max_swap": _optional(_int),
    },
    "model": {
        "embed_dim": _int, "num_layers": _int, "q_plus": _int, "q_minus": _int,
        "learning_rate": _float, "epochs": _int, "activation": _str,
    },
    "engine": {
        "composition": _choice(("edges", "nodes")), "kernel_scale": _float, "n_medians": _int,
        "eps_cache": _optional(_float), "reservoir": _int, "overfetch_factor": _int,
        "overfetch_min": _int, "drift_window": _int, "arl0": _float, "kappa": _optional(_float),
        "refresh_iters": _int, "auto_refresh": _bool,
    },
    "simulate": {
        "schema": _str, "propagation": _choice(MODELS), "nodes": _int, "edges": _int,
        "rumours": _int, "infection_prob": _float, "recovery_prob": _float,
        "lt_threshold": _optional(_float), "max_steps": _int, "seed_count": _int,
        "locality": _optional(_int), "max_rumour_nodes": _optional(_int), "warmup": _float,
    },
}
KEYS = {k: (sec, fn) for sec, keys in SECTIONS.items() for k, fn in keys.items()}

SIMULATE_DEFAULTS = {
    "schema": "user:4,tweet:4,hashtag:3",
    "propagation": "IC",
    "nodes": 1000,
    "edges": 2500,
    "rumours": 50,
    "infection_prob": 0.3,
    "recovery_prob": 0.0,
    "lt_threshold": None,
    "max_steps": 5,
    "seed_count": 2,
    "locality": 50,
    "max_rumour_nodes": 40,
    "warmup": 0.2,
}


@dataclass(frozen=True)
class RunConfig:
    """Explicitly set values only; everything else falls back to the defaults
    of the component configs."""

    values: Mapping[str, Any] = field(default_factory=dict)
    bench: Mapping[str, Mapping[str, Any]] = field(default_factory=dict)

    def get(self, key: str, default=None):
        if key not in KEYS:
            raise KeyError(key)
        return self.values.get(key, default)

    def merged(self, overrides: Mapping[str, Any]) -> "RunConfig":
        """Flags win over file values. Only keys present in ``overrides`` count
        as given, so an explicit ``None`` clears an optional setting."""
        vals = dict(self.values)
        for k, v in overrides.items():
            vals[k] = validate(k, v)
        return replace(self, values=vals)

    def _pick(self, cls) -> dict:
        names = {f.name for f in fields(cls)}
        return {k: v for k, v in self.values.items() if k in names}

    def utility(self, base: UtilityConfig | None = None) -> UtilityConfig:
        return _build(lambda: replace(base or UtilityConfig(), **self._pick(UtilityConfig)))

    def selection(self, base: SelectionConfig | None = None) -> SelectionConfig:
        base = base or SelectionConfig()
        return _build(lambda: replace(base, utility=self.utility(base.utility), **self._pick(SelectionConfig)))

    def engine(self, base: EngineConfig | None = None) -> EngineConfig:
        base = base or EngineConfig()
        extra = {"rng_seed": self.seed} if "seed" in self.values else {}
        return _build(lambda: replace(
            base, selection=self.selection(base.selection), **extra, **self._pick(EngineConfig)
        ))

    def model(self) -> ModelConfig:
        return _build(lambda: ModelConfig(rng_seed=self.seed, **self._pick(ModelConfig)))

    @property
    def seed(self) -> int:
        return self.values.get("seed", 0)

    def sim(self, key: str):
        return self.values.get(key, SIMULATE_DEFAULTS[key])

    def propagation(self) -> PropagationConfig:
        return _build(lambda: PropagationConfig(
            model=self.sim("propagation"), infection_prob=self.sim("infection_prob"),
            recovery_prob=self.sim("recovery_prob"), lt_threshold=self.sim("lt_threshold"),
            max_steps=self.sim("max_steps"), seed_count=self.sim("seed_count"), rng_seed=self.seed,
        ))

    def schema(self) -> ModalitySchema:
        return parse_schema(self.sim("schema"))


def _build(fn):
    try:
        return fn()
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def parse_schema(text: str) -> ModalitySchema:
    """``"user:4,tweet:4"`` -> schema with those modalities and feature sizes."""
    mods, dims = [], {}
    for part in text.split(","):
        name, sep, dim = part.strip().partition(":")
        if not sep or not name or not dim.strip().isdigit():
            raise ConfigError(f"bad schema entry {part.strip()!r}; expected name:dim")
        mods.append(name)
        dims[name] = int(dim)
    return _build(lambda: ModalitySchema(mods, dims))


def validate(key: str, value):
    if key not in KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        return KEYS[key][1](value)
    except TypeError as exc:
        raise ConfigError(f"{key} must be {exc}") from None


_LINE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*)$")
_SECTION = re.compile(r"^\[([A-Za-z_][A-Za-z0-9_.]*)\]$")


def parse_value(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null"):
        return None
    if text.startswith("[") and text.endswith("]"):
        inner = text[1:-1].strip()
        return [parse_value(p) for p in _split_list(inner)] if inner else []
    if text[:1] in "\"'":
        try:
            v = ast.literal_eval(text)
        except (ValueError, SyntaxError):
            raise ConfigError(f"bad string literal {text}") from None
        if not isinstance(v, str):
            raise ConfigError(f"bad string literal {text}")
        return v
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    if not text or any(c.isspace() for c in text):
        raise ConfigError(f"cannot parse value {text!r}; quote strings with spaces")
    return text


def _split_list(inner: str) -> list[str]:
    parts, buf, quote = [], "", None
    for c in inner:
        if quote:
            buf += c
            if c == quote:
                quote = None
        elif c in "\"'":
            quote = c
            buf += c
        elif c == ",":
            parts.append(buf)
            buf = ""
        else:
            buf += c
    parts.append(buf)
    return [p.strip() for p in parts]


def _strip_comment(line: str) -> str:
    quote = None
    for i, c in enumerate(line):
        if quote:
            if c == quote:
                quote = None
        elif c in "\"'":
            quote = c
        elif c == "#":
            return line[:i]
    return line


def parse_config(text: str, preset_defaults: Callable[[str], dict] | None = None) -> RunConfig:
    """Parse and validate a config document.

    ``preset_defaults`` maps a bench preset name to its settings; it is used to
    validate ``[bench.<preset>]`` sections.
    """
    values: dict[str, Any] = {}
    bench: dict[str, dict[str, Any]] = {}
    section: str | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        where = f"line {lineno}"
        if m := _SECTION.match(line):
            section = m.group(1)
            if section.startswith("bench."):
                preset = section[len("bench."):]
                if preset_defaults is not None:
                    try:
                        preset_defaults(preset)
                    except ConfigError as exc:
                        raise ConfigError(f"{where}: {exc}") from None
                bench.setdefault(preset, {})
            elif section not in SECTIONS:
                raise ConfigError(f"{where}: unknown section [{section}]")
            continue
        m = _LINE.match(line)
        if not m:
            raise ConfigError(f"{where}: expected key = value")
        key, value = m.group(1), parse_value(m.group(2))
        if section is not None and section.startswith("bench."):
            preset = section[len("bench."):]
            if key in bench[preset]:
                raise ConfigError(f"{where}: duplicate key {key!r}")
            bench[preset][key] = _preset_value(preset, key, value, preset_defaults, where)
            continue
        if key not in KEYS:
            raise ConfigError(f"{where}: unknown config key {key!r}")
        if section is not None and KEYS[key][0] != section:
            raise ConfigError(f"{where}: key {key!r} belongs in [{KEYS[key][0]}], not [{section}]")
        if key in values:
            raise ConfigError(f"{where}: duplicate key {key!r}")
        try:
            values[key] = validate(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{where}: {exc}") from None
    return RunConfig(values, bench)


def _preset_value(preset, key, value, preset_defaults, where):
    if preset_defaults is None:
        return value
    defaults = preset_defaults(preset)
    if key not in defaults:
        raise ConfigError(f"{where}: preset {preset!r} has no setting {key!r}")
    return coerce_like(defaults[key], value, f"{where}: {key}")


def coerce_like(default, value, what: str):
    """Check ``value`` against the type of a preset default."""
    if value is None:
        if default is None:
            return None
        raise ConfigError(f"{what} must not be none")
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float) or default is None:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, tuple):
        ok = isinstance(value, list) and all(isinstance(v, int) and not isinstance(v, bool) for v in value)
        value = tuple(value) if ok else value
    else:
        ok = isinstance(value, str)
    if not ok:
        raise ConfigError(f"{what} has the wrong type for default {default!r}")
    return value


def load_config(path: str | Path | None, preset_defaults=None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, preset_defaults)
