"""Flat ``key = value`` run configuration.

One setting per line, ``#`` starts a comment, list values are
comma-separated. Every key must be declared in the command's schema.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _list(item: Callable) -> Callable:
    def parse(text):
        if isinstance(text, (list, tuple)):
            return [item(v) for v in text]
        return [item(v.strip()) for v in str(text).split(",") if v.strip()]
    parse.__name__ = f"list[{item.__name__}]"
    return parse


def _opt_str(text):
    return None if text in (None, "", "none") else str(text)


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    help: str = ""


GLOBAL_KEYS = {
    "seed": Key(int, 0, "random seed (default from CONDMPNN_SEED)"),
    "output_dir": Key(str, "runs/latest", "directory for reports, metrics and checkpoints"),
    "threads": Key(int, 1, "worker threads for evaluation over graphs"),
}

SCHEMAS: dict[str, dict[str, Key]] = {
    "check": {
        "sabotage": Key(_opt_str, None, "fault injection hook (weak-split)"),
        "suites": Key(_list(str), [], "restrict to these suite names"),
    },
    "bench": {
        "modes": Key(_list(str), ["no", "weak", "strong", "pure"], "conditioning modes to time"),
        "d_h": Key(int, 128, "feature width (input and output)"),
        "d_a": Key(int, 64, "attribute embedding width"),
        "d_b": Key(int, 64, "basis size for pure layers"),
        "layers": Key(int, 1, "conditional layers stacked per forward"),
        "edges": Key(int, 256, "rows (edges) per forward call"),
        "reps": Key(int, 30, "timed repetitions (>= 10)"),
        "warmup": Key(int, 3, "untimed warmup repetitions"),
    },
    "train": {
        "task": Key(str, "synthetic", "synthetic or xyz-dir"),
        "data_dir": Key(_opt_str, None, "dataset directory for task=xyz-dir"),
        "mode": Key(str, "strong", "no|weak|strong|pure"),
        "layers": Key(int, 3, "message-passing layers"),
        "d_h": Key(int, 32, "hidden feature width"),
        "cond_depth": Key(int, 2, "conditioned layers in the message MLP (0-2)"),
        "epochs": Key(int, 100, "training epochs"),
        "batch": Key(int, 96, "graphs per optimizer step"),
        "lr": Key(float, 5e-4, "initial learning rate"),
        "min_lr": Key(float, 0.0, "final learning rate of the cosine schedule"),
        "weight_decay": Key(float, 1e-16, "decoupled weight decay"),
        "embedding": Key(str, "rbf", "identity|mlp2|rff|rbf"),
        "d_a": Key(int, 16, "attribute embedding width"),
        "rff_scale": Key(float, 1.0, "std of random Fourier frequencies"),
        "gate_bias": Key(_bool, False, "bias on the strong gate path"),
        "gate_init": Key(str, "default", "default|ones"),
        "residual": Key(_bool, True, "residual node update"),
        "per_layer_embedding": Key(_bool, False, "separate attribute embedding per layer"),
        "standardize": Key(_bool, False, "standardise targets with train mean/std"),
        "n_graphs": Key(int, 2000, "synthetic graphs"),
        "n_min": Key(int, 4, "synthetic min nodes"),
        "n_max": Key(int, 8, "synthetic max nodes"),
        "feature_dim": Key(int, 8, "synthetic feature width"),
        "position_scale": Key(float, 1.0, "synthetic position std"),
        "data_seed": Key(int, 0, "seed for synthetic data and the split"),
        "split": Key(_list(float), [0.8, 0.1, 0.1], "train,val,test fractions"),
        "property": Key(str, "prop", "property name recorded for xyz datasets"),
    },
    "compare": {
        "runs": Key(_list(str), [], "run directories (first one is the baseline)"),
        "split": Key(str, "val", "metric split to compare"),
    },
}


def schema(command: str) -> dict[str, Key]:
    return {**GLOBAL_KEYS, **SCHEMAS[command]}


def parse_text(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        out[key.strip()] = value.strip()
    return out


def _format(value) -> str:
    if isinstance(value, (list, tuple)):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return "none" if value is None else str(value)


def dump_text(values: dict[str, Any]) -> str:
    return "".join(f"{k} = {_format(v)}\n" for k, v in values.items())


def resolve(command: str, file_values: dict[str, str] | None = None,
            overrides: dict[str, Any] | None = None, env=None) -> dict[str, Any]:
    """Defaults < ``CONDMPNN_SEED`` < config file < explicit overrides."""
    keys = schema(command)
    env = os.environ if env is None else env
    raw: dict[str, Any] = {}
    if env.get("CONDMPNN_SEED"):
        raw["seed"] = env["CONDMPNN_SEED"]
    for source in (file_values or {}, overrides or {}):
        unknown = sorted(set(source) - set(keys))
        if unknown:
            raise ConfigError(f"unknown config keys for '{command}': {', '.join(unknown)}")
        raw.update({k: v for k, v in source.items() if v is not None})
    values = {}
    for k, spec in keys.items():
        if k not in raw:
            values[k] = spec.default
            continue
        try:
            values[k] = spec.parse(raw[k])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {k}: {raw[k]!r} ({exc})") from None
    return values


def load_file(path) -> dict[str, str]:
    p = Path(path)
    try:
        return parse_text(p.read_text(), str(p))
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None


def write_resolved(values: dict[str, Any], directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    path = d / "config.resolved"
    path.write_text(dump_text(values))
    return path
