"""Flat dotted-key run configuration with strict parsing.

A run config is text of `key = value` lines (`#` comments allowed) whose keys
mirror the nested dataclass tree, e.g. `task.kind`, `task.gathering.w1`,
`solver.dt`, `train.lr`, `run.seed`. Unknown keys are rejected; serialization
sorts keys, so parse -> format -> parse is a fixed point.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import get_type_hints

from .errors import ConfigurationError
from .ppo import TrainConfig
from .sim.types import Material, SolverConfig, material_from_name
from .tasks.config import TaskConfig, TaskKind


@dataclass
class RunOptions:
    out: str = "runs/default"
    seed: int = 0
    frame_export_every: int = 0
    resolution_multiplier: int = 1


@dataclass
class RunConfig:
    task: TaskConfig = field(default_factory=TaskConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    run: RunOptions = field(default_factory=RunOptions)


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, TaskKind):
        return value.value
    if isinstance(value, Material):
        return value.name.lower()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(text: str, annotation, key: str):
    text = text.strip()
    optional = False
    ann = annotation
    ann_str = str(annotation)
    if "None" in ann_str:
        optional = True
        if text.lower() in ("none", "null"):
            return None
        # unwrap X | None
        args = [a for a in getattr(annotation, "__args__", ()) if a is not type(None)]
        ann = args[0] if args else str
    try:
        if ann is bool:
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if ann is int:
            return int(text)
        if ann is float:
            return float(text)
        if ann is TaskKind:
            return TaskKind(text.lower())
        if ann is Material:
            return material_from_name(text)
        if ann is str:
            return text
    except (ValueError, KeyError) as exc:
        raise ConfigurationError(f"config key {key!r}: {exc}") from None
    raise ConfigurationError(f"config key {key!r}: unsupported type {annotation} "
                             f"(optional={optional})")


def _walk(obj, prefix=""):
    """Yield (dotted_key, parent_obj, field_name, annotation) for leaf fields."""
    hints = get_type_hints(type(obj))
    for f in dataclasses.fields(obj):
        key = f"{prefix}{f.name}"
        value = getattr(obj, f.name)
        if dataclasses.is_dataclass(value):
            yield from _walk(value, prefix=f"{key}.")
        else:
            yield key, obj, f.name, hints[f.name]


def to_flat(cfg: RunConfig) -> dict:
    return {key: _format_value(getattr(parent, name))
            for key, parent, name, _ in _walk(cfg)}


def format_config(cfg: RunConfig) -> str:
    lines = [f"{k} = {v}" for k, v in sorted(to_flat(cfg).items())]
    return "\n".join(lines) + "\n"


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def apply_flat(cfg: RunConfig, flat: dict) -> RunConfig:
    index = {key: (parent, name, ann) for key, parent, name, ann in _walk(cfg)}
    for key, text in flat.items():
        if key not in index:
            raise ConfigurationError(f"unknown config key {key!r}")
        parent, name, ann = index[key]
        setattr(parent, name, _parse_value(text, ann, key))
    return cfg


def load_config(path=None, overrides=None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        with open(path) as f:
            apply_flat(cfg, parse_config_text(f.read()))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigurationError(f"override must look like key=value, got {item!r}")
        key, value = item.split("=", 1)
        apply_flat(cfg, {key.strip(): value.strip()})
    return cfg


def apply_resolution_multiplier(cfg: RunConfig) -> RunConfig:
    """Scale particle radius down and particle count up for generalization runs."""
    m = cfg.run.resolution_multiplier
    if m == 1:
        return cfg
    try:
        count_factor = {2: 8, 4: 27}[m]
    except KeyError:
        raise ConfigurationError(f"resolution multiplier must be 1, 2, or 4, got {m}") from None
    cfg.task.particle_radius = cfg.task.particle_radius / m
    cfg.task.particle_count = cfg.task.resolved_count() * count_factor
    return cfg
