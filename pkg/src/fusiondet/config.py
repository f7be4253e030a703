"""Flat run configuration: one JSON document drives every command.

Unknown keys are rejected rather than ignored so a typo in a config
file fails loudly, and every field is validated on construction.  The
`voxel_size` knob is parsed and carried along for compatibility with
full-scale configs, but this pipeline never voxelizes: the synthetic
scenes are small enough to feed the encoder directly.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .cascade import ModelConfig
from .errors import InputError, ParseError
from .optim import OptimConfig
from .scenes import SceneSpec


@dataclass(frozen=True)
class RunConfig:
    queries: int = 64
    channels: int = 64
    img_channels: int = 32
    heads: int = 4
    fusion_layers: int = 2
    stages: int = 3
    scales: tuple[int, ...] = (5, 10, 20)
    num_classes: int = 5
    num_points: int = 2048
    voxel_size: float = 0.01          # carried, never consumed (see above)
    lr: float = 1e-4
    lr_decay: float = 0.1
    lr_milestones: tuple[int, ...] = (8, 11)
    weight_decay: float = 0.01
    batch_size: int = 4
    epochs: int = 12
    max_steps: int | None = None
    seed: int = 0

    def __post_init__(self):
        positive = ("queries", "channels", "img_channels", "heads",
                    "fusion_layers", "stages", "num_classes", "num_points",
                    "batch_size", "epochs")
        for name in positive:
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise InputError(f"{name} must be a positive integer")
        if self.channels % self.heads != 0:
            raise InputError("heads must divide channels")
        if not self.scales or any(not isinstance(s, int) or s < 1
                                  for s in self.scales):
            raise InputError("scales must be positive integers")
        if not self.lr > 0:
            raise InputError("lr must be positive")
        if not 0 < self.lr_decay <= 1:
            raise InputError("lr_decay must lie in (0, 1]")
        if any(not isinstance(m, int) or m < 0 for m in self.lr_milestones) \
                or list(self.lr_milestones) != sorted(self.lr_milestones):
            raise InputError("lr_milestones must be sorted non-negative ints")
        if self.weight_decay < 0:
            raise InputError("weight_decay must be non-negative")
        if self.voxel_size <= 0:
            raise InputError("voxel_size must be positive")
        if self.max_steps is not None and (
                not isinstance(self.max_steps, int) or self.max_steps < 1):
            raise InputError("max_steps must be a positive integer or null")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise InputError("seed must be an integer")

    # -- conversions ------------------------------------------------------

    def model_config(self) -> ModelConfig:
        return ModelConfig(classes=self.num_classes, queries=self.queries,
                           channels=self.channels,
                           img_channels=self.img_channels, heads=self.heads,
                           fusion_layers=self.fusion_layers,
                           stages=self.stages, scales=tuple(self.scales))

    def optim_config(self) -> OptimConfig:
        return OptimConfig(lr=self.lr, weight_decay=self.weight_decay,
                           milestones=tuple(self.lr_milestones),
                           decay_factor=self.lr_decay)

    def scene_spec(self) -> SceneSpec:
        return SceneSpec(num_classes=self.num_classes,
                         num_points=self.num_points)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["scales"] = list(self.scales)
        d["lr_milestones"] = list(self.lr_milestones)
        return d


_INT_FIELDS = {"queries", "channels", "img_channels", "heads",
               "fusion_layers", "stages", "num_classes", "num_points",
               "batch_size", "epochs", "seed"}
_REAL_FIELDS = {"voxel_size", "lr", "lr_decay", "weight_decay"}
_TUPLE_FIELDS = {"scales", "lr_milestones"}


def config_from_dict(doc: dict) -> RunConfig:
    """Build a RunConfig from a flat dict, rejecting unknown keys."""
    if not isinstance(doc, dict):
        raise InputError("config must be a flat JSON object")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise InputError(f"unknown config keys: {', '.join(unknown)}")
    kwargs = {}
    for key, v in doc.items():
        if key in _TUPLE_FIELDS:
            if not isinstance(v, (list, tuple)):
                raise InputError(f"{key} must be a list")
            kwargs[key] = tuple(v)
        elif key in _INT_FIELDS or key == "max_steps":
            if isinstance(v, bool) or (v is not None
                                       and not isinstance(v, int)):
                raise InputError(f"{key} must be an integer")
            kwargs[key] = v
        elif key in _REAL_FIELDS:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise InputError(f"{key} must be a number")
            kwargs[key] = float(v)
        else:
            kwargs[key] = v
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    """Read a RunConfig from a JSON file."""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ParseError(path, "file", "missing")
    except json.JSONDecodeError as e:
        raise ParseError(path, f"line {e.lineno}", e.msg)
    try:
        return config_from_dict(doc)
    except InputError as e:
        raise ParseError(path, "config", str(e))


def apply_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    """Replace fields from CLI flags; values are validated like a load."""
    if not overrides:
        return cfg
    merged = cfg.to_dict()
    for key, v in overrides.items():
        if key not in merged:
            raise InputError(f"unknown config key: {key}")
        merged[key] = v
    return config_from_dict(merged)
