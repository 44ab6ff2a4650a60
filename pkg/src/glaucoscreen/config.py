"""Run configuration: training, preprocessing and model settings in one file.

The config file is JSON with up to three sections; every key is optional and
falls back to the dataclass default::

    {
      "train": {"lr": 0.001, "batch_size": 8, "max_epochs": 30, "seed": 0, ...},
      "prep":  {"roi_side": 800, "clip_limit": 2.0, "tile_grid": [8, 8], ...},
      "model": {
        "backbone": {"stage_channels": [8, 16, 32, 64], "blocks_per_stage": [1, 1, 1, 1],
                     "cbam_enabled": true, "input_side": 128},
        "patch_side": 64,
        "scales": [{"kernel": 3, "patch_h": 96, "patch_w": 96, "proposals": 2},
                   {"kernel": 2, "patch_h": 48, "patch_w": 48, "proposals": 2}],
        "nms_kernel": 3, "fusion_mode": "mha_readout", "heads": 4, "branches": 3
      }
    }
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .dwm import DwmScaleConfig
from .imaging import AugmentPolicy
from .network import BackboneConfig, ModelConfig


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    lr_decay_after: int = 10_000
    lr_decay_factor: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 8
    max_epochs: int = 30
    max_iterations: int | None = None
    seed: int = 0
    log_every: int = 400
    snapshot_every: int = 2_000
    checkpoint_every: int = 10
    class_weighting: bool = False
    deterministic: bool = True
    num_threads: int = 0
    augment: bool = True
    flip_h_prob: float = 0.5
    flip_v_prob: float = 0.5
    jitter_strength: float = 0.2
    blur_sigma_min: float = 0.0
    blur_sigma_max: float = 1.0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError(f"learning rate must be non-negative, got {self.lr}")
        for name in ("batch_size", "log_every", "snapshot_every", "checkpoint_every", "max_epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def lr_at(self, iteration: int) -> float:
        """Learning rate for the 1-based ``iteration``: constant, then one step decay."""
        return self.lr if iteration <= self.lr_decay_after else self.lr * self.lr_decay_factor

    @property
    def policy(self) -> AugmentPolicy:
        if not self.augment:
            return AugmentPolicy.identity()
        return AugmentPolicy(
            self.flip_h_prob, self.flip_v_prob, self.jitter_strength, (self.blur_sigma_min, self.blur_sigma_max)
        )


@dataclass(frozen=True)
class PrepConfig:
    roi_side: int = 800
    clip_limit: float = 2.0
    tile_grid: tuple[int, int] = (8, 8)
    roi_fallback_frac: float = 0.6
    clahe_enabled: bool = True


DESK_MODEL = ModelConfig(
    backbone=BackboneConfig(stage_channels=(8, 16, 32, 64), blocks_per_stage=(1, 1, 1, 1), input_side=128),
    patch_side=64,
    scales=(DwmScaleConfig(3, 96, 96, 2), DwmScaleConfig(2, 48, 48, 2)),
)


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    prep: PrepConfig = field(default_factory=PrepConfig)
    model: ModelConfig = DESK_MODEL

    def to_dict(self) -> dict:
        return {"train": asdict(self.train), "prep": asdict(self.prep), "model": self.model.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - {"train", "prep", "model"}
        if unknown:
            raise ValueError(f"unknown config sections {sorted(unknown)}")
        train = _build(TrainConfig, d.get("train", {}))
        prep_d = dict(d.get("prep", {}))
        if "tile_grid" in prep_d:
            prep_d["tile_grid"] = tuple(prep_d["tile_grid"])
        prep = _build(PrepConfig, prep_d)
        model_d = d.get("model")
        if model_d is None:
            model = DESK_MODEL
        else:
            base = DESK_MODEL.to_dict()
            merged = {**base, **model_d, "backbone": {**base["backbone"], **model_d.get("backbone", {})}}
            model = ModelConfig.from_dict(merged)
        return cls(train, prep, model)

    def with_train(self, **overrides) -> "RunConfig":
        overrides = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, train=replace(self.train, **overrides)) if overrides else self


def _build(cls, values: dict):
    names = {f.name for f in fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys {sorted(unknown)}")
    return cls(**values)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path, encoding="utf-8") as f:
        return RunConfig.from_dict(json.load(f))
