"""Run configuration: one flat JSON document, every field overridable from the CLI."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import List, Optional

import torch

from .errors import ConfigError
from .motion_data import MOTION_STYLES, SyntheticSceneConfig
from .objectives import LossWeights

SEED_ENV = "UNITYGRAPH_SEED"


@dataclass
class RunConfig:
    # data: a dataset directory, or synthetic scenes when data_dir is None
    data_dir: Optional[str] = None
    num_scenes: int = 8
    heldout_scenes: int = 8
    synthetic_seed: int = 0
    coupling: float = 0.5
    arena_radius: float = 6.0
    motion_styles: List[str] = field(default_factory=lambda: ["walk", "approach", "group_walk"])
    fps: float = 15.0
    # shapes
    T: int = 15
    P: int = 15
    N: int = 3
    J: int = 8
    D: int = 64
    H: int = 128
    L: int = 3
    attention_heads: int = 4
    # objective
    lambda_pre: float = 0.7
    lambda_rec: float = 0.2
    lambda_inf: float = 0.1
    # optimiser (AdamW); desk-scale defaults, not the large-corpus ones
    lr: float = 1e-3
    weight_decay: float = 1e-2
    lr_decay: float = 0.8
    decay_every: int = 10
    batch_size: int = 8
    epochs: int = 100
    max_steps: Optional[int] = None
    # ablations
    use_short_term: bool = True
    use_long_term: bool = True
    use_spatial: bool = True
    use_inference_loss: bool = True
    use_reconstruction_loss: bool = True
    # reproducibility
    seed: int = 0
    precision: str = "single"
    # outputs
    checkpoint_path: str = "checkpoint.ugck"
    log_path: Optional[str] = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("use_short_term", "use_long_term", "use_spatial",
                     "use_inference_loss", "use_reconstruction_loss"):
            if not isinstance(getattr(self, name), bool):
                raise ConfigError(f"{name} must be a boolean")
        if not (self.use_short_term or self.use_long_term or self.use_spatial):
            raise ConfigError("at least one hyperedge family must be enabled")
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigError(f"lr_decay must lie in (0, 1], got {self.lr_decay}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.precision not in ("single", "double"):
            raise ConfigError(f"precision must be 'single' or 'double', got {self.precision!r}")
        for name in ("T", "P", "N", "J", "D", "H", "L", "attention_heads", "batch_size",
                     "epochs", "decay_every", "num_scenes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.T < 2:
            raise ConfigError("T must be >= 2")
        if self.D % self.attention_heads:
            raise ConfigError(f"D={self.D} is not divisible by attention_heads={self.attention_heads}")
        if self.max_steps is not None and self.max_steps < 0:
            raise ConfigError("max_steps must be >= 0")
        for s in self.motion_styles:
            if s not in MOTION_STYLES:
                raise ConfigError(f"unknown motion style {s!r}")
        try:
            self.loss_weights()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def dtype(self) -> torch.dtype:
        return torch.float64 if self.precision == "double" else torch.float32

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            pre=self.lambda_pre,
            rec=self.lambda_rec if self.use_reconstruction_loss else 0.0,
            inf=self.lambda_inf if self.use_inference_loss else 0.0,
        )

    def synthetic_config(self, seed: int) -> SyntheticSceneConfig:
        return SyntheticSceneConfig(N=self.N, T=self.T, P=self.P, J=self.J, seed=seed,
                                    coupling=self.coupling, arena_radius=self.arena_radius,
                                    motion_styles=list(self.motion_styles), fps=self.fps)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(doc)

    def replace(self, **changes) -> "RunConfig":
        return RunConfig.from_dict({**self.to_dict(), **changes})

    def with_env_seed(self) -> "RunConfig":
        raw = os.environ.get(SEED_ENV)
        if raw is None or raw == "":
            return self
        try:
            return self.replace(seed=int(raw))
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV}={raw!r} is not an integer") from exc


def large_config(**overrides) -> RunConfig:
    """Sizes bracketing the published model (T=15, P=45, N=3, 15 joints, L=3)."""
    base = dict(T=15, P=45, N=3, J=15, D=256, H=640, L=3, attention_heads=8)
    base.update(overrides)
    return RunConfig(**base)
