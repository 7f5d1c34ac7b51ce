"""Run configuration with "paper" and "desk" presets.

The "paper" preset carries the published hyperparameters (Adam, lr 1e-5,
weight decay 1e-4, batch sizes 4/1, 100k/180k iterations).  The "desk"
preset shrinks budgets to minutes of CPU time and raises the learning rate
accordingly; it is what the acceptance suite runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict, fields
from pathlib import Path

from onestep_edit.schedule import InvalidArgument


@dataclass
class StageConfig:
    """Hyperparameters for one training run."""

    iterations: int = 1000
    batch_size: int = 8
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    ema_decay: float = 0.999
    lambda_stage1: float = 1.0
    lambda_stage2: float = 1.0
    t_lo: float = 0.02
    t_hi: float = 0.98
    cond_dropout: float = 0.0
    guidance_scale: float = 1.0
    cond_noise: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if self.lambda_stage1 < 0 or self.lambda_stage2 < 0:
            raise InvalidArgument("loss weights must be >= 0")
        if not 0 <= self.cond_dropout < 1:
            raise InvalidArgument("cond_dropout must lie in [0, 1)")
        if self.guidance_scale <= 0:
            raise InvalidArgument("guidance_scale must be positive")
        if self.cond_noise < 0:
            raise InvalidArgument("cond_noise must be >= 0")
        if not 0 <= self.ema_decay < 1:
            raise InvalidArgument("ema_decay must lie in [0, 1)")
        if self.iterations < 0 or self.batch_size < 1:
            raise InvalidArgument("bad iteration/batch settings")


@dataclass
class DatasetConfig:
    n_synthetic: int = 256
    n_real: int = 192
    seed: int = 11


@dataclass
class ScalesConfig:
    s_y: float = 2.0
    s_edit: float = 0.0
    s_non_edit: float = 1.0
    s_x: float = 1.0


@dataclass
class RunConfig:
    preset: str = "desk"
    seed: int = 0
    schedule_T: int = 1000
    schedule_kind: str = "cosine"
    sample_steps: int = 50
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    scales: ScalesConfig = field(default_factory=ScalesConfig)
    teacher: StageConfig = field(default_factory=StageConfig)
    distill: StageConfig = field(default_factory=StageConfig)
    stage1: StageConfig = field(default_factory=StageConfig)
    stage2: StageConfig = field(default_factory=StageConfig)
    classifier: StageConfig = field(default_factory=StageConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        for name in ("teacher", "distill", "stage1", "stage2", "classifier"):
            getattr(self, name).validate()


def _from_dict(cls, data: dict):
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise InvalidArgument(f"unknown config keys for {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        ftype = known[key].type
        if isinstance(value, dict):
            sub = {"dataset": DatasetConfig, "scales": ScalesConfig}.get(key, StageConfig)
            kwargs[key] = _from_dict(sub, value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def load_config(path: str | Path) -> RunConfig:
    """Load a JSON config; unknown keys are rejected."""
    data = json.loads(Path(path).read_text())
    cfg = _from_dict(RunConfig, data)
    cfg.validate()
    return cfg


def desk_preset(seed: int = 0) -> RunConfig:
    """Toy-scale budgets: the full pipeline trains in minutes on one CPU core."""
    return RunConfig(
        preset="desk",
        seed=seed,
        teacher=StageConfig(iterations=2500, batch_size=16, learning_rate=2e-3, weight_decay=0.0, cond_dropout=0.1, seed=seed),
        distill=StageConfig(iterations=4000, batch_size=16, learning_rate=2e-3, guidance_scale=2.0, seed=seed + 1),
        stage1=StageConfig(iterations=1200, batch_size=8, learning_rate=1e-3, ema_decay=0.99, cond_noise=0.04, seed=seed + 2),
        stage2=StageConfig(iterations=1500, batch_size=4, learning_rate=3e-4, ema_decay=0.99, seed=seed + 3),
        classifier=StageConfig(iterations=1200, batch_size=32, learning_rate=2e-3, seed=seed + 4),
    )


def paper_preset(seed: int = 0) -> RunConfig:
    """The published hyperparameters, kept as a reference preset."""
    return RunConfig(
        preset="paper",
        seed=seed,
        teacher=StageConfig(iterations=100_000, batch_size=16, learning_rate=1e-5, cond_dropout=0.1, seed=seed),
        distill=StageConfig(iterations=100_000, batch_size=16, learning_rate=1e-5, guidance_scale=2.0, seed=seed + 1),
        stage1=StageConfig(iterations=100_000, batch_size=4, learning_rate=1e-5, weight_decay=1e-4, seed=seed + 2),
        stage2=StageConfig(iterations=180_000, batch_size=1, learning_rate=1e-5, weight_decay=1e-4, seed=seed + 3),
        classifier=StageConfig(iterations=5000, batch_size=32, learning_rate=1e-3, seed=seed + 4),
    )


PRESETS = {"desk": desk_preset, "paper": paper_preset}
