"""Flat run configuration with paper-scale and desk-scale presets."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .training import TrainConfig

PAPER_GRID = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0, 5.5, 6.0]
DESK_GRID = [1.0, 2.0, 3.0, 4.0]


@dataclass
class RunConfig:
    # architecture
    k: int = 64
    enc_features: int = 4
    enc_blocks: int = 2
    dec_features: int = 5
    dec_layers: int = 5
    dec_hidden: int = 100
    dec_kernel: int = 5
    iterations: int = 6
    # training
    epochs: int = 500
    samples_per_epoch: int = 50000
    enc_batch: int = 128
    dec_batch: int = 512
    dec_train_ratio: int = 5
    lr: float = 2e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    train_ebn0_low: float = 1.0
    train_ebn0_high: float = 4.0
    train_ebn0_fixed: float | None = None
    checkpoint_every: int = 1
    # evaluation
    eval_grid: list[float] = field(default_factory=lambda: list(PAPER_GRID))
    eval_n: int = 50000
    eval_batch: int = 500
    # bookkeeping
    seed: int = 0
    interleaver_seed: int = 0
    preset: str = "paper"

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{n: v for n, v in asdict(self).items() if n in names})

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        """Short hash of everything that affects results."""
        d = self.to_dict()
        d.pop("preset", None)
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**data)

    def updated(self, **overrides) -> "RunConfig":
        d = self.to_dict()
        d.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig.from_dict(d)


PRESETS = {
    "paper": {},
    "desk": {"epochs": 20, "samples_per_epoch": 10000, "eval_grid": list(DESK_GRID),
             "eval_n": 10000, "preset": "desk"},
}


def resolve_config(preset: str = "paper", path: str | Path | None = None, **overrides) -> RunConfig:
    """Preset defaults, then a JSON file, then explicit overrides."""
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    cfg = RunConfig().updated(**PRESETS[preset])
    if path is not None:
        data = json.loads(Path(path).read_text())
        if not isinstance(data, dict):
            raise ValueError("config file must hold a JSON object")
        cfg = cfg.updated(**data)
    return cfg.updated(**overrides)
