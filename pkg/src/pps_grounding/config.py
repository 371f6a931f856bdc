"""Hyperparameters and their flat JSON file format."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .errors import InvalidConfig

PULL_STRATEGIES = ("distant", "all", "to_mid")


@dataclass(frozen=True)
class GroundingConfig:
    """Every knob of the model, losses, data and optimizer.

    Defaults are the desk-scale setting.  ``activitynet()`` and ``charades()``
    return the published full-size settings.
    """

    # proposals
    K: int = 5
    E_en: int = 2
    sigma: float = 4.0
    theta: float = 0.5
    # losses
    alphas: tuple[float, float, float, float] = (1.0, 0.2, 1e-4, 1e-3)
    lambda1: float = 0.15
    lambda2: float = 0.15
    beta1: float = 0.1
    beta2: float = 0.15
    pull_strategy: str = "distant"
    # reconstruction
    hide_ratio: float = 1.0 / 3.0
    # optimizer
    learning_rate: float = 4e-4
    batch_size: int = 32
    epochs: int = 30
    warmup_epochs: int = 2  # whole-video reconstruction passes before epoch 1
    generator_lr_scale: float = 1.0  # generator step size relative to learning_rate
    # architecture
    d_V: int = 64
    d_Q: int = 64
    d_G: int = 64
    d_R: int = 64
    layers: int = 2
    heads: int = 4
    ff_mult: int = 2
    # data
    T_max: int = 48
    N_max: int = 12
    vocab_size: int = 64
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        ints = ("K", "E_en", "batch_size", "epochs", "d_V", "d_Q", "d_G", "d_R",
                "layers", "heads", "ff_mult", "T_max", "N_max", "vocab_size")
        for name in ints:
            if int(getattr(self, name)) < 1:
                raise InvalidConfig(f"{name} must be >= 1")
        for name in ("sigma", "lambda1", "lambda2", "beta1", "beta2", "learning_rate", "generator_lr_scale"):
            if not getattr(self, name) > 0:
                raise InvalidConfig(f"{name} must be > 0")
        if len(self.alphas) != 4 or any(a < 0 for a in self.alphas):
            raise InvalidConfig("alphas must be four nonnegative numbers")
        if self.warmup_epochs < 0:
            raise InvalidConfig("warmup_epochs must be >= 0")
        if not self.beta1 < self.beta2:
            raise InvalidConfig("beta1 must be smaller than beta2")
        if not 0 < self.theta <= 1:
            raise InvalidConfig("theta must be in (0, 1]")
        if not 0 < self.hide_ratio < 1:
            raise InvalidConfig("hide_ratio must be in (0, 1)")
        if self.T_max < 2:
            raise InvalidConfig("T_max must be >= 2")
        if self.pull_strategy not in PULL_STRATEGIES:
            raise InvalidConfig(f"pull_strategy must be one of {PULL_STRATEGIES}")
        for name in ("d_G", "d_R"):
            if getattr(self, name) % self.heads:
                raise InvalidConfig(f"{name} must be divisible by heads")

    def replace(self, **changes) -> "GroundingConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["alphas"] = list(self.alphas)
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "GroundingConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidConfig(f"unknown config keys: {', '.join(unknown)}")
        kwargs = dict(data)
        if "alphas" in kwargs:
            kwargs["alphas"] = tuple(float(a) for a in kwargs["alphas"])
        return cls(**kwargs)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @property
    def num_positive_masks(self) -> int:
        return self.K * (self.K + 1) // 2

    @classmethod
    def activitynet(cls, **overrides) -> "GroundingConfig":
        base = dict(K=5, E_en=2, sigma=4.0, alphas=(1.0, 0.2, 0.01, 0.1),
                    d_V=256, d_Q=256, d_G=256, d_R=256, layers=3, heads=4, ff_mult=4,
                    T_max=200, N_max=20, vocab_size=8000)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def charades(cls, **overrides) -> "GroundingConfig":
        base = dict(K=7, E_en=3, sigma=9.0, alphas=(3.0, 5.0, 0.001, 1.0),
                    d_V=256, d_Q=256, d_G=256, d_R=256, layers=3, heads=4, ff_mult=4,
                    T_max=200, N_max=20, vocab_size=1111)
        base.update(overrides)
        return cls(**base)


PRESETS = {
    "desk": GroundingConfig,
    "activitynet": GroundingConfig.activitynet,
    "charades": GroundingConfig.charades,
}


def load_config(path: str | Path) -> GroundingConfig:
    """Read a flat JSON object; a ``"preset"`` key selects the base values."""
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise InvalidConfig("config file must hold a JSON object")
    if any(isinstance(v, dict) for v in data.values()):
        raise InvalidConfig("config file must be flat")
    preset = data.pop("preset", "desk")
    if preset not in PRESETS:
        raise InvalidConfig(f"unknown preset {preset!r}")
    base = PRESETS[preset]().to_dict()
    known = set(base)
    unknown = sorted(set(data) - known)
    if unknown:
        raise InvalidConfig(f"unknown config keys: {', '.join(unknown)}")
    base.update(data)
    return GroundingConfig.from_dict(base)


def save_config(config: GroundingConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
