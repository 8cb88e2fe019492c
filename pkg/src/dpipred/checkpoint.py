"""Single-document JSON checkpoints."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .features import FEATURE_ORDER, Scaler
from .neural import ModelConfig


@dataclass(frozen=True, eq=False)
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    scaler: Scaler
    threshold: float
    seed: int
    feature_order: tuple[str, ...] = FEATURE_ORDER
    extra: Mapping = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "feature_order": list(self.feature_order),
            "scaler": self.scaler.to_dict(),
            "threshold": self.threshold,
            "seed": self.seed,
            "params": {k: v.tolist() for k, v in self.params.items()},
            "extra": dict(self.extra),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Checkpoint":
        return cls(
            config=ModelConfig(**d["config"]),
            params={k: np.asarray(v, dtype=np.float64) for k, v in d["params"].items()},
            scaler=Scaler.from_dict(d["scaler"]),
            threshold=float(d["threshold"]),
            seed=int(d["seed"]),
            feature_order=tuple(d["feature_order"]),
            extra=d.get("extra", {}),
        )


def dumps(ckpt: Checkpoint) -> str:
    return json.dumps(ckpt.to_dict(), sort_keys=True) + "\n"


def save(ckpt: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(ckpt), encoding="utf-8")
    return path


def load(path: str | Path) -> Checkpoint:
    return Checkpoint.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
