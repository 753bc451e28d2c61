"""Flat key-value config files and the dataclasses parsed from them.

Format: one ``key = value`` pair per line, ``#`` starts a comment.
A single file may carry both dataset and training keys; each consumer
reads the keys it knows and ignores the rest.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path


def parse_kv_file(path) -> dict:
    """Read a flat key-value file into a string dict."""
    values = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def write_kv_file(path, values: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{k} = {values[k]}" for k in values]
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    tmp.replace(path)


def _coerce(field: dataclasses.Field, raw: str):
    if field.type in ("int", int):
        return int(raw)
    if field.type in ("float", float):
        return float(raw)
    return raw


def _from_kv(cls, values: dict):
    kwargs = {}
    for field in dataclasses.fields(cls):
        if field.name in values:
            kwargs[field.name] = _coerce(field, values[field.name])
    return cls(**kwargs)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters shared by all three training stages.

    Desk-scale defaults; ``paper()`` restores the reference settings
    (batch 32, clip length 16, horizon 32, Adam 1e-4 with betas 0/0.9).
    """

    lr: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.9
    batch: int = 16
    steps: int = 2000
    lambda_gp: float = 10.0
    w_rec: float = 1.0
    w_sparsity: float = 1.0
    w_gen: float = 1.0
    w_feat: float = 0.0
    k_max: int = 32
    clip_k: int = 16
    seed: int = 0
    ratio: int = 1
    lstm_observe: int = 10
    lstm_predict: int = 32
    lstm_hidden: int = 64

    def __post_init__(self):
        for name in ("lr", "batch", "lambda_gp", "k_max", "clip_k", "ratio",
                     "lstm_observe", "lstm_predict", "lstm_hidden"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")

    @classmethod
    def paper(cls, **overrides) -> "TrainConfig":
        base = dict(lr=1e-4, beta1=0.0, beta2=0.9, batch=32, lambda_gp=10.0,
                    k_max=32, clip_k=16)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        return _from_kv(cls, parse_kv_file(path))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def save(self, path) -> None:
        write_kv_file(path, {k: repr(v) if isinstance(v, float) else str(v)
                             for k, v in self.to_dict().items()})


@dataclass(frozen=True)
class DatasetConfig:
    """Synthetic corpus parameters."""

    clips: int = 12
    frames: int = 48
    classes: int = 4
    height: int = 64
    width: int = 64
    joints: int = 8
    sigma: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if self.frames < 42:
            raise ValueError("frames must be >= 42 (10 observed + 32 predicted)")
        if self.clips < 3:
            raise ValueError("need at least 3 clips to fill the three splits")
        if self.classes < 1 or self.joints < 2:
            raise ValueError("classes must be >= 1 and joints >= 2")
        if self.height < 8 or self.width < 8:
            raise ValueError("frame dims must be >= 8")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    @classmethod
    def from_file(cls, path) -> "DatasetConfig":
        return _from_kv(cls, parse_kv_file(path))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)
