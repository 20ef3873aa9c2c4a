"""Run configuration (one JSON document) and named random substreams."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from .flow_repr import ReprConfig
from .model.config import ModelConfig


@dataclass
class PretrainConfig:
    steps: int = 2000
    batch_size: int = 64
    lr: float = 1e-3
    warmup_steps: int = 100
    weight_decay: float = 0.05
    betas: tuple[float, float] = (0.9, 0.95)


@dataclass
class FinetuneConfig:
    epochs: int = 20
    batch_size: int = 64
    lr: float = 2e-3
    warmup_epochs: int = 1
    weight_decay: float = 0.05
    betas: tuple[float, float] = (0.9, 0.999)
    loss: str = "ce"
    # stop early once validation accuracy reaches this value (None = run all epochs)
    target_val_acc: float | None = None

    def __post_init__(self):
        if self.loss not in ("ce", "lda"):
            raise ValueError(f"loss must be 'ce' or 'lda', got {self.loss!r}")


@dataclass
class LdaConfig:
    beta: float = 0.999
    margin_c: float | None = None  # None: scale so the largest margin is max_margin
    max_margin: float = 0.5
    tau: float = 1.0
    threshold: float = -0.5

    def __post_init__(self):
        if not 0 <= self.beta < 1:
            raise ValueError(f"beta must lie in [0, 1), got {self.beta}")
        if self.margin_c is not None and self.margin_c < 0:
            raise ValueError(f"margin_c must be >= 0, got {self.margin_c}")
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")


@dataclass
class SplitConfig:
    mode: str = "random"
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    per_category_cap: int | None = 2000
    few_shot_fraction: float = 1.0

    def __post_init__(self):
        if self.mode not in ("random", "time"):
            raise ValueError(f"split mode must be 'random' or 'time', got {self.mode!r}")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError(f"split ratios must sum to 1, got {self.ratios}")


@dataclass
class EngineConfig:
    W_g: float = 3.0
    W_r: float = 10.0
    speed: float = 1.0


_SECTIONS = {
    "repr": ReprConfig, "model": ModelConfig, "pretrain": PretrainConfig, "finetune": FinetuneConfig,
    "loss": LdaConfig, "split": SplitConfig, "engine": EngineConfig,
}
_SHARED = {"L_s": "L_s", "n_stride": "n_stride", "m_seq": "M_seq", "mtu": "mtu"}


@dataclass
class RunConfig:
    repr: ReprConfig = field(default_factory=ReprConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    loss: LdaConfig = field(default_factory=LdaConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    engine: EngineConfig = field(default_factory=EngineConfig)
    seed: int = 0
    paths: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for mf, rf in _SHARED.items():
            want = getattr(self.repr, rf)
            if getattr(self.model, mf) != want:
                raise ValueError(f"model.{mf}={getattr(self.model, mf)} disagrees with repr ({want})")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        unknown = set(obj) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw: dict[str, Any] = {}
        for name, sub in _SECTIONS.items():
            section = dict(obj.get(name) or {})
            if name == "model":
                rc = kw["repr"]
                for mf, rf in _SHARED.items():
                    section.setdefault(mf, getattr(rc, rf))
            kw[name] = _build(sub, section, name)
        kw["seed"] = int(obj.get("seed", 0))
        kw["paths"] = dict(obj.get("paths") or {})
        return cls(**kw)

    @classmethod
    def load(cls, path: str | Path | None, overrides: dict | None = None, base: dict | None = None
             ) -> "RunConfig":
        """Defaults, then ``base``, then the JSON file (if any), then dotted-key overrides."""
        obj: dict = copy.deepcopy(base) if base else {}
        if path:
            _merge(obj, json.loads(Path(path).read_text()))
        for key, val in (overrides or {}).items():
            if val is None:
                continue
            parts = key.split(".")
            node = obj
            for p in parts[:-1]:
                node = node.setdefault(p, {})
            node[parts[-1]] = val
        return cls.from_dict(obj)


def _merge(dst: dict, src: dict) -> None:
    for k, v in src.items():
        if isinstance(v, dict) and isinstance(dst.get(k), dict):
            _merge(dst[k], v)
        else:
            dst[k] = v


def _build(cls, section: dict, where: str):
    names = {f.name: f for f in fields(cls)}
    unknown = set(section) - set(names)
    if unknown:
        raise ValueError(f"unknown keys in '{where}': {sorted(unknown)}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in section.items()}
    return cls(**kw)


def tiny_run_config(**model_overrides) -> RunConfig:
    """Desk-scale defaults: tiny model, short schedules."""
    model = ModelConfig.tiny(**model_overrides)
    return RunConfig(model=model, pretrain=PretrainConfig(steps=200, batch_size=32, warmup_steps=10),
                     finetune=FinetuneConfig(epochs=20, batch_size=32))


STREAMS = ("mask", "init", "split", "subsample", "train", "data")


@dataclass(frozen=True)
class Streams:
    seed: int

    def get(self, name: str) -> np.random.Generator:
        """A fresh generator for the named consumer; same (seed, name) -> same stream."""
        tag = int.from_bytes(hashlib.sha256(name.encode()).digest()[:8], "little")
        return np.random.default_rng([self.seed, tag])

    def __getattr__(self, name: str) -> np.random.Generator:
        if name in STREAMS:
            return self.get(name)
        raise AttributeError(name)


def seed_everything(seed: int) -> Streams:
    return Streams(int(seed))
