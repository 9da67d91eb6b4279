"""Experiment configuration: ``key = value`` files plus command-line overrides.

Documented keys (anything else is rejected):

    dataset, out, cache, features, layering, folds, seed, threads, force, normalize,
    classes, hidden, filters, sequence_length, batch_size, lr, beta1, beta2,
    eps, dropout, patience, max_epochs, threshold, min_delta, rate
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

from .errors import SedIOError, ValidationError
from .neural.train import TrainConfig
from .volumes import FEATURE_TYPES

FEATURE_NAMES = FEATURE_TYPES + ("mel-monaural", "mel-concat")


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"not a boolean: {s!r}")


def _list(s: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in s.split(",") if p.strip())


def _ints(s: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in _list(s))
    except ValueError:
        raise ValidationError(f"expected a comma-separated list of integers, got {s!r}") from None


@dataclass
class ExperimentConfig:
    dataset: str = "."
    out: str = "runs"
    cache: str = ""  # feature directory; empty means <out>/features
    features: tuple[str, ...] = ("mel",)
    layering: str = "volume"
    folds: tuple[int, ...] = (1,)
    seed: int = 0
    threads: int = 0
    force: bool = False
    normalize: bool = True
    classes: tuple[str, ...] = ()
    hidden: int = 128
    filters: int = 100
    rate: int = 44100
    sequence_length: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dropout: float = 0.5
    patience: int = 50
    max_epochs: int = 200
    threshold: float = 0.5
    min_delta: float = 1e-4

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.features:
            raise ValidationError("feature set must not be empty")
        unknown = [f for f in self.features if f not in FEATURE_NAMES]
        if unknown:
            raise ValidationError(f"unknown features {unknown}; choose from {list(FEATURE_NAMES)}")
        if self.layering not in ("volume", "concat"):
            raise ValidationError(f"layering must be 'volume' or 'concat', got {self.layering!r}")
        mels = [f for f in self.features if f.startswith("mel")]
        if len(mels) > 1:
            raise ValidationError(f"choose one mel variant, got {mels}")
        if "mel-concat" in self.features:
            # shorthand for mel with channel concatenation
            self.layering = "concat"
        if "mel-monaural" in self.features and self.layering == "concat":
            raise ValidationError("mel-monaural has a single channel; concat layering does not apply")
        if len(set(self.features)) != len(self.features):
            raise ValidationError(f"duplicate features in {self.features}")
        if self.threads < 0:
            raise ValidationError("threads must be >= 0")
        self.train_config()

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: getattr(self, k) for k in names})

    @property
    def feature_dir(self) -> str:
        return self.cache or os.path.join(self.out, "features")

    @property
    def branch_types(self) -> tuple[str, ...]:
        return tuple("mel" if f.startswith("mel") else f for f in self.features)

    @property
    def extraction_keys(self) -> tuple[str, ...]:
        """Feature files needed on disk (``mel-monaural`` is its own file)."""
        return tuple("mel" if f == "mel-concat" else f for f in self.features)

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls) if not f.name.startswith("_")]

    @classmethod
    def parse_value(cls, key: str, raw: str):
        kinds = {f.name: f.type for f in fields(cls)}
        if key not in kinds or key.startswith("_"):
            raise ValidationError(f"unknown config key {key!r}; valid keys: {', '.join(cls.keys())}")
        kind = kinds[key]
        raw = raw.strip()
        try:
            if kind == "bool":
                return _bool(raw)
            if kind == "int":
                return int(raw)
            if kind == "float":
                return float(raw)
            if kind == "tuple[int, ...]":
                return _ints(raw)
            if kind == "tuple[str, ...]":
                return _list(raw)
        except ValueError:
            raise ValidationError(f"config key {key}: cannot parse {raw!r} as {kind}") from None
        return raw

    @classmethod
    def load(cls, path: str | None = None, overrides: dict | None = None) -> "ExperimentConfig":
        values = {}
        if path:
            try:
                with open(path, encoding="utf-8") as fh:
                    lines = fh.read().splitlines()
            except OSError as exc:
                raise SedIOError(f"cannot read config {path}: {exc}") from exc
            for lineno, line in enumerate(lines, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
                key, raw = (p.strip() for p in line.split("=", 1))
                values[key] = cls.parse_value(key, raw)
        for key, raw in (overrides or {}).items():
            if raw is None:
                continue
            values[key] = cls.parse_value(key, raw) if isinstance(raw, str) else raw
        return cls(**values)

    def dump(self) -> str:
        out = []
        for k in self.keys():
            v = getattr(self, k)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            out.append(f"{k} = {v}")
        return "\n".join(out) + "\n"
