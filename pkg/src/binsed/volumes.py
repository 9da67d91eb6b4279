"""Feature volumes: layering, concatenation, normalization and the SEDF file format."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from . import dsp, spatial
from .audio_io import HOP_SECONDS, AudioClip
from .errors import FormatError, SedIOError, ValidationError

FEATURE_TYPES = ("mel", "tdoa", "gcc", "domfreq", "acr")
TYPE_CODES = {name: i for i, name in enumerate(FEATURE_TYPES)}
BINAURAL_SHAPES = {"mel": (40, 2), "tdoa": (5, 3), "gcc": (60, 3), "domfreq": (3, 4), "acr": (400, 2)}

MAGIC = b"SEDF"
VERSION = 1
_HEADER = struct.Struct("<4sHHIIII")
NORM_EPS = 1e-8


@dataclass(frozen=True)
class FeatureVolume:
    data: np.ndarray  # (T, L, C)
    feature_type: str
    hop: float = HOP_SECONDS

    def __post_init__(self):
        if self.feature_type not in TYPE_CODES:
            raise ValidationError(f"unknown feature type {self.feature_type!r}")
        d = np.asarray(self.data)
        if d.ndim != 3 or min(d.shape) < 1:
            raise ValidationError(f"volume must be rank 3 with positive sizes, got {d.shape}")
        object.__setattr__(self, "data", d)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def T(self) -> int:
        return self.data.shape[0]


def _check_mats(mats):
    if not mats:
        raise ValidationError("need at least one matrix")
    mats = [np.asarray(m) for m in mats]
    shape = mats[0].shape
    for i, m in enumerate(mats):
        if m.ndim != 2 or m.shape != shape:
            raise ValidationError(f"matrix {i} has shape {m.shape}, expected {shape}")
    return mats


def stack_channels(mats, feature_type: str = "mel", hop: float = HOP_SECONDS) -> FeatureVolume:
    """Layer C matrices of shape (T, L) into a (T, L, C) volume."""
    return FeatureVolume(np.stack(_check_mats(mats), axis=-1), feature_type, hop)


def concat_channels(mats) -> np.ndarray:
    """Concatenate C matrices of shape (T, L) along features: (T, C*L), channel-major."""
    return np.concatenate(_check_mats(mats), axis=1)


def volume_to_concat(volume: FeatureVolume) -> FeatureVolume:
    """Re-arrange a (T, L, C) volume as a single-layer (T, C*L, 1) volume."""
    d = volume.data
    flat = concat_channels([d[:, :, c] for c in range(d.shape[2])])
    return FeatureVolume(flat[:, :, None], volume.feature_type, volume.hop)


# ---------------------------------------------------------------------------
# extraction entry point


def extract_volume(clip: AudioClip, feature_type: str, rate: int = 44100, **options) -> FeatureVolume:
    """Run the extractor for ``feature_type`` on ``clip``."""
    if feature_type == "mel":
        data = dsp.log_mel_energies(clip, rate=rate, binaural=options.pop("binaural", True), **options)
    elif feature_type == "tdoa":
        data = spatial.extract_tdoa(clip, rate=rate, **options)
    elif feature_type == "gcc":
        data = spatial.extract_gcc_features(clip, rate=rate, **options)
    elif feature_type == "domfreq":
        data = spatial.extract_dom_freq(clip, rate=rate, **options)
    elif feature_type == "acr":
        data = spatial.extract_acr(clip, rate=rate, **options)
    else:
        raise ValidationError(f"unknown feature type {feature_type!r}")
    return FeatureVolume(data, feature_type)


def to_monaural(volume: FeatureVolume) -> FeatureVolume:
    """Mean over layers, (T, L, C) -> (T, L, 1). Used for the mel-monaural variant."""
    return FeatureVolume(volume.data.mean(axis=2, keepdims=True), volume.feature_type, volume.hop)


# ---------------------------------------------------------------------------
# normalization


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray  # (L, C)
    std: np.ndarray  # (L, C), floored at NORM_EPS

    def apply(self, volume: FeatureVolume) -> FeatureVolume:
        return apply_normalizer(volume, self)


def fit_normalizer(volumes) -> NormStats:
    """Per-cell mean/stddev over all frames of ``volumes`` (one feature type).

    Sums and sums of squares are accumulated per volume, so the fit is a
    mergeable reduction.
    """
    volumes = list(volumes)
    if not volumes:
        raise ValidationError("cannot fit a normalizer on an empty training set")
    shape = volumes[0].data.shape[1:]
    n = 0
    s = np.zeros(shape)
    ss = np.zeros(shape)
    for v in volumes:
        if v.data.shape[1:] != shape:
            raise ValidationError(f"volume shape {v.data.shape} inconsistent with {shape}")
        d = v.data.astype(np.float64)
        n += d.shape[0]
        s += d.sum(axis=0)
        ss += (d * d).sum(axis=0)
    if n < 2:
        raise ValidationError(f"need at least 2 frames to fit a normalizer, got {n}")
    mean = s / n
    var = np.maximum(ss / n - mean * mean, 0.0)
    return NormStats(mean, np.maximum(np.sqrt(var), NORM_EPS))


def apply_normalizer(volume: FeatureVolume, stats: NormStats) -> FeatureVolume:
    if volume.data.shape[1:] != stats.mean.shape:
        raise ValidationError(f"volume cells {volume.data.shape[1:]} do not match stats {stats.mean.shape}")
    return FeatureVolume((volume.data - stats.mean) / stats.std, volume.feature_type, volume.hop)


def denormalize(volume: FeatureVolume, stats: NormStats) -> FeatureVolume:
    return FeatureVolume(volume.data * stats.std + stats.mean, volume.feature_type, volume.hop)


# ---------------------------------------------------------------------------
# SEDF binary format


def write_volume(path: str | os.PathLike, volume: FeatureVolume) -> None:
    T, L, C = volume.data.shape
    hop_us = int(round(volume.hop * 1e6))
    header = _HEADER.pack(MAGIC, VERSION, TYPE_CODES[volume.feature_type], T, L, C, hop_us)
    payload = np.ascontiguousarray(volume.data, dtype="<f4").tobytes()
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(header + payload)
    os.replace(tmp, path)


def read_volume(path: str | os.PathLike) -> FeatureVolume:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise SedIOError(f"cannot read volume {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise SedIOError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, code, T, L, C, hop_us = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if code >= len(FEATURE_TYPES):
        raise FormatError(f"{path}: unknown feature type code {code}")
    expected = T * L * C * 4
    body = raw[_HEADER.size:]
    if len(body) != expected:
        raise SedIOError(f"{path}: header declares {T}x{L}x{C} cells ({expected} bytes), payload has {len(body)}")
    data = np.frombuffer(body, dtype="<f4").reshape(T, L, C).astype(np.float32)
    return FeatureVolume(data, FEATURE_TYPES[code], hop_us / 1e6)
