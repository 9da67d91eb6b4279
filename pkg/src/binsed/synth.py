"""Seeded synthetic binaural corpus: band-limited events with per-class delays."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .audio_io import (
    DEFAULT_RATE,
    AudioClip,
    EventAnnotation,
    ManifestEntry,
    write_annotations,
    write_manifest,
    write_wav,
)
from .errors import ValidationError


@dataclass(frozen=True)
class ClassSpec:
    name: str
    band: tuple[float, float]  # Hz
    delay: int  # samples; positive means channel 2 lags channel 1
    kind: str = "noise"  # "noise" | "tone" (harmonic tone at band[0] with partials up to band[1])
    gains: tuple[float, float] = (1.0, 1.0)


@dataclass(frozen=True)
class SynthSpec:
    classes: tuple[ClassSpec, ...] = (
        ClassSpec("alpha", (300.0, 1500.0), 8),
        ClassSpec("beta", (2500.0, 8000.0), -8),
    )
    contexts: tuple[str, ...] = ("indoor", "outdoor")
    background_levels: tuple[float, ...] = (0.002, 0.004)
    n_recordings: int = 20
    duration: float = 30.0
    rate: int = DEFAULT_RATE
    n_folds: int = 5
    activity: float = 0.35  # target fraction of time each class is active
    min_event: float = 1.0
    max_event: float = 4.0
    event_level: float = 0.1
    polyphonic: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.classes:
            raise ValidationError("need at least one class")
        if len(self.background_levels) != len(self.contexts):
            raise ValidationError("one background level per context")
        for c in self.classes:
            if abs(c.delay) > 30:
                raise ValidationError(f"class {c.name}: delay {c.delay} exceeds 30 samples")
        if not 0 <= self.activity < 1:
            raise ValidationError(f"activity must be in [0, 1), got {self.activity}")


def pure_spatial_spec(**overrides) -> SynthSpec:
    """Two classes with identical broadband spectra, distinguishable only by delay."""
    band = (200.0, 10000.0)
    base = dict(
        classes=(ClassSpec("left", band, 8), ClassSpec("right", band, -8)),
        polyphonic=False,
    )
    base.update(overrides)
    return SynthSpec(**base)


def _band_noise(rng, n, band, rate):
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / rate)
    spec[(f < band[0]) | (f > band[1])] = 0.0
    x = np.fft.irfft(spec, n)
    return x / max(np.std(x), 1e-12)


def _harmonic_tone(rng, n, band, rate):
    t = np.arange(n) / rate
    f0 = band[0] * rng.uniform(0.97, 1.03)
    x = np.zeros(n)
    h = 1
    while h * f0 <= band[1]:
        x += np.sin(2 * np.pi * h * f0 * t + rng.uniform(0, 2 * np.pi)) / h
        h += 1
    return x / max(np.std(x), 1e-12)


def _ramp(n, rate, ramp_s=0.01):
    r = min(int(ramp_s * rate), n // 2)
    env = np.ones(n)
    if r:
        env[:r] = np.linspace(0, 1, r, endpoint=False)
        env[n - r:] = env[:r][::-1]
    return env


def _timeline(rng, spec: SynthSpec, mean_gap):
    """Alternating gaps and events over the recording; returns [(onset, offset)]."""
    out = []
    t = rng.exponential(mean_gap)
    while True:
        d = rng.uniform(spec.min_event, spec.max_event)
        if t + d > spec.duration:
            break
        out.append((t, t + d))
        t += d + rng.exponential(mean_gap)
    return out


def generate_recording(rng, spec: SynthSpec, context_index: int):
    """Return ``(clip, events)`` for one recording."""
    n = int(round(spec.duration * spec.rate))
    bg = spec.background_levels[context_index]
    signal = bg * rng.standard_normal((2, n))
    events = []
    if spec.activity > 0:
        mean_dur = 0.5 * (spec.min_event + spec.max_event)
        if spec.polyphonic:
            mean_gap = mean_dur * (1 - spec.activity) / spec.activity
            placed = [(c, iv) for c in spec.classes for iv in _timeline(rng, spec, mean_gap)]
        else:
            k = len(spec.classes)
            total = min(spec.activity * k, 0.9)
            mean_gap = mean_dur * (1 - total) / total
            placed = [(spec.classes[rng.integers(k)], iv) for iv in _timeline(rng, spec, mean_gap)]
        for cls, (on, off) in placed:
            a, b = int(round(on * spec.rate)), int(round(off * spec.rate))
            m = b - a
            gen = _band_noise if cls.kind == "noise" else _harmonic_tone
            src = gen(rng, m + abs(cls.delay), cls.band, spec.rate)
            level = spec.event_level * rng.uniform(0.5, 1.0)
            env = _ramp(m, spec.rate)
            d = cls.delay
            # ch2[n] = ch1[n - d]
            s1 = src[max(d, 0):max(d, 0) + m]
            s2 = src[max(-d, 0):max(-d, 0) + m]
            signal[0, a:b] += cls.gains[0] * level * env * s1
            signal[1, a:b] += cls.gains[1] * level * env * s2
            events.append(EventAnnotation(a / spec.rate, b / spec.rate, cls.name))
    events.sort(key=lambda e: (e.onset, e.label))
    clip = AudioClip(np.clip(signal, -1.0, 32767 / 32768), spec.rate)
    return clip, events


def synthesize_corpus(out_dir, spec: SynthSpec = SynthSpec()) -> list[ManifestEntry]:
    """Write WAVs, annotation files and ``manifest.tsv`` under ``out_dir``."""
    os.makedirs(os.path.join(out_dir, "audio"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "annotations"), exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    entries = []
    for i in range(spec.n_recordings):
        ctx = i % len(spec.contexts)
        clip, events = generate_recording(rng, spec, ctx)
        stem = f"rec{i:03d}"
        audio = f"audio/{stem}.wav"
        ann = f"annotations/{stem}.ann"
        write_wav(os.path.join(out_dir, audio), clip)
        write_annotations(os.path.join(out_dir, ann), events)
        entries.append(ManifestEntry(audio, ann, spec.contexts[ctx], i % spec.n_folds + 1))
    write_manifest(out_dir, entries)
    return entries
