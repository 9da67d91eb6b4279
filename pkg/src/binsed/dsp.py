"""Short-time analysis: framing, FFT, mel filterbanks and log mel energies."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .audio_io import DEFAULT_RATE, HOP_SECONDS, AudioClip
from .errors import ChannelCountError, RateMismatchError, ValidationError

LOG_FLOOR = 1e-10


def is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def next_pow2(n: int) -> int:
    return 1 << max(0, math.ceil(math.log2(n)))


@dataclass(frozen=True)
class FramingPlan:
    hop: int
    window: int

    def __post_init__(self):
        if self.hop <= 0:
            raise ValidationError(f"hop must be positive, got {self.hop}")
        if self.window < self.hop:
            raise ValidationError(f"window ({self.window}) shorter than hop ({self.hop})")

    @classmethod
    def from_seconds(cls, window_s: float, rate: int = DEFAULT_RATE, hop_s: float = HOP_SECONDS) -> "FramingPlan":
        return cls(hop=int(round(hop_s * rate)), window=int(round(window_s * rate)))

    @property
    def fft_size(self) -> int:
        return next_pow2(self.window)

    def frame_count(self, n_samples: int) -> int:
        return -(-n_samples // self.hop)


@dataclass(frozen=True)
class StftFrame:
    coefficients: np.ndarray
    frame_index: int
    fft_size: int


@dataclass(frozen=True)
class MelFilterbank:
    band_responses: np.ndarray  # (B, N/2+1)
    band_edges: np.ndarray  # (B+1,) Hz
    fft_size: int
    rate: int

    @property
    def num_bands(self) -> int:
        return self.band_responses.shape[0]


def hamming(n: int) -> np.ndarray:
    # symmetric Hamming, same as scipy.signal.windows.hamming(n, sym=True)
    if n == 1:
        return np.ones(1)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * np.arange(n) / (n - 1))


def frame_signal(signal, plan: FramingPlan, window: str | None = "hamming") -> np.ndarray:
    """Cut ``signal`` into frames centered on ``t * hop``.

    Samples outside the signal are zeros. Returns an array of shape
    (ceil(len / hop), plan.window); each frame is multiplied by a Hamming
    window unless ``window`` is None.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValidationError("frame_signal needs a non-empty 1-D signal")
    W, hop = plan.window, plan.hop
    T = plan.frame_count(x.size)
    left = W // 2
    right = max(0, (T - 1) * hop + W - left - x.size)
    padded = np.concatenate([np.zeros(left), x, np.zeros(right)])
    frames = sliding_window_view(padded, W)[::hop][:T]
    if window == "hamming":
        return frames * hamming(W)
    if window is None:
        return frames.copy()
    raise ValidationError(f"unknown window {window!r}")


def fft(frame, N: int, frame_index: int = 0) -> StftFrame:
    """One-sided DFT of a real frame, zero-padded to ``N`` (power of two)."""
    if not is_pow2(N):
        raise ValidationError(f"FFT size must be a power of two, got {N}")
    x = np.asarray(frame, dtype=np.float64)
    if x.size > N:
        raise ValidationError(f"frame of {x.size} samples exceeds FFT size {N}")
    return StftFrame(np.fft.rfft(x, n=N), frame_index, N)


def stft(signal, plan: FramingPlan, window: str | None = "hamming") -> np.ndarray:
    """(T, N/2+1) complex spectrogram on the centered framing grid."""
    frames = frame_signal(signal, plan, window)
    return np.fft.rfft(frames, n=plan.fft_size, axis=1)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def build_mel_filterbank(
    num_bands: int,
    fft_size: int,
    rate: int = DEFAULT_RATE,
    f_low: float = 0.0,
    f_high: float | None = None,
    shape: str = "triangular",
) -> MelFilterbank:
    """Filterbank with band edges equally spaced on the mel scale.

    ``triangular`` gives unit-peak overlapping triangles; ``rectangular``
    gives a disjoint partition of the bins in ``[f_low, f_high]``.
    """
    if f_high is None:
        f_high = rate / 2
    if num_bands < 1:
        raise ValidationError("need at least one band")
    if not 0 <= f_low < f_high <= rate / 2:
        raise ValidationError(f"invalid band range [{f_low}, {f_high}] for rate {rate}")
    if not is_pow2(fft_size):
        raise ValidationError(f"FFT size must be a power of two, got {fft_size}")

    freqs = np.arange(fft_size // 2 + 1) * rate / fft_size
    if shape == "triangular":
        pts = mel_to_hz(np.linspace(hz_to_mel(f_low), hz_to_mel(f_high), num_bands + 2))
        lo, mid, hi = pts[:-2, None], pts[1:-1, None], pts[2:, None]
        up = (freqs - lo) / (mid - lo)
        down = (hi - freqs) / (hi - mid)
        H = np.maximum(0.0, np.minimum(up, down))
        edges = pts
    elif shape == "rectangular":
        edges = mel_to_hz(np.linspace(hz_to_mel(f_low), hz_to_mel(f_high), num_bands + 1))
        edges[0], edges[-1] = f_low, f_high
        H = np.zeros((num_bands, freqs.size))
        band = np.searchsorted(edges, freqs, side="right") - 1
        band[freqs == f_high] = num_bands - 1
        inside = (freqs >= f_low) & (freqs <= f_high)
        H[band[inside], np.flatnonzero(inside)] = 1.0
    else:
        raise ValidationError(f"unknown filter shape {shape!r}")

    empty = np.flatnonzero(~(H > 0).any(axis=1))
    if empty.size:
        raise ValidationError(
            f"{num_bands} bands too many for {fft_size}-point FFT: band(s) {empty.tolist()} contain no bins"
        )
    return MelFilterbank(H, np.asarray(edges), fft_size, rate)


def _check_rate(clip: AudioClip, rate: int):
    if clip.sample_rate != rate:
        raise RateMismatchError(f"{clip.id or 'clip'}: sample rate {clip.sample_rate} Hz, expected {rate} Hz")


def log_mel_energies(
    clip: AudioClip,
    num_bands: int = 40,
    window_s: float = 0.040,
    rate: int = DEFAULT_RATE,
    binaural: bool = True,
    power: bool = True,
    log_base: float = math.e,
    bank: MelFilterbank | None = None,
) -> np.ndarray:
    """Log mel-band energies of every channel, shape (T, num_bands, channels).

    ``power=False`` integrates magnitudes instead of squared magnitudes.
    """
    _check_rate(clip, rate)
    if binaural and clip.channels != 2:
        raise ChannelCountError(f"{clip.id or 'clip'}: binaural mel energies need 2 channels, got {clip.channels}")
    plan = FramingPlan.from_seconds(window_s, rate)
    if bank is None:
        bank = build_mel_filterbank(num_bands, plan.fft_size, rate)
    layers = []
    for ch in clip.samples:
        spec = np.abs(stft(ch, plan))
        if power:
            spec = spec**2
        energy = spec @ bank.band_responses.T
        layers.append(np.log(np.maximum(energy, LOG_FLOOR)) / math.log(log_base))
    return np.stack(layers, axis=-1)
