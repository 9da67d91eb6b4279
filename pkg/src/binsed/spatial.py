"""Spatial and pitch-related features: GCC-PHAT, TDOA, dominant frequencies, ACR.

All extractors share the 20 ms centered framing grid of :mod:`binsed.dsp`,
so every output has the same number of frames T for a given clip.

Lag sign convention: a positive lag means channel 1 leads channel 2, i.e.
``ch2[n] = ch1[n - d]`` peaks at ``+d``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import kernels
from .audio_io import DEFAULT_RATE, AudioClip
from .dsp import FramingPlan, MelFilterbank, StftFrame, _check_rate, build_mel_filterbank, frame_signal
from .errors import ChannelCountError, ValidationError

TAU_MAX = 30
PHAT_EPS = 1e-12
RESOLUTIONS_S = (0.120, 0.240, 0.480)
TDOA_BANDS = 5
GCC_LAGS = np.arange(-29, 31)
DOMFREQ_RANGE = (100.0, 4000.0)
DOMFREQ_THRESHOLD = 0.01
ACR_LAGS = np.arange(10, 410)

_CHUNK_FRAMES = 64


@dataclass(frozen=True)
class GccSpectrum:
    values: np.ndarray  # (B, 2*tau_max+1), lags ascending
    tau_max: int

    @property
    def lags(self) -> np.ndarray:
        return np.arange(-self.tau_max, self.tau_max + 1)


@lru_cache(maxsize=16)
def _lag_basis(fft_size: int, tau_max: int):
    """Weighted cos/sin tables so that a one-sided sum equals the full N-point sum."""
    k = np.arange(fft_size // 2 + 1)[:, None]
    lags = np.arange(-tau_max, tau_max + 1)[None, :]
    theta = 2.0 * np.pi * k * lags / fft_size
    w = np.full((k.size, 1), 2.0)
    w[0] = w[-1] = 1.0
    cos_t, sin_t = w * np.cos(theta), w * np.sin(theta)
    cos_t.setflags(write=False)
    sin_t.setflags(write=False)
    return cos_t, sin_t


def phat_cross_spectrum(X1: np.ndarray, X2: np.ndarray, eps: float = PHAT_EPS) -> np.ndarray:
    cross = np.conj(X1) * X2
    return cross / np.maximum(np.abs(X1) * np.abs(X2), eps)


def gcc_phat_batch(X1: np.ndarray, X2: np.ndarray, bank: MelFilterbank, tau_max: int = TAU_MAX) -> np.ndarray:
    """Band-wise GCC-PHAT for a block of frames.

    Args:
        X1, X2: (T, N/2+1) one-sided spectra of the two channels.
        bank: band responses over the same N/2+1 bins.
        tau_max: largest lag magnitude in samples.

    Returns:
        (T, B, 2*tau_max+1) real correlation values, lags ascending.
    """
    N = bank.fft_size
    if X1.shape != X2.shape or X1.shape[-1] != N // 2 + 1:
        raise ValidationError(f"spectra shapes {X1.shape}/{X2.shape} do not match FFT size {N}")
    if tau_max >= N // 2:
        raise ValidationError(f"tau_max {tau_max} must be below N/2 = {N // 2}")
    C = phat_cross_spectrum(X1, X2)
    Cr, Ci = np.ascontiguousarray(C.real), np.ascontiguousarray(C.imag)
    cos_t, sin_t = _lag_basis(N, tau_max)
    out = np.empty((C.shape[0], bank.num_bands, 2 * tau_max + 1))
    for b, H in enumerate(bank.band_responses):
        nz = np.flatnonzero(H)
        lo, hi = nz[0], nz[-1] + 1  # supports are contiguous for both filter shapes
        w = H[lo:hi]
        out[:, b, :] = (Cr[:, lo:hi] * w) @ cos_t[lo:hi] - (Ci[:, lo:hi] * w) @ sin_t[lo:hi]
    return out


def gcc_phat(frame_ch1: StftFrame, frame_ch2: StftFrame, bank: MelFilterbank, tau_max: int = TAU_MAX) -> GccSpectrum:
    """GCC-PHAT of one frame pair, per band of ``bank``."""
    if frame_ch1.fft_size != frame_ch2.fft_size:
        raise ValidationError(f"FFT sizes differ: {frame_ch1.fft_size} vs {frame_ch2.fft_size}")
    if bank.fft_size != frame_ch1.fft_size:
        raise ValidationError(f"filterbank built for N={bank.fft_size}, frames use N={frame_ch1.fft_size}")
    X1 = frame_ch1.coefficients[None, :]
    X2 = frame_ch2.coefficients[None, :]
    return GccSpectrum(gcc_phat_batch(X1, X2, bank, tau_max)[0], tau_max)


def _require_binaural(clip: AudioClip, what: str):
    if clip.channels != 2:
        raise ChannelCountError(f"{clip.id or 'clip'}: {what} needs 2 channels, got {clip.channels}")


def _multires_gcc(clip: AudioClip, num_bands: int, tau_max: int, rate: int, reduce):
    """Run band-wise GCC-PHAT at each resolution; ``reduce`` maps (t, B, lags) blocks to features."""
    layers = []
    for window_s in RESOLUTIONS_S:
        plan = FramingPlan.from_seconds(window_s, rate)
        N = plan.fft_size
        bank = build_mel_filterbank(num_bands, N, rate, shape="rectangular")
        f1 = frame_signal(clip.samples[0], plan)
        f2 = frame_signal(clip.samples[1], plan)
        parts = []
        for s in range(0, f1.shape[0], _CHUNK_FRAMES):
            X1 = np.fft.rfft(f1[s:s + _CHUNK_FRAMES], n=N, axis=1)
            X2 = np.fft.rfft(f2[s:s + _CHUNK_FRAMES], n=N, axis=1)
            parts.append(reduce(gcc_phat_batch(X1, X2, bank, tau_max)))
        layers.append(np.concatenate(parts, axis=0))
    return np.stack(layers, axis=-1)


def extract_tdoa(clip: AudioClip, rate: int = DEFAULT_RATE, tau_max: int = TAU_MAX) -> np.ndarray:
    """Per-band TDOA in samples, shape (T, 5, 3); layers are 120/240/480 ms."""
    _check_rate(clip, rate)
    _require_binaural(clip, "TDOA")

    def pick(R):
        t, b, n = R.shape
        return kernels.pick_lag(np.ascontiguousarray(R.reshape(t * b, n)), tau_max).reshape(t, b).astype(np.float64)

    return _multires_gcc(clip, TDOA_BANDS, tau_max, rate, pick)


def extract_gcc_features(clip: AudioClip, rate: int = DEFAULT_RATE) -> np.ndarray:
    """Full-band GCC-PHAT at lags -29..+30, shape (T, 60, 3)."""
    _check_rate(clip, rate)
    _require_binaural(clip, "GCC-PHAT")
    idx = GCC_LAGS + TAU_MAX
    return _multires_gcc(clip, 1, TAU_MAX, rate, lambda R: R[:, 0, idx])


def extract_dom_freq(
    clip: AudioClip,
    rate: int = DEFAULT_RATE,
    threshold: float = DOMFREQ_THRESHOLD,
    freq_range: tuple[float, float] = DOMFREQ_RANGE,
    n_peaks: int = 3,
    window_s: float = 0.040,
) -> np.ndarray:
    """Three strongest interpolated spectral peaks per channel.

    Returns (T, 3, 2*channels) with layers ``[freq ch1, freq ch2, mag ch1,
    mag ch2]`` (``[freq, mag]`` for mono). Frequencies in Hz, magnitudes
    linear; missing peaks are encoded as 0 Hz / 0 magnitude.
    """
    _check_rate(clip, rate)
    plan = FramingPlan.from_seconds(window_s, rate)
    N = plan.fft_size
    lo_pos, hi_pos = freq_range[0] * N / rate, freq_range[1] * N / rate
    k_lo, k_hi = int(np.ceil(lo_pos)), int(np.floor(hi_pos))
    tiny = np.finfo(np.float64).tiny
    freqs, mags = [], []
    for ch in clip.samples:
        mag = np.abs(np.fft.rfft(frame_signal(ch, plan), n=N, axis=1))
        logmag = np.log(np.maximum(mag, tiny))
        pos, val = kernels.dominant_peaks(logmag, k_lo, k_hi, np.log(threshold), n_peaks, lo_pos, hi_pos)
        found = np.isfinite(val)
        freqs.append(np.where(found, pos * rate / N, 0.0))
        mags.append(np.where(found, np.exp(np.where(found, val, 0.0)), 0.0))
    return np.stack(freqs + mags, axis=-1)


def extract_acr(clip: AudioClip, rate: int = DEFAULT_RATE, window_s: float = 0.040, lags=ACR_LAGS) -> np.ndarray:
    """Normalized autocorrelation at lags 10..409 per channel, shape (T, 400, 2)."""
    _check_rate(clip, rate)
    _require_binaural(clip, "ACR")
    plan = FramingPlan.from_seconds(window_s, rate)
    lags = np.asarray(lags)
    layers = []
    for ch in clip.samples:
        r = kernels.autocorr(np.ascontiguousarray(frame_signal(ch, plan)), int(lags[-1]))
        r0 = r[:, :1]
        safe = np.where(r0 > 0, r0, 1.0)
        layers.append(np.where(r0 > 0, r[:, lags] / safe, 0.0))
    return np.stack(layers, axis=-1)
