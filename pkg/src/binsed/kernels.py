"""Loop-heavy inner kernels, each with a numba and a numpy implementation.

The public names (``autocorr``, ``dominant_peaks``, ``pick_lag``,
``maxpool_forward``, ``maxpool_backward``) dispatch to the numba version
unless ``BINSED_DISABLE_NUMBA`` is set. Both versions are exported with
``_numba`` / ``_numpy`` suffixes so tests and benchmarks can compare them.

``autocorr`` and ``maxpool_backward`` always use numpy: the FFT
autocorrelation beats the direct O(width * lags) loop, and the scatter in the
pooling backward pass is already vectorized. Their numba twins stay as
independent references (see benchmarks/bench_kernels.py).
"""

import numpy as np

from ._accel import USING_NUMBA, njit

# ---------------------------------------------------------------------------
# autocorrelation


@njit
def autocorr_numba(frames, max_lag):
    n_frames, width = frames.shape
    out = np.zeros((n_frames, max_lag + 1))
    for f in range(n_frames):
        x = frames[f]
        for lag in range(min(max_lag, width - 1) + 1):
            acc = 0.0
            for n in range(width - lag):
                acc += x[n] * x[n + lag]
            out[f, lag] = acc
    return out


def autocorr_numpy(frames, max_lag):
    """Biased autocorrelation ``r[l] = sum_n x[n] x[n+l]`` for l = 0..max_lag."""
    frames = np.asarray(frames, dtype=np.float64)
    width = frames.shape[1]
    n = 1 << int(np.ceil(np.log2(width + max_lag + 1)))
    spec = np.fft.rfft(frames, n=n, axis=1)
    r = np.fft.irfft(spec.real**2 + spec.imag**2, n=n, axis=1)[:, : max_lag + 1]
    if max_lag >= width:
        r[:, width:] = 0.0
    return r


# ---------------------------------------------------------------------------
# dominant spectral peaks


@njit
def dominant_peaks_numba(logmag, k_lo, k_hi, log_floor_rel, n_peaks, min_pos, max_pos):
    n_frames = logmag.shape[0]
    pos = np.zeros((n_frames, n_peaks))
    val = np.full((n_frames, n_peaks), -np.inf)
    for f in range(n_frames):
        m = logmag[f]
        frame_max = -np.inf
        for k in range(m.shape[0]):
            if m[k] > frame_max:
                frame_max = m[k]
        floor = frame_max + log_floor_rel
        cand_pos = np.empty(k_hi - k_lo + 1)
        cand_val = np.empty(k_hi - k_lo + 1)
        n_cand = 0
        for k in range(k_lo, k_hi + 1):
            b = m[k]
            if not (b > m[k - 1] and b >= m[k + 1]):
                continue
            a = m[k - 1]
            c = m[k + 1]
            den = a - 2.0 * b + c
            delta = 0.5 * (a - c) / den if den != 0.0 else 0.0
            peak = b - 0.25 * (a - c) * delta
            p = k + delta
            if peak < floor or p < min_pos or p > max_pos:
                continue
            cand_pos[n_cand] = p
            cand_val[n_cand] = peak
            n_cand += 1
        # selection by descending value, ties to the lower bin
        for slot in range(min(n_peaks, n_cand)):
            best = -1
            for j in range(n_cand):
                if cand_val[j] == -np.inf:
                    continue
                if best < 0 or cand_val[j] > cand_val[best]:
                    best = j
            pos[f, slot] = cand_pos[best]
            val[f, slot] = cand_val[best]
            cand_val[best] = -np.inf
    return pos, val


def dominant_peaks_numpy(logmag, k_lo, k_hi, log_floor_rel, n_peaks, min_pos, max_pos):
    """Top ``n_peaks`` parabolically interpolated local maxima per frame.

    Args:
        logmag: (frames, bins) log magnitudes.
        k_lo, k_hi: inclusive bin range searched for peaks (needs 1 <= k_lo,
            k_hi < bins - 1).
        log_floor_rel: peaks below ``frame max + log_floor_rel`` are dropped;
            the max is taken over every bin of the frame, not just the range.
        n_peaks: number of slots per frame.
        min_pos, max_pos: admissible range for the interpolated bin position.

    Returns:
        ``(pos, val)``, each (frames, n_peaks): fractional bin positions and
        interpolated log magnitudes, sorted by descending magnitude. Empty
        slots hold position 0 and value ``-inf``.
    """
    logmag = np.asarray(logmag, dtype=np.float64)
    n_frames = logmag.shape[0]
    a = logmag[:, k_lo - 1:k_hi]
    b = logmag[:, k_lo:k_hi + 1]
    c = logmag[:, k_lo + 1:k_hi + 2]
    is_peak = (b > a) & (b >= c)
    den = a - 2.0 * b + c
    with np.errstate(divide="ignore", invalid="ignore"):
        delta = np.where(den != 0.0, 0.5 * (a - c) / np.where(den != 0.0, den, 1.0), 0.0)
    peak = b - 0.25 * (a - c) * delta
    p = np.arange(k_lo, k_hi + 1)[None, :] + delta
    floor = logmag.max(axis=1, keepdims=True) + log_floor_rel
    keep = is_peak & (peak >= floor) & (p >= min_pos) & (p <= max_pos)
    score = np.where(keep, peak, -np.inf)
    order = np.argsort(-score, axis=1, kind="stable")[:, :n_peaks]
    val = np.take_along_axis(score, order, axis=1)
    pos = np.where(np.isfinite(val), np.take_along_axis(p, order, axis=1), 0.0)
    if val.shape[1] < n_peaks:
        pad = n_peaks - val.shape[1]
        val = np.pad(val, ((0, 0), (0, pad)), constant_values=-np.inf)
        pos = np.pad(pos, ((0, 0), (0, pad)))
    return pos.reshape(n_frames, n_peaks), val.reshape(n_frames, n_peaks)


# ---------------------------------------------------------------------------
# lag picking


def lag_priority(tau_max):
    """Lags ordered by tie-break preference: 0, -1, +1, -2, +2, ..."""
    order = [0]
    for d in range(1, tau_max + 1):
        order += [-d, d]
    return np.array(order, dtype=np.int64)


@njit
def pick_lag_numba(values, tau_max):
    # values: (..., 2*tau_max+1) over lags -tau_max..tau_max, flattened to 2-D
    n = values.shape[0]
    out = np.zeros(n, dtype=np.int64)
    for i in range(n):
        best = 0
        best_v = abs(values[i, tau_max])
        for d in range(1, tau_max + 1):
            v = abs(values[i, tau_max - d])
            if v > best_v:
                best_v = v
                best = -d
            v = abs(values[i, tau_max + d])
            if v > best_v:
                best_v = v
                best = d
        out[i] = best
    return out


def pick_lag_numpy(values, tau_max):
    """argmax of ``|values|`` over the lag axis, ties to smallest |lag| then negative."""
    prio = lag_priority(tau_max)
    reordered = np.abs(values[:, prio + tau_max])
    return prio[np.argmax(reordered, axis=1)]


# ---------------------------------------------------------------------------
# max pooling over the feature axis of (B, T, L, F)


@njit
def maxpool_forward_numba(x, p):
    B, T, L, F = x.shape
    Lo = L // p
    out = np.empty((B, T, Lo, F), dtype=x.dtype)
    arg = np.empty((B, T, Lo, F), dtype=np.int8)
    for b in range(B):
        for t in range(T):
            for j in range(Lo):
                for f in range(F):
                    best = x[b, t, j * p, f]
                    bi = 0
                    for q in range(1, p):
                        v = x[b, t, j * p + q, f]
                        if v > best:
                            best = v
                            bi = q
                    out[b, t, j, f] = best
                    arg[b, t, j, f] = bi
    return out, arg


def maxpool_forward_numpy(x, p):
    B, T, L, F = x.shape
    w = x[:, :, : (L // p) * p].reshape(B, T, L // p, p, F)
    arg = np.argmax(w, axis=3).astype(np.int8)
    out = np.take_along_axis(w, arg[:, :, :, None, :].astype(np.intp), axis=3)[:, :, :, 0, :]
    return out, arg


@njit
def maxpool_backward_numba(dout, arg, p):
    B, T, Lo, F = dout.shape
    dx = np.zeros((B, T, Lo * p, F), dtype=dout.dtype)
    for b in range(B):
        for t in range(T):
            for j in range(Lo):
                for f in range(F):
                    dx[b, t, j * p + arg[b, t, j, f], f] = dout[b, t, j, f]
    return dx


def maxpool_backward_numpy(dout, arg, p):
    B, T, Lo, F = dout.shape
    onehot = arg[:, :, :, None, :] == np.arange(p, dtype=np.int8)[None, None, None, :, None]
    return (onehot * dout[:, :, :, None, :]).reshape(B, T, Lo * p, F)


# slower under numba on the benchmark inputs, so numpy in both modes
autocorr = autocorr_numpy
maxpool_backward = maxpool_backward_numpy

if USING_NUMBA:
    dominant_peaks = dominant_peaks_numba
    pick_lag = pick_lag_numba
    maxpool_forward = maxpool_forward_numba
else:
    dominant_peaks = dominant_peaks_numpy
    pick_lag = pick_lag_numpy
    maxpool_forward = maxpool_forward_numpy
