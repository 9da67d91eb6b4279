"""Time each kernel on its numba and numpy paths.

    python3 benchmarks/bench_kernels.py [--repeat N]

Inputs are sized like one 30 s recording at 44.1 kHz (1500 frames).
The first numba call (compilation) is excluded from the timings.
"""

import argparse
import timeit

import numpy as np

from binsed import kernels
from binsed._accel import USING_NUMBA


def cases(rng):
    frames = rng.standard_normal((1500, 1764))
    logmag = np.log(np.abs(rng.standard_normal((1500, 1025))) + 1e-3)
    lags = rng.standard_normal((1500 * 5, 61))
    x = rng.standard_normal((32, 100, 40, 100)).astype(np.float32)
    pooled, arg = kernels.maxpool_forward_numpy(x, 2)
    return {
        "autocorr": (lambda k: k(frames, 409), "autocorr"),
        "dominant_peaks": (lambda k: k(logmag, 5, 186, np.log(0.01), 3, 4.6, 185.8), "dominant_peaks"),
        "pick_lag": (lambda k: k(lags, 30), "pick_lag"),
        "maxpool_forward": (lambda k: k(x, 2), "maxpool_forward"),
        "maxpool_backward": (lambda k: k(pooled, arg, 2), "maxpool_backward"),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not USING_NUMBA:
        print("numba disabled (BINSED_DISABLE_NUMBA set or numba missing); numba column runs uncompiled")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<18}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}{'used':>8}")
    for name, (call, base) in cases(rng).items():
        nb = getattr(kernels, f"{base}_numba")
        npy = getattr(kernels, f"{base}_numpy")
        call(nb)  # compile
        t_nb = min(timeit.repeat(lambda: call(nb), number=1, repeat=args.repeat)) * 1e3
        t_np = min(timeit.repeat(lambda: call(npy), number=1, repeat=args.repeat)) * 1e3
        used = "numba" if getattr(kernels, base) is nb else "numpy"
        print(f"{name:<18}{t_nb:>12.1f}{t_np:>12.1f}{t_np / t_nb:>9.1f}x{used:>8}")


if __name__ == "__main__":
    main()
