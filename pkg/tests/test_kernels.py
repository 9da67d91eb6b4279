import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from binsed import kernels


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 80)),
              elements=st.floats(-1, 1, allow_nan=False)), st.integers(0, 100))
def test_autocorr_paths_agree(frames, max_lag):
    np.testing.assert_allclose(kernels.autocorr_numba(frames, max_lag),
                               kernels.autocorr_numpy(frames, max_lag), atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.just(21)),
              elements=st.sampled_from([-2.0, -1.0, 0.0, 0.5, 1.0, 2.0])))
def test_pick_lag_paths_agree_including_ties(values):
    a = kernels.pick_lag_numba(values, 10)
    b = kernels.pick_lag_numpy(values, 10)
    np.testing.assert_array_equal(a, b)


def test_pick_lag_tie_rules():
    v = np.zeros((3, 7))
    v[0, [1, 5]] = 1.0  # lags -2 and +2 tie
    v[1, [2, 6]] = -1.0  # lags -1 and +3 tie in magnitude
    for fn in (kernels.pick_lag_numba, kernels.pick_lag_numpy):
        np.testing.assert_array_equal(fn(v, 3), [-2, -1, 0])


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.just(64)),
              elements=st.floats(-20, 5, allow_nan=False)))
def test_dominant_peaks_paths_agree(logmag):
    a = kernels.dominant_peaks_numba(logmag, 3, 50, np.log(0.01), 3, 2.5, 50.5)
    b = kernels.dominant_peaks_numpy(logmag, 3, 50, np.log(0.01), 3, 2.5, 50.5)
    np.testing.assert_allclose(a[0], b[0], atol=1e-12)
    np.testing.assert_array_equal(a[1], b[1])


@pytest.mark.parametrize("p", [1, 2, 3, 5])
def test_maxpool_paths_agree(p, rng):
    x = rng.standard_normal((2, 3, 15, 4)).astype(np.float32)
    o1, a1 = kernels.maxpool_forward_numba(x, p)
    o2, a2 = kernels.maxpool_forward_numpy(x, p)
    np.testing.assert_array_equal(o1, o2)
    np.testing.assert_array_equal(a1, a2)
    d = rng.standard_normal(o1.shape).astype(np.float32)
    np.testing.assert_array_equal(kernels.maxpool_backward_numba(d, a1, p), kernels.maxpool_backward_numpy(d, a2, p))


def test_env_flag_selects_numpy_path():
    code = ("import binsed.kernels as k, binsed._accel as a;"
            "print(a.USING_NUMBA, k.pick_lag is k.pick_lag_numpy, k.autocorr is k.autocorr_numpy)")
    env = dict(os.environ, BINSED_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["False", "True", "True"]


@pytest.mark.slow
def test_features_identical_without_numba(tmp_path):
    # the whole extraction path gives the same volumes on both kernel sets
    code = (
        "import sys, numpy as np\n"
        "from binsed.audio_io import AudioClip\n"
        "from binsed.volumes import extract_volume\n"
        "rng = np.random.default_rng(0)\n"
        "clip = AudioClip(rng.standard_normal((2, 22050)) * 0.1, 44100)\n"
        "out = {ft: extract_volume(clip, ft).data for ft in ('tdoa', 'domfreq', 'acr')}\n"
        "np.savez(sys.argv[1], **out)\n"
    )
    paths = []
    for flag in ("0", "1"):
        p = tmp_path / f"f{flag}.npz"
        env = dict(os.environ, BINSED_DISABLE_NUMBA=flag)
        subprocess.run([sys.executable, "-c", code, str(p)], env=env, check=True)
        paths.append(np.load(p))
    for ft in ("tdoa", "domfreq", "acr"):
        np.testing.assert_allclose(paths[0][ft], paths[1][ft], atol=1e-9)
