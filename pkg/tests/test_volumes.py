import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from binsed.audio_io import AudioClip
from binsed.errors import FormatError, SedIOError, ValidationError
from binsed.volumes import (
    BINAURAL_SHAPES,
    FEATURE_TYPES,
    FeatureVolume,
    apply_normalizer,
    concat_channels,
    denormalize,
    extract_volume,
    fit_normalizer,
    read_volume,
    stack_channels,
    to_monaural,
    volume_to_concat,
    write_volume,
)


def test_extractor_shapes_share_T(rng):
    clip = AudioClip(rng.standard_normal((2, 44100)) * 0.1, 44100)
    shapes = {ft: extract_volume(clip, ft).shape for ft in FEATURE_TYPES}
    assert {s[0] for s in shapes.values()} == {50}
    for ft, s in shapes.items():
        assert s[1:] == BINAURAL_SHAPES[ft]


def test_stack_and_concat(rng):
    a, b = rng.standard_normal((7, 5)), rng.standard_normal((7, 5))
    v = stack_channels([a, b])
    assert v.shape == (7, 5, 2)
    c = concat_channels([a, b])
    assert c.shape == (7, 10)
    np.testing.assert_array_equal(c[:, 5:], b)
    with pytest.raises(ValidationError):
        stack_channels([a, b[:, :4]])


@settings(max_examples=30, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 8), st.integers(1, 3)),
              elements=st.floats(-10, 10, width=32)))
def test_concat_is_a_rearrangement(data):
    v = FeatureVolume(data, "mel")
    c = volume_to_concat(v)
    T, L, C = data.shape
    assert c.shape == (T, C * L, 1)
    # same multiset of values per frame
    for t in range(T):
        np.testing.assert_array_equal(np.sort(c.data[t].ravel()), np.sort(data[t].ravel()))
    np.testing.assert_array_equal(c.data[:, L:2 * L, 0] if C > 1 else c.data[:, :L, 0], data[:, :, min(1, C - 1)])


def test_monaural():
    v = FeatureVolume(np.arange(12, dtype=float).reshape(2, 3, 2), "mel")
    np.testing.assert_array_equal(to_monaural(v).data[..., 0], v.data.mean(axis=2))


def test_normalizer_fit_apply_invert(rng):
    vols = [FeatureVolume(rng.normal(3.0, 2.0, (n, 4, 2)), "mel") for n in (10, 25, 7)]
    st_ = fit_normalizer(vols)
    allv = np.concatenate([v.data for v in vols])
    np.testing.assert_allclose(st_.mean, allv.mean(axis=0))
    np.testing.assert_allclose(st_.std, allv.std(axis=0))
    z = np.concatenate([apply_normalizer(v, st_).data for v in vols])
    np.testing.assert_allclose(z.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(z.std(axis=0), 1, atol=1e-12)
    back = denormalize(apply_normalizer(vols[0], st_), st_)
    np.testing.assert_allclose(back.data, vols[0].data)


def test_normalizer_constant_cell_is_finite():
    v = FeatureVolume(np.ones((5, 2, 1)), "tdoa")
    st_ = fit_normalizer([v])
    assert np.all(np.isfinite(apply_normalizer(v, st_).data))
    with pytest.raises(ValidationError):
        fit_normalizer([])


def test_volume_file_roundtrip(tmp_path, rng):
    v = FeatureVolume(rng.standard_normal((9, 5, 3)).astype(np.float32), "tdoa")
    p = tmp_path / "v.sedf"
    write_volume(p, v)
    w = read_volume(p)
    assert w.feature_type == "tdoa" and w.hop == pytest.approx(0.02)
    np.testing.assert_array_equal(w.data, v.data)
    raw = p.read_bytes()
    assert raw[:4] == b"SEDF" and len(raw) == 24 + 9 * 5 * 3 * 4


def test_volume_file_errors(tmp_path):
    p = tmp_path / "v.sedf"
    write_volume(p, FeatureVolume(np.zeros((2, 2, 2), np.float32), "mel"))
    raw = p.read_bytes()
    p.write_bytes(raw[:-3])
    with pytest.raises(SedIOError):
        read_volume(p)
    p.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        read_volume(p)
    p.write_bytes(raw[:4] + b"\x09\x00" + raw[6:])
    with pytest.raises(FormatError):
        read_volume(p)
    with pytest.raises(SedIOError):
        read_volume(tmp_path / "missing.sedf")


def test_unknown_type():
    with pytest.raises(ValidationError):
        FeatureVolume(np.zeros((1, 1, 1)), "mfcc")
    with pytest.raises(ValidationError):
        extract_volume(AudioClip(np.zeros((2, 10)), 44100), "mfcc")
