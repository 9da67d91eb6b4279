import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from binsed.audio_io import (
    AudioClip,
    EventAnnotation,
    ManifestEntry,
    annotations_to_roll,
    build_manifest,
    num_frames,
    parse_annotations,
    read_wav,
    roll_to_events,
    write_annotations,
    write_manifest,
    write_wav,
)
from binsed.errors import (
    FormatError,
    ParseError,
    RateMismatchError,
    SedIOError,
    UnsupportedFormatError,
    ValidationError,
)


def test_wav_roundtrip_is_exact_on_pcm_grid(tmp_path, rng):
    q = rng.integers(-32768, 32768, size=(2, 1000)) / 32768.0
    path = tmp_path / "a.wav"
    write_wav(path, AudioClip(q, 44100))
    clip = read_wav(path)
    assert clip.samples.shape == (2, 1000)
    np.testing.assert_array_equal(clip.samples, q)
    assert clip.duration == pytest.approx(1000 / 44100)


def _raw_wav(data_bytes, channels=2, rate=44100, bits=16, fmt=1, extensible=False):
    block = channels * bits // 8
    if extensible:
        fmt_body = struct.pack("<HHIIHH", 0xFFFE, channels, rate, rate * block, block, bits)
        fmt_body += struct.pack("<HHI", 22, bits, 3) + struct.pack("<H", fmt) + b"\x00" * 14
    else:
        fmt_body = struct.pack("<HHIIHH", fmt, channels, rate, rate * block, block, bits)
    chunks = b"fmt " + struct.pack("<I", len(fmt_body)) + fmt_body
    chunks += b"LIST" + struct.pack("<I", 4) + b"INFO"  # unknown chunk, skipped
    chunks += b"data" + struct.pack("<I", len(data_bytes)) + data_bytes
    return b"RIFF" + struct.pack("<I", 4 + len(chunks)) + b"WAVE" + chunks


def test_reads_extensible_and_skips_unknown_chunks(tmp_path):
    samples = np.array([[0, 16384], [-32768, 32767]], dtype="<i2")  # frames x channels
    p = tmp_path / "x.wav"
    p.write_bytes(_raw_wav(samples.tobytes(), extensible=True))
    clip = read_wav(p)
    np.testing.assert_array_equal(clip.samples, samples.T / 32768.0)


def test_rejects_float_and_24bit(tmp_path):
    p = tmp_path / "f.wav"
    p.write_bytes(_raw_wav(b"\x00" * 8, fmt=3, bits=32))
    with pytest.raises(UnsupportedFormatError):
        read_wav(p)
    p.write_bytes(_raw_wav(b"\x00" * 12, bits=24))
    with pytest.raises(UnsupportedFormatError):
        read_wav(p)


def test_rate_mismatch_and_channels(tmp_path):
    p = tmp_path / "r.wav"
    p.write_bytes(_raw_wav(b"\x00" * 8, rate=48000))
    with pytest.raises(RateMismatchError):
        read_wav(p)
    assert read_wav(p, expected_rate=None).sample_rate == 48000
    p3 = tmp_path / "c.wav"
    p3.write_bytes(_raw_wav(b"\x00" * 12, channels=3))
    with pytest.raises(UnsupportedFormatError):
        read_wav(p3)


def test_truncated_and_missing(tmp_path):
    p = tmp_path / "t.wav"
    p.write_bytes(_raw_wav(b"\x00" * 8)[:-6])
    with pytest.raises(FormatError):
        read_wav(p)
    with pytest.raises(SedIOError):
        read_wav(tmp_path / "nope.wav")


def test_annotations_roundtrip_and_errors(tmp_path):
    ev = [EventAnnotation(0.5, 1.25, "car"), EventAnnotation(1.0, 3.0, "bird song")]
    p = tmp_path / "a.ann"
    write_annotations(p, ev)
    assert parse_annotations(p) == ev
    p.write_text("0.0\t1.0\tcar\n\n1.0\tx\tcar\n")
    with pytest.raises(ParseError, match=":3:"):
        parse_annotations(p)
    p.write_text("2.0\t1.0\tcar\n")
    with pytest.raises(ValidationError):
        parse_annotations(p)


def test_roll_half_open_overlap():
    roll = annotations_to_roll([EventAnnotation(0.03, 0.06, "a")], 0.1, ("a", "b"))
    assert roll.values.shape == (5, 2)
    # frames [0.02,0.04) and [0.04,0.06) overlap; [0.06,0.08) does not
    np.testing.assert_array_equal(roll.values[:, 0], [0, 1, 1, 0, 0])
    assert roll.values[:, 1].sum() == 0


def test_roll_unknown_class():
    with pytest.raises(ValidationError):
        annotations_to_roll([EventAnnotation(0, 1, "z")], 1.0, ("a",))


def test_num_frames():
    assert num_frames(1.0) == 50
    assert num_frames(1.001) == 51
    assert num_frames(0.06) == 3  # float noise must not add a frame


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 99), st.integers(1, 20), st.sampled_from("ab")), max_size=6))
def test_roll_event_roundtrip(spans):
    # events on the frame grid survive roll -> events -> roll
    ev = [EventAnnotation(s * 0.02, min(s + d, 100) * 0.02, lab) for s, d, lab in spans]
    roll = annotations_to_roll(ev, 2.0, ("a", "b"))
    again = annotations_to_roll(roll_to_events(roll), 2.0, ("a", "b"))
    np.testing.assert_array_equal(roll.values, again.values)


def _corpus(tmp_path, entries):
    (tmp_path / "audio").mkdir()
    (tmp_path / "ann").mkdir()
    for e in entries:
        write_wav(tmp_path / e.audio_path, AudioClip(np.zeros((2, 100)), 44100))
        write_annotations(tmp_path / e.annotation_path, [EventAnnotation(0, 0.001, "x" + e.context)])
    write_manifest(tmp_path, entries)


def test_manifest(tmp_path):
    entries = [ManifestEntry(f"audio/{i}.wav", f"ann/{i}.ann", "ab"[i % 2], i % 2 + 1) for i in range(4)]
    _corpus(tmp_path, entries)
    m = build_manifest(tmp_path)
    assert m.folds == [1, 2]
    assert m.class_list == ("xa", "xb")
    assert m.contexts == ("a", "b")


def test_manifest_errors(tmp_path):
    entries = [ManifestEntry("audio/0.wav", "ann/0.ann", "a", 1), ManifestEntry("audio/1.wav", "ann/1.ann", "a", 3)]
    _corpus(tmp_path, entries)
    with pytest.raises(ValidationError, match="contiguous"):
        build_manifest(tmp_path)
    (tmp_path / "manifest.tsv").write_text("audio/0.wav\tann/0.ann\ta\t1\naudio/0.wav\tann/1.ann\ta\t1\n")
    with pytest.raises(ValidationError, match="duplicate"):
        build_manifest(tmp_path)
    (tmp_path / "manifest.tsv").write_text("audio/9.wav\tann/0.ann\ta\t1\n")
    with pytest.raises(SedIOError, match="audio/9.wav"):
        build_manifest(tmp_path)
