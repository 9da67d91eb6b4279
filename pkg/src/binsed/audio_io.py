"""Audio, annotation and manifest I/O.

WAV files are read with a small RIFF parser (PCM16 only); annotations are
tab-separated ``onset offset label`` lines; the manifest is an explicit
index of ``audio annotation context fold`` lines.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ChannelCountError,
    FormatError,
    ParseError,
    RateMismatchError,
    SedIOError,
    UnknownClassError,
    UnsupportedFormatError,
    ValidationError,
)

DEFAULT_RATE = 44100
HOP_SECONDS = 0.02
_PCM = 0x0001
_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True)
class AudioClip:
    """Multichannel audio, ``samples`` shaped (channels, n) in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int
    id: str = ""

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim == 1:
            s = s[None, :]
        if s.ndim != 2 or s.shape[0] not in (1, 2):
            raise ChannelCountError(f"expected 1 or 2 channels, got array of shape {s.shape}")
        if self.sample_rate <= 0:
            raise ValidationError(f"sample rate must be positive, got {self.sample_rate}")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.num_samples / self.sample_rate


@dataclass(frozen=True)
class EventAnnotation:
    onset: float
    offset: float
    label: str

    def __post_init__(self):
        if self.onset < 0:
            raise ValidationError(f"onset must be >= 0, got {self.onset}")
        if not self.offset > self.onset:
            raise ValidationError(f"offset {self.offset} must exceed onset {self.onset}")
        if not self.label:
            raise ValidationError("event label must be non-empty")


@dataclass(frozen=True)
class ManifestEntry:
    audio_path: str
    annotation_path: str
    context: str
    fold: int


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    class_list: tuple[str, ...]
    contexts: tuple[str, ...]
    root: str = "."

    @property
    def folds(self) -> list[int]:
        return sorted({e.fold for e in self.entries})


@dataclass(frozen=True)
class EventRoll:
    """Binary frame activity matrix, ``values`` shaped (T, K)."""

    values: np.ndarray
    hop: float = HOP_SECONDS
    class_list: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.uint8)
        if v.ndim != 2:
            raise ValidationError(f"event roll must be 2-D, got shape {v.shape}")
        if self.class_list and v.shape[1] != len(self.class_list):
            raise ValidationError(f"roll has {v.shape[1]} columns but {len(self.class_list)} classes")
        if v.size and v.max() > 1:
            raise ValidationError("event roll entries must be 0 or 1")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "class_list", tuple(self.class_list))


# ---------------------------------------------------------------------------
# WAV


def read_wav(path: str | os.PathLike, expected_rate: int | None = DEFAULT_RATE) -> AudioClip:
    """Read a PCM16 RIFF/WAVE file.

    Args:
        path: file to read.
        expected_rate: reject files at any other rate; ``None`` accepts all.

    Raises:
        FormatError: the RIFF structure is malformed.
        UnsupportedFormatError: not 16-bit PCM, or more than 2 channels.
        RateMismatchError: sample rate differs from ``expected_rate``.
    """
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise SedIOError(f"cannot read {path}: {exc}") from exc

    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4:pos + 8])
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise FormatError(f"{path}: chunk {chunk_id!r} truncated")
        if chunk_id == b"fmt ":
            if size < 16:
                raise FormatError(f"{path}: fmt chunk too short ({size} bytes)")
            fmt = struct.unpack("<HHIIHH", body[:16])
            if fmt[0] == _EXTENSIBLE and size >= 26:
                # sub-format GUID starts with the real format tag
                (sub,) = struct.unpack("<H", body[24:26])
                fmt = (sub,) + fmt[1:]
        elif chunk_id == b"data":
            payload = body
        pos += 8 + size + (size & 1)

    if fmt is None:
        raise FormatError(f"{path}: missing fmt chunk")
    if payload is None:
        raise FormatError(f"{path}: missing data chunk")

    tag, channels, rate, _, block_align, bits = fmt
    if tag != _PCM or bits != 16:
        raise UnsupportedFormatError(f"{path}: only 16-bit PCM is supported (format tag {tag}, {bits} bits)")
    if channels not in (1, 2):
        raise UnsupportedFormatError(f"{path}: {channels} channels; only mono or stereo supported")
    if block_align != 2 * channels:
        raise FormatError(f"{path}: block align {block_align} inconsistent with {channels} channels")
    if expected_rate is not None and rate != expected_rate:
        raise RateMismatchError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz (no resampling)")

    n = len(payload) // block_align
    ints = np.frombuffer(payload[: n * block_align], dtype="<i2").reshape(n, channels)
    samples = ints.T.astype(np.float64) / 32768.0
    return AudioClip(samples, rate, str(path))


def write_wav(path: str | os.PathLike, clip: AudioClip) -> None:
    """Write ``clip`` as PCM16; amplitudes are scaled by 32768 and clipped."""
    ints = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    raw = ints.T.tobytes()
    channels = clip.channels
    header = b"RIFF" + struct.pack("<I", 36 + len(raw)) + b"WAVE"
    header += b"fmt " + struct.pack(
        "<IHHIIHH", 16, _PCM, channels, clip.sample_rate, clip.sample_rate * 2 * channels, 2 * channels, 16
    )
    header += b"data" + struct.pack("<I", len(raw))
    with open(path, "wb") as fh:
        fh.write(header + raw)


# ---------------------------------------------------------------------------
# annotations and manifest


def parse_annotations(path: str | os.PathLike) -> list[EventAnnotation]:
    """Parse ``onset<TAB>offset<TAB>label`` lines; blank lines are skipped."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise SedIOError(f"cannot read annotation file {path}: {exc}") from exc

    events = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = line.rstrip("\r").split("\t")
        if len(parts) != 3:
            raise ParseError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
        try:
            onset, offset = float(parts[0]), float(parts[1])
        except ValueError:
            raise ParseError(f"{path}:{lineno}: non-numeric onset/offset in {line!r}") from None
        if not (math.isfinite(onset) and math.isfinite(offset)):
            raise ParseError(f"{path}:{lineno}: non-finite time in {line!r}")
        label = parts[2].strip()
        try:
            events.append(EventAnnotation(onset, offset, label))
        except ValidationError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from None
    return events


def write_annotations(path: str | os.PathLike, events: list[EventAnnotation]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ev in events:
            fh.write(f"{ev.onset:.6f}\t{ev.offset:.6f}\t{ev.label}\n")


def _resolve(root: str, p: str) -> str:
    return p if os.path.isabs(p) else os.path.join(root, p)


def build_manifest(root: str | os.PathLike, index_name: str = "manifest.tsv") -> DatasetManifest:
    """Load ``root/index_name`` and scan every annotation file for labels."""
    root = os.fspath(root)
    index_path = os.path.join(root, index_name)
    try:
        with open(index_path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise SedIOError(f"cannot read manifest index {index_path}: {exc}") from exc

    entries = []
    seen = set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ParseError(f"{index_path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
        audio, ann, context, fold_s = (p.strip() for p in parts)
        try:
            fold = int(fold_s)
        except ValueError:
            raise ParseError(f"{index_path}:{lineno}: fold {fold_s!r} is not an integer") from None
        if audio in seen:
            raise ValidationError(f"{index_path}:{lineno}: duplicate audio path {audio}")
        seen.add(audio)
        for p in (audio, ann):
            if not os.path.exists(_resolve(root, p)):
                raise SedIOError(f"{index_path}:{lineno}: referenced file not found: {p}")
        entries.append(ManifestEntry(audio, ann, context, fold))

    folds = sorted({e.fold for e in entries})
    if folds and folds != list(range(1, folds[-1] + 1)):
        raise ValidationError(f"{index_path}: fold indices {folds} are not contiguous from 1")

    labels = set()
    for e in entries:
        labels.update(ev.label for ev in parse_annotations(_resolve(root, e.annotation_path)))
    contexts = tuple(dict.fromkeys(e.context for e in entries))
    return DatasetManifest(tuple(entries), tuple(sorted(labels)), contexts, root)


def write_manifest(root: str | os.PathLike, entries: list[ManifestEntry], index_name: str = "manifest.tsv") -> None:
    with open(os.path.join(root, index_name), "w", encoding="utf-8", newline="\n") as fh:
        for e in entries:
            fh.write(f"{e.audio_path}\t{e.annotation_path}\t{e.context}\t{e.fold}\n")


def num_frames(duration: float, hop: float = HOP_SECONDS) -> int:
    # round before ceil so 1.0 / 0.02 does not become 51 through float noise
    return int(math.ceil(round(duration / hop, 9)))


def annotations_to_roll(events, duration: float, class_list, hop: float = HOP_SECONDS) -> EventRoll:
    """Render events as a (T, K) activity matrix with half-open frame overlap.

    Frame ``t`` covers ``[t*hop, (t+1)*hop)`` and is active for class ``k``
    when that interval overlaps ``[onset, offset)`` of an event labelled ``k``.
    """
    if hop <= 0:
        raise ValidationError(f"hop must be positive, got {hop}")
    class_list = tuple(class_list)
    index = {c: i for i, c in enumerate(class_list)}
    T = num_frames(duration, hop)
    roll = np.zeros((T, len(class_list)), dtype=np.uint8)
    for ev in events:
        if ev.label not in index:
            raise UnknownClassError(f"event label {ev.label!r} not in class list {list(class_list)}")
        # overlap: t*hop < offset and (t+1)*hop > onset
        first = int(math.floor(round(ev.onset / hop, 9)))
        last = int(math.ceil(round(ev.offset / hop, 9))) - 1
        first, last = max(first, 0), min(last, T - 1)
        if first <= last:
            roll[first:last + 1, index[ev.label]] = 1
    return EventRoll(roll, hop, class_list)


def roll_to_events(roll: EventRoll) -> list[EventAnnotation]:
    """Run-length decode active frames back into events (frame resolution)."""
    events = []
    v = roll.values
    for k, label in enumerate(roll.class_list):
        col = np.concatenate([[0], v[:, k].astype(np.int8), [0]])
        edges = np.flatnonzero(np.diff(col))
        for start, stop in zip(edges[::2], edges[1::2]):
            events.append(EventAnnotation(start * roll.hop, stop * roll.hop, label))
    events.sort(key=lambda e: (e.onset, e.label))
    return events
