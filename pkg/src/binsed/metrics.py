"""Segment-based F-score and error rate with per-context averaging."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .audio_io import EventRoll
from .errors import ValidationError

SEGMENT_SECONDS = 1.0


@dataclass
class SegmentCounts:
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    n_ref: np.ndarray

    def __post_init__(self):
        for name in ("tp", "fp", "fn", "n_ref"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        if np.any(self.tp > self.n_ref):
            raise ValidationError("TP exceeds N in some segment")

    @classmethod
    def empty(cls) -> "SegmentCounts":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z)

    def __add__(self, other: "SegmentCounts") -> "SegmentCounts":
        # appending segments; pooled sums are what the metrics consume
        return SegmentCounts(
            np.concatenate([self.tp, other.tp]),
            np.concatenate([self.fp, other.fp]),
            np.concatenate([self.fn, other.fn]),
            np.concatenate([self.n_ref, other.n_ref]),
        )

    @property
    def substitutions(self) -> np.ndarray:
        return np.minimum(self.fn, self.fp)

    @property
    def deletions(self) -> np.ndarray:
        return np.maximum(0, self.fn - self.fp)

    @property
    def insertions(self) -> np.ndarray:
        return np.maximum(0, self.fp - self.fn)


def roll_to_segments(roll: EventRoll, segment_length: float = SEGMENT_SECONDS) -> list[frozenset]:
    """Active class set per segment; a class is active if any of its frames is."""
    ratio = segment_length / roll.hop
    per = int(round(ratio))
    if per < 1 or abs(ratio - per) > 1e-9:
        raise ValidationError(f"segment length {segment_length} s is not a multiple of hop {roll.hop} s")
    v = roll.values
    n_seg = -(-v.shape[0] // per)
    sets = []
    for s in range(n_seg):
        active = np.flatnonzero(v[s * per:(s + 1) * per].any(axis=0))
        sets.append(frozenset(roll.class_list[i] if roll.class_list else int(i) for i in active))
    return sets


def count_segments(ref_sets, sys_sets) -> SegmentCounts:
    n = max(len(ref_sets), len(sys_sets))
    ref = list(ref_sets) + [frozenset()] * (n - len(ref_sets))
    sys = list(sys_sets) + [frozenset()] * (n - len(sys_sets))
    tp = [len(r & s) for r, s in zip(ref, sys)]
    fp = [len(s - r) for r, s in zip(ref, sys)]
    fn = [len(r - s) for r, s in zip(ref, sys)]
    return SegmentCounts(tp, fp, fn, [len(r) for r in ref])


def count_rolls(ref: EventRoll, sys: EventRoll, segment_length: float = SEGMENT_SECONDS) -> SegmentCounts:
    """Vectorized equivalent of ``count_segments`` on two rolls with the same classes."""
    if ref.values.shape[1] != sys.values.shape[1]:
        raise ValidationError(f"class counts differ: {ref.values.shape[1]} vs {sys.values.shape[1]}")
    per = int(round(segment_length / ref.hop))
    if per < 1 or abs(segment_length / ref.hop - per) > 1e-9:
        raise ValidationError(f"segment length {segment_length} s is not a multiple of hop {ref.hop} s")
    T = max(ref.values.shape[0], sys.values.shape[0])
    n_seg = -(-T // per)

    def seg(v):
        padded = np.zeros((n_seg * per, v.shape[1]), dtype=bool)
        padded[: v.shape[0]] = v.astype(bool)
        return padded.reshape(n_seg, per, -1).any(axis=1)

    r, s = seg(ref.values), seg(sys.values)
    return SegmentCounts((r & s).sum(1), (s & ~r).sum(1), (r & ~s).sum(1), r.sum(1))


def f_score(counts: SegmentCounts) -> float:
    tp, fp, fn = int(counts.tp.sum()), int(counts.fp.sum()), int(counts.fn.sum())
    den = 2 * tp + fp + fn
    return 2 * tp / den if den else 0.0


def error_rate(counts: SegmentCounts) -> float:
    n = int(counts.n_ref.sum())
    if n == 0:
        raise ValidationError("error rate undefined: reference contains no active events")
    errors = int(counts.substitutions.sum() + counts.deletions.sum() + counts.insertions.sum())
    return errors / n


@dataclass
class MetricReport:
    f: float
    er: float
    s: int = 0
    d: int = 0
    i: int = 0
    n: int = 0
    contexts: dict[str, "MetricReport"] = field(default_factory=dict)
    tag: str = ""

    def to_table(self) -> str:
        head = f"{'context':<24}{'F':>8}{'ER':>8}{'S':>8}{'D':>8}{'I':>8}{'N':>8}"
        rows = [head]
        for name, r in self.contexts.items():
            rows.append(_row(name, r))
        rows.append(_row("overall", self))
        if self.tag:
            rows.insert(0, f"# layering={self.tag}")
        return "\n".join(rows) + "\n"

    def to_keyvalue(self) -> str:
        lines = []
        if self.tag:
            lines.append(f"layering={self.tag}")
        for name, r in self.contexts.items():
            lines += [f"context.{name}.{k}={v}" for k, v in _fields(r)]
        lines += [f"overall.{k}={v}" for k, v in _fields(self)]
        return "\n".join(lines) + "\n"


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else f"{x:.4f}"


def _fields(r: MetricReport):
    return [("F", _fmt(r.f)), ("ER", _fmt(r.er)), ("S", r.s), ("D", r.d), ("I", r.i), ("N", r.n)]


def _row(name: str, r: MetricReport) -> str:
    return f"{name:<24}{_fmt(r.f):>8}{_fmt(r.er):>8}{r.s:>8}{r.d:>8}{r.i:>8}{r.n:>8}"


def report_from_counts(counts: SegmentCounts) -> MetricReport:
    n = int(counts.n_ref.sum())
    er = error_rate(counts) if n else math.nan
    return MetricReport(
        f_score(counts), er, int(counts.substitutions.sum()), int(counts.deletions.sum()),
        int(counts.insertions.sum()), n,
    )


def evaluate_by_context(recordings, contexts: dict[str, str] | None = None,
                        segment_length: float = SEGMENT_SECONDS) -> MetricReport:
    """Pool counts within each context, then average F and ER across contexts.

    Args:
        recordings: mapping ``recording id -> (ref roll, sys roll)`` or
            ``recording id -> SegmentCounts``.
        contexts: ``recording id -> context``; omit for a single context.

    Contexts whose reference holds no events are left out of the ER
    average (with a warning); the overall ER is NaN if all are.
    """
    if contexts is None:
        contexts = {rid: "all" for rid in recordings}
    missing = set(recordings) - set(contexts)
    if missing:
        raise ValidationError(f"recordings without a context: {sorted(missing)}")
    if not recordings:
        raise ValidationError("no recordings to evaluate")

    pooled: dict[str, SegmentCounts] = {}
    for rid, item in recordings.items():
        counts = item if isinstance(item, SegmentCounts) else count_rolls(item[0], item[1], segment_length)
        ctx = contexts[rid]
        pooled[ctx] = pooled.get(ctx, SegmentCounts.empty()) + counts

    sub = {ctx: report_from_counts(c) for ctx, c in pooled.items()}
    ers = [r.er for r in sub.values() if not math.isnan(r.er)]
    if len(ers) < len(sub):
        empty = [ctx for ctx, r in sub.items() if math.isnan(r.er)]
        warnings.warn(f"contexts without reference events excluded from ER average: {empty}", stacklevel=2)
    return MetricReport(
        f=float(np.mean([r.f for r in sub.values()])),
        er=float(np.mean(ers)) if ers else math.nan,
        s=sum(r.s for r in sub.values()),
        d=sum(r.d for r in sub.values()),
        i=sum(r.i for r in sub.values()),
        n=sum(r.n for r in sub.values()),
        contexts=sub,
    )
