"""Sequence batching, the training loop with early stopping, and prediction."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ..audio_io import HOP_SECONDS, EventRoll
from ..errors import ValidationError
from ..metrics import evaluate_by_context
from .layers import bce_loss
from .model import CBRNN
from .optim import AdamConfig, AdamState, adam_step

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    sequence_length: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dropout: float = 0.5
    patience: int = 50
    max_epochs: int = 200
    seed: int = 0
    threshold: float = 0.5
    min_delta: float = 1e-4

    def __post_init__(self):
        if self.sequence_length <= 0 or self.batch_size <= 0:
            raise ValidationError("sequence_length and batch_size must be positive")
        if not 0 <= self.dropout < 1:
            raise ValidationError(f"dropout must be in [0, 1), got {self.dropout}")
        if not 0 < self.threshold < 1:
            raise ValidationError(f"threshold must be in (0, 1), got {self.threshold}")

    @property
    def adam(self) -> AdamConfig:
        return AdamConfig(self.lr, self.beta1, self.beta2, self.eps)


@dataclass
class Recording:
    """Normalized feature volumes plus frame targets for one audio file."""

    id: str
    context: str
    volumes: dict[str, np.ndarray]
    targets: np.ndarray  # (T, K) binary

    @property
    def T(self) -> int:
        return self.targets.shape[0]


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    f: float
    er: float


@dataclass
class History:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0

    def to_table(self) -> str:
        lines = [f"{'epoch':>6}{'train_loss':>14}{'val_F':>10}{'val_ER':>10}"]
        for r in self.records:
            er = "nan" if math.isnan(r.er) else f"{r.er:.4f}"
            lines.append(f"{r.epoch:>6}{r.loss:>14.6f}{r.f:>10.4f}{er:>10}")
        return "\n".join(lines) + "\n"


def _chunks(T, seq_len):
    return [(s, min(s + seq_len, T)) for s in range(0, T, seq_len)]


def make_sequences(recordings, seq_len):
    """Cut recordings into non-overlapping ``seq_len`` chunks; the last chunk is zero-padded.

    Returns ``(inputs, targets, mask)`` with inputs a dict of (S, seq_len, L, C)
    arrays, targets (S, seq_len, K) and mask (S, seq_len) marking real frames.
    """
    if not recordings:
        raise ValidationError("no recordings to build sequences from")
    types = list(recordings[0].volumes)
    inputs = {ft: [] for ft in types}
    targets, masks = [], []
    for rec in recordings:
        for a, b in _chunks(rec.T, seq_len):
            n = b - a
            for ft in types:
                v = rec.volumes[ft]
                chunk = np.zeros((seq_len,) + v.shape[1:], dtype=np.float32)
                chunk[:n] = v[a:b]
                inputs[ft].append(chunk)
            y = np.zeros((seq_len, rec.targets.shape[1]), dtype=np.float32)
            y[:n] = rec.targets[a:b]
            m = np.zeros(seq_len, dtype=np.float32)
            m[:n] = 1.0
            targets.append(y)
            masks.append(m)
    return {ft: np.stack(v) for ft, v in inputs.items()}, np.stack(targets), np.stack(masks)


def predict_proba(model: CBRNN, volumes: dict[str, np.ndarray], seq_len: int = 100, batch_size: int = 32):
    """Frame probabilities (T, K) for a whole recording, processed in independent chunks."""
    Ts = {v.shape[0] for v in volumes.values()}
    if len(Ts) != 1:
        raise ValidationError(f"feature volumes disagree on T: {sorted(Ts)}")
    T = Ts.pop()
    rec = Recording("", "", volumes, np.zeros((T, len(model.arch.class_list))))
    inputs, _, _ = make_sequences([rec], seq_len)
    outs = []
    S = next(iter(inputs.values())).shape[0]
    for s in range(0, S, batch_size):
        outs.append(model.forward({ft: x[s:s + batch_size] for ft, x in inputs.items()}, train=False))
    return np.concatenate(outs).reshape(-1, len(model.arch.class_list))[:T]


def predict(model: CBRNN, volumes: dict[str, np.ndarray], threshold: float = 0.5, seq_len: int = 100) -> EventRoll:
    """Threshold probabilities into a binary roll (active iff p > threshold)."""
    missing = set(model.branches) - set(volumes)
    if missing:
        raise ValidationError(f"missing feature types for prediction: {sorted(missing)}")
    p = predict_proba(model, {ft: volumes[ft] for ft in model.branches}, seq_len)
    return EventRoll((p > threshold).astype(np.uint8), HOP_SECONDS, model.arch.class_list)


def evaluate_model(model: CBRNN, recordings, threshold=0.5, seq_len=100):
    pairs, contexts = {}, {}
    for rec in recordings:
        sys = predict(model, rec.volumes, threshold, seq_len)
        pairs[rec.id] = (EventRoll(rec.targets, HOP_SECONDS, model.arch.class_list), sys)
        contexts[rec.id] = rec.context
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return evaluate_by_context(pairs, contexts)


def train_epoch(model: CBRNN, inputs, targets, mask, config: TrainConfig, state: AdamState, rng) -> float:
    S = targets.shape[0]
    order = rng.permutation(S)
    losses, weights = [], []
    for s in range(0, S, config.batch_size):
        idx = np.sort(order[s:s + config.batch_size])
        batch = {ft: x[idx] for ft, x in inputs.items()}
        probs = model.forward(batch, train=True, rng=rng)
        losses.append(bce_loss(probs, targets[idx], mask[idx]))
        weights.append(mask[idx].sum())
        grads = model.backward(probs, targets[idx], mask[idx])
        adam_step(model.params, grads, state, config.adam)
    return float(np.average(losses, weights=weights))


def train(model: CBRNN, train_set, val_set, config: TrainConfig = TrainConfig(), on_epoch=None):
    """Train with Adam on BCE, keeping the parameters with the best validation F.

    Stops after ``config.patience`` epochs without an F improvement of at
    least ``config.min_delta``, or at ``config.max_epochs``. Returns the model
    (holding the best parameters) and the per-epoch history.
    """
    if not train_set:
        raise ValidationError("training split is empty")
    if not val_set:
        raise ValidationError("validation split is empty")
    overlap = {r.id for r in train_set} & {r.id for r in val_set}
    if overlap:
        raise ValidationError(f"train and validation splits share recordings: {sorted(overlap)}")

    rng = np.random.default_rng(config.seed)
    inputs, targets, mask = make_sequences(train_set, config.sequence_length)
    state = AdamState()
    history = History()
    best_f, best_state, since = -math.inf, model.state(), 0
    for epoch in range(1, config.max_epochs + 1):
        loss = train_epoch(model, inputs, targets, mask, config, state, rng)
        report = evaluate_model(model, val_set, config.threshold, config.sequence_length)
        rec = EpochRecord(epoch, loss, report.f, report.er)
        history.records.append(rec)
        log.info("epoch %d loss %.5f val F %.4f ER %.4f", epoch, loss, report.f, report.er)
        if on_epoch is not None:
            on_epoch(rec)
        if report.f > best_f + config.min_delta:
            best_f, best_state, since = report.f, model.state(), 0
            history.best_epoch = epoch
        else:
            since += 1
            if since >= config.patience:
                break
    model.load_state(best_state)
    return model, history
