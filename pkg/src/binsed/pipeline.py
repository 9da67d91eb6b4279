"""Experiment plumbing shared by the CLI: extraction cache, fold splits, train/evaluate runs."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .audio_io import HOP_SECONDS, AudioClip, DatasetManifest, EventRoll, _resolve, annotations_to_roll, \
    build_manifest, parse_annotations, read_wav, roll_to_events, write_annotations
from .config import ExperimentConfig
from .errors import SedIOError, ValidationError
from .metrics import count_rolls, evaluate_by_context
from .neural.checkpoint import load_checkpoint, save_checkpoint
from .neural.model import build_model
from .neural.train import Recording, predict, train
from .volumes import (
    FeatureVolume,
    NormStats,
    apply_normalizer,
    extract_volume,
    fit_normalizer,
    read_volume,
    volume_to_concat,
    write_volume,
)

log = logging.getLogger(__name__)


def recording_stem(audio_path: str) -> str:
    return os.path.splitext(audio_path)[0].replace("/", "__").replace("\\", "__")


def feature_path(feature_dir: str, audio_path: str, key: str) -> str:
    return os.path.join(feature_dir, f"{recording_stem(audio_path)}.{key}.sedf")


def compute_feature(clip: AudioClip, key: str, rate: int) -> FeatureVolume:
    if key == "mel-monaural":
        mono = AudioClip(clip.samples.mean(axis=0, keepdims=True), clip.sample_rate, clip.id)
        return extract_volume(mono, "mel", rate, binaural=False)
    return extract_volume(clip, key, rate)


def _extract_one(args):
    audio, targets, rate = args
    clip = read_wav(audio, expected_rate=rate)
    for key, dst in targets:
        write_volume(dst, compute_feature(clip, key, rate))
    return len(targets)


def extract_features(manifest: DatasetManifest, keys, feature_dir: str, rate: int = 44100, force: bool = False,
                     workers: int = 0) -> int:
    """Write one SEDF file per (recording, feature key); returns the number written.

    Outputs newer than their audio file are skipped unless ``force``.
    """
    os.makedirs(feature_dir, exist_ok=True)
    jobs = []
    for e in manifest.entries:
        audio = _resolve(manifest.root, e.audio_path)
        todo = []
        for key in keys:
            dst = feature_path(feature_dir, e.audio_path, key)
            if not force and os.path.exists(dst) and os.path.getmtime(dst) >= os.path.getmtime(audio):
                continue
            todo.append((key, dst))
        if todo:
            jobs.append((audio, todo, rate))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return sum(pool.map(_extract_one, jobs))
    return sum(_extract_one(j) for j in jobs)


# ---------------------------------------------------------------------------
# loading and splitting


def fold_split(manifest: DatasetManifest, test_fold: int):
    """``(train, validation, test)`` entry lists; validation is the next fold cyclically."""
    folds = manifest.folds
    if test_fold not in folds:
        raise ValidationError(f"fold {test_fold} outside manifest folds {folds}")
    if len(folds) < 3:
        raise ValidationError(f"need at least 3 folds for train/validation/test, manifest has {len(folds)}")
    val_fold = folds[(folds.index(test_fold) + 1) % len(folds)]
    train_e = [e for e in manifest.entries if e.fold not in (test_fold, val_fold)]
    val_e = [e for e in manifest.entries if e.fold == val_fold]
    test_e = [e for e in manifest.entries if e.fold == test_fold]
    return train_e, val_e, test_e


def load_volumes(entry, config: ExperimentConfig) -> dict[str, np.ndarray]:
    vols = {}
    for key, branch in zip(config.extraction_keys, config.branch_types):
        path = feature_path(config.feature_dir, entry.audio_path, key)
        if not os.path.exists(path):
            raise SedIOError(f"missing features {path}; run 'binsed extract' with the same --features first")
        v = read_volume(path)
        if config.layering == "concat":
            v = volume_to_concat(v)
        vols[branch] = v
    Ts = {v.T for v in vols.values()}
    if len(Ts) != 1:
        raise ValidationError(f"{entry.audio_path}: feature volumes disagree on T: {sorted(Ts)}")
    return {k: v.data for k, v in vols.items()}


def load_recordings(entries, manifest: DatasetManifest, config: ExperimentConfig, class_list):
    recs = []
    for e in entries:
        vols = load_volumes(e, config)
        T = next(iter(vols.values())).shape[0]
        events = parse_annotations(_resolve(manifest.root, e.annotation_path))
        roll = annotations_to_roll(events, T * HOP_SECONDS, class_list)
        recs.append(Recording(e.audio_path, e.context, vols, roll.values[:T]))
    return recs


def fit_norms(recordings) -> dict[str, NormStats]:
    types = recordings[0].volumes.keys()
    return {ft: fit_normalizer([FeatureVolume(r.volumes[ft], ft) for r in recordings]) for ft in types}


def normalize_recordings(recordings, norms: dict[str, NormStats]):
    for r in recordings:
        r.volumes = {
            ft: apply_normalizer(FeatureVolume(v, ft), norms[ft]).data.astype(np.float32)
            for ft, v in r.volumes.items()
        }
    return recordings


def _norm_blocks(norms):
    out = {}
    for ft, st in norms.items():
        out[f"norm.{ft}.mean"] = st.mean
        out[f"norm.{ft}.std"] = st.std
    return out


def _norms_from_blocks(blocks):
    norms = {}
    for k in blocks:
        if k.startswith("norm.") and k.endswith(".mean"):
            ft = k[len("norm."):-len(".mean")]
            norms[ft] = NormStats(blocks[k].astype(np.float64), blocks[f"norm.{ft}.std"].astype(np.float64))
    return norms


def class_list_for(manifest: DatasetManifest, config: ExperimentConfig):
    if config.classes:
        extra = set(manifest.class_list) - set(config.classes)
        if extra:
            raise ValidationError(f"annotations use labels missing from 'classes': {sorted(extra)}")
        return tuple(config.classes)
    if not manifest.class_list:
        raise ValidationError("no event labels found in the dataset; set 'classes' explicitly")
    return manifest.class_list


def checkpoint_path(config: ExperimentConfig, fold: int) -> str:
    return os.path.join(config.out, f"fold{fold}.sedm")


# ---------------------------------------------------------------------------
# runs


def run_train(config: ExperimentConfig, manifest: DatasetManifest | None = None, on_epoch=None):
    """Train one model per selected fold; returns ``{fold: History}``."""
    manifest = manifest or build_manifest(config.dataset)
    class_list = class_list_for(manifest, config)
    os.makedirs(config.out, exist_ok=True)
    with open(os.path.join(config.out, "config.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(config.dump())
    histories = {}
    for fold in config.folds:
        train_e, val_e, _ = fold_split(manifest, fold)
        train_set = load_recordings(train_e, manifest, config, class_list)
        val_set = load_recordings(val_e, manifest, config, class_list)
        norms = {}
        if config.normalize:
            norms = fit_norms(train_set)
            normalize_recordings(train_set, norms)
            normalize_recordings(val_set, norms)
        shapes = {ft: v.shape[1:] for ft, v in train_set[0].volumes.items()}
        model = build_model(shapes, class_list, hidden=config.hidden, dropout=config.dropout,
                            filters=config.filters, seed=config.seed, layering=config.layering,
                            feature_set=config.features)
        log.info("fold %d: %d train / %d validation recordings, merged width %d", fold, len(train_set),
                 len(val_set), model.arch.merged_width)
        model, history = train(model, train_set, val_set, config.train_config(), on_epoch=on_epoch)
        save_checkpoint(checkpoint_path(config, fold), model, _norm_blocks(norms),
                        meta={"fold": fold, "best_epoch": history.best_epoch})
        with open(os.path.join(config.out, f"fold{fold}.history.txt"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(history.to_table())
        histories[fold] = history
    return histories


def _load_for_eval(config: ExperimentConfig, fold: int):
    path = checkpoint_path(config, fold)
    if not os.path.exists(path):
        raise SedIOError(f"missing checkpoint {path}; run 'binsed train' first")
    model, extra, _ = load_checkpoint(path)
    expected = sorted(config.branch_types)
    found = sorted(model.branches)
    if expected != found or model.arch.layering != config.layering:
        raise ValidationError(
            f"checkpoint {path} does not match config: expected branches {expected} "
            f"({config.layering}), found {found} ({model.arch.layering})"
        )
    return model, _norms_from_blocks(extra)


def predict_fold(config: ExperimentConfig, manifest: DatasetManifest, fold: int):
    """Yield ``(recording, predicted roll)`` for the test split of ``fold``."""
    model, norms = _load_for_eval(config, fold)
    _, _, test_e = fold_split(manifest, fold)
    test_set = load_recordings(test_e, manifest, config, model.arch.class_list)
    if norms:
        normalize_recordings(test_set, norms)
    for rec in test_set:
        yield rec, predict(model, rec.volumes, config.threshold, config.sequence_length)


def run_evaluate(config: ExperimentConfig, manifest: DatasetManifest | None = None):
    """Score the test folds; counts are pooled per context across folds, then averaged."""
    manifest = manifest or build_manifest(config.dataset)
    counts, contexts = {}, {}
    for fold in config.folds:
        for rec, sys in predict_fold(config, manifest, fold):
            ref = EventRoll(rec.targets, HOP_SECONDS, sys.class_list)
            counts[rec.id] = count_rolls(ref, sys)
            contexts[rec.id] = rec.context
    report = evaluate_by_context(counts, contexts)
    report.tag = config.layering
    os.makedirs(config.out, exist_ok=True)
    with open(os.path.join(config.out, "report.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.to_table())
    with open(os.path.join(config.out, "report.kv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.to_keyvalue())
    return report


def run_predict(config: ExperimentConfig, manifest: DatasetManifest | None = None) -> list[str]:
    """Write predicted annotation files for the test folds; returns their paths."""
    manifest = manifest or build_manifest(config.dataset)
    out_dir = os.path.join(config.out, "predictions")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for fold in config.folds:
        for rec, sys in predict_fold(config, manifest, fold):
            path = os.path.join(out_dir, recording_stem(rec.id) + ".ann")
            write_annotations(path, roll_to_events(sys))
            written.append(path)
    return written
