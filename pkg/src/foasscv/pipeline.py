"""Dataset-level plumbing: labels, feature caches, training, evaluation and
single-file prediction."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .acoustics import (LABEL_KEYS, PARAMETERS, BandLabels, Rir, labels_from_rir,
                        labels_record, read_labels)
from .filterbank import NOMINAL_CENTERS_HZ, build_third_octave_bank
from .metrics import EvalReport
from .model import FoaConv3dRegressor, predict_the_mean
from .signal_io import fit_duration, read_foa_wav, read_wav
from .sscv import SSCVExtractor, load_sscv, save_sscv
from .synthroom import DatasetManifest

logger = logging.getLogger(__name__)

FEATURE_DIR = "features"
LOW_ENERGY_RMS = 1e-6


def dataset_hash(data_dir) -> str:
    """SHA-256 of the manifest bytes."""
    return hashlib.sha256((Path(data_dir) / "manifest.jsonl").read_bytes()).hexdigest()


def relabel_dataset(data_dir) -> int:
    """Recompute every label JSON from the stored RIR WAVs; returns the count."""
    manifest = DatasetManifest.load(data_dir)
    meta = json.loads((Path(data_dir) / "dataset.json").read_text())
    bank = build_third_octave_bank(meta["sample_rate"])
    for rec in manifest.records:
        h, rate = read_wav(manifest.path(rec.rir))
        direct = int(round(rec.room["delay_ms"] * 1e-3 * rate))
        labels = labels_from_rir(Rir(h[0], rate, direct), bank)
        doc = labels_record(rec.rir_id, labels)
        doc["direct_index"] = direct
        manifest.path(rec.labels).write_text(json.dumps(doc, indent=2))
    return len(manifest.records)


def make_extractor(**overrides) -> SSCVExtractor:
    return SSCVExtractor(output="coordinates", **overrides).fit()


def _feature_paths(manifest, rec):
    base = manifest.path(FEATURE_DIR) / rec.utterance_id
    return Path(f"{base}.coords.sscv"), Path(f"{base}.sscv")


def extract_dataset(data_dir, extractor: SSCVExtractor | None = None) -> dict:
    """Write per-utterance coordinate and SSCV containers under ``features/``.

    The coordinate container feeds training (smoothing is learned); the
    SSCV container uses the extractor's fixed smoothing factors.
    """
    extractor = extractor or make_extractor()
    manifest = DatasetManifest.load(data_dir)
    (manifest.path(FEATURE_DIR)).mkdir(exist_ok=True)
    config = extractor.config_
    sscv_ext = SSCVExtractor(**{**extractor.get_params(), "output": "sscv"}).fit()
    for rec in manifest.records:
        signal = read_foa_wav(manifest.path(rec.audio))
        coords_path, sscv_path = _feature_paths(manifest, rec)
        save_sscv(coords_path, extractor.transform(signal)[0], config, "coordinates")
        save_sscv(sscv_path, sscv_ext.transform(signal)[0], config, "sscv")
    index = {"feature_hash": config.feature_hash(), "config_hash": config.full_hash(),
             "n_utterances": len(manifest.records)}
    (manifest.path(FEATURE_DIR) / "index.json").write_text(
        json.dumps(index, indent=2, sort_keys=True))
    return index


def load_split(data_dir, split, target, extractor: SSCVExtractor | None = None):
    """Coordinates, labels and ids of one split.

    Cached coordinates are used when their feature hash matches the
    extractor; otherwise features are computed on the fly. Utterances whose
    label is undefined in some band (NaN) are skipped.

    Returns
    -------
    X : ndarray (n, frames, bands, 16)
    y : ndarray (n, 10)
    ids : list of str
    """
    if target not in PARAMETERS:
        raise ValueError(f"unknown target {target!r}")
    extractor = extractor or make_extractor()
    manifest = DatasetManifest.load(data_dir)
    records = manifest.split(split)
    if not records:
        raise ValueError(f"split {split!r} of {data_dir} is empty")
    want = extractor.config_.feature_hash()
    index_path = manifest.path(FEATURE_DIR) / "index.json"
    cached = index_path.exists() and json.loads(index_path.read_text())["feature_hash"] == want
    X, y, ids = [], [], []
    for rec in records:
        labels = read_labels(manifest.path(rec.labels))[LABEL_KEYS[target]]
        if not np.all(np.isfinite(labels)):
            logger.warning("%s: undefined %s label, skipped", rec.utterance_id, target)
            continue
        if cached:
            coords, _ = load_sscv(_feature_paths(manifest, rec)[0])
        else:
            coords = extractor.transform(read_foa_wav(manifest.path(rec.audio)))[0]
        X.append(np.asarray(coords, dtype=np.float32))
        y.append(labels)
        ids.append(rec.utterance_id)
    if not X:
        raise ValueError(f"split {split!r} has no usable {target} labels")
    return np.stack(X), np.stack(y), ids


def train_model(data_dir, target, extractor=None, **params):
    """Fit a :class:`FoaConv3dRegressor` on the train split, validated on val."""
    extractor = extractor or make_extractor()
    X, y, _ = load_split(data_dir, "train", target, extractor)
    X_val, y_val, _ = load_split(data_dir, "val", target, extractor)
    params.setdefault("alpha_init", float(np.mean(extractor.alpha_)))
    est = FoaConv3dRegressor(target=target, **params)
    est.fit(X, y, X_val, y_val)
    report = est.training_report()
    report["dataset_hash"] = dataset_hash(data_dir)
    report["n_train"], report["n_val"] = len(X), len(X_val)
    return est, report


def feature_config_record(extractor: SSCVExtractor) -> dict:
    cfg = extractor.config_
    return {"feature_hash": cfg.feature_hash(), "config": asdict(cfg),
            "extractor_params": {k: v for k, v in extractor.get_params().items()
                                 if k not in ("alpha", "output")}}


def evaluate_models(data_dir, estimators: dict, split="test", model_id="foa-conv3d",
                    extractor=None):
    """Score fitted estimators (keyed by parameter) and the predict-the-mean
    baseline on one split.

    Returns
    -------
    report, baseline : EvalReport
    """
    extractor = extractor or make_extractor()
    h = dataset_hash(data_dir)
    report = EvalReport(model_id, h)
    baseline = EvalReport("predict-the-mean", h)
    for param, est in estimators.items():
        X, y, _ = load_split(data_dir, split, param, extractor)
        _, y_train, _ = load_split(data_dir, "train", param, extractor)
        report.add(param, est.predict(X), y)
        baseline.add(param, predict_the_mean(y_train, len(y)), y)
    return report, baseline


def load_estimator(checkpoint, extractor: SSCVExtractor | None = None):
    """Load a checkpoint and check it against the feature configuration."""
    est = FoaConv3dRegressor.load(checkpoint)
    if extractor is not None:
        check_compatible(est, extractor)
    return est


def check_compatible(est, extractor: SSCVExtractor):
    if est.feature_config_ is not None:
        want = est.feature_config_["feature_hash"]
        have = extractor.config_.feature_hash()
        if want != have:
            raise ValueError(
                f"checkpoint was trained on features {want[:12]} but the "
                f"extractor produces {have[:12]}")
    if est.alpha_.shape[0] != extractor.n_bands:
        raise ValueError(
            f"checkpoint has {est.alpha_.shape[0]} smoothing factors, "
            f"extractor has {extractor.n_bands} bands")


def extractor_for_checkpoint(est) -> SSCVExtractor:
    """Extractor rebuilt from a checkpoint's stored feature settings."""
    fc = est.feature_config_ or {}
    return make_extractor(**fc.get("extractor_params", {}))


def predict_wav(checkpoint, wav_path) -> BandLabels:
    """Estimate one parameter in the label bands from a FOA WAV file."""
    est = FoaConv3dRegressor.load(checkpoint)
    extractor = extractor_for_checkpoint(est)
    check_compatible(est, extractor)
    signal = read_foa_wav(wav_path)
    if signal.sample_rate != extractor.sample_rate:
        raise ValueError(f"{wav_path}: sample rate {signal.sample_rate}, "
                         f"checkpoint expects {extractor.sample_rate}")
    flags = []
    if extractor.duration is not None:
        signal = fit_duration(signal, extractor.duration)
    w = signal.samples[0]
    if np.sqrt(np.mean(w ** 2)) < LOW_ENERGY_RMS:
        flags.append("low_energy")
    values = est.predict(extractor.transform(signal))[0]
    return BandLabels(values, est.target, NOMINAL_CENTERS_HZ, flags)

