"""Per-band evaluation metrics and the evaluation report."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .filterbank import NOMINAL_CENTERS_HZ

REPORT_SCHEMA_VERSION = 1
CSV_FIELDS = ("schema_version", "model", "parameter", "band_hz", "metric", "value")
METRICS = ("mae", "pov", "pcc")


class UndefinedMetricWarning(UserWarning):
    """A metric is undefined for some band (zero variance)."""


def _check(preds, targets):
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape or preds.ndim != 2:
        raise ValueError(
            f"preds and targets must share a (n, bands) shape, got {preds.shape} "
            f"and {targets.shape}")
    if preds.shape[0] < 1:
        raise ValueError("need at least one sample")
    return preds, targets


def _sum_sq_dev(a):
    """Per-band sum of squared deviations, zeroed when it is only rounding
    noise of the mean (a constant series)."""
    ss = np.sum((a - a.mean(axis=0)) ** 2, axis=0)
    noise = a.shape[0] * (64 * np.finfo(float).eps * np.max(np.abs(a), axis=0)) ** 2
    return np.where(ss <= noise, 0.0, ss)


def mae_per_band(preds, targets) -> np.ndarray:
    preds, targets = _check(preds, targets)
    return np.mean(np.abs(preds - targets), axis=0)


def pov_per_band(preds, targets) -> np.ndarray:
    """Proportion of variance explained, ``1 - SS_res / SS_tot`` per band.

    Bands with zero target variance get NaN and raise
    :class:`UndefinedMetricWarning`.
    """
    preds, targets = _check(preds, targets)
    if preds.shape[0] < 2:
        raise ValueError("PoV needs at least two samples")
    ss_res = np.sum((targets - preds) ** 2, axis=0)
    ss_tot = _sum_sq_dev(targets)
    out = np.full(ss_tot.shape, np.nan)
    ok = ss_tot > 0
    if not ok.all():
        warnings.warn(f"PoV undefined for bands {np.flatnonzero(~ok).tolist()}",
                      UndefinedMetricWarning, stacklevel=2)
    out[ok] = 1.0 - ss_res[ok] / ss_tot[ok]
    return out


def pcc_per_band(preds, targets) -> np.ndarray:
    """Pearson correlation per band; NaN (with a warning) for constant series."""
    preds, targets = _check(preds, targets)
    dp = preds - preds.mean(axis=0)
    dt = targets - targets.mean(axis=0)
    denom = np.sqrt(_sum_sq_dev(preds) * _sum_sq_dev(targets))
    out = np.full(denom.shape, np.nan)
    ok = denom > 0
    if not ok.all():
        warnings.warn(f"PCC undefined for bands {np.flatnonzero(~ok).tolist()}",
                      UndefinedMetricWarning, stacklevel=2)
    out[ok] = np.clip(np.sum(dp * dt, axis=0)[ok] / denom[ok], -1.0, 1.0)
    return out


@dataclass
class EvalReport:
    """Per parameter and band MAE/PoV/PCC for one model."""

    model_id: str
    dataset_hash: str = ""
    results: dict = field(default_factory=dict)
    n_samples: dict = field(default_factory=dict)
    centers_hz: tuple = NOMINAL_CENTERS_HZ

    def add(self, parameter, preds, targets):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UndefinedMetricWarning)
            self.results[parameter] = {
                "mae": mae_per_band(preds, targets),
                "pov": pov_per_band(preds, targets),
                "pcc": pcc_per_band(preds, targets),
            }
        self.n_samples[parameter] = int(np.asarray(preds).shape[0])
        return self

    def to_dict(self) -> dict:
        def clean(a):
            return [None if not math.isfinite(v) else float(v) for v in a]

        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "model_id": self.model_id,
            "dataset_hash": self.dataset_hash,
            "centers_hz": list(self.centers_hz),
            "parameters": {
                p: {"n_samples": self.n_samples[p],
                    **{m: clean(v) for m, v in r.items()},
                    "mean": {m: _nanmean(v) for m, v in r.items()}}
                for p, r in self.results.items()},
        }

    def rows(self):
        for p, r in self.results.items():
            for m in METRICS:
                for c, v in zip(self.centers_hz, r[m]):
                    yield {"schema_version": REPORT_SCHEMA_VERSION, "model": self.model_id,
                           "parameter": p, "band_hz": c, "metric": m,
                           "value": "" if not math.isfinite(v) else repr(float(v))}

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def write_csv(self, path):
        write_rows_csv(path, self.rows())

    @classmethod
    def from_dict(cls, d) -> "EvalReport":
        if d.get("schema_version") != REPORT_SCHEMA_VERSION:
            raise ValueError("unsupported report schema version")
        rep = cls(d["model_id"], d.get("dataset_hash", ""), centers_hz=tuple(d["centers_hz"]))
        for p, r in d["parameters"].items():
            rep.results[p] = {m: np.array([np.nan if v is None else v for v in r[m]])
                              for m in METRICS}
            rep.n_samples[p] = r["n_samples"]
        return rep


def _nanmean(a):
    a = np.asarray(a, dtype=float)
    return None if not np.any(np.isfinite(a)) else float(np.nanmean(a))


def write_rows_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
