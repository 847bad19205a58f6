"""Ground-truth room acoustic labels from impulse responses.

All labels are computed on the omnidirectional (W) channel, per
third-octave band:

* T60 -- twice the T30 obtained from a least-squares fit to the Schroeder
  energy decay curve between -5 and -35 dB.
* DRR -- energy within +-2.5 ms of the direct peak versus everything after.
* C50 -- energy in the first 50 ms after the direct sound versus the rest.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .filterbank import ThirdOctaveBank, bandpass_filter

EDC_FLOOR_DB = -120.0
LABEL_CAP_DB = 60.0
DIRECT_HALF_WINDOW_S = 0.0025
CLARITY_SPLIT_S = 0.050
T30_FIT_RANGE_DB = (-5.0, -35.0)
PARAMETERS = ("t60", "drr", "c50")
UNITS = {"t60": "s", "drr": "dB", "c50": "dB"}


class InsufficientDecayError(ValueError):
    """The energy decay curve does not span the T30 fit range."""


@dataclass
class Rir:
    """Single-channel room impulse response.

    ``direct_index`` defaults to the sample of maximum magnitude.
    """

    h: np.ndarray
    sample_rate: int = 16000
    direct_index: int | None = None

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=np.float64).ravel()
        if self.h.size == 0 or not np.all(np.isfinite(self.h)):
            raise ValueError("RIR must be finite and non-empty")
        if self.direct_index is None:
            self.direct_index = int(np.argmax(np.abs(self.h)))
        if not 0 <= self.direct_index < self.h.size:
            raise ValueError("direct_index out of range")

    def with_samples(self, h) -> "Rir":
        return Rir(h, self.sample_rate, self.direct_index)


@dataclass
class BandLabels:
    """Ten per-band values of one parameter (``t60`` s, ``drr``/``c50`` dB)."""

    values: np.ndarray
    parameter: str
    centers_hz: np.ndarray
    flags: list = field(default_factory=list)

    def __post_init__(self):
        if self.parameter not in PARAMETERS:
            raise ValueError(f"unknown parameter {self.parameter!r}")
        self.values = np.asarray(self.values, dtype=np.float64)

    def to_dict(self) -> dict:
        return {"parameter": self.parameter, "unit": UNITS[self.parameter],
                "centers_hz": [float(c) for c in self.centers_hz],
                "values": _json_floats(self.values), "flags": list(self.flags)}


def _json_floats(a):
    return [None if not math.isfinite(v) else float(v) for v in np.asarray(a, float)]


def _as_rir(h, sample_rate=16000) -> Rir:
    return h if isinstance(h, Rir) else Rir(h, sample_rate)


def schroeder_edc(h, sample_rate=16000) -> np.ndarray:
    """Backward-integrated energy decay in dB relative to total energy.

    Values below ``EDC_FLOOR_DB`` are clamped to it.
    """
    rir = _as_rir(h, sample_rate)
    energy = rir.h ** 2
    total = energy.sum()
    if total <= 0.0:
        raise ValueError("RIR has zero energy")
    tail = np.cumsum(energy[::-1])[::-1]
    with np.errstate(divide="ignore"):
        edc = 10.0 * np.log10(tail / total)
    return np.maximum(edc, EDC_FLOOR_DB)


def t30_from_rir(h, sample_rate=16000) -> float:
    rir = _as_rir(h, sample_rate)
    edc = schroeder_edc(rir)
    hi, lo = T30_FIT_RANGE_DB
    if edc.min() > lo:
        raise InsufficientDecayError(
            f"decay reaches only {edc.min():.1f} dB, need {lo:.0f} dB")
    start = int(np.argmax(edc <= hi))
    stop = int(np.argmax(edc <= lo))
    if stop - start < 2:
        raise InsufficientDecayError("too few samples in the T30 fit range")
    t = np.arange(start, stop + 1) / rir.sample_rate
    slope, _ = np.polyfit(t, edc[start:stop + 1], 1)
    if slope >= 0.0:
        raise InsufficientDecayError("non-decaying energy curve")
    return -30.0 / slope


def t60_from_rir(h, sample_rate=16000) -> float:
    """T60 in seconds as twice the fitted T30."""
    return 2.0 * t30_from_rir(h, sample_rate)


def _ratio_db(num, den) -> float:
    if den <= 0.0:
        return LABEL_CAP_DB if num > 0.0 else 0.0
    if num <= 0.0:
        return -LABEL_CAP_DB
    return float(np.clip(10.0 * np.log10(num / den), -LABEL_CAP_DB, LABEL_CAP_DB))


def is_capped(value: float) -> bool:
    return abs(value) >= LABEL_CAP_DB


def drr_from_rir(h, sample_rate=16000) -> float:
    """Direct-to-reverberant ratio in dB, capped at +-``LABEL_CAP_DB``."""
    rir = _as_rir(h, sample_rate)
    half = int(round(DIRECT_HALF_WINDOW_S * rir.sample_rate))
    d = rir.direct_index
    energy = rir.h ** 2
    direct = energy[max(d - half, 0):d + half + 1].sum()
    reverb = energy[d + half + 1:].sum()
    return _ratio_db(direct, reverb)


def c50_from_rir(h, sample_rate=16000) -> float:
    """Clarity C50 in dB, timed from the direct-path index."""
    rir = _as_rir(h, sample_rate)
    split = rir.direct_index + int(round(CLARITY_SPLIT_S * rir.sample_rate))
    if rir.h.size <= split:
        raise ValueError("RIR shorter than direct index + 50 ms")
    energy = rir.h ** 2
    return _ratio_db(energy[rir.direct_index:split].sum(), energy[split:].sum())


def labels_from_rir(h, bank: ThirdOctaveBank) -> dict[str, BandLabels]:
    """Band-filter the (W-channel) RIR and compute T60, DRR and C50 per band."""
    rir = _as_rir(h, bank.sample_rate)
    values = {p: np.full(bank.n_bands, np.nan) for p in PARAMETERS}
    flags = {p: [] for p in PARAMETERS}
    for k in range(bank.n_bands):
        band = rir.with_samples(bandpass_filter(rir.h, k, bank))
        try:
            values["t60"][k] = t60_from_rir(band)
        except InsufficientDecayError:
            flags["t60"].append(f"band{k}:insufficient_decay")
        for p, fn in (("drr", drr_from_rir), ("c50", c50_from_rir)):
            values[p][k] = fn(band)
            if is_capped(values[p][k]):
                flags[p].append(f"band{k}:capped")
    return {p: BandLabels(values[p], p, bank.centers_hz, flags[p]) for p in PARAMETERS}


def labels_record(rir_id: str, labels: dict[str, BandLabels]) -> dict:
    """JSON-ready label record ``{rir_id, t60_s, drr_db, c50_db, flags}``."""
    return {
        "rir_id": rir_id,
        "t60_s": _json_floats(labels["t60"].values),
        "drr_db": _json_floats(labels["drr"].values),
        "c50_db": _json_floats(labels["c50"].values),
        "flags": [f"{p}:{f}" for p in PARAMETERS for f in labels[p].flags],
    }


def write_labels(path, rir_id, labels):
    with open(path, "w") as fh:
        json.dump(labels_record(rir_id, labels), fh, indent=2)


def read_labels(path) -> dict:
    with open(path) as fh:
        rec = json.load(fh)
    for key in ("t60_s", "drr_db", "c50_db"):
        rec[key] = np.array([np.nan if v is None else v for v in rec[key]])
    return rec


LABEL_KEYS = {"t60": "t60_s", "drr": "drr_db", "c50": "c50_db"}
