"""Mel triangular filterbank for covariance banding and the third-octave
bank used for RIR labels."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

NOMINAL_CENTERS_HZ = (1000.0, 1250.0, 1600.0, 2000.0, 2500.0,
                      3150.0, 4000.0, 5000.0, 6300.0, 8000.0)
N_LABEL_BANDS = len(NOMINAL_CENTERS_HZ)
_BUTTER_ORDER = 2  # scipy doubles this for bandpass: 4th order, 8th after filtfilt


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True)
class MelFilterbank:
    """Row-normalized triangular mel weights.

    Attributes
    ----------
    weights : ndarray of shape (n_bands, n_bins)
        Non-negative weights, each row summing to one.
    centers_hz : ndarray of shape (n_bands,)
    sample_rate, fft_len : int
    """

    weights: np.ndarray
    centers_hz: np.ndarray
    edges_hz: np.ndarray
    sample_rate: int
    fft_len: int
    f_lo: float
    f_hi: float

    @property
    def n_bands(self) -> int:
        return self.weights.shape[0]

    @property
    def n_bins(self) -> int:
        return self.weights.shape[1]

    @property
    def bin_counts(self) -> np.ndarray:
        """|B_b|: number of DFT bins with non-zero weight in each band."""
        return np.count_nonzero(self.weights, axis=1)

    def band_bins(self, b: int) -> np.ndarray:
        return np.flatnonzero(self.weights[b])

    def params(self) -> dict:
        return {"kind": "mel", "sample_rate": int(self.sample_rate),
                "fft_len": int(self.fft_len), "n_bands": int(self.n_bands),
                "f_lo": float(self.f_lo), "f_hi": float(self.f_hi),
                "scale": "2595*log10(1+f/700)"}

    def to_json(self) -> str:
        bands = [{"band": b, "center_hz": float(self.centers_hz[b]),
                  "edges_hz": [float(self.edges_hz[b]), float(self.edges_hz[b + 2])],
                  "n_bins": int(self.bin_counts[b]),
                  "weight_sum": float(self.weights[b].sum())}
                 for b in range(self.n_bands)]
        return json.dumps({**self.params(), "bands": bands}, indent=2)


def build_mel_filterbank(sample_rate=16000, fft_len=1536, band_count=52,
                         f_lo=0.0, f_hi=None) -> MelFilterbank:
    """Build ``band_count`` triangular filters equally spaced on the mel scale.

    Raises
    ------
    ValueError
        If the frequency range is invalid or a band would contain no DFT bin.
    """
    nyquist = sample_rate / 2.0
    f_hi = nyquist if f_hi is None else float(f_hi)
    if band_count < 1:
        raise ValueError("band_count must be >= 1")
    if not 0.0 <= f_lo < f_hi <= nyquist:
        raise ValueError(f"need 0 <= f_lo < f_hi <= {nyquist}")
    edges = mel_to_hz(np.linspace(hz_to_mel(f_lo), hz_to_mel(f_hi), band_count + 2))
    freqs = np.fft.rfftfreq(fft_len, 1.0 / sample_rate)
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    weights = np.clip(np.minimum(rising, falling), 0.0, None)
    sums = weights.sum(axis=1)
    empty = np.flatnonzero(sums <= 0.0)
    if empty.size:
        raise ValueError(
            f"mel bands {empty.tolist()} contain no DFT bins; increase fft_len "
            "or reduce band_count")
    return MelFilterbank(weights / sums[:, None], edges[1:-1].copy(), edges,
                         int(sample_rate), int(fft_len), float(f_lo), f_hi)


@dataclass(frozen=True)
class ThirdOctaveBank:
    """Ten third-octave bands from 1 kHz to 8 kHz.

    ``centers_hz`` holds the nominal labels; band edges come from the exact
    base-2 midbands ``1000 * 2**(k/3)`` so that adjacent edges coincide.
    """

    sample_rate: int
    centers_hz: np.ndarray
    exact_centers_hz: np.ndarray
    lower_hz: np.ndarray
    upper_hz: np.ndarray
    sos: tuple

    @property
    def n_bands(self) -> int:
        return len(self.centers_hz)

    def to_json(self) -> str:
        return json.dumps({
            "kind": "third_octave", "sample_rate": self.sample_rate,
            "bands": [{"band": k, "center_hz": float(self.centers_hz[k]),
                       "edges_hz": [float(self.lower_hz[k]), float(self.upper_hz[k])]}
                      for k in range(self.n_bands)]}, indent=2)


def build_third_octave_bank(sample_rate=16000) -> ThirdOctaveBank:
    if sample_rate < 16000:
        raise ValueError("third-octave label bank needs sample_rate >= 16000")
    nyquist = sample_rate / 2.0
    exact = 1000.0 * 2.0 ** (np.arange(N_LABEL_BANDS) / 3.0)
    lower = exact * 2.0 ** (-1.0 / 6.0)
    upper = np.minimum(exact * 2.0 ** (1.0 / 6.0), nyquist)
    sos = []
    for lo, hi in zip(lower, upper):
        if hi >= nyquist:
            sos.append(sps.butter(2 * _BUTTER_ORDER, lo, "highpass",
                                  fs=sample_rate, output="sos"))
        else:
            sos.append(sps.butter(_BUTTER_ORDER, [lo, hi], "bandpass",
                                  fs=sample_rate, output="sos"))
    return ThirdOctaveBank(int(sample_rate), np.array(NOMINAL_CENTERS_HZ),
                           exact, lower, upper, tuple(sos))


def bandpass_filter(x, band: int, bank: ThirdOctaveBank) -> np.ndarray:
    """Zero-phase (forward-backward) band-limiting of ``x`` along its last axis."""
    x = np.asarray(x, dtype=np.float64)
    return sps.sosfiltfilt(bank.sos[band], x, axis=-1)
