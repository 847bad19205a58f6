"""Spectro-spatial covariance vectors (SSCV).

Pipeline: per-frame DFT -> mel-banded 4x4 channel covariance -> one-pole
smoothing over frames -> unitary real vectorization -> log/normalize.

The vectorization is linear up to the final log/normalize step, so
smoothing can equivalently be applied to the 16 real coordinates
(:func:`covariance_coordinates`). The trainable model relies on this.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_foa_batch, check_is_fitted
from .filterbank import MelFilterbank, build_mel_filterbank
from .signal_io import FoaSignal, FrameSpec, fit_duration, stft_foa

ENERGY_FLOOR = 1e-12
_SQRT2 = np.sqrt(2.0)


def real_dft_basis(m: int = 4) -> np.ndarray:
    """Orthonormal real DFT matrix of size ``m``.

    Rows are DC, then cos/sin pairs per frequency, then the alternating
    Nyquist row for even ``m``. For ``m = 4``::

        [1, 1, 1, 1]/2, [1, 0, -1, 0]/sqrt2, [0, 1, 0, -1]/sqrt2, [1, -1, 1, -1]/2
    """
    n = np.arange(m)
    rows = [np.ones(m) / np.sqrt(m)]
    for k in range(1, (m - 1) // 2 + 1):
        rows.append(np.sqrt(2.0 / m) * np.cos(2 * np.pi * k * n / m))
        rows.append(np.sqrt(2.0 / m) * np.sin(2 * np.pi * k * n / m))
    if m % 2 == 0 and m > 1:
        rows.append((-1.0) ** n / np.sqrt(m))
    return np.array(rows)


def pair_indices(m: int = 4) -> list[tuple[int, int]]:
    """Row-major upper-triangle order of the off-diagonal conjugate pairs."""
    return [(i, j) for i in range(m) for j in range(i + 1, m)]


# the 2x2 transform applied to each (c, conj(c)) pair
PAIR_TRANSFORM = np.array([[1.0, 1.0], [-1j, 1j]]) / _SQRT2


def banded_covariance(X, fb: MelFilterbank) -> np.ndarray:
    """Banded channel covariance for every frame.

    ``Cov(n, b) = 1/|B_b| * sum_f W_b(f) X(n, f) X(n, f)^H``, with both the
    bin-count factor and the unit-sum weights kept.

    Parameters
    ----------
    X : SpectralFrames or ndarray of shape (frames, channels, bins)
    fb : MelFilterbank

    Returns
    -------
    ndarray of shape (frames, bands, channels, channels), complex
    """
    X = getattr(X, "X", X)
    if X.shape[-1] != fb.n_bins:
        raise ValueError(
            f"spectrum has {X.shape[-1]} bins, filterbank expects {fb.n_bins}")
    w = fb.weights / fb.bin_counts[:, None]
    return np.einsum("bf,nif,njf->nbij", w, X, X.conj(), optimize=True)


def check_alpha(alpha, n_bands: int) -> np.ndarray:
    alpha = np.broadcast_to(np.asarray(alpha, dtype=np.float64), (n_bands,)).copy()
    if np.any(alpha < 0.0) or np.any(alpha >= 1.0):
        raise ValueError("smoothing factors must lie in [0, 1)")
    return alpha


def alpha_from_raw(raw):
    """Logistic map from an unconstrained parameter to a smoothing factor."""
    return 1.0 / (1.0 + np.exp(-np.asarray(raw, dtype=np.float64)))


def smooth(cov, alpha, init=None) -> np.ndarray:
    """One-pole smoothing along the frame axis (axis 0), per band (axis 1).

    ``out[n] = (1 - alpha) * cov[n] + alpha * out[n - 1]`` with
    ``out[-1] = init`` (zeros by default).
    """
    cov = np.asarray(cov)
    if cov.shape[0] < 1:
        raise ValueError("need at least one frame")
    a = check_alpha(alpha, cov.shape[1]).reshape((-1,) + (1,) * (cov.ndim - 2))
    out = np.empty_like(cov)
    prev = np.zeros_like(cov[0]) if init is None else np.asarray(init, cov.dtype)
    for n in range(cov.shape[0]):
        prev = (1.0 - a) * cov[n] + a * prev
        out[n] = prev
    return out


def covariance_coordinates(cov, basis=None) -> np.ndarray:
    """Map Hermitian matrices (..., M, M) to real coordinates (..., M*M).

    The first M entries are the real DFT of the diagonal; then each
    upper-triangle pair ``(c, conj c)`` becomes ``(sqrt2 Re c, sqrt2 Im c)``.
    The map is an isometry for the Frobenius norm.
    """
    cov = np.asarray(cov)
    m = cov.shape[-1]
    basis = real_dft_basis(m) if basis is None else basis
    diag = np.einsum("...ii->...i", cov).real
    iu, ju = np.triu_indices(m, k=1)
    upper = cov[..., iu, ju]
    pairs = np.stack([_SQRT2 * upper.real, _SQRT2 * upper.imag], axis=-1)
    return np.concatenate(
        [diag @ basis.T, pairs.reshape(cov.shape[:-2] + (-1,))], axis=-1)


def normalize_coordinates(R, floor=ENERGY_FLOOR) -> np.ndarray:
    """``[log R0, R1/R0, ..., R_{K-1}/R0]`` with ``R0`` clamped at ``floor``."""
    R = np.asarray(R, dtype=np.float64)
    r0 = np.maximum(R[..., :1], floor)
    return np.concatenate([np.log(r0), R[..., 1:] / r0], axis=-1)


def vectorize(cov, basis=None, floor=ENERGY_FLOOR) -> np.ndarray:
    """Hermitian covariance (..., M, M) -> real SSCV (..., M*M)."""
    return normalize_coordinates(covariance_coordinates(cov, basis), floor)


def invert_vectorize(v, basis=None) -> np.ndarray:
    """Inverse of :func:`vectorize` (exact unless the energy floor was hit)."""
    v = np.asarray(v, dtype=np.float64)
    k = v.shape[-1]
    m = int(round(np.sqrt(k)))
    if m * m != k:
        raise ValueError(f"vector length {k} is not a square")
    basis = real_dft_basis(m) if basis is None else basis
    r0 = np.exp(v[..., :1])
    R = np.concatenate([r0, v[..., 1:] * r0], axis=-1)
    cov = np.zeros(v.shape[:-1] + (m, m), dtype=np.complex128)
    idx = np.arange(m)
    cov[..., idx, idx] = R[..., :m] @ basis
    pairs = R[..., m:].reshape(v.shape[:-1] + (-1, 2))
    c = (pairs[..., 0] + 1j * pairs[..., 1]) / _SQRT2
    iu, ju = np.triu_indices(m, k=1)
    cov[..., iu, ju] = c
    cov[..., ju, iu] = c.conj()
    return cov


def smooth_coordinates(R, alpha, init=None) -> np.ndarray:
    """One-pole smoothing of real coordinates (frames, bands, K)."""
    return smooth(R, alpha, init)


@dataclass
class SscvConfig:
    """Everything that determines the SSCV of a signal."""

    sample_rate: int = 16000
    frame_len: int = 1536
    hop: int = 768
    window: str = "hann-periodic"
    n_bands: int = 52
    f_lo: float = 0.0
    f_hi: float = 8000.0
    duration: float = 4.0
    floor: float = ENERGY_FLOOR
    alpha: list = field(default_factory=lambda: [0.5] * 52)

    def feature_hash(self) -> str:
        """Hash of framing + filterbank settings (smoothing excluded)."""
        d = asdict(self)
        d.pop("alpha")
        return _hash(d)

    def full_hash(self) -> str:
        return _hash(asdict(self))


def _hash(d) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def raw_coordinates(x: FoaSignal, spec: FrameSpec, fb: MelFilterbank) -> np.ndarray:
    """Unsmoothed covariance coordinates (frames, bands, 16)."""
    return covariance_coordinates(banded_covariance(stft_foa(x, spec), fb))


def sscv_pipeline(x: FoaSignal, spec: FrameSpec, fb: MelFilterbank, alpha=0.5,
                  floor=ENERGY_FLOOR) -> np.ndarray:
    """SSCV of one FOA signal, shape (frames, bands, 16)."""
    cov = smooth(banded_covariance(stft_foa(x, spec), fb), alpha)
    return vectorize(cov, floor=floor)


class SSCVExtractor(TransformerMixin, BaseEstimator):
    """Turn FOA recordings into SSCV tensors.

    Parameters
    ----------
    sample_rate : int, default=16000
    window_ms : float, default=96.0
        Hann window length.
    overlap : float, default=0.5
    n_bands : int, default=52
        Number of mel bands.
    f_lo, f_hi : float
        Mel filterbank range; ``f_hi=None`` means Nyquist.
    alpha : float or array-like of shape (n_bands,), default=0.5
        One-pole smoothing factors.
    duration : float or None, default=4.0
        Inputs are trimmed/zero-padded to this length; ``None`` keeps them.
    output : {"sscv", "coordinates"}, default="sscv"
        ``"coordinates"`` returns the unsmoothed, unnormalized 16 real
        coordinates, the cache used when training with learnable smoothing.
    """

    def __init__(self, sample_rate=16000, window_ms=96.0, overlap=0.5,
                 n_bands=52, f_lo=0.0, f_hi=None, alpha=0.5, duration=4.0,
                 output="sscv"):
        self.sample_rate = sample_rate
        self.window_ms = window_ms
        self.overlap = overlap
        self.n_bands = n_bands
        self.f_lo = f_lo
        self.f_hi = f_hi
        self.alpha = alpha
        self.duration = duration
        self.output = output

    def fit(self, X=None, y=None):
        if self.output not in ("sscv", "coordinates"):
            raise ValueError(f"unknown output {self.output!r}")
        self.frame_spec_ = FrameSpec.from_duration(
            self.sample_rate, self.window_ms, self.overlap)
        self.filterbank_ = build_mel_filterbank(
            self.sample_rate, self.frame_spec_.frame_len, self.n_bands,
            self.f_lo, self.f_hi)
        self.alpha_ = check_alpha(self.alpha, self.n_bands)
        return self

    @property
    def config_(self) -> SscvConfig:
        check_is_fitted(self, "filterbank_")
        return SscvConfig(
            sample_rate=self.sample_rate, frame_len=self.frame_spec_.frame_len,
            hop=self.frame_spec_.hop, n_bands=self.n_bands,
            f_lo=float(self.filterbank_.f_lo), f_hi=float(self.filterbank_.f_hi),
            duration=self.duration, alpha=[float(a) for a in self.alpha_])

    def _coordinates(self, signal):
        if self.duration is not None:
            signal = fit_duration(signal, self.duration)
        return raw_coordinates(signal, self.frame_spec_, self.filterbank_)

    def transform(self, X) -> np.ndarray:
        """Return an array of shape (n_signals, frames, bands, 16)."""
        check_is_fitted(self, "filterbank_")
        out = []
        for signal in check_foa_batch(X, self.sample_rate):
            R = self._coordinates(signal)
            if self.output == "sscv":
                R = normalize_coordinates(smooth_coordinates(R, self.alpha_))
            out.append(R)
        return np.stack(out)


# --- on-disk container -----------------------------------------------------

_MAGIC = b"SSCV"
_VERSION = 1
_KINDS = {"sscv": 0, "coordinates": 1}
_HEADER = struct.Struct("<4sHH3I32s")


def save_sscv(path, tensor, config: SscvConfig, kind="sscv"):
    """Write a (frames, bands, K) tensor as little-endian float32 plus a JSON
    sidecar (``<path>.json``) describing framing, filterbank and smoothing."""
    tensor = np.asarray(tensor)
    if tensor.ndim != 3:
        raise ValueError("expected a (frames, bands, K) tensor")
    digest = bytes.fromhex(config.full_hash())
    header = _HEADER.pack(_MAGIC, _VERSION, _KINDS[kind], *tensor.shape, digest)
    path = Path(path)
    path.write_bytes(header + tensor.astype("<f4").tobytes())
    sidecar = {"version": _VERSION, "kind": kind, "shape": list(tensor.shape),
               "config_hash": config.full_hash(),
               "feature_hash": config.feature_hash(), "config": asdict(config)}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def load_sscv(path, expected_hash=None):
    """Read a container written by :func:`save_sscv`.

    Returns
    -------
    tensor : ndarray of float32
    meta : dict
        ``kind`` and ``config_hash``.
    """
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: too short for an SSCV header")
    magic, version, kind, f, b, k, digest = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != _VERSION:
        raise ValueError(f"{path}: not an SSCV v{_VERSION} container")
    n = f * b * k
    if len(raw) != _HEADER.size + 4 * n:
        raise ValueError(f"{path}: payload size does not match header dims")
    if expected_hash is not None and digest.hex() != expected_hash:
        raise ValueError(f"{path}: config hash mismatch")
    kind_name = {v: key for key, v in _KINDS.items()}[kind]
    data = np.frombuffer(raw, "<f4", n, _HEADER.size).reshape(f, b, k)
    return data, {"kind": kind_name, "config_hash": digest.hex()}
