"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np
from sklearn.exceptions import NotFittedError

from .signal_io import FoaSignal


def check_foa_batch(X, sample_rate=None) -> list[FoaSignal]:
    """Coerce ``X`` into a list of :class:`FoaSignal`.

    Accepts a single signal, a sequence of signals, or an array of shape
    (4, n) or (n_signals, 4, n).
    """
    if isinstance(X, FoaSignal):
        signals = [X]
    elif isinstance(X, np.ndarray):
        if X.ndim == 2:
            X = X[None]
        if X.ndim != 3 or X.shape[1] != 4:
            raise ValueError(f"expected array of shape (n, 4, samples), got {X.shape}")
        rate = sample_rate or 16000
        signals = [FoaSignal(x, rate) for x in X]
    else:
        signals = [s if isinstance(s, FoaSignal) else FoaSignal(s, sample_rate or 16000)
                   for s in X]
    if sample_rate is not None:
        for s in signals:
            if s.sample_rate != sample_rate:
                raise ValueError(
                    f"sample rate {s.sample_rate} does not match {sample_rate}")
    return signals


def check_band_array(a, n_bands, name="array", ndim=2) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != ndim or a.shape[-1] != n_bands:
        raise ValueError(f"{name} must have shape (..., {n_bands}), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def check_is_fitted(estimator, attribute):
    if not hasattr(estimator, attribute):
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit first")
