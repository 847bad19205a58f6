"""FOA-Conv3D: a 3D-convolutional regressor over SSCV volumes with jointly
learned covariance smoothing.

The 16 SSCV coordinates form the depth axis of a one-channel volume
(depth, time, band). Every conv kernel is 1x3x3, so depth is only mixed
through channel expansion; pooling halves time and band only.
"""

from __future__ import annotations

import copy
import json
import logging
import math
import time
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, RegressorMixin

from . import engine as E
from ._validation import check_band_array, check_is_fitted
from .sscv import ENERGY_FLOOR, normalize_coordinates, smooth_coordinates

logger = logging.getLogger(__name__)

N_OUTPUTS = 10
SSCV_DIM = 16
CHECKPOINT_KIND = "foa-conv3d"


def _kaiming_uniform(rng, shape, fan_in, dtype):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, shape).astype(dtype)


def pooled_size(n: int, n_pools: int = 4) -> int:
    for _ in range(n_pools):
        n //= 2
    return n


class FoaConv3dNet:
    """The network itself: smoothing -> SSCV normalization -> 4 Conv3D
    blocks -> flatten -> dropout -> 3-layer MLP.

    Parameters
    ----------
    frames, bands : int
        Input size (time frames, mel bands); both must be >= 16.
    widths : sequence of int
        Output channels of each block.
    hidden : (int, int)
        MLP hidden sizes.
    alpha_init : float
        Initial smoothing factor for every band.
    feature_mean, feature_std : array of shape (16,)
        Fixed standardization applied to the SSCV before the encoder.
    target_mean, target_std : array of shape (n_outputs,)
        Fixed de-standardization applied to the MLP output.
    """

    def __init__(self, frames=82, bands=52, widths=(32, 64, 128, 256),
                 hidden=(512, 128), n_outputs=N_OUTPUTS, dropout=0.2,
                 alpha_init=0.5, seed=0, dtype=np.float32,
                 feature_mean=None, feature_std=None,
                 target_mean=None, target_std=None):
        n_pools = len(widths)
        if pooled_size(frames, n_pools) < 1 or pooled_size(bands, n_pools) < 1:
            raise ValueError(
                f"input ({frames} frames, {bands} bands) is too small for "
                f"{n_pools} poolings; need at least {2 ** n_pools} of each")
        self.frames, self.bands = frames, bands
        self.widths, self.hidden = tuple(widths), tuple(hidden)
        self.n_outputs, self.dropout = n_outputs, dropout
        self.dtype = np.dtype(dtype)
        self.rng = np.random.default_rng(seed)
        self.training = False
        self.feature_mean = np.zeros(SSCV_DIM) if feature_mean is None else np.asarray(feature_mean)
        self.feature_std = np.ones(SSCV_DIM) if feature_std is None else np.asarray(feature_std)
        self.target_mean = np.zeros(n_outputs) if target_mean is None else np.asarray(target_mean)
        self.target_std = np.ones(n_outputs) if target_std is None else np.asarray(target_std)

        init_rng = np.random.default_rng(seed)
        params = {}
        raw = math.log(alpha_init / (1.0 - alpha_init))
        params["smoothing.raw_alpha"] = np.full(bands, raw, dtype=self.dtype)
        c_in = 1
        for k, width in enumerate(widths):
            # first conv keeps the incoming channel count, second expands
            for name, c_out in (("conv1", c_in), ("conv2", width)):
                params[f"block{k}.{name}.weight"] = _kaiming_uniform(
                    init_rng, (c_out, c_in, 1, 3, 3), c_in * 9, self.dtype)
                params[f"block{k}.{name}.bias"] = np.zeros(c_out, self.dtype)
                c_in = c_out
        sizes = [self.flat_size, *hidden, n_outputs]
        for k in range(len(sizes) - 1):
            params[f"mlp.fc{k}.weight"] = _kaiming_uniform(
                init_rng, (sizes[k], sizes[k + 1]), sizes[k], self.dtype)
            params[f"mlp.fc{k}.bias"] = np.zeros(sizes[k + 1], self.dtype)
        self.params = {name: E.Parameter(v, name) for name, v in params.items()}

    # shapes -------------------------------------------------------------------
    @property
    def encoder_shape(self) -> tuple:
        """Encoder output as (channels, depth, time, band)."""
        n = len(self.widths)
        return (self.widths[-1], SSCV_DIM, pooled_size(self.frames, n),
                pooled_size(self.bands, n))

    @property
    def flat_size(self) -> int:
        return int(np.prod(self.encoder_shape))

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def parameters(self, include_alpha=True):
        return [p for name, p in self.params.items()
                if include_alpha or name != "smoothing.raw_alpha"]

    @property
    def alpha(self) -> np.ndarray:
        return expit(self.params["smoothing.raw_alpha"].data.astype(np.float64))

    def astype(self, dtype) -> "FoaConv3dNet":
        """Copy of the network with parameters cast to ``dtype``."""
        net = copy.copy(self)
        net.dtype = np.dtype(dtype)
        net.params = {k: E.Parameter(p.data.astype(dtype), k) for k, p in self.params.items()}
        return net

    # forward ------------------------------------------------------------------
    def _check_input(self, x, kind):
        shape = x.shape[1:]
        if shape != (self.frames, self.bands, SSCV_DIM):
            raise ValueError(
                f"{kind} input must have shape (N, {self.frames}, {self.bands}, "
                f"{SSCV_DIM}), got {x.shape}")

    def sscv(self, coords, learn_alpha=True) -> E.Tensor:
        """Smoothing + normalization of raw covariance coordinates (N, T, B, 16)."""
        coords = E.as_tensor(coords)
        self._check_input(coords, "coordinate")
        raw = self.params["smoothing.raw_alpha"]
        if not learn_alpha:
            raw = E.Tensor(raw.data)
        alpha = E.sigmoid(raw)
        return E.sscv_normalize(E.one_pole_smooth(coords, alpha), ENERGY_FLOOR)

    def encode(self, sscv) -> E.Tensor:
        """Standardized SSCV (N, T, B, 16) -> encoder volume (N, D, T', B', C)."""
        x = E.as_tensor(sscv)
        x = (x - self.feature_mean.astype(x.dtype)) * (1.0 / self.feature_std).astype(x.dtype)
        h = x.transpose(0, 3, 1, 2).reshape(x.shape[0], SSCV_DIM, x.shape[1], x.shape[2], 1)
        p = self.params
        for k in range(len(self.widths)):
            for name in ("conv1", "conv2"):
                h = E.relu(E.conv3d(h, p[f"block{k}.{name}.weight"], p[f"block{k}.{name}.bias"]))
            h = E.maxpool3d(h)
        return h

    def head(self, h) -> E.Tensor:
        p = self.params
        n_fc = len(self.hidden) + 1
        # (N, D, T, B, C) -> channel-major flatten, matching (C, D, T, B)
        h = E.flatten(h.transpose(0, 4, 1, 2, 3))
        h = E.dropout(h, self.dropout, self.rng, self.training)
        for k in range(n_fc):
            h = E.linear(h, p[f"mlp.fc{k}.weight"], p[f"mlp.fc{k}.bias"])
            if k < n_fc - 1:
                h = E.relu(h)
        return h * self.target_std.astype(h.dtype) + self.target_mean.astype(h.dtype)

    def forward(self, sscv) -> E.Tensor:
        """SSCV (N, frames, bands, 16) -> (N, n_outputs)."""
        sscv = E.as_tensor(sscv)
        self._check_input(sscv, "SSCV")
        return self.head(self.encode(sscv))

    def forward_coordinates(self, coords, learn_alpha=True) -> E.Tensor:
        return self.head(self.encode(self.sscv(coords, learn_alpha)))

    def state(self) -> dict:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state(self, state):
        for k, v in state.items():
            if self.params[k].shape != v.shape:
                raise ValueError(f"shape mismatch for {k}: {v.shape} vs {self.params[k].shape}")
            self.params[k].data = v.astype(self.dtype).copy()


@dataclass
class TrainConfig:
    """Training recipe; paper defaults except the desk-scale batch size."""

    target: str = "t60"
    lr: float = 5e-4
    batch_size: int = 16
    max_epochs: int = 100
    dropout: float = 0.2
    lr_halve_patience: int = 5
    early_stop_patience: int = 10
    log_t60: bool = True
    learn_alpha: bool = True
    alpha_init: float = 0.5
    hidden: tuple = (512, 128)
    widths: tuple = (32, 64, 128, 256)
    seed: int = 0

    def __post_init__(self):
        if self.target not in ("t60", "drr", "c50"):
            raise ValueError(f"unknown target {self.target!r}")
        if self.lr <= 0 or self.lr_halve_patience < 1 or self.early_stop_patience < 1:
            raise ValueError("lr and patience values must be positive")


class FoaConv3dRegressor(RegressorMixin, BaseEstimator):
    """Estimate one room-acoustic parameter in 10 sub-bands from FOA
    covariance coordinates.

    ``X`` is the array of unsmoothed covariance coordinates of shape
    (n_samples, frames, bands, 16) produced by
    ``SSCVExtractor(output="coordinates")``; smoothing is part of the
    model so its factors can be learned. ``y`` has shape (n_samples, 10)
    in natural units (seconds for T60, dB otherwise).

    Parameters
    ----------
    target : {"t60", "drr", "c50"}
    log_t60 : bool, default=True
        For T60, fit and predict in the log domain.
    lr, batch_size, max_epochs, dropout : training recipe
    lr_halve_patience : int, default=5
        Halve the learning rate after this many epochs without validation
        improvement.
    early_stop_patience : int, default=10
    learn_alpha : bool, default=True
        Optimize the per-band smoothing factors jointly.
    validation_fraction : float, default=0.1
        Held-out share of ``X`` when no validation set is given to ``fit``.
    random_state : int, default=0
    """

    def __init__(self, target="t60", log_t60=True, lr=5e-4, batch_size=16,
                 max_epochs=100, dropout=0.2, lr_halve_patience=5,
                 early_stop_patience=10, learn_alpha=True, alpha_init=0.5,
                 hidden=(512, 128), widths=(32, 64, 128, 256),
                 validation_fraction=0.1, random_state=0, verbose=0):
        self.target = target
        self.log_t60 = log_t60
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.dropout = dropout
        self.lr_halve_patience = lr_halve_patience
        self.early_stop_patience = early_stop_patience
        self.learn_alpha = learn_alpha
        self.alpha_init = alpha_init
        self.hidden = hidden
        self.widths = widths
        self.validation_fraction = validation_fraction
        self.random_state = random_state
        self.verbose = verbose

    @classmethod
    def from_config(cls, cfg: TrainConfig, **kwargs):
        d = asdict(cfg)
        d["random_state"] = d.pop("seed")
        d.update(kwargs)
        return cls(**d)

    @property
    def _log_domain(self):
        return self.target == "t60" and self.log_t60

    def _to_model_units(self, y):
        if self._log_domain:
            if np.any(y <= 0):
                raise ValueError("T60 targets must be positive")
            return np.log(y)
        return y

    def _from_model_units(self, y):
        return np.exp(y) if self._log_domain else y

    def _check_X(self, X, name="X"):
        X = np.asarray(X)
        if X.ndim != 4 or X.shape[-1] != SSCV_DIM:
            raise ValueError(f"{name} must have shape (n, frames, bands, 16), got {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError(f"{name} contains non-finite values")
        return X

    def fit(self, X, y, X_val=None, y_val=None):
        """Train with Adam, LR halving on plateau and early stopping; the
        weights with the lowest validation loss are kept."""
        TrainConfig(target=self.target, lr=self.lr,
                    lr_halve_patience=self.lr_halve_patience,
                    early_stop_patience=self.early_stop_patience)
        X = self._check_X(X)
        y = check_band_array(y, N_OUTPUTS, "y")
        if len(X) != len(y):
            raise ValueError("X and y have different lengths")
        rng = np.random.default_rng(self.random_state)
        if X_val is None:
            n_val = max(1, int(round(self.validation_fraction * len(X))))
            perm = rng.permutation(len(X))
            X_val, y_val = X[perm[:n_val]], y[perm[:n_val]]
            X, y = X[perm[n_val:]], y[perm[n_val:]]
        X_val = self._check_X(X_val, "X_val")
        y_val = check_band_array(y_val, N_OUTPUTS, "y_val")
        if len(X) == 0 or len(X_val) == 0:
            raise ValueError("empty training or validation split")

        yt, yv = self._to_model_units(y), self._to_model_units(y_val)
        # smoothing wants (frames, bands, ...) leading axes
        sscv0 = normalize_coordinates(
            smooth_coordinates(X.transpose(1, 2, 0, 3), self.alpha_init))
        feat_mean = sscv0.mean(axis=(0, 1, 2))
        feat_std = sscv0.std(axis=(0, 1, 2)) + 1e-6
        tgt_std = yt.std(axis=0) if len(yt) > 1 else np.ones(N_OUTPUTS)
        self.net_ = FoaConv3dNet(
            X.shape[1], X.shape[2], self.widths, self.hidden, N_OUTPUTS,
            self.dropout, self.alpha_init, self.random_state, np.float32,
            feat_mean, feat_std, yt.mean(axis=0), np.maximum(tgt_std, 1e-3))
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        self.feature_config_ = None
        net = self.net_
        opt = E.Adam(net.parameters(include_alpha=self.learn_alpha), lr=self.lr)

        X32, X_val32 = X.astype(np.float32), X_val.astype(np.float32)
        best = (np.inf, 0, net.state())
        since_best, since_lr = 0, 0
        self.history_, self.lr_events_ = [], []
        self.stop_reason_ = "max_epochs"
        for epoch in range(1, self.max_epochs + 1):
            t0 = time.perf_counter()
            net.training = True
            order = rng.permutation(len(X32))
            total = 0.0
            for start in range(0, len(order), self.batch_size):
                idx = order[start:start + self.batch_size]
                opt.zero_grad()
                pred = net.forward_coordinates(X32[idx], self.learn_alpha)
                loss = E.mse_loss(pred, yt[idx])
                value = float(loss.data)
                if not math.isfinite(value):
                    raise FloatingPointError(
                        f"non-finite training loss at epoch {epoch}, batch starting "
                        f"{start}; lr={opt.lr}, alpha range "
                        f"[{net.alpha.min():.3f}, {net.alpha.max():.3f}]")
                loss.backward()
                opt.step()
                total += value * len(idx)
            net.training = False
            train_loss = total / len(X32)
            val_loss = float(np.mean((self._predict_model_units(X_val32) - yv) ** 2))
            self.history_.append({"epoch": epoch, "train_loss": train_loss,
                                  "val_loss": val_loss, "lr": opt.lr,
                                  "seconds": time.perf_counter() - t0})
            if self.verbose:
                logger.info("epoch %d train %.5f val %.5f lr %.2e", epoch,
                            train_loss, val_loss, opt.lr)
            if val_loss < best[0]:
                best = (val_loss, epoch, net.state())
                since_best = since_lr = 0
            else:
                since_best += 1
                since_lr += 1
                if since_lr >= self.lr_halve_patience:
                    opt.lr *= 0.5
                    since_lr = 0
                    self.lr_events_.append({"epoch": epoch, "lr": opt.lr})
                if since_best >= self.early_stop_patience:
                    self.stop_reason_ = "early_stopping"
                    break
        self.best_val_loss_, self.best_epoch_ = best[0], best[1]
        self.stop_epoch_ = self.history_[-1]["epoch"]
        net.load_state(best[2])
        return self

    def _predict_model_units(self, X, batch_size=32):
        out = []
        with E.no_grad():
            for start in range(0, len(X), batch_size):
                xb = np.asarray(X[start:start + batch_size], dtype=np.float32)
                out.append(self.net_.forward_coordinates(xb).data.astype(np.float64))
        return np.concatenate(out)

    def predict(self, X) -> np.ndarray:
        """Predicted labels of shape (n_samples, 10), in natural units."""
        check_is_fitted(self, "net_")
        X = self._check_X(X)
        self.net_.training = False
        return self._from_model_units(self._predict_model_units(X))

    @property
    def alpha_(self) -> np.ndarray:
        check_is_fitted(self, "net_")
        return self.net_.alpha

    def training_report(self) -> dict:
        check_is_fitted(self, "net_")
        return {"target": self.target, "log_domain": self._log_domain,
                "epochs": self.history_, "lr_events": self.lr_events_,
                "stop_epoch": self.stop_epoch_, "stop_reason": self.stop_reason_,
                "best_epoch": self.best_epoch_, "best_val_loss": self.best_val_loss_,
                "n_parameters": self.net_.n_parameters(),
                "alpha": self.net_.alpha.tolist()}

    # persistence ----------------------------------------------------------------
    def save(self, path, feature_config: dict | None = None):
        """Write the weights and everything needed to rebuild the estimator."""
        check_is_fitted(self, "net_")
        net = self.net_
        meta = {
            "kind": CHECKPOINT_KIND,
            "estimator_params": _jsonable(self.get_params()),
            "frames": net.frames, "bands": net.bands,
            "feature_mean": net.feature_mean.tolist(),
            "feature_std": net.feature_std.tolist(),
            "target_mean": net.target_mean.tolist(),
            "target_std": net.target_std.tolist(),
            "feature_config": feature_config,
            "best_epoch": self.best_epoch_,
        }
        E.save_checkpoint(path, net.state(), meta)

    @classmethod
    def load(cls, path) -> "FoaConv3dRegressor":
        tensors, meta = E.load_checkpoint(path)
        if meta.get("kind") != CHECKPOINT_KIND:
            raise ValueError(f"{path}: not a FOA-Conv3D checkpoint")
        params = meta["estimator_params"]
        params["hidden"] = tuple(params["hidden"])
        params["widths"] = tuple(params["widths"])
        est = cls(**params)
        est.net_ = FoaConv3dNet(
            meta["frames"], meta["bands"], est.widths, est.hidden, N_OUTPUTS,
            est.dropout, est.alpha_init, est.random_state, np.float32,
            np.array(meta["feature_mean"]), np.array(meta["feature_std"]),
            np.array(meta["target_mean"]), np.array(meta["target_std"]))
        if tensors["smoothing.raw_alpha"].shape != (meta["bands"],):
            raise ValueError("checkpoint smoothing factors do not match its band count")
        est.net_.load_state(tensors)
        est.feature_config_ = meta.get("feature_config")
        est.best_epoch_ = meta.get("best_epoch")
        est.n_features_in_ = meta["frames"] * meta["bands"] * SSCV_DIM
        return est


def _jsonable(d):
    return json.loads(json.dumps(d, default=lambda o: list(o) if isinstance(o, tuple) else str(o)))


def predict_the_mean(y_train, n_samples) -> np.ndarray:
    """Baseline predictions: the per-band training mean for every sample."""
    y_train = check_band_array(y_train, N_OUTPUTS, "y_train")
    return np.tile(y_train.mean(axis=0), (n_samples, 1))
