"""Blind estimation of T60, DRR and C50 in ten third-octave bands from
first-order Ambisonics recordings, using spectro-spatial covariance
vectors (SSCV) and a 3D-convolutional regressor."""

from .acoustics import BandLabels, Rir, c50_from_rir, drr_from_rir, labels_from_rir, t60_from_rir
from .filterbank import build_mel_filterbank, build_third_octave_bank
from .metrics import EvalReport, mae_per_band, pcc_per_band, pov_per_band
from .model import FoaConv3dNet, FoaConv3dRegressor, TrainConfig
from .signal_io import FoaSignal, FrameSpec, read_foa_wav, write_foa_wav
from .sscv import SSCVExtractor, invert_vectorize, sscv_pipeline, vectorize
from .synthroom import DatasetManifest, RoomSpec, build_dataset, synth_foa_rir

__version__ = "0.1.0"

__all__ = [
    "BandLabels", "DatasetManifest", "EvalReport", "FoaConv3dNet",
    "FoaConv3dRegressor", "FoaSignal", "FrameSpec", "Rir", "RoomSpec",
    "SSCVExtractor", "TrainConfig", "build_dataset", "build_mel_filterbank",
    "build_third_octave_bank", "c50_from_rir", "drr_from_rir",
    "invert_vectorize", "labels_from_rir", "mae_per_band", "pcc_per_band",
    "pov_per_band", "read_foa_wav", "sscv_pipeline", "synth_foa_rir",
    "t60_from_rir", "vectorize", "write_foa_wav",
]
