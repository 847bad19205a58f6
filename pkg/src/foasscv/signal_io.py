"""Multichannel WAV I/O, framing and per-frame DFT for FOA recordings.

Channels are kept in W, X, Y, Z order everywhere, including on disk.
This is *not* AmbiX (ACN would be W, Y, Z, X).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import get_window

N_CHANNELS = 4
CHANNEL_ORDER = "WXYZ"
DEFAULT_SAMPLE_RATE = 16000
DEFAULT_DURATION = 4.0

_WAVE_FORMAT_PCM = 1
_WAVE_FORMAT_IEEE_FLOAT = 3
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


class WavError(ValueError):
    """Base class for WAV reading problems."""


class ChannelCountError(WavError):
    pass


class UnsupportedEncodingError(WavError):
    pass


class TruncatedFileError(WavError):
    pass


@dataclass
class FoaSignal:
    """Four-channel time-domain Ambisonics recording.

    Parameters
    ----------
    samples : ndarray of shape (4, n_samples)
        Full-scale amplitudes, W, X, Y, Z rows.
    sample_rate : int
        Sampling rate in Hz.
    channel_order : str
        Channel order tag; only ``"WXYZ"`` is used internally.
    """

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE
    channel_order: str = CHANNEL_ORDER

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[0] != N_CHANNELS:
            raise ChannelCountError(
                f"FOA signal needs shape (4, n), got {self.samples.shape}")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("FOA samples must be finite")
        if self.channel_order != CHANNEL_ORDER:
            raise ValueError(f"unsupported channel order {self.channel_order!r}")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def scaled(self, gain: float) -> "FoaSignal":
        return FoaSignal(self.samples * gain, self.sample_rate)


@dataclass
class FrameSpec:
    """Framing configuration: frame length, hop and analysis window.

    The default Hann window is the periodic form (denominator ``L``).
    """

    frame_len: int = 1536
    hop: int = 768
    window: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if not 0 < self.hop <= self.frame_len:
            raise ValueError("need 0 < hop <= frame_len")
        if self.window is None:
            self.window = get_window("hann", self.frame_len, fftbins=True)
        self.window = np.asarray(self.window, dtype=np.float64)
        if self.window.shape != (self.frame_len,):
            raise ValueError("window length must equal frame_len")

    @classmethod
    def from_duration(cls, sample_rate=DEFAULT_SAMPLE_RATE, window_ms=96.0,
                      overlap=0.5):
        frame_len = int(round(sample_rate * window_ms / 1000.0))
        hop = int(round(frame_len * (1.0 - overlap)))
        return cls(frame_len, hop)

    @classmethod
    def rectangular(cls, frame_len, hop=None):
        return cls(frame_len, hop or frame_len, np.ones(frame_len))

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.frame_len:
            raise ValueError(
                f"signal of {n_samples} samples is shorter than one frame "
                f"({self.frame_len})")
        return (n_samples - self.frame_len) // self.hop + 1


@dataclass
class SpectralFrames:
    """One-sided per-frame spectra, shape (frames, 4, frame_len // 2 + 1)."""

    X: np.ndarray
    frame_len: int

    @property
    def frame_count(self) -> int:
        return self.X.shape[0]

    @property
    def n_bins(self) -> int:
        return self.X.shape[-1]


def fit_duration(signal: FoaSignal, duration=DEFAULT_DURATION) -> FoaSignal:
    """Trim from the end or zero-pad at the end to exactly ``duration`` s."""
    n = int(round(duration * signal.sample_rate))
    x = signal.samples[:, :n]
    if x.shape[1] < n:
        x = np.pad(x, ((0, 0), (0, n - x.shape[1])))
    return FoaSignal(x, signal.sample_rate)


def frame_signal(x: FoaSignal, spec: FrameSpec) -> np.ndarray:
    """Cut a signal into windowed frames of shape (frames, 4, L).

    Trailing samples that do not fill a whole frame are dropped.
    """
    n_frames = spec.n_frames(x.n_samples)
    view = np.lib.stride_tricks.sliding_window_view(
        x.samples, spec.frame_len, axis=1)[:, ::spec.hop][:, :n_frames]
    return np.ascontiguousarray(view.transpose(1, 0, 2)) * spec.window


def dft_frames(frames: np.ndarray) -> SpectralFrames:
    """Unnormalized one-sided DFT of every frame and channel."""
    frames = np.asarray(frames)
    if not np.all(np.isfinite(frames)):
        raise ValueError("non-finite samples in frames")
    return SpectralFrames(np.fft.rfft(frames, axis=-1), frames.shape[-1])


def stft_foa(x: FoaSignal, spec: FrameSpec) -> SpectralFrames:
    return dft_frames(frame_signal(x, spec))


def write_foa_wav(path, signal: FoaSignal):
    """Write a 4-channel float32 WAV in W, X, Y, Z order."""
    data = np.ascontiguousarray(signal.samples.T.astype(np.float32))
    wavfile.write(str(path), int(signal.sample_rate), data)


def _iter_chunks(raw: bytes):
    pos = 12
    while pos + 8 <= len(raw):
        cid, size = struct.unpack("<4sI", raw[pos:pos + 8])
        yield cid, pos + 8, size
        pos += 8 + size + (size & 1)


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a PCM16 or float32 WAV into a float64 (channels, n) array."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise UnsupportedEncodingError(f"{path}: not a RIFF/WAVE file")
    fmt = None
    for cid, start, size in _iter_chunks(raw):
        if cid == b"fmt ":
            if start + 16 > len(raw):
                raise TruncatedFileError(f"{path}: truncated fmt chunk")
            fmt = struct.unpack("<HHIIHH", raw[start:start + 16])
            if fmt[0] == _WAVE_FORMAT_EXTENSIBLE and size >= 26:
                fmt = (struct.unpack("<H", raw[start + 24:start + 26])[0],) + fmt[1:]
        elif cid == b"data":
            if fmt is None:
                raise UnsupportedEncodingError(f"{path}: data chunk before fmt")
            tag, channels, rate, _, block_align, bits = fmt
            if (tag, bits) == (_WAVE_FORMAT_PCM, 16):
                dtype, scale = np.dtype("<i2"), 1.0 / 32768.0
            elif (tag, bits) == (_WAVE_FORMAT_IEEE_FLOAT, 32):
                dtype, scale = np.dtype("<f4"), 1.0
            else:
                raise UnsupportedEncodingError(
                    f"{path}: format tag {tag} with {bits} bits is not supported")
            available = len(raw) - start
            if size > available:
                raise TruncatedFileError(
                    f"{path}: data chunk declares {size} bytes, {available} present")
            if size % block_align:
                raise TruncatedFileError(f"{path}: partial trailing sample frame")
            data = np.frombuffer(raw, dtype, size // dtype.itemsize, start)
            data = data.reshape(-1, channels).T.astype(np.float64) * scale
            return data, rate
    if fmt is None:
        raise UnsupportedEncodingError(f"{path}: no fmt chunk")
    raise TruncatedFileError(f"{path}: no data chunk")


def read_foa_wav(path) -> FoaSignal:
    data, rate = read_wav(path)
    if data.shape[0] != N_CHANNELS:
        raise ChannelCountError(
            f"{path}: expected 4 channels, found {data.shape[0]}")
    return FoaSignal(data, rate)


def read_mono_wav(path) -> tuple[np.ndarray, int]:
    data, rate = read_wav(path)
    return data[0], rate
