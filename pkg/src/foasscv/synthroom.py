"""Parametric FOA room impulse responses and a desk-scale dataset builder.

Rooms are not geometric: each RIR is a SN3D-encoded direct impulse plus a
diffuse tail of band-limited noise with a per-band exponential envelope.
The tail's per-band gain is calibrated so that the measured DRR hits the
requested target, which keeps every label checkable against the room spec.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .acoustics import Rir, drr_from_rir, labels_from_rir, labels_record
from .filterbank import N_LABEL_BANDS, ThirdOctaveBank, bandpass_filter, build_third_octave_bank
from .signal_io import FoaSignal, fit_duration, read_mono_wav, write_foa_wav

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1
TAU_RANGE_S = (0.02, 0.2)
DRR_RANGE_DB = (-6.0, 12.0)
DELAY_RANGE_MS = (3.0, 15.0)
SPLIT_FRACTIONS = {"train": 0.7, "val": 0.1, "test": 0.2}
_DIFFUSE_DIPOLE_GAIN = 1.0 / np.sqrt(3.0)
_CALIBRATION_TOL_DB = 0.05
_CALIBRATION_ITERS = 12
# the diffuse tail starts right after the +-2.5 ms direct window


class UnreachableDrrError(ValueError):
    """The requested DRR cannot be produced with this room spec."""


def make_rng(*key) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by integers, e.g. (seed, room)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(key))))


@dataclass
class RoomSpec:
    """Parameters of one synthetic room/source configuration.

    Attributes
    ----------
    tau_s : list of 10 float
        Amplitude decay constants per label band (energy decays as exp(-2t/tau)).
    drr_db : list of 10 float
        Target direct-to-reverberant ratios per band.
    azimuth, elevation : float
        Source direction in radians.
    delay_ms : float
        Direct-path arrival time.
    seed : int
        Seed of the tail noise.
    """

    tau_s: list
    drr_db: list
    azimuth: float = 0.0
    elevation: float = 0.0
    delay_ms: float = 5.0
    seed: int = 0

    def __post_init__(self):
        self.tau_s = [float(t) for t in self.tau_s]
        self.drr_db = [float(d) for d in self.drr_db]
        if len(self.tau_s) != N_LABEL_BANDS or len(self.drr_db) != N_LABEL_BANDS:
            raise ValueError("tau_s and drr_db need one value per label band")
        if min(self.tau_s) <= 0.0:
            raise ValueError("decay constants must be positive")
        if self.delay_ms < 0.0:
            raise ValueError("delay must be non-negative")
        if not -np.pi <= self.azimuth <= np.pi:
            raise ValueError("azimuth must lie in [-pi, pi]")
        if not -np.pi / 2 <= self.elevation <= np.pi / 2:
            raise ValueError("elevation must lie in [-pi/2, pi/2]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FoaRir:
    """Four-channel (W, X, Y, Z) impulse response."""

    h: np.ndarray
    sample_rate: int
    direct_index: int

    @property
    def w(self) -> Rir:
        """Omnidirectional channel as a labelled single-channel RIR."""
        return Rir(self.h[0], self.sample_rate, self.direct_index)


def foa_encode_direction(azimuth, elevation) -> np.ndarray:
    """SN3D first-order gains (W, X, Y, Z) for a plane wave."""
    ce = np.cos(elevation)
    return np.array([1.0, np.cos(azimuth) * ce, np.sin(azimuth) * ce,
                     np.sin(elevation)])


def rir_length(spec: RoomSpec, sample_rate: int) -> int:
    tail = max(9.0 * max(spec.tau_s), 0.3)
    return int(round(spec.delay_ms * 1e-3 * sample_rate)) + int(np.ceil(tail * sample_rate))


def _tail_components(spec, bank, n, rng):
    """Unit-density band noises with per-band envelopes, shape (11, 4, n).

    Component 0 covers everything below the first label band and reuses the
    first band's decay constant.
    """
    t = np.arange(n) / bank.sample_rate
    low = sps.butter(4, bank.lower_hz[0], "lowpass", fs=bank.sample_rate, output="sos")
    comps = np.empty((N_LABEL_BANDS + 1, 4, n))
    taus = [spec.tau_s[0]] + list(spec.tau_s)
    for c in range(N_LABEL_BANDS + 1):
        noise = rng.standard_normal((4, n))
        if c == 0:
            noise = sps.sosfiltfilt(low, noise, axis=-1)
        else:
            noise = bandpass_filter(noise, c - 1, bank)
        noise[1:] *= _DIFFUSE_DIPOLE_GAIN
        comps[c] = noise * np.exp(-t / taus[c])
    return comps


def synth_foa_rir(spec: RoomSpec, bank: ThirdOctaveBank | None = None,
                  sample_rate=16000) -> FoaRir:
    """Synthesize a FOA RIR whose per-band DRR matches ``spec.drr_db``.

    Raises
    ------
    UnreachableDrrError
        If a target DRR exceeds what the band-filtered direct path alone
        produces, or calibration does not converge.
    """
    bank = bank or build_third_octave_bank(sample_rate)
    sr = bank.sample_rate
    n = rir_length(spec, sr)
    d = int(round(spec.delay_ms * 1e-3 * sr))
    if d < int(round(0.0025 * sr)):
        raise ValueError("direct delay must leave room for the 2.5 ms DRR window")
    direct = np.zeros((4, n))
    direct[:, d] = foa_encode_direction(spec.azimuth, spec.elevation)
    target = np.asarray(spec.drr_db)

    def band_drr(w):
        return np.array([drr_from_rir(Rir(bandpass_filter(w, k, bank), sr, d))
                         for k in range(N_LABEL_BANDS)])

    ceiling = band_drr(direct[0])
    if np.any(target > ceiling - 0.5):
        k = int(np.argmax(target - ceiling))
        raise UnreachableDrrError(
            f"band {k}: target DRR {target[k]:.1f} dB exceeds the direct-path "
            f"ceiling {ceiling[k]:.1f} dB")

    half = int(round(0.0025 * sr))
    onset = d + half + 1
    comps = np.zeros((N_LABEL_BANDS + 1, 4, n))
    comps[:, :, onset:] = _tail_components(spec, bank, n - onset, make_rng(spec.seed))
    window = slice(d - half, d + half + 1)
    direct_bands = np.stack([bandpass_filter(direct[0], k, bank)
                             for k in range(N_LABEL_BANDS)])
    a_in = np.sum(direct_bands[:, window] ** 2, axis=1)
    a_out = np.sum(direct_bands[:, d + half + 1:] ** 2, axis=1)
    ratio = 10.0 ** (target / 10.0)

    def assemble(g):
        return direct + np.tensordot(np.concatenate([[g[0]], g]), comps, axes=1)

    # scaling the band-filtered tail T by u gives in/out energies
    # a + 2u c + u^2 b (a: direct, c: direct x tail, b: tail); solve the
    # quadratic per band, then repeat since neighbouring bands leak into each other
    gains = np.ones(N_LABEL_BANDS)
    for _ in range(_CALIBRATION_ITERS):
        tail = assemble(gains)[0] - direct[0]
        tail_bands = np.stack([bandpass_filter(tail, k, bank)
                               for k in range(N_LABEL_BANDS)])
        cross = direct_bands * tail_bands
        b_in = np.sum(tail_bands[:, window] ** 2, axis=1)
        b_out = np.sum(tail_bands[:, d + half + 1:] ** 2, axis=1)
        c_in = np.sum(cross[:, window], axis=1)
        c_out = np.sum(cross[:, d + half + 1:], axis=1)
        qa = ratio * b_out - b_in
        qb = 2.0 * (ratio * c_out - c_in)
        qc = ratio * a_out - a_in
        disc = qb ** 2 - 4.0 * qa * qc
        bad = (qa <= 0.0) | (disc < 0.0)
        if np.any(bad):
            k = int(np.argmax(bad))
            raise UnreachableDrrError(
                f"band {k}: target DRR {target[k]:.1f} dB is below the tail-only "
                f"floor {10 * np.log10(b_in[k] / b_out[k]):.1f} dB")
        gains *= np.maximum((-qb + np.sqrt(disc)) / (2.0 * qa), 0.0)
        err = band_drr(assemble(gains)[0]) - target
        if np.max(np.abs(err)) < _CALIBRATION_TOL_DB:
            break
    else:
        if np.max(np.abs(err)) > 0.5:
            raise UnreachableDrrError(
                f"DRR calibration did not converge (max error {np.max(np.abs(err)):.2f} dB)")
    return FoaRir(assemble(gains), sr, d)


def convolve_foa(dry, rir: FoaRir, duration=4.0) -> FoaSignal:
    """Convolve a mono source with every RIR channel, then trim/pad."""
    dry = np.asarray(dry, dtype=np.float64)
    if not (np.all(np.isfinite(dry)) and np.all(np.isfinite(rir.h))):
        raise ValueError("non-finite input")
    wet = sps.fftconvolve(dry[None, :], rir.h, axes=-1)
    sig = FoaSignal(wet, rir.sample_rate)
    return fit_duration(sig, duration) if duration is not None else sig


def synthetic_speech(rng, duration=4.0, sample_rate=16000) -> np.ndarray:
    """Speech-shaped noise: pink-ish spectrum gated into ~4 Hz syllables
    with occasional pauses. Unit RMS over active parts."""
    n = int(round(duration * sample_rate))
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / sample_rate)
    shape = 1.0 / np.sqrt(np.maximum(f, 100.0) / 100.0)
    shape *= 1.0 / (1.0 + (f / 5000.0) ** 4) + 0.05
    noise = np.fft.irfft(spec * shape, n)

    env = np.zeros(n)
    pos = int(rng.uniform(0.0, 0.2) * sample_rate)
    while pos < n:
        if rng.random() < 0.2:
            pos += int(rng.uniform(0.1, 0.4) * sample_rate)
            continue
        length = int(rng.uniform(0.15, 0.3) * sample_rate)
        seg = np.hanning(length) * rng.uniform(0.3, 1.0)
        end = min(pos + length, n)
        env[pos:end] += seg[:end - pos]
        pos += int(length * rng.uniform(0.7, 1.0))
    out = noise * env
    return out / np.sqrt(np.mean(out ** 2) + 1e-20)


def sample_room_spec(rng) -> RoomSpec:
    """Draw a room with smoothly frequency-dependent decay and DRR.

    The broadband decay constant is log-uniform in ``TAU_RANGE_S`` and the
    broadband DRR uniform in ``DRR_RANGE_DB``; per-band values follow a
    random linear tilt plus small jitter, clipped to the same ranges.
    """
    x = (np.arange(N_LABEL_BANDS) - 4.5) / 9.0
    lo, hi = np.log(TAU_RANGE_S)
    log_tau = rng.uniform(lo, hi) + rng.uniform(-0.7, 0.3) * x
    log_tau += rng.normal(0.0, 0.03, N_LABEL_BANDS)
    tau = np.exp(np.clip(log_tau, lo, hi))
    drr = rng.uniform(*DRR_RANGE_DB) + rng.uniform(-4.0, 4.0) * x
    drr = np.clip(drr + rng.normal(0.0, 0.3, N_LABEL_BANDS), *DRR_RANGE_DB)
    return RoomSpec(
        tau_s=tau.tolist(), drr_db=drr.tolist(),
        azimuth=float(rng.uniform(-np.pi, np.pi)),
        elevation=float(np.arcsin(rng.uniform(-1.0, 1.0))),
        delay_ms=float(rng.uniform(*DELAY_RANGE_MS)),
        seed=int(rng.integers(0, 2 ** 62)))


@dataclass
class UtteranceRecord:
    utterance_id: str
    audio: str
    rir: str
    rir_id: str
    labels: str
    split: str
    room: dict


@dataclass
class DatasetManifest:
    """Utterance records plus the dataset-level metadata."""

    records: list = field(default_factory=list)
    root: Path | None = None

    def split(self, name: str) -> list:
        return [r for r in self.records if r.split == name]

    def path(self, rel) -> Path:
        return Path(self.root) / rel

    def check_disjoint(self):
        rooms = {}
        for r in self.records:
            rooms.setdefault(r.rir_id, set()).add(r.split)
        shared = [k for k, v in rooms.items() if len(v) > 1]
        if shared:
            raise ValueError(f"rooms shared across splits: {shared[:5]}")

    def save(self, path):
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(asdict(r), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.jsonl"
        records = [UtteranceRecord(**json.loads(line))
                   for line in path.read_text().splitlines() if line.strip()]
        return cls(records, path.parent)


def split_counts(n_rooms: int) -> dict:
    n_test = max(1, int(round(SPLIT_FRACTIONS["test"] * n_rooms)))
    n_val = int(round(SPLIT_FRACTIONS["val"] * n_rooms)) if n_rooms >= 3 else 0
    n_val = max(n_val, 1) if n_rooms >= 3 else 0
    return {"train": n_rooms - n_test - n_val, "val": n_val, "test": n_test}


def _dry_signal(dry_source, rng, duration, sample_rate):
    if dry_source == "synthetic":
        return synthetic_speech(rng, duration, sample_rate)
    files = sorted(Path(dry_source).glob("*.wav"))
    if not files:
        raise FileNotFoundError(f"no .wav files in {dry_source}")
    x, rate = read_mono_wav(files[int(rng.integers(len(files)))])
    if rate != sample_rate:
        raise ValueError(f"dry source rate {rate} != {sample_rate}")
    n = int(round(duration * sample_rate))
    return np.pad(x[:n], (0, max(0, n - x.size)))


def build_dataset(n_rooms: int, out_dir, dry_source="synthetic", seed=0,
                  sample_rate=16000, duration=4.0, max_attempts=8) -> DatasetManifest:
    """Synthesize ``n_rooms`` rooms, one reverberant utterance each.

    Writes ``audio/``, ``rir/``, ``labels/``, ``manifest.jsonl`` and
    ``dataset.json`` under ``out_dir``. Output bytes depend only on the
    arguments.
    """
    if n_rooms < 2:
        raise ValueError("need at least two rooms")
    out = Path(out_dir)
    for sub in ("audio", "rir", "labels"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    bank = build_third_octave_bank(sample_rate)

    counts = split_counts(n_rooms)
    order = make_rng(seed, 2 ** 32).permutation(n_rooms)
    split_of = {}
    for i, idx in enumerate(order):
        split_of[int(idx)] = ("train" if i < counts["train"] else
                              "val" if i < counts["train"] + counts["val"] else "test")

    records = []
    for idx in range(n_rooms):
        rir_id = f"room_{idx:05d}"
        for attempt in range(max_attempts):
            rng = make_rng(seed, idx, attempt)
            spec = sample_room_spec(rng)
            try:
                rir = synth_foa_rir(spec, bank)
                break
            except UnreachableDrrError as exc:
                logger.info("%s attempt %d rejected: %s", rir_id, attempt, exc)
        else:
            raise UnreachableDrrError(f"{rir_id}: no valid spec in {max_attempts} draws")
        dry = _dry_signal(dry_source, rng, duration, sample_rate)
        wet = convolve_foa(dry, rir, duration)
        peak = np.max(np.abs(wet.samples))
        wet = wet.scaled(0.5 / peak) if peak > 0 else wet
        write_foa_wav(out / "rir" / f"{rir_id}.wav", FoaSignal(rir.h, sample_rate))
        write_foa_wav(out / "audio" / f"{rir_id}.wav", wet)
        # label the RIR as stored (float32) so relabelling reproduces it exactly
        stored = rir.h[0].astype(np.float32).astype(np.float64)
        labels = labels_from_rir(Rir(stored, sample_rate, rir.direct_index), bank)
        rec = labels_record(rir_id, labels)
        rec["direct_index"] = rir.direct_index
        (out / "labels" / f"{rir_id}.json").write_text(json.dumps(rec, indent=2))
        records.append(UtteranceRecord(
            utterance_id=f"{rir_id}_u0", audio=f"audio/{rir_id}.wav",
            rir=f"rir/{rir_id}.wav", rir_id=rir_id, labels=f"labels/{rir_id}.json",
            split=split_of[idx], room=spec.to_dict()))

    manifest = DatasetManifest(records, out)
    manifest.check_disjoint()
    manifest.save(out / "manifest.jsonl")
    meta = {"version": MANIFEST_VERSION, "n_rooms": n_rooms, "seed": seed,
            "sample_rate": sample_rate, "duration_s": duration,
            "dry_source": str(dry_source), "normalization": "SN3D",
            "channel_order": "WXYZ", "tau_range_s": TAU_RANGE_S,
            "drr_range_db": DRR_RANGE_DB, "delay_range_ms": DELAY_RANGE_MS,
            "splits": counts}
    (out / "dataset.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return manifest
