import filecmp
import json

import numpy as np
import pytest
from scipy.stats import spearmanr

from foasscv.acoustics import Rir, labels_from_rir
from foasscv.synthroom import (DRR_RANGE_DB, TAU_RANGE_S, DatasetManifest, FoaRir, RoomSpec,
                               UnreachableDrrError, build_dataset, convolve_foa,
                               foa_encode_direction, make_rng, sample_room_spec, split_counts,
                               synth_foa_rir, synthetic_speech)

SR = 16000


@pytest.mark.parametrize("az,el,expect", [
    (0.0, 0.0, [1, 1, 0, 0]),
    (np.pi / 2, 0.0, [1, 0, 1, 0]),
    (0.0, np.pi / 2, [1, 0, 0, 1]),
])
def test_encode_direction(az, el, expect):
    assert np.allclose(foa_encode_direction(az, el), expect, atol=1e-15)


def test_room_spec_validation():
    ok = dict(tau_s=[0.1] * 10, drr_db=[0.0] * 10)
    RoomSpec(**ok)
    for bad in (dict(tau_s=[0.1] * 9), dict(tau_s=[0.0] + [0.1] * 9), dict(delay_ms=-1.0),
                dict(azimuth=4.0), dict(elevation=-2.0)):
        with pytest.raises(ValueError):
            RoomSpec(**{**ok, **bad})


@pytest.fixture(scope="module")
def flat_room(third_octave):
    drr = np.linspace(-5, 10, 10)
    spec = RoomSpec([0.1] * 10, drr.tolist(), azimuth=0.7, elevation=0.3, delay_ms=8.0, seed=3)
    return spec, synth_foa_rir(spec, third_octave)


def test_synth_t60_follows_tau(flat_room, third_octave):
    _, rir = flat_room
    t60 = labels_from_rir(rir.w, third_octave)["t60"].values
    assert np.all(np.abs(t60 / (6.9078 * 0.1) - 1) < 0.10)


def test_synth_drr_hits_target(flat_room, third_octave):
    spec, rir = flat_room
    drr = labels_from_rir(rir.w, third_octave)["drr"].values
    assert np.max(np.abs(drr - spec.drr_db)) < 1.0


def test_direct_path_direction(flat_room):
    spec, rir = flat_room
    half = int(0.0025 * SR)
    win = slice(rir.direct_index - half, rir.direct_index + half + 1)
    h = rir.h[:, win]
    intensity = (h[0] * h[1:]).sum(axis=1)
    est = intensity / np.linalg.norm(intensity)
    true = foa_encode_direction(spec.azimuth, spec.elevation)[1:]
    angle = np.degrees(np.arccos(np.clip(est @ true / np.linalg.norm(true), -1, 1)))
    assert angle < 5.0
    assert rir.h[0, rir.direct_index] == 1.0


def test_tail_covariance_is_diffuse(third_octave):
    spec = RoomSpec([0.2] * 10, [-5.0] * 10, seed=9)
    rir = synth_foa_rir(spec, third_octave)
    tail = rir.h[:, rir.direct_index + 41:]
    cov = tail @ tail.T
    cov /= cov[0, 0]
    assert np.allclose(np.diag(cov), [1, 1 / 3, 1 / 3, 1 / 3], atol=0.05)
    assert np.max(np.abs(cov[~np.eye(4, dtype=bool)])) < 0.05


def test_unreachable_drr_rejected(third_octave):
    with pytest.raises(UnreachableDrrError):
        synth_foa_rir(RoomSpec([0.1] * 10, [20.0] * 10), third_octave)


def test_synth_is_deterministic(third_octave):
    spec = sample_room_spec(make_rng(1, 2, 0))
    a = synth_foa_rir(spec, third_octave)
    b = synth_foa_rir(spec, third_octave)
    assert np.array_equal(a.h, b.h)


def test_sampled_specs_in_range():
    for i in range(50):
        spec = sample_room_spec(make_rng(0, i))
        assert TAU_RANGE_S[0] <= min(spec.tau_s) and max(spec.tau_s) <= TAU_RANGE_S[1]
        assert DRR_RANGE_DB[0] <= min(spec.drr_db) and max(spec.drr_db) <= DRR_RANGE_DB[1]


def test_measured_t60_rank_tracks_tau(third_octave):
    taus, t60s = [], []
    for i in range(6):
        spec = sample_room_spec(make_rng(42, i))
        try:
            rir = synth_foa_rir(spec, third_octave)
        except UnreachableDrrError:
            continue
        taus += spec.tau_s
        t60s += list(labels_from_rir(rir.w, third_octave)["t60"].values)
    assert len(taus) >= 40
    assert spearmanr(taus, t60s).statistic >= 0.95


def test_convolve_with_w_impulse(rng):
    dry = rng.standard_normal(1000)
    h = np.zeros((4, 10))
    h[0, 0] = 1.0
    wet = convolve_foa(dry, FoaRir(h, SR, 0), duration=None)
    assert np.allclose(wet.samples[0, :1000], dry, atol=1e-12)
    assert np.allclose(wet.samples[1:], 0, atol=1e-12)


def test_convolve_delayed_impulse(rng):
    dry = rng.standard_normal(500)
    h = np.zeros((4, 40))
    h[:, 17] = 1.0
    wet = convolve_foa(dry, FoaRir(h, SR, 17), duration=None).samples
    assert np.allclose(wet[:, 17:517], dry, atol=1e-12)
    assert np.allclose(wet[:, :17], 0, atol=1e-12)


def test_convolve_matches_direct_sum(rng):
    dry = rng.standard_normal(300)
    h = rng.standard_normal((4, 50))
    wet = convolve_foa(dry, FoaRir(h, SR, 0), duration=None).samples
    for c in range(4):
        ref = np.zeros(349)
        for i in range(300):
            for j in range(50):
                ref[i + j] += dry[i] * h[c, j]
        assert np.max(np.abs(wet[c] - ref)) < 1e-10


def test_convolve_trims_to_duration(rng):
    wet = convolve_foa(rng.standard_normal(64000), FoaRir(rng.standard_normal((4, 100)), SR, 0))
    assert wet.n_samples == 64000


def test_synthetic_speech():
    a = synthetic_speech(make_rng(0), 4.0)
    b = synthetic_speech(make_rng(0), 4.0)
    assert np.array_equal(a, b) and a.shape == (64000,)
    assert np.sqrt(np.mean(a ** 2)) == pytest.approx(1.0)
    # gated: a noticeable share of near-silent samples
    assert np.mean(np.abs(a) < 1e-3) > 0.02


def test_split_counts():
    assert split_counts(200) == {"train": 140, "val": 20, "test": 40}
    assert split_counts(50) == {"train": 35, "val": 5, "test": 10}
    assert sum(split_counts(7).values()) == 7


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds") / "a"
    return out, build_dataset(10, out, seed=5)


def test_dataset_layout_and_splits(small_dataset):
    out, manifest = small_dataset
    assert len(manifest.records) == 10
    assert {r.split for r in manifest.records} == {"train", "val", "test"}
    manifest.check_disjoint()
    train = {r.rir_id for r in manifest.split("train")}
    assert not train & {r.rir_id for r in manifest.split("test")}
    meta = json.loads((out / "dataset.json").read_text())
    assert meta["normalization"] == "SN3D" and meta["channel_order"] == "WXYZ"
    rec = manifest.records[0]
    for rel in (rec.audio, rec.rir, rec.labels):
        assert manifest.path(rel).exists()
    loaded = DatasetManifest.load(out)
    assert loaded.records == manifest.records


def test_dataset_is_byte_identical(small_dataset, tmp_path):
    out, _ = small_dataset
    build_dataset(10, tmp_path / "b", seed=5)
    cmp = filecmp.dircmp(out, tmp_path / "b")
    assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
    for sub in ("audio", "rir", "labels"):
        names = sorted(p.name for p in (out / sub).iterdir())
        match, mismatch, errors = filecmp.cmpfiles(out / sub, tmp_path / "b" / sub, names,
                                                   shallow=False)
        assert not mismatch and not errors


def test_dataset_labels_match_rir(small_dataset, third_octave):
    out, manifest = small_dataset
    from foasscv.signal_io import read_wav
    rec = manifest.records[3]
    h, _ = read_wav(manifest.path(rec.rir))
    doc = json.loads(manifest.path(rec.labels).read_text())
    rir = Rir(h[0], SR, doc["direct_index"])
    assert np.allclose(labels_from_rir(rir, third_octave)["drr"].values, doc["drr_db"], atol=1e-3)


def test_dataset_needs_two_rooms(tmp_path):
    with pytest.raises(ValueError):
        build_dataset(1, tmp_path)


def test_shared_room_detected():
    from foasscv.synthroom import UtteranceRecord
    recs = [UtteranceRecord("u0", "a", "r", "room_0", "l", "train", {}),
            UtteranceRecord("u1", "a", "r", "room_0", "l", "test", {})]
    with pytest.raises(ValueError, match="shared"):
        DatasetManifest(recs).check_disjoint()
