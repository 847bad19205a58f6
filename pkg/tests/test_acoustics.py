import json

import numpy as np
import pytest

from conftest import damped_multisine
from foasscv.acoustics import (EDC_FLOOR_DB, LABEL_CAP_DB, BandLabels, InsufficientDecayError,
                               Rir, c50_from_rir, drr_from_rir, is_capped, labels_from_rir,
                               labels_record, read_labels, schroeder_edc, t30_from_rir,
                               t60_from_rir, write_labels)
from foasscv.synthroom import RoomSpec, synth_foa_rir

SR = 16000


def noise_rir(tau, seconds=1.5, seed=0, delay=0):
    rng = np.random.default_rng(seed)
    t = np.arange(int(seconds * SR)) / SR
    h = rng.standard_normal(t.size) * np.exp(-t / tau)
    return np.concatenate([np.zeros(delay), h])


def test_edc_of_impulse():
    edc = schroeder_edc(np.r_[1.0, np.zeros(9)])
    assert edc[0] == 0.0 and np.all(edc[1:] == EDC_FLOOR_DB)


def test_edc_slope_of_exponential_noise():
    edc = schroeder_edc(noise_rir(0.05))
    t = np.arange(edc.size) / SR
    sel = (edc < -5) & (edc > -35)
    slope = np.polyfit(t[sel], edc[sel], 1)[0]
    assert slope == pytest.approx(-8.686 / 0.05, rel=0.05)


def test_edc_monotone_and_starts_at_zero(rng):
    edc = schroeder_edc(rng.standard_normal(3000))
    assert edc[0] == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.diff(edc) <= 1e-12)


def test_edc_rejects_silence():
    with pytest.raises(ValueError):
        schroeder_edc(np.zeros(10))


@pytest.mark.parametrize("tau", [0.05, 0.1])
def test_t60_of_exponential_noise(tau):
    assert t60_from_rir(noise_rir(tau)) == pytest.approx(6.9078 * tau, rel=0.05)


def test_t60_is_twice_t30():
    h = noise_rir(0.07)
    assert t60_from_rir(h) == 2.0 * t30_from_rir(h)


def test_insufficient_decay():
    with pytest.raises(InsufficientDecayError):
        t60_from_rir(np.ones(1000))


def test_drr_equal_energies_is_zero():
    h = np.zeros(2000)
    h[100] = 1.0
    h[1000] = 1.0
    assert drr_from_rir(Rir(h, SR, 100)) == pytest.approx(0.0, abs=1e-12)


def test_drr_constructed_ratio(rng):
    h = np.zeros(8000)
    d = 200
    h[d] = 1.0
    tail = rng.standard_normal(7000)
    tail *= np.sqrt(0.1 / np.sum(tail ** 2))
    h[d + 41:d + 41 + 7000] = tail
    assert drr_from_rir(Rir(h, SR, d)) == pytest.approx(10.0, abs=0.1)


def test_drr_of_pure_impulse_is_capped():
    h = np.zeros(1000)
    h[50] = 1.0
    value = drr_from_rir(Rir(h, SR, 50))
    assert value == LABEL_CAP_DB and is_capped(value)


@pytest.mark.parametrize("tau", [0.03, 0.05, 0.1])
def test_c50_closed_form(tau):
    # deterministic envelope: the geometric-series ratio equals e^(0.1/tau) - 1
    t = np.arange(int(2.0 * SR)) / SR
    expect = 10 * np.log10(np.exp(0.1 / tau) - 1)
    assert c50_from_rir(Rir(np.exp(-t / tau), SR, 0)) == pytest.approx(expect, abs=0.01)


def test_c50_tau_005_value():
    assert 10 * np.log10(np.e ** 2 - 1) == pytest.approx(8.05, abs=0.01)


def test_c50_flat_tail_is_zero():
    h = np.ones(int(0.1 * SR))
    assert c50_from_rir(Rir(h, SR, 0)) == pytest.approx(0.0, abs=1e-9)


def test_c50_all_early_energy_capped():
    h = np.zeros(2 * SR)
    h[:400] = 1.0
    assert c50_from_rir(Rir(h, SR, 0)) == LABEL_CAP_DB


def test_c50_rejects_short_rir():
    with pytest.raises(ValueError):
        c50_from_rir(Rir(np.ones(500), SR, 0))


def test_rir_validation():
    with pytest.raises(ValueError):
        Rir(np.array([]))
    with pytest.raises(ValueError):
        Rir(np.ones(10), SR, 10)
    assert Rir(np.r_[0.1, -2.0, 0.5]).direct_index == 1


def test_labels_flat_decay_equal_across_bands(third_octave):
    h = damped_multisine(third_octave.exact_centers_hz, 0.1)
    labels = labels_from_rir(Rir(h, SR, 800), third_octave)
    t60 = labels["t60"].values
    assert np.all(np.isfinite(t60))
    assert t60.max() / t60.min() - 1 < 0.10


def test_labels_track_tau_ramp(third_octave):
    taus = np.geomspace(0.03, 0.25, 10)
    spec = RoomSpec(list(taus), [0.0] * 10, seed=11)
    t60 = labels_from_rir(synth_foa_rir(spec, third_octave).w, third_octave)["t60"].values
    assert np.all(np.diff(t60) > 0)


def test_labels_gain_invariant(third_octave):
    h = noise_rir(0.08, seconds=1.0, seed=4, delay=100)
    a = labels_from_rir(Rir(h, SR, 100), third_octave)
    b = labels_from_rir(Rir(3 * h, SR, 100), third_octave)
    for p in a:
        assert np.max(np.abs(a[p].values - b[p].values)) <= 1e-9


def test_t60_shift_invariance():
    h = noise_rir(0.08, seed=6)
    shifted = np.concatenate([np.zeros(30), h])
    assert t60_from_rir(shifted) == pytest.approx(t60_from_rir(h), rel=0.01)


def test_ratios_decrease_as_tail_grows(rng):
    d = 160
    direct = np.zeros(SR)
    direct[d] = 1.0
    tail = np.zeros(SR)
    tail[d + 41:] = rng.standard_normal(SR - d - 41) * np.exp(-np.arange(SR - d - 41) / (0.05 * SR))
    gains = [0.1, 0.2, 0.5, 1.0, 2.0]
    drr = [drr_from_rir(Rir(direct + g * tail, SR, d)) for g in gains]
    c50 = [c50_from_rir(Rir(direct + g * tail, SR, d)) for g in gains]
    assert np.all(np.diff(drr) < 0) and np.all(np.diff(c50) < 0)


def test_capped_flags_reported(third_octave):
    h = np.zeros(SR)
    h[200] = 1.0
    h[2000:2000 + 8000] = 1e-4 * np.random.default_rng(0).standard_normal(8000)
    labels = labels_from_rir(Rir(h, SR, 200), third_octave)
    assert all(isinstance(f, str) for f in labels["drr"].flags)


def test_label_record_round_trip(tmp_path, third_octave):
    h = noise_rir(0.06, seconds=0.8, seed=8, delay=100)
    labels = labels_from_rir(Rir(h, SR, 100), third_octave)
    labels["t60"].values[2] = np.nan
    path = tmp_path / "r.json"
    write_labels(path, "room_1", labels)
    doc = json.loads(path.read_text())
    assert set(doc) == {"rir_id", "t60_s", "drr_db", "c50_db", "flags"}
    assert doc["t60_s"][2] is None
    back = read_labels(path)
    assert np.isnan(back["t60_s"][2])
    assert np.allclose(back["drr_db"], labels["drr"].values)
    assert labels_record("x", labels)["rir_id"] == "x"


def test_band_labels_validation():
    with pytest.raises(ValueError):
        BandLabels(np.zeros(10), "edt", np.ones(10))
    d = BandLabels(np.arange(10.0), "c50", np.ones(10)).to_dict()
    assert d["unit"] == "dB" and len(d["values"]) == 10
