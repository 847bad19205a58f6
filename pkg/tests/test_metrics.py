import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from foasscv.metrics import (CSV_FIELDS, REPORT_SCHEMA_VERSION, EvalReport,
                             UndefinedMetricWarning, mae_per_band, pcc_per_band,
                             pov_per_band)


def loop_mae(p, t):
    n, b = p.shape
    return [sum(abs(p[i, k] - t[i, k]) for i in range(n)) / n for k in range(b)]


def loop_pcc(p, t):
    """Textbook two-pass Pearson r."""
    n, b = p.shape
    out = []
    for k in range(b):
        mp = sum(p[:, k]) / n
        mt = sum(t[:, k]) / n
        sxy = sum((p[i, k] - mp) * (t[i, k] - mt) for i in range(n))
        sxx = sum((p[i, k] - mp) ** 2 for i in range(n))
        syy = sum((t[i, k] - mt) ** 2 for i in range(n))
        out.append(sxy / math.sqrt(sxx * syy))
    return out


def test_mae_trivial(rng):
    t = rng.standard_normal((7, 10))
    assert np.all(mae_per_band(t, t) == 0)
    assert np.allclose(mae_per_band(t + 1, t), 1)


def test_mae_matches_loop(rng):
    p, t = rng.standard_normal((2, 30, 10))
    assert np.allclose(mae_per_band(p, t), loop_mae(p, t), rtol=1e-12, atol=0)


def test_pov_trivial(rng):
    t = rng.standard_normal((9, 10))
    assert np.all(pov_per_band(t, t) == 1)
    assert np.allclose(pov_per_band(np.tile(t.mean(0), (9, 1)), t), 0, atol=1e-12)


def test_pov_anticorrelated_three_points():
    t = np.array([[1.0], [2.0], [3.0]])
    p = np.array([[3.0], [2.0], [1.0]])
    # SS_res = 4 + 0 + 4 = 8, SS_tot = 1 + 0 + 1 = 2
    assert pov_per_band(p, t)[0] == pytest.approx(1 - 8 / 2)


def test_pcc_trivial(rng):
    t = rng.standard_normal((12, 10))
    assert np.allclose(pcc_per_band(2 * t + 1, t), 1)
    assert np.allclose(pcc_per_band(-t, t), -1)


def test_pcc_matches_two_pass(rng):
    p, t = rng.standard_normal((2, 25, 10))
    assert np.allclose(pcc_per_band(p, t), loop_pcc(p, t), rtol=1e-12, atol=1e-15)


def test_pov_equals_pcc_squared_for_least_squares_fit(rng):
    t = rng.standard_normal((40, 10))
    x = t + rng.standard_normal((40, 10))
    p = np.empty_like(t)
    for k in range(10):
        slope, icpt = np.polyfit(x[:, k], t[:, k], 1)
        p[:, k] = slope * x[:, k] + icpt
    assert np.allclose(pov_per_band(p, t), pcc_per_band(p, t) ** 2, atol=1e-12)


def test_constant_targets_flagged(rng):
    t = rng.standard_normal((5, 10))
    t[:, 3] = 2.0
    with pytest.warns(UndefinedMetricWarning):
        pov = pov_per_band(rng.standard_normal((5, 10)), t)
    assert np.isnan(pov[3]) and np.all(np.isfinite(np.delete(pov, 3)))
    with pytest.warns(UndefinedMetricWarning):
        assert np.isnan(pcc_per_band(rng.standard_normal((5, 10)), t)[3])


def test_shape_errors(rng):
    with pytest.raises(ValueError):
        mae_per_band(np.zeros((3, 10)), np.zeros((3, 9)))
    with pytest.raises(ValueError):
        pov_per_band(np.zeros((1, 10)), np.zeros((1, 10)))
    with pytest.raises(ValueError):
        pcc_per_band(np.zeros(10), np.zeros(10))


finite = st.floats(-1e3, 1e3, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(data=arrays(np.float64, (2, 6, 3), elements=finite), seed=st.integers(0, 1000))
def test_metric_ranges_and_permutation_invariance(data, seed):
    p, t = data
    perm = np.random.default_rng(seed).permutation(6)
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UndefinedMetricWarning)
        for fn in (mae_per_band, pov_per_band, pcc_per_band):
            a, b = fn(p, t), fn(p[perm], t[perm])
            assert np.allclose(a, b, rtol=1e-9, atol=1e-9, equal_nan=True)
        assert np.all(mae_per_band(p, t) >= 0)
        pov, pcc = pov_per_band(p, t), pcc_per_band(p, t)
    assert np.all(pov[np.isfinite(pov)] <= 1)
    assert np.all(np.abs(pcc[np.isfinite(pcc)]) <= 1)


def test_report_json_and_csv(tmp_path, rng):
    t = rng.standard_normal((6, 10))
    t[:, 0] = 1.0
    rep = EvalReport("m", "abc").add("drr", t + 0.5, t)
    d = rep.to_dict()
    assert d["schema_version"] == REPORT_SCHEMA_VERSION
    par = d["parameters"]["drr"]
    assert par["n_samples"] == 6 and par["pov"][0] is None
    assert par["mae"] == pytest.approx([0.5] * 10)
    rep.write_json(tmp_path / "r.json")
    back = EvalReport.from_dict(json.loads((tmp_path / "r.json").read_text()))
    assert np.allclose(back.results["drr"]["mae"], rep.results["drr"]["mae"])
    assert np.isnan(back.results["drr"]["pov"][0])

    rep.write_csv(tmp_path / "r.csv")
    with open(tmp_path / "r.csv", newline="") as fh:
        reader = csv.DictReader(fh)
        assert tuple(reader.fieldnames) == CSV_FIELDS
        rows = list(reader)
    assert len(rows) == 3 * 10
    assert {r["metric"] for r in rows} == {"mae", "pov", "pcc"}
    assert float(rows[0]["band_hz"]) == 1000.0 and rows[0]["schema_version"] == "1"


def test_report_rejects_unknown_schema():
    with pytest.raises(ValueError):
        EvalReport.from_dict({"schema_version": 99})
