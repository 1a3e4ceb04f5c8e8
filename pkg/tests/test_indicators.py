import warnings

import numpy as np
import pytest
from conftest import oracle_tet_tit
from hypothesis import given, settings
from hypothesis import strategies as st

from autocluster.errors import EmptyInputError, ParameterError
from autocluster.indicators import (
    FEATURE_NAMES,
    FeatureMatrix,
    IndicatorConfig,
    cpi,
    crash_probability,
    drac_series,
    extract_features,
    psd_series,
    rectify,
    standardize,
    tet_tit,
    ttc_series,
    window_bounds,
)
from autocluster.trajectory import ConflictSeries, VehicleTrack


def series(gap, rel, speed=None, frames=None):
    gap = np.asarray(gap, dtype=float)
    n = len(gap)
    frames = np.arange(n) if frames is None else np.asarray(frames)
    speed = np.full(n, 10.0) if speed is None else np.asarray(speed, dtype=float)
    return ConflictSeries(
        1, frames, np.full(n, 2), gap, gap.copy(), np.asarray(rel, dtype=float), speed, np.zeros(n, bool)
    )


def bare_track(vid, n, first=0):
    f = np.arange(first, first + n)
    return VehicleTrack(vid, 5.0, f, np.zeros(n), np.ones(n), np.ones(n, int), np.zeros(n, int))


def test_ttc_examples():
    t = ttc_series(series([20.0, 0.1, 20.0, 20.0], [10.0, 1.0, 0.0, -3.0]))
    assert t[0] == 2.0 and t[1] == pytest.approx(0.1)
    assert np.isnan(t[2]) and np.isnan(t[3])


def test_drac_examples():
    d = drac_series(series([20.0, 0.5, 5.0], [10.0, 10.0, -1.0]))
    assert d[0] == 5.0 and d[1] == 9.8 and np.isnan(d[2])


def test_psd_examples():
    p = psd_series(series([30.0, 5.0, 7.0], [0, 0, 0], speed=[10.0, 0.0, 7.0]), 3.35)
    assert p[0] == pytest.approx(30 / (100 / 6.7))
    assert round(p[0], 2) == 2.01
    assert np.isnan(p[1])
    # gap equal to braking distance
    assert p[2] == pytest.approx(7.0 / (49 / 6.7))
    assert psd_series(series([49 / 6.7], [0], speed=[7.0]), 3.35)[0] == pytest.approx(1.0)
    with pytest.raises(ParameterError):
        psd_series(series([1.0], [0]), 0.0)


def test_tet_tit_half_window():
    ttc = np.full(600, np.nan)
    ttc[:300] = 1.0
    bounds = window_bounds(0, 599, 600, 100)
    tet, tit = tet_tit(ttc, np.arange(600), 2.0, bounds, 0.1)
    assert tet[0] == pytest.approx(0.5, abs=1e-12) and tit[0] == pytest.approx(0.5, abs=1e-12)


def test_tet_tit_bounds_at_limit():
    ttc = np.full(600, 1e-9)
    tet, tit = tet_tit(ttc, np.arange(600), 4.0, window_bounds(0, 599, 600, 100), 0.1)
    assert tet[0] == pytest.approx(1.0) and tit[0] == pytest.approx(4.0, abs=1e-6)
    tet, tit = tet_tit(np.full(600, 5.0), np.arange(600), 4.0, window_bounds(0, 599, 600, 100), 0.1)
    assert tet[0] == 0 and tit[0] == 0


def test_window_bounds_tail_rules():
    # a 9.9 s remainder is merged, a 10 s one is kept
    assert window_bounds(0, 1298, 600, 100) == [(0, 600), (600, 1299)]
    assert window_bounds(0, 1299, 600, 100) == [(0, 600), (600, 1200), (1200, 1300)]
    assert window_bounds(5, 104, 600, 100) == [(5, 105)]


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 1500), st.integers(0, 2**31 - 1))
def test_tet_tit_match_frame_oracle(n, seed):
    rng = np.random.default_rng(seed)
    ttc = rng.uniform(0, 6, n)
    ttc[rng.random(n) < 0.3] = np.nan
    frames = np.arange(n) + 17
    bounds = window_bounds(int(frames[0]), int(frames[-1]), 600, 100)
    for star in (2.0, 3.0, 4.0):
        tet, tit = tet_tit(ttc, frames, star, bounds, 0.1)
        o_tet, o_tit = oracle_tet_tit(ttc, frames, star, 0.1, 600, 100)
        assert list(tet) == o_tet and list(tit) == o_tit
        assert np.all((0 <= tet) & (tet <= 1)) and np.all((0 <= tit) & (tit <= star))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.01, 8.0), min_size=1, max_size=300), st.floats(1.0, 3.0), st.floats(0.1, 2.0))
def test_lower_threshold_never_increases_exposure(vals, star, delta):
    ttc = np.asarray(vals)
    f = np.arange(len(ttc))
    b = window_bounds(0, len(ttc) - 1, 600, 100)
    hi = tet_tit(ttc, f, star + delta, b)
    lo = tet_tit(ttc, f, star, b)
    assert np.all(lo[0] <= hi[0]) and np.all(lo[1] <= hi[1] + 1e-12)


def test_cpi_examples():
    cfg = IndicatorConfig()
    b = window_bounds(0, 599, 600, 100)
    f = np.arange(600)
    zero = np.zeros(600)
    assert cpi(zero, f, "m1", cfg, b)[0] == 0 and cpi(zero, f, "m2", cfg, b)[0] == 0
    half = np.where(f < 300, 9.0, np.nan)
    assert cpi(half, f, "m1", cfg, b)[0] == pytest.approx(0.5, abs=1e-12)
    at_mean = np.full(600, 8.45)
    assert cpi(at_mean, f, "m2", cfg, b)[0] == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(ParameterError):
        crash_probability(zero, "m3", cfg)


def test_m2_probability_monotone():
    d = np.linspace(0.01, 9.8, 200)
    p = crash_probability(d, "m2", IndicatorConfig())
    assert np.all(np.diff(p) >= 0) and p.min() >= 0 and p.max() <= 1


def test_config_validation():
    with pytest.raises(ParameterError):
        IndicatorConfig(ttc_thresholds=(3.0, 2.0, 4.0))
    with pytest.raises(ParameterError):
        IndicatorConfig(madr_m2=(8.45, 0.0))
    with pytest.raises(ParameterError):
        IndicatorConfig(window=60.05)
    with pytest.raises(ParameterError):
        IndicatorConfig(safety_scale=1.0)


def test_leaderless_vehicle_safe_fill():
    m = extract_features({7: bare_track(7, 50)}, {}, IndicatorConfig())
    r = rectify(m)
    np.testing.assert_array_equal(r.values[0], [7.95, 0, 0, 0, 0, 0, 0, 0, 0, 0, 2.0, 2.0])
    assert r.feature_names == FEATURE_NAMES


def test_constant_ttc_single_window():
    n = 600
    cs = series(np.full(n, 15.0), np.full(n, 10.0))
    row = extract_features({1: bare_track(1, n)}, {1: cs}).values[0]
    named = dict(zip(FEATURE_NAMES, row))
    assert named["TTC.min"] == pytest.approx(1.5)
    assert named["TET.t1.max"] == pytest.approx(1.0)
    assert named["TIT.t1.max"] == pytest.approx(0.5)
    assert named["TIT.t3.max"] == pytest.approx(2.5)
    assert named["DRAC.max"] == pytest.approx(100 / 15)


def test_ttc_min_is_min_of_window_means():
    n = 1200
    ttc_first, ttc_second = 3.0, 1.0
    rel = np.full(n, 10.0)
    gap = np.where(np.arange(n) < 600, ttc_first * 10, ttc_second * 10)
    gap[0] = 5.0  # a single low frame must not dominate the window mean
    row = extract_features({1: bare_track(1, n)}, {1: series(gap, rel)}).values[0]
    assert row[0] == pytest.approx(1.0)


def test_empty_track_set():
    with pytest.raises(EmptyInputError):
        extract_features({}, {})


def test_rectify_examples():
    m = FeatureMatrix(np.arange(2), ("TTC.min", "DRAC.max"), np.array([[12.3, 20.0], [5.0, 1.0]]), "raw")
    r = rectify(m, IndicatorConfig())
    assert r.values[0, 0] == 7.95 and r.values[1, 0] == 5.0 and r.values[0, 1] == 9.8
    s = rectify(m, IndicatorConfig(safety_scale=0.5))
    assert s.values[0, 0] == pytest.approx(10.125)
    assert s.values[0, 1] == 9.8
    with pytest.raises(ParameterError):
        rectify(r)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_rectified_columns_respect_caps(seed):
    rng = np.random.default_rng(seed)
    vals = rng.uniform(0, 30, (20, len(FEATURE_NAMES)))
    r = rectify(FeatureMatrix(np.arange(20), FEATURE_NAMES, vals, "raw"))
    for name, cap in IndicatorConfig().caps().items():
        assert r.column(name).max() <= cap


def test_standardize_examples():
    m = FeatureMatrix.from_array([[1.0, 4.0], [2.0, 4.0], [3.0, 4.0]], state="rectified")
    with pytest.warns(RuntimeWarning):
        z = standardize(m)
    np.testing.assert_allclose(z.values[:, 0], [-1.224744871391589, 0, 1.224744871391589], atol=1e-12)
    np.testing.assert_array_equal(z.values[:, 1], 0.0)
    np.testing.assert_allclose(z.means, [2.0, 4.0])


def test_standardize_idempotent():
    rng = np.random.default_rng(3)
    m = FeatureMatrix.from_array(rng.normal(3, 7, (50, 4)), state="rectified")
    once = standardize(m)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        twice = standardize(once)
    np.testing.assert_allclose(twice.values, once.values, atol=1e-12)


def test_feature_matrix_helpers():
    m = FeatureMatrix.from_array(np.arange(6.0).reshape(3, 2), ["a", "b"])
    assert m.select(["b"]).feature_names == ("b",)
    assert m.drop("a").feature_names == ("b",)
    assert m.column_stats()["a"]["max"] == 4.0
    with pytest.raises(ParameterError):
        FeatureMatrix(np.arange(2), ("a",), np.zeros((3, 1)))
