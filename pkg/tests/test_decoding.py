import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from autocluster.decoding import (
    RiskLabelMap,
    align_labels,
    calibrate_thresholds,
    ensemble_vote,
    imbalance_ratio,
    label_dataset,
    letter_values,
    order_clusters,
    risk_profile_export,
    sankey_flows,
    threshold_from_ranges,
)
from autocluster.errors import DataError, ParameterError
from autocluster.indicators import FeatureMatrix
from autocluster.trajectory import VehicleTrack

# (feature, lower-level range, upper-level range, threshold) from the published calibration table
PUBLISHED_THRESHOLDS = [
    ("TIT.t3.max", (0.05, 0.74), (0.73, 1.74), 0.74),
    ("TET.t1.max", (0.0, 0.37), (0.30, 1.0), 0.37),
    ("CPI.m1.max", (0.0, 0.50), (0.49, 1.0), 0.50),
    ("CPI.m2.max", (0.0, 0.44), (0.41, 0.83), 0.44),
]


def risk_matrix(values, names=("TET.t1.max", "TIT.t1.max")):
    return FeatureMatrix.from_array(np.asarray(values, dtype=float), list(names), state="rectified")


def test_all_zero_cluster_is_safest():
    vals = [[0, 0]] * 4 + [[0.5, 1.0]] * 3 + [[0.1, 0.2]] * 3
    labels = np.array([2] * 4 + [0] * 3 + [1] * 3)
    o = order_clusters(labels, risk_matrix(vals))
    assert o.level_of == {2: 0, 1: 1, 0: 2}


def test_safety_direction_is_flipped():
    # a low TTC.min is risky
    m = FeatureMatrix.from_array([[7.95], [7.95], [1.0], [1.0]], ["TTC.min"], state="rectified")
    assert order_clusters(np.array([0, 0, 1, 1]), m).level_of == {0: 0, 1: 1}


def test_tie_broken_by_size():
    vals = [[1, 1]] * 3 + [[1, 1]] * 5 + [[5, 5]] * 2
    labels = np.array([0] * 3 + [1] * 5 + [2] * 2)
    o = order_clusters(labels, risk_matrix(vals))
    assert o.level_of == {1: 0, 0: 1, 2: 2}


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_ordering_invariant_to_label_permutation(seed):
    rng = np.random.default_rng(seed)
    m = risk_matrix(rng.uniform(size=(40, 2)))
    labels = np.concatenate([np.arange(4), rng.integers(0, 4, 36)])
    perm = rng.permutation(4)
    a = order_clusters(labels, m).levels(labels)
    b = order_clusters(perm[labels], m).levels(perm[labels])
    np.testing.assert_array_equal(a, b)


def test_imbalance_ratio_examples():
    exact, ir = imbalance_ratio([2725, 872, 810, 591, 66, 18], [4, 5])
    assert exact == pytest.approx(2725 / 84) and round(exact, 2) == 32.44 and ir == 32
    assert imbalance_ratio([10], []) == (1.0, 1)
    assert imbalance_ratio([5, 5], [1]) == (1.0, 1)
    with pytest.raises(ParameterError):
        imbalance_ratio([5, 5], [])


def test_label_dataset_counts_and_high_risk():
    names = ("TET.t1.max", "CPI.m1.max")
    vals = [[0, 0]] * 6 + [[0.5, 0]] * 3 + [[0.9, 0.4]] * 2
    m = risk_matrix(vals, names)
    labels = np.array([0] * 6 + [1] * 3 + [2] * 2)
    lm = label_dataset(labels, order_clusters(labels, m), m)
    assert lm.counts == [6, 3, 2] and sum(lm.counts) == 11
    assert lm.high_risk == (2,) and lm.ir == 3 and lm.ir_exact == pytest.approx(3.0)
    one = label_dataset(np.zeros(4, int), order_clusters(np.zeros(4, int), risk_matrix([[0, 0]] * 4)))
    assert one.ir == 1


@pytest.mark.parametrize("row", PUBLISHED_THRESHOLDS, ids=lambda r: r[0])
def test_published_thresholds_from_ranges(row):
    _, lower, upper, expected = row
    t, overlap = threshold_from_ranges(lower, upper)
    assert t == expected and 0 < overlap < 0.1


@pytest.mark.parametrize("row", PUBLISHED_THRESHOLDS, ids=lambda r: r[0])
def test_published_thresholds_through_calibration(row):
    name, (a, b), (c, d), expected = row
    col = np.array([a, (a + b) / 2, b, c, (c + d) / 2, d])
    noise = np.array([0.0, 1.0, 0.5, 0.2, 0.9, 0.4])  # fully overlapping distractor
    m = FeatureMatrix.from_array(np.column_stack([noise, col]), ["TIT.t1.max", name], state="rectified")
    lm = RiskLabelMap(np.arange(6), np.array([0, 0, 0, 1, 1, 1]), {0: 0, 1: 1}, [3, 3], (1,), 1.0, 1)
    table = calibrate_thresholds(lm, m)
    assert len(table.rows) == 1 and table.rows[0].feature == name
    assert table.rows[0].threshold == expected


def test_threshold_trivial_cases():
    assert threshold_from_ranges((0, 1), (2, 3)) == (1, 0.0)
    assert threshold_from_ranges((0, 1), (0, 1))[1] == 1.0
    t, ov = threshold_from_ranges((5, 8), (1, 4), increasing=False)
    assert t == 5 and ov == 0.0


def test_threshold_table_csv(tmp_path):
    m = risk_matrix([[0, 0], [0.1, 0.2], [0.8, 0.2], [0.9, 0.3]])
    lm = RiskLabelMap(np.arange(4), np.array([0, 0, 1, 1]), {0: 0, 1: 1}, [2, 2], (1,), 1.0, 1)
    table = calibrate_thresholds(lm, m)
    assert table.rows[0].feature == "TET.t1.max" and table.rows[0].threshold == 0.1
    table.to_csv(tmp_path / "t.csv")
    assert len((tmp_path / "t.csv").read_text().splitlines()) == 2
    with pytest.raises(ParameterError):
        calibrate_thresholds(RiskLabelMap(np.arange(4), np.zeros(4, int), {0: 0}, [4], (), 1.0, 1), m)


def test_sankey_identity_and_refinement():
    ids = np.array([11, 12, 13, 14])
    same = sankey_flows({2: (ids, np.array([0, 0, 0, 1])), 3: (ids[::-1], np.array([1, 0, 0, 0]))})
    assert all(e.source == e.target for e in same)
    edges = sankey_flows({2: (ids, np.array([0, 0, 0, 1])), 3: (ids, np.array([0, 1, 1, 2]))})
    flows = {(e.source, e.target): e.count for e in edges}
    assert flows == {(0, 0): 1, (0, 1): 2, (1, 2): 1}
    assert flows[(0, 0)] + flows[(0, 1)] == 3
    with pytest.raises(DataError):
        sankey_flows({2: (ids, np.zeros(4, int)), 3: (ids + 1, np.zeros(4, int))})


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_sankey_bounds(seed):
    rng = np.random.default_rng(seed)
    n = 60
    ids = rng.permutation(1000)[:n]
    parts = {k: (ids, rng.integers(0, k, n)) for k in (3, 4, 5)}
    edges = sankey_flows(parts)
    for k in (3, 4):
        sub = [e for e in edges if e.k_from == k]
        assert len(sub) <= k * (k + 1)
        assert sum(e.count for e in sub) == n


def test_ensemble_cases():
    a = np.array([0, 0, 1, 1, 2, 2])
    assert np.array_equal(ensemble_vote([a, a, a]), a)
    permuted = np.array([2, 2, 0, 0, 1, 1])
    assert np.array_equal(ensemble_vote([a, a, permuted]), a)
    c = np.array([1, 0, 1, 1, 2, 2])
    assert np.array_equal(ensemble_vote([a, c, a]), a)
    out = ensemble_vote([a, c, permuted])
    assert np.array_equal(ensemble_vote([out, out, out]), out)
    with pytest.raises(ParameterError):
        ensemble_vote([a, a, np.array([0, 0, 1, 1, 1, 1])])
    with pytest.raises(ParameterError):
        ensemble_vote([a, a])


def test_ensemble_tie_uses_best_score():
    a = np.array([0, 0, 1, 1, 2, 2])
    b = np.array([0, 1, 1, 1, 2, 2])
    c = np.array([0, 2, 1, 1, 2, 2])
    assert ensemble_vote([a, b, c], scores=[0.1, 0.9, 0.2])[1] == 1
    assert ensemble_vote([a, b, c], scores=[0.9, 0.1, 0.2])[1] == 0


def test_align_labels_recovers_permutation():
    ref = np.array([0, 0, 1, 1, 2])
    np.testing.assert_array_equal(align_labels(ref, np.array([5, 5, 3, 3, 9])), ref)


def vehicle(vid, lane, frames):
    n = len(frames)
    return VehicleTrack(vid, 4.0, np.asarray(frames), np.linspace(0, 10, n), np.ones(n), np.full(n, lane), np.zeros(n, int))


def test_risk_profile_export(tmp_path):
    lm = RiskLabelMap(np.array([1]), np.array([2]), {0: 2}, [0, 0, 1], (2,), 1.0, 1)
    rows = risk_profile_export(lm, {1: vehicle(1, 3, range(10))}, path=tmp_path / "p.csv")
    assert len(rows) == 10 and {r[4] for r in rows} == {2}
    assert rows[1][2] == 0.1
    assert len((tmp_path / "p.csv").read_text().splitlines()) == 11
    tracks = {1: vehicle(1, 2, range(5, 12)), 2: vehicle(2, 1, range(0, 4)), 3: vehicle(3, 2, range(3, 8))}
    lm = RiskLabelMap(np.array([1, 2, 3]), np.array([0, 1, 0]), {}, [2, 1], (1,), 2.0, 2)
    rows = risk_profile_export(lm, tracks)
    assert len(rows) == sum(len(t.frames) for t in tracks.values())
    lanes = [r[0] for r in rows]
    assert lanes == sorted(lanes)
    assert [r[2] for r in rows if r[0] == 2] == sorted(r[2] for r in rows if r[0] == 2)
    with pytest.raises(DataError):
        risk_profile_export(lm, {1: tracks[1]})


def test_letter_values():
    rng = np.random.default_rng(0)
    m = FeatureMatrix.from_array(np.column_stack([rng.uniform(size=1000), np.full(1000, 3.0)]), ["u", "c"])
    lv = letter_values(m, np.zeros(1000, int), depth=2)
    u = [r for r in lv if r["feature"] == "u"]
    assert [r["p"] for r in u] == [0.5, 0.25, 0.125]
    assert u[2]["lower"] == pytest.approx(0.125, abs=0.05) and u[2]["upper"] == pytest.approx(0.875, abs=0.05)
    assert all(r["lower"] == r["upper"] == 3.0 for r in lv if r["feature"] == "c")
    q = letter_values(m, np.zeros(1000, int), depth=1, features=["u"])
    assert len(q) == 2 and q[1]["lower"] == pytest.approx(np.quantile(m.column("u"), 0.25))
    with pytest.raises(ParameterError):
        letter_values(m, np.zeros(1000, int), depth=0)
