import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from autocluster.errors import EmptyInputError, ParameterError, SchemaError
from autocluster.trajectory import (
    VehicleTrack,
    build_conflict_series,
    load_tracks,
    parse_ngsim,
    save_tracks,
    smooth_track,
    smooth_tracks,
)

HEADER = "Vehicle_ID,Frame_ID,Local_Y,v_Vel,v_Length,Lane_ID,Preceding\n"


def write_csv(tmp_path, rows, header=HEADER, name="t.csv"):
    p = tmp_path / name
    p.write_text(header + "".join(",".join(str(v) for v in r) + "\n" for r in rows))
    return p


def track(vid, frames, pos, vel, lane=1, prec=0, length=5.0):
    n = len(frames)
    return VehicleTrack(
        vid,
        length,
        np.asarray(frames),
        np.asarray(pos, dtype=float),
        np.asarray(vel, dtype=float),
        np.full(n, lane) if np.isscalar(lane) else np.asarray(lane),
        np.full(n, prec) if np.isscalar(prec) else np.asarray(prec),
    )


def test_feet_conversion(tmp_path):
    p = write_csv(tmp_path, [(5, 100, 328.084, 32.8084, 16.404, 1, 0)])
    t = parse_ngsim(p, "feet")[5]
    # inputs carry 5-6 significant digits
    assert t.position[0] == pytest.approx(100.0, abs=1e-5)
    assert t.velocity[0] == pytest.approx(10.0, abs=1e-6)
    assert t.length == pytest.approx(5.0, abs=1e-4)
    assert t.position[0] == 328.084 * 0.3048


def test_single_row_single_sample(tmp_path):
    ts = parse_ngsim(write_csv(tmp_path, [(1, 10, 0.0, 1.0, 4.0, 2, 0)]), "metres")
    assert len(ts) == 1
    s = ts[1].samples
    assert len(s) == 1 and s[0].frame_index == 10 and s[0].preceding_vehicle_id is None


def test_duplicate_frame_keeps_first(tmp_path):
    p = write_csv(tmp_path, [(1, 10, 0.0, 1.0, 4.0, 2, 0), (1, 10, 9.0, 1.0, 4.0, 2, 0)])
    ts = parse_ngsim(p, "metres")
    assert ts.dropped_duplicate == 1
    assert ts[1].position[0] == 0.0


def test_missing_field_dropped(tmp_path):
    p = write_csv(tmp_path, [(1, 10, 0.0, 1.0, 4.0, 2, 0), (1, 11, "", 1.0, 4.0, 2, 0)])
    ts = parse_ngsim(p, "metres")
    assert ts.dropped_missing == 1 and len(ts[1]) == 1


def test_missing_column_is_schema_error(tmp_path):
    p = write_csv(tmp_path, [(1, 10, 0.0, 1.0, 4.0, 2)], header="Vehicle_ID,Frame_ID,Local_Y,v_Vel,v_Length,Lane_ID\n")
    with pytest.raises(SchemaError, match="Preceding"):
        parse_ngsim(p)


def test_empty_file(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("")
    with pytest.raises(EmptyInputError):
        parse_ngsim(p)
    with pytest.raises(EmptyInputError):
        parse_ngsim(write_csv(tmp_path, [], name="h.csv"))


def test_unit_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    rows_ft, rows_m = [], []
    for f in range(30):
        x, v, L = rng.uniform(0, 500), rng.uniform(0, 40), rng.uniform(10, 20)
        rows_ft.append((1, f, repr(x), repr(v), repr(L), 1, 0))
        rows_m.append((1, f, repr(x * 0.3048), repr(v * 0.3048), repr(L * 0.3048), 1, 0))
    a = parse_ngsim(write_csv(tmp_path, rows_ft, name="ft.csv"), "feet")[1]
    b = parse_ngsim(write_csv(tmp_path, rows_m, name="m.csv"), "metres")[1]
    np.testing.assert_allclose(a.position, b.position, atol=1e-9)
    np.testing.assert_allclose(a.velocity, b.velocity, atol=1e-9)
    assert a.length == pytest.approx(b.length, abs=1e-9)


def test_track_invariants():
    with pytest.raises(ParameterError):
        track(1, [0, 0], [0, 1], [1, 1])
    with pytest.raises(ParameterError):
        track(1, [0, 1], [0, 1], [1, 1], length=0.0)


def test_smoothing_parameter_errors():
    t = track(1, range(30), np.arange(30.0), np.ones(30))
    with pytest.raises(ParameterError):
        smooth_track(t, 4, 2)
    with pytest.raises(ParameterError):
        smooth_track(t, 3, 3)


def test_smoothing_exact_on_polynomials():
    f = np.arange(50)
    t = track(1, f, 3.0 + 2.0 * f, np.full(50, 10.0))
    s = smooth_track(t, 21, 3)
    np.testing.assert_allclose(s.position, t.position, atol=1e-9)
    np.testing.assert_allclose(s.velocity, 10.0, atol=1e-12)
    np.testing.assert_array_equal(s.frames, t.frames)


def test_smoothing_matches_windowed_least_squares():
    y = np.array([0, 1, 0, 1, 0, 1, 0], dtype=float)
    t = track(1, range(7), y, np.ones(7))
    s = smooth_track(t, 5, 2)
    for c in range(2, 5):
        xs = np.arange(c - 2, c + 3)
        coef = np.polyfit(xs, y[c - 2 : c + 3], 2)
        assert s.position[c] == pytest.approx(np.polyval(coef, c), abs=1e-12)


def test_short_track_skipped_and_velocity_clamped():
    t = track(1, range(5), np.arange(5.0), np.ones(5))
    assert smooth_track(t, 21, 3).smoothing_skipped
    f = np.arange(40)
    v = np.where(f % 2 == 0, 0.0, 0.5) - 0.2
    s = smooth_track(track(2, f, np.zeros(40), np.maximum(v, 0)), 5, 2)
    assert np.all(s.velocity >= 0)


def test_gap_and_pairing():
    leader = track(2, range(5), np.full(5, 25.0), np.full(5, 5.0), length=5.0)
    follower = track(1, range(5), np.zeros(5), np.full(5, 10.0), prec=2, length=99.0)
    cs = build_conflict_series([leader, follower])[1]
    np.testing.assert_allclose(cs.gap, 20.0)
    np.testing.assert_allclose(cs.relative_speed, 5.0)
    assert len(build_conflict_series([leader, follower])[2]) == 0


def test_lane_change_hole_and_unknown_leader():
    lanes = np.array([1, 1, 2, 2, 1, 1])
    leader = track(2, range(6), np.full(6, 50.0), np.ones(6), lane=lanes)
    prec = np.array([2, 2, 2, 2, 9, 9])
    follower = track(1, range(6), np.zeros(6), np.ones(6), lane=1, prec=prec)
    cs = build_conflict_series({1: follower, 2: leader})[1]
    np.testing.assert_array_equal(cs.frames, [0, 1])
    assert cs.skipped_unknown_leader == 2


def test_negative_gap_clamped_and_flagged():
    leader = track(2, range(3), np.full(3, 3.0), np.ones(3), length=5.0)
    follower = track(1, range(3), np.zeros(3), np.ones(3), prec=2)
    cs = build_conflict_series([leader, follower], min_gap=0.1)[1]
    assert cs.n_negative_gaps == 3 and np.all(cs.clamped)
    np.testing.assert_allclose(cs.gap, 0.1)
    np.testing.assert_allclose(cs.raw_gap, -2.0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 200), min_size=2, max_size=40), st.floats(1, 10))
def test_gap_recomputable(lead_pos, length):
    n = len(lead_pos)
    leader = track(2, range(n), lead_pos, np.ones(n), length=length)
    follower = track(1, range(n), np.zeros(n), np.ones(n), prec=2)
    cs = build_conflict_series([leader, follower], min_gap=0.1)[1]
    raw = np.asarray(lead_pos) - length
    np.testing.assert_allclose(cs.raw_gap, raw)
    np.testing.assert_allclose(cs.gap, np.maximum(raw, 0.1))


def test_tracks_round_trip(tmp_path):
    f = np.arange(30)
    ts = smooth_tracks(
        parse_ngsim(
            write_csv(tmp_path, [(1, int(i), float(i), 1.0, 4.0, 1, 0) for i in f] + [(2, 3, 1.0, 2.0, 3.0, 2, 1)]),
            "metres",
        ),
        5,
        2,
    )
    save_tracks(ts, tmp_path / "t.npz")
    back = load_tracks(tmp_path / "t.npz")
    assert sorted(back.tracks) == [1, 2]
    for vid in (1, 2):
        np.testing.assert_array_equal(back[vid].position, ts[vid].position)
        np.testing.assert_array_equal(back[vid].preceding, ts[vid].preceding)
