"""Synthetic NGSIM-format trajectories and NGSIM-like indicator matrices.

The trajectory generator runs a discrete-time intelligent driver model per
lane with heterogeneous drivers and occasional hard braking by platoon
leaders, which yields a realistic mix of safe and conflict-prone followers.
"""
from __future__ import annotations

import gzip
from pathlib import Path

import numpy as np
import pandas as pd

from .indicators import FEATURE_NAMES, FeatureMatrix
from .trajectory import FEET_TO_METRES

NGSIM_HEADER = ["Vehicle_ID", "Frame_ID", "Local_Y", "v_Vel", "v_Length", "Lane_ID", "Preceding"]
FIXTURE = Path(__file__).parent / "data" / "synthetic_ngsim.csv.gz"


def _idm_accel(v, gap, dv, v0, T, a_max, b, s0=2.0):
    s_star = s0 + np.maximum(0.0, v * T + v * dv / (2.0 * np.sqrt(a_max * b)))
    return a_max * (1.0 - (v / v0) ** 4 - (s_star / np.maximum(gap, 0.1)) ** 2)


def simulate_lane(
    rng: np.random.Generator,
    n_vehicles: int,
    duration: float,
    tick: float = 0.1,
    headway: float = 2.0,
) -> dict[str, np.ndarray]:
    """One lane of vehicles entering at ``x=0`` every ``headway`` seconds (jittered).

    Returns per-vehicle arrays over the full frame grid, with NaN outside a
    vehicle's presence.
    """
    n_frames = int(round(duration / tick))
    entry = np.cumsum(rng.uniform(0.6, 1.4, n_vehicles) * headway / tick).astype(int)
    entry -= entry[0]
    v0 = rng.uniform(12.0, 18.0, n_vehicles)
    # a minority of drivers follow closely and react late
    aggressive = rng.random(n_vehicles) < 0.35
    T = np.where(aggressive, rng.uniform(0.3, 0.7, n_vehicles), rng.uniform(1.2, 2.0, n_vehicles))
    a_max = rng.uniform(1.0, 2.0, n_vehicles)
    b = np.where(aggressive, rng.uniform(3.0, 4.0, n_vehicles), rng.uniform(1.5, 2.5, n_vehicles))
    delay = np.where(aggressive, rng.integers(6, 12, n_vehicles), rng.integers(2, 5, n_vehicles))
    length = rng.uniform(4.0, 5.5, n_vehicles)
    # leader braking events: (start frame, duration frames, deceleration)
    events = []
    t = int(rng.uniform(5, 15) / tick)
    while t < n_frames:
        events.append((t, int(rng.uniform(1.0, 3.0) / tick), rng.uniform(4.0, 8.0)))
        t += int(rng.uniform(10, 25) / tick)

    x = np.full((n_vehicles, n_frames), np.nan)
    v = np.full((n_vehicles, n_frames), np.nan)
    acc_hist = np.zeros((n_vehicles, n_frames))
    for f in range(n_frames):
        for i in range(n_vehicles):
            if f < entry[i]:
                continue
            if f == entry[i]:
                if i > 0 and not x[i - 1, f] >= length[i - 1] + 2.0 + v0[i] * T[i]:
                    # predecessor absent or still too close to the entry point: wait
                    entry[i] += 1
                    continue
                x[i, f] = 0.0
                v[i, f] = v0[i] * 0.8
                if i > 0:
                    v[i, f] = min(v[i, f], v[i - 1, f])
                continue
            vi, xi = v[i, f - 1], x[i, f - 1]
            if i == 0 or np.isnan(x[i - 1, f - 1]):
                a = a_max[i] * (1.0 - (vi / v0[i]) ** 4)
                for start, dur, dec in events:
                    if start <= f < start + dur:
                        a = -dec
            else:
                fd = max(f - 1 - delay[i], entry[i])
                gap = x[i - 1, fd] - x[i, fd] - length[i - 1]
                dv = v[i, fd] - v[i - 1, fd]
                a = _idm_accel(v[i, fd], gap, dv, v0[i], T[i], a_max[i], b[i])
                # last-moment emergency braking on the current (undelayed) gap
                gc = x[i - 1, f - 1] - xi - length[i - 1]
                closing = vi - v[i - 1, f - 1]
                if closing > 0 and gc < 3.0:
                    a = min(a, -closing**2 / (2.0 * max(gc - 0.3, 0.1)))
                a = max(a, -9.0)
            nv = max(0.0, vi + a * tick)
            x[i, f] = xi + 0.5 * (vi + nv) * tick
            v[i, f] = nv
            acc_hist[i, f] = a
            if i > 0 and not np.isnan(x[i - 1, f]):
                # physical non-overlap
                x[i, f] = min(x[i, f], x[i - 1, f] - length[i - 1] + 0.05)
    return {"x": x, "v": v, "length": length, "entry": entry}


def synthetic_ngsim(
    n_lanes: int = 3,
    vehicles_per_lane: int = 20,
    duration: float = 70.0,
    seed: int = 0,
    tick: float = 0.1,
    noise: float = 0.15,
) -> pd.DataFrame:
    """NGSIM US-101 style table (feet, ft/s, 0.1 s frames) with measurement noise."""
    rng = np.random.default_rng(seed)
    rows = []
    vid = 1
    for lane in range(1, n_lanes + 1):
        sim = simulate_lane(rng, vehicles_per_lane, duration, tick)
        ids = np.arange(vid, vid + vehicles_per_lane)
        vid += vehicles_per_lane
        for i in range(vehicles_per_lane):
            present = ~np.isnan(sim["x"][i])
            frames = np.flatnonzero(present)
            if len(frames) == 0:
                continue
            xs = sim["x"][i, frames] + rng.normal(0.0, noise, len(frames))
            vs = np.maximum(sim["v"][i, frames] + rng.normal(0.0, noise, len(frames)), 0.0)
            if i > 0:
                lead_present = ~np.isnan(sim["x"][i - 1, frames])
                prec = np.where(lead_present, ids[i - 1], 0)
            else:
                prec = np.zeros(len(frames), dtype=int)
            rows.append(
                pd.DataFrame(
                    {
                        "Vehicle_ID": ids[i],
                        "Frame_ID": frames + 1,
                        "Local_Y": np.round(xs / FEET_TO_METRES, 3),
                        "v_Vel": np.round(vs / FEET_TO_METRES, 3),
                        "v_Length": round(sim["length"][i] / FEET_TO_METRES, 1),
                        "Lane_ID": lane,
                        "Preceding": prec,
                    }
                )
            )
    df = pd.concat(rows, ignore_index=True)
    return df.sort_values(["Vehicle_ID", "Frame_ID"], kind="stable").reset_index(drop=True)[NGSIM_HEADER]


def write_synthetic_ngsim(path, **kwargs) -> Path:
    """Write the synthetic table; a ``.gz`` suffix gives a gzip file with a zeroed mtime."""
    path = Path(path)
    text = synthetic_ngsim(**kwargs).to_csv(index=False, lineterminator="\n")
    if path.suffix == ".gz":
        with open(path, "wb") as raw, gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0) as fh:
            fh.write(text.encode())
    else:
        path.write_text(text)
    return path


def ngsim_like_features(n: int = 5000, seed: int = 0) -> FeatureMatrix:
    """Raw-scale, zero-heavy, imbalanced indicator matrix with six latent risk groups.

    Group shares roughly follow published level counts (about 54% safe, two
    small CPI-driven groups) but the values themselves are generated.
    """
    rng = np.random.default_rng(seed)
    shares = np.array([2725, 872, 810, 591, 66, 18], dtype=float)
    group = rng.choice(6, size=n, p=shares / shares.sum())
    X = np.zeros((n, len(FEATURE_NAMES)))
    col = {name: j for j, name in enumerate(FEATURE_NAMES)}
    X[:, col["TTC.min"]] = 7.95
    X[:, col["PSD.min"]] = 2.0
    X[:, col["PSD.mean"]] = 2.0

    def fill(mask, tet_scale, tit_scale, cpi_scale, ttc_lo, psd_lo):
        m = int(mask.sum())
        if m == 0:
            return
        X[mask, col["TTC.min"]] = rng.uniform(ttc_lo, 7.95, m)
        base = rng.beta(2, 5, m)
        for t, w in zip(("t1", "t2", "t3"), (0.5, 0.8, 1.0)):
            X[mask, col[f"TET.{t}.max"]] = np.clip(tet_scale * w * base + rng.normal(0, 0.02, m), 0, 1)
            X[mask, col[f"TIT.{t}.max"]] = np.clip(tit_scale * w * base + rng.normal(0, 0.05, m), 0, None)
        X[mask, col["DRAC.max"]] = np.clip(rng.gamma(2.0, 0.5 + 2 * cpi_scale, m), 0, 9.8)
        if cpi_scale > 0:
            X[mask, col["CPI.m1.max"]] = np.clip(cpi_scale * rng.beta(2, 3, m), 0, 1)
            X[mask, col["CPI.m2.max"]] = np.clip(0.8 * cpi_scale * rng.beta(2, 3, m), 0, 1)
        X[mask, col["PSD.min"]] = rng.uniform(psd_lo, 2.0, m)
        X[mask, col["PSD.mean"]] = np.maximum(X[mask, col["PSD.min"]], rng.uniform(psd_lo + 0.3, 2.0, m))

    fill(group == 1, 0.1, 0.3, 0.0, 3.0, 1.2)
    fill(group == 2, 0.3, 0.9, 0.0, 2.0, 0.8)
    fill(group == 3, 0.7, 1.6, 0.0, 1.0, 0.5)
    fill(group == 4, 0.8, 2.0, 0.7, 0.5, 0.2)
    fill(group == 5, 0.9, 2.5, 1.0, 0.2, 0.05)
    # a sprinkle of safe vehicles with a brief TTC dip
    safe = np.flatnonzero(group == 0)
    dip = safe[rng.random(len(safe)) < 0.1]
    X[dip, col["TTC.min"]] = rng.uniform(5.0, 7.95, len(dip))
    return FeatureMatrix(np.arange(1, n + 1), FEATURE_NAMES, X, "rectified")
