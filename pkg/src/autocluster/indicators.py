"""Surrogate conflict indicators and the 12-column risk feature matrix.

Per-frame indicator series use ``NaN`` for frames where the indicator is
undefined (e.g. TTC while the follower is not closing in).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import EmptyInputError, ParameterError
from .trajectory import ConflictSeries, TrackSet, VehicleTrack

FEATURE_NAMES = (
    "TTC.min",
    "TET.t1.max",
    "TET.t2.max",
    "TET.t3.max",
    "TIT.t1.max",
    "TIT.t2.max",
    "TIT.t3.max",
    "DRAC.max",
    "CPI.m1.max",
    "CPI.m2.max",
    "PSD.min",
    "PSD.mean",
)

# higher value = safer for these columns
SAFETY_DIRECTION = frozenset({"TTC.min", "PSD.min", "PSD.mean"})

STATES = ("raw", "rectified", "standardized")


@dataclass(frozen=True)
class IndicatorConfig:
    ttc_thresholds: tuple[float, float, float] = (2.0, 3.0, 4.0)
    tick: float = 0.1
    window: float = 60.0
    min_tail: float = 10.0
    psd_decel: float = 3.35
    madr_m1: float = 8.45
    madr_m2: tuple[float, float] = (8.45, 1.40)
    drac_cap: float = 9.8
    ttc_cap: float = 7.95
    psd_cap: float = 2.0
    safety_scale: float = 0.0

    def __post_init__(self):
        t1, t2, t3 = self.ttc_thresholds
        if not 0 < t1 < t2 < t3:
            raise ParameterError("ttc thresholds must satisfy 0 < t1 < t2 < t3")
        if min(self.drac_cap, self.ttc_cap, self.psd_cap) <= 0:
            raise ParameterError("all caps must be positive")
        if self.tick <= 0:
            raise ParameterError("tick must be positive")
        ratio = self.window / self.tick
        if self.window <= 0 or abs(ratio - round(ratio)) > 1e-9:
            raise ParameterError("window must be a positive multiple of tick")
        if self.psd_decel <= 0:
            raise ParameterError("psd_decel must be positive")
        if self.madr_m2[1] <= 0:
            raise ParameterError("MADR standard deviation must be positive")
        if not 0 <= self.safety_scale < 1:
            raise ParameterError("safety_scale must lie in [0, 1)")

    @property
    def window_frames(self) -> int:
        return int(round(self.window / self.tick))

    @property
    def min_tail_frames(self) -> int:
        return int(round(self.min_tail / self.tick))

    def caps(self) -> dict[str, float]:
        return {
            "TTC.min": self.ttc_cap,
            "PSD.min": self.psd_cap,
            "PSD.mean": self.psd_cap,
            "DRAC.max": self.drac_cap,
        }


@dataclass(frozen=True)
class FeatureMatrix:
    vehicle_ids: np.ndarray
    feature_names: tuple[str, ...]
    values: np.ndarray
    state: str = "raw"
    means: np.ndarray | None = None
    stds: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ParameterError("feature values must be 2-d")
        if values.shape != (len(self.vehicle_ids), len(self.feature_names)):
            raise ParameterError(
                f"values shape {values.shape} does not match "
                f"{len(self.vehicle_ids)} ids x {len(self.feature_names)} names"
            )
        if self.state not in STATES:
            raise ParameterError(f"unknown state {self.state!r}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "vehicle_ids", np.asarray(self.vehicle_ids, dtype=np.int64))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @classmethod
    def from_array(cls, values, feature_names=None, vehicle_ids=None, state="standardized"):
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if feature_names is None:
            feature_names = tuple(f"f{j}" for j in range(values.shape[1]))
        if vehicle_ids is None:
            vehicle_ids = np.arange(values.shape[0])
        return cls(np.asarray(vehicle_ids), tuple(feature_names), values, state)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.feature_names.index(name)]

    def select(self, names: Sequence[str]) -> "FeatureMatrix":
        idx = [self.feature_names.index(n) for n in names]
        return FeatureMatrix(
            self.vehicle_ids,
            tuple(names),
            self.values[:, idx],
            self.state,
            None if self.means is None else self.means[idx],
            None if self.stds is None else self.stds[idx],
        )

    def drop(self, name: str) -> "FeatureMatrix":
        return self.select([n for n in self.feature_names if n != name])

    def column_stats(self) -> dict[str, dict[str, float]]:
        return {
            name: {
                "mean": float(np.mean(col)),
                "std": float(np.std(col)),
                "min": float(np.min(col)),
                "max": float(np.max(col)),
            }
            for name, col in zip(self.feature_names, self.values.T)
        }


def ttc_series(cs: ConflictSeries) -> np.ndarray:
    closing = cs.relative_speed > 0
    out = np.full(len(cs), np.nan)
    out[closing] = cs.gap[closing] / cs.relative_speed[closing]
    return out


def drac_series(cs: ConflictSeries, cap: float = 9.8) -> np.ndarray:
    closing = cs.relative_speed > 0
    out = np.full(len(cs), np.nan)
    out[closing] = np.minimum(cs.relative_speed[closing] ** 2 / cs.gap[closing], cap)
    return out


def psd_series(cs: ConflictSeries, d: float = 3.35) -> np.ndarray:
    """Remaining distance (the current gap) over braking distance ``v^2 / 2d``."""
    if d <= 0:
        raise ParameterError("deceleration d must be positive")
    moving = cs.follower_speed > 0
    out = np.full(len(cs), np.nan)
    out[moving] = cs.gap[moving] / (cs.follower_speed[moving] ** 2 / (2.0 * d))
    return out


def window_bounds(first_frame: int, last_frame: int, window_frames: int, min_tail_frames: int):
    """Tumbling windows ``[start, stop)`` in frame units over a vehicle's presence.

    A trailing remainder shorter than ``min_tail_frames`` is merged into the
    previous window.
    """
    span = last_frame - first_frame + 1
    starts = list(range(first_frame, last_frame + 1, window_frames))
    bounds = [(s, min(s + window_frames, last_frame + 1)) for s in starts]
    if len(bounds) > 1 and bounds[-1][1] - bounds[-1][0] < min_tail_frames:
        tail = bounds.pop()
        bounds[-1] = (bounds[-1][0], tail[1])
    assert sum(b - a for a, b in bounds) == span
    return bounds


def _window_index(frames: np.ndarray, bounds) -> np.ndarray:
    starts = np.array([a for a, _ in bounds])
    return np.searchsorted(starts, frames, side="right") - 1


def tet_tit(
    ttc: np.ndarray,
    frames: np.ndarray,
    ttc_star: float,
    bounds,
    tick: float = 0.1,
) -> tuple[np.ndarray, np.ndarray]:
    """Window-normalised time exposed TTC and time integrated TTC.

    Both sums are divided by the window duration, so TET lies in [0, 1] and
    TIT in [0, ttc_star].
    """
    if ttc_star <= 0:
        raise ParameterError("ttc_star must be positive")
    ttc = np.asarray(ttc, dtype=float)
    exposed = (ttc > 0) & (ttc < ttc_star)  # NaN compares False
    widx = _window_index(np.asarray(frames), bounds)
    tet = np.zeros(len(bounds))
    tit = np.zeros(len(bounds))
    for w, (a, b) in enumerate(bounds):
        hit = exposed & (widx == w)
        duration = (b - a) * tick
        tet[w] = int(hit.sum()) * tick / duration
        tit[w] = math.fsum((ttc_star - ttc[hit]) * tick) / duration
    return tet, tit


def crash_probability(drac: np.ndarray, mode: str, cfg: IndicatorConfig) -> np.ndarray:
    """Per-frame probability that the required deceleration exceeds MADR."""
    drac = np.asarray(drac, dtype=float)
    active = np.isfinite(drac) & (drac > 0)
    p = np.zeros(len(drac))
    if mode == "m1":
        p[active] = (drac[active] > cfg.madr_m1).astype(float)
    elif mode == "m2":
        mean, std = cfg.madr_m2
        if std <= 0:
            raise ParameterError("MADR standard deviation must be positive")
        p[active] = np.clip(ndtr((drac[active] - mean) / std), 0.0, 1.0)
    else:
        raise ParameterError(f"unknown CPI mode {mode!r}")
    return p


def cpi(
    drac: np.ndarray,
    frames: np.ndarray,
    mode: str,
    cfg: IndicatorConfig,
    bounds,
) -> np.ndarray:
    """Crash potential index per window (time fraction weighted by P(DRAC > MADR))."""
    p = crash_probability(drac, mode, cfg)
    widx = _window_index(np.asarray(frames), bounds)
    out = np.zeros(len(bounds))
    for w, (a, b) in enumerate(bounds):
        out[w] = math.fsum(p[widx == w] * cfg.tick) / ((b - a) * cfg.tick)
    return out


def _mean_ttc_min(ttc: np.ndarray, frames: np.ndarray, bounds) -> float:
    widx = _window_index(frames, bounds)
    best = math.inf
    for w in range(len(bounds)):
        vals = ttc[(widx == w) & np.isfinite(ttc)]
        if len(vals):
            best = min(best, float(np.mean(vals)))
    return best


def vehicle_features(
    track: VehicleTrack, cs: ConflictSeries | None, cfg: IndicatorConfig
) -> np.ndarray:
    """Raw 12-feature row for one vehicle, in :data:`FEATURE_NAMES` order."""
    safe = np.array(
        [cfg.ttc_cap, 0, 0, 0, 0, 0, 0, 0, 0, 0, cfg.psd_cap, cfg.psd_cap], dtype=float
    )
    if cs is None or len(cs) == 0:
        return safe
    bounds = window_bounds(
        int(track.frames[0]), int(track.frames[-1]), cfg.window_frames, cfg.min_tail_frames
    )
    row = safe.copy()
    ttc = ttc_series(cs)
    if np.any(np.isfinite(ttc)):
        row[0] = _mean_ttc_min(ttc, cs.frames, bounds)
        for j, star in enumerate(cfg.ttc_thresholds):
            tet, tit = tet_tit(ttc, cs.frames, star, bounds, cfg.tick)
            row[1 + j] = tet.max()
            row[4 + j] = tit.max()
    drac = drac_series(cs, cfg.drac_cap)
    if np.any(np.isfinite(drac)):
        row[7] = np.nanmax(drac)
        row[8] = cpi(drac, cs.frames, "m1", cfg, bounds).max()
        row[9] = cpi(drac, cs.frames, "m2", cfg, bounds).max()
    psd = psd_series(cs, cfg.psd_decel)
    if np.any(np.isfinite(psd)):
        row[10] = np.nanmin(psd)
        row[11] = np.nanmean(psd)
    return row


def extract_features(
    tracks: TrackSet | Mapping[int, VehicleTrack],
    conflict_series: Mapping[int, ConflictSeries],
    cfg: IndicatorConfig | None = None,
) -> FeatureMatrix:
    cfg = cfg or IndicatorConfig()
    lookup = tracks.tracks if isinstance(tracks, TrackSet) else dict(tracks)
    if not lookup:
        raise EmptyInputError("no tracks to extract features from")
    ids = sorted(lookup)
    rows = [vehicle_features(lookup[v], conflict_series.get(v), cfg) for v in ids]
    return FeatureMatrix(np.array(ids), FEATURE_NAMES, np.vstack(rows), "raw")


def rectify(m: FeatureMatrix, cfg: IndicatorConfig | None = None) -> FeatureMatrix:
    """Suppress the sufficiently-safe range of each capped column.

    Safety-direction columns above their cap become ``cap + scale*(x - cap)``
    (a hard clamp when the scale is 0). DRAC is always hard-clamped.
    """
    cfg = cfg or IndicatorConfig()
    if m.state != "raw":
        raise ParameterError(f"rectify expects a raw matrix, got state={m.state!r}")
    values = m.values.copy()
    for name, cap in cfg.caps().items():
        if name not in m.feature_names:
            continue
        j = m.feature_names.index(name)
        col = values[:, j]
        over = col > cap
        scale = cfg.safety_scale if name in SAFETY_DIRECTION else 0.0
        col[over] = cap + scale * (col[over] - cap)
    return replace(m, values=values, state="rectified")


def standardize(m: FeatureMatrix) -> FeatureMatrix:
    """Column z-scores with population standard deviation.

    Constant columns become zeros and raise a warning.
    """
    means = m.values.mean(axis=0)
    # exact test: the std of a constant column can come out as rounding noise
    const = np.ptp(m.values, axis=0) == 0
    stds = np.where(const, 0.0, m.values.std(axis=0))
    if np.any(const):
        names = [n for n, c in zip(m.feature_names, const) if c]
        warnings.warn(f"constant columns standardized to zero: {names}", RuntimeWarning, stacklevel=2)
    safe_std = np.where(const, 1.0, stds)
    values = (m.values - means) / safe_std
    values[:, const] = 0.0
    return replace(m, values=values, state="standardized", means=means, stds=stds)
