"""NGSIM trajectory ingestion, Savitzky-Golay smoothing and leader-follower pairing."""
from __future__ import annotations

import io
import logging
import zipfile
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple

import numpy as np
import pandas as pd
from scipy.signal import savgol_filter

from .errors import EmptyInputError, ParameterError, SchemaError

logger = logging.getLogger(__name__)

FEET_TO_METRES = 0.3048

# canonical field -> NGSIM US-101 column name
DEFAULT_COLUMNS = {
    "vehicle_id": "Vehicle_ID",
    "frame": "Frame_ID",
    "position": "Local_Y",
    "velocity": "v_Vel",
    "length": "v_Length",
    "lane": "Lane_ID",
    "preceding": "Preceding",
}


class TrajectorySample(NamedTuple):
    frame_index: int
    longitudinal_position: float
    velocity: float
    lane_id: int
    preceding_vehicle_id: int | None


@dataclass(frozen=True)
class VehicleTrack:
    """Time series of one vehicle, stored column-wise.

    ``preceding`` uses 0 for "no leader", matching the NGSIM convention.
    """

    vehicle_id: int
    length: float
    frames: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    lane: np.ndarray
    preceding: np.ndarray
    smoothing_skipped: bool = False

    def __post_init__(self):
        if not self.length > 0:
            raise ParameterError(f"vehicle {self.vehicle_id}: length must be > 0")
        if len(self.frames) == 0:
            raise ParameterError(f"vehicle {self.vehicle_id}: no samples")
        if np.any(np.diff(self.frames) <= 0):
            raise ParameterError(f"vehicle {self.vehicle_id}: frames not strictly increasing")

    def __len__(self):
        return len(self.frames)

    @property
    def samples(self) -> list[TrajectorySample]:
        return [
            TrajectorySample(
                int(f), float(x), float(v), int(l), int(p) if p > 0 else None
            )
            for f, x, v, l, p in zip(
                self.frames, self.position, self.velocity, self.lane, self.preceding
            )
        ]


@dataclass
class TrackSet:
    """Parsed tracks keyed by vehicle id, plus ingestion drop counters."""

    tracks: dict[int, VehicleTrack]
    dropped_missing: int = 0
    dropped_duplicate: int = 0

    def __len__(self):
        return len(self.tracks)

    def __iter__(self):
        return iter(self.tracks[k] for k in sorted(self.tracks))

    def __getitem__(self, vehicle_id: int) -> VehicleTrack:
        return self.tracks[vehicle_id]

    @property
    def dropped(self) -> int:
        return self.dropped_missing + self.dropped_duplicate


@dataclass(frozen=True)
class ConflictSeries:
    """Per-frame follower/leader geometry for one follower.

    Only frames where the leader exists at the same frame and in the same lane
    are present. ``clamped`` marks frames whose raw gap fell below the minimum
    gap and was replaced by it; ``raw_gap`` keeps the original value.
    """

    follower_id: int
    frames: np.ndarray
    leader_ids: np.ndarray
    gap: np.ndarray
    raw_gap: np.ndarray
    relative_speed: np.ndarray
    follower_speed: np.ndarray
    clamped: np.ndarray
    skipped_unknown_leader: int = 0

    def __len__(self):
        return len(self.frames)

    @property
    def leader_defined(self) -> np.ndarray:
        return np.ones(len(self.frames), dtype=bool)

    @property
    def n_negative_gaps(self) -> int:
        return int(np.sum(self.raw_gap < 0))


def parse_ngsim(
    path: str | Path,
    unit: str = "feet",
    columns: Mapping[str, str] | None = None,
) -> TrackSet:
    """Read an NGSIM-format CSV into one :class:`VehicleTrack` per vehicle id.

    Rows with a missing mandatory field are dropped; for duplicate
    ``(vehicle, frame)`` rows the first occurrence wins. Both are counted.
    """
    if unit not in ("feet", "metres"):
        raise ParameterError(f"unit must be 'feet' or 'metres', got {unit!r}")
    colmap = dict(DEFAULT_COLUMNS)
    if columns:
        unknown = set(columns) - set(colmap)
        if unknown:
            raise ParameterError(f"unknown column mapping keys: {sorted(unknown)}")
        colmap.update(columns)

    path = Path(path)
    try:
        df = pd.read_csv(path, encoding="utf-8", skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise EmptyInputError(f"{path} is empty") from None
    for key in DEFAULT_COLUMNS:
        if colmap[key] not in df.columns:
            raise SchemaError(colmap[key])
    if len(df) == 0:
        raise EmptyInputError(f"{path} has a header but no rows")

    df = df[[colmap[k] for k in DEFAULT_COLUMNS]].copy()
    df.columns = list(DEFAULT_COLUMNS)
    df = df.apply(pd.to_numeric, errors="coerce")
    mandatory = [c for c in DEFAULT_COLUMNS if c != "preceding"]
    ok = df[mandatory].notna().all(axis=1)
    dropped_missing = int((~ok).sum())
    df = df[ok]
    df["preceding"] = df["preceding"].fillna(0)

    dup = df.duplicated(subset=["vehicle_id", "frame"], keep="first")
    dropped_duplicate = int(dup.sum())
    df = df[~dup]

    scale = FEET_TO_METRES if unit == "feet" else 1.0
    tracks: dict[int, VehicleTrack] = {}
    for vid, g in df.groupby("vehicle_id", sort=True):
        g = g.sort_values("frame", kind="stable")
        tracks[int(vid)] = VehicleTrack(
            vehicle_id=int(vid),
            length=float(g["length"].iloc[0]) * scale,
            frames=g["frame"].to_numpy(dtype=np.int64),
            position=g["position"].to_numpy(dtype=float) * scale,
            velocity=g["velocity"].to_numpy(dtype=float) * scale,
            lane=g["lane"].to_numpy(dtype=np.int64),
            preceding=g["preceding"].to_numpy(dtype=np.int64),
        )
    if dropped_missing or dropped_duplicate:
        logger.info(
            "dropped %d rows with missing fields and %d duplicate rows",
            dropped_missing,
            dropped_duplicate,
        )
    return TrackSet(tracks, dropped_missing, dropped_duplicate)


def smooth_track(track: VehicleTrack, window: int = 21, poly_order: int = 3) -> VehicleTrack:
    """Savitzky-Golay smoothing of position and velocity.

    Tracks shorter than ``window`` are returned unchanged with
    ``smoothing_skipped`` set.
    """
    if window % 2 == 0 or window <= poly_order:
        raise ParameterError(
            f"window must be odd and > poly_order (got window={window}, poly_order={poly_order})"
        )
    if len(track) < window:
        return replace(track, smoothing_skipped=True)
    position = savgol_filter(track.position, window, poly_order, mode="interp")
    velocity = savgol_filter(track.velocity, window, poly_order, mode="interp")
    return replace(
        track,
        position=position,
        velocity=np.maximum(velocity, 0.0),
        smoothing_skipped=False,
    )


def smooth_tracks(tracks: TrackSet, window: int = 21, poly_order: int = 3) -> TrackSet:
    smoothed = {vid: smooth_track(t, window, poly_order) for vid, t in tracks.tracks.items()}
    n_skipped = sum(t.smoothing_skipped for t in smoothed.values())
    if n_skipped:
        logger.warning("%d tracks shorter than the smoothing window were left unsmoothed", n_skipped)
    return TrackSet(smoothed, tracks.dropped_missing, tracks.dropped_duplicate)


def _pair_one(
    follower: VehicleTrack, tracks: Mapping[int, VehicleTrack], min_gap: float
) -> ConflictSeries:
    n = len(follower)
    keep = np.zeros(n, dtype=bool)
    lead_pos = np.zeros(n)
    lead_vel = np.zeros(n)
    lead_len = np.zeros(n)
    unknown = 0
    for leader_id in np.unique(follower.preceding[follower.preceding > 0]):
        idx = np.flatnonzero(follower.preceding == leader_id)
        leader = tracks.get(int(leader_id))
        if leader is None:
            unknown += len(idx)
            continue
        pos = np.searchsorted(leader.frames, follower.frames[idx])
        pos_c = np.minimum(pos, len(leader.frames) - 1)
        present = leader.frames[pos_c] == follower.frames[idx]
        same_lane = leader.lane[pos_c] == follower.lane[idx]
        ok = present & same_lane
        sel, li = idx[ok], pos_c[ok]
        keep[sel] = True
        lead_pos[sel] = leader.position[li]
        lead_vel[sel] = leader.velocity[li]
        lead_len[sel] = leader.length

    raw_gap = (lead_pos - follower.position - lead_len)[keep]
    clamped = raw_gap < min_gap
    return ConflictSeries(
        follower_id=follower.vehicle_id,
        frames=follower.frames[keep],
        leader_ids=follower.preceding[keep],
        gap=np.where(clamped, min_gap, raw_gap),
        raw_gap=raw_gap,
        relative_speed=(follower.velocity - lead_vel)[keep],
        follower_speed=follower.velocity[keep],
        clamped=clamped,
        skipped_unknown_leader=unknown,
    )


def build_conflict_series(
    tracks: TrackSet | Mapping[int, VehicleTrack] | Iterable[VehicleTrack],
    min_gap: float = 0.1,
) -> dict[int, ConflictSeries]:
    """Pair each follower frame with its preceding vehicle in the same lane.

    Returns one series per follower, keyed by follower id. Frames whose
    preceding id is not a known vehicle are skipped and counted.
    """
    if min_gap <= 0:
        raise ParameterError("min_gap must be positive")
    if isinstance(tracks, TrackSet):
        lookup = tracks.tracks
    elif isinstance(tracks, Mapping):
        lookup = dict(tracks)
    else:
        lookup = {t.vehicle_id: t for t in tracks}
    out = {vid: _pair_one(lookup[vid], lookup, min_gap) for vid in sorted(lookup)}
    n_neg = sum(cs.n_negative_gaps for cs in out.values())
    if n_neg:
        logger.warning("%d frames had negative gaps and were clamped to %.3g m", n_neg, min_gap)
    return out


def save_tracks(tracks: TrackSet, path: str | Path) -> None:
    """Write tracks as a flat ``.npz`` archive (any file name is accepted)."""
    ordered = list(tracks)
    counts = np.array([len(t) for t in ordered], dtype=np.int64)
    arrays = {
        "vehicle_id": np.array([t.vehicle_id for t in ordered], dtype=np.int64),
        "length": np.array([t.length for t in ordered], dtype=float),
        "smoothing_skipped": np.array([t.smoothing_skipped for t in ordered], dtype=bool),
        "counts": counts,
        "dropped": np.array([tracks.dropped_missing, tracks.dropped_duplicate], dtype=np.int64),
    }
    for name in ("frames", "position", "velocity", "lane", "preceding"):
        parts = [getattr(t, name) for t in ordered]
        arrays[name] = np.concatenate(parts) if parts else np.array([])
    # fixed zip timestamps keep the archive byte-identical across runs
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            zf.writestr(info, buf.getvalue())


def load_tracks(path: str | Path) -> TrackSet:
    with np.load(path) as z:
        bounds = np.concatenate([[0], np.cumsum(z["counts"])])
        tracks = {}
        for j, vid in enumerate(z["vehicle_id"]):
            s = slice(bounds[j], bounds[j + 1])
            tracks[int(vid)] = VehicleTrack(
                vehicle_id=int(vid),
                length=float(z["length"][j]),
                frames=z["frames"][s].astype(np.int64),
                position=z["position"][s],
                velocity=z["velocity"][s],
                lane=z["lane"][s].astype(np.int64),
                preceding=z["preceding"][s].astype(np.int64),
                smoothing_skipped=bool(z["smoothing_skipped"][j]),
            )
        dropped = z["dropped"]
    return TrackSet(tracks, int(dropped[0]), int(dropped[1]))
