"""Turn a partition into ordered risk levels, thresholds and exportable summaries."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .clustering import ClusteringResult
from .errors import DataError, ParameterError
from .indicators import SAFETY_DIRECTION, FeatureMatrix
from .trajectory import TrackSet, VehicleTrack

logger = logging.getLogger(__name__)

CPI_FEATURES = ("CPI.m1.max", "CPI.m2.max")
TIEBREAK_FEATURE = "CPI.m2.max"


def _labels_of(result) -> np.ndarray:
    return np.asarray(result.labels if isinstance(result, ClusteringResult) else result)


@dataclass(frozen=True)
class ClusterOrdering:
    """Maps each cluster label to a risk level (0 = safest)."""

    clusters: tuple[int, ...]  # sorted distinct labels
    level_of: dict[int, int]
    severity: dict[int, float]
    sizes: dict[int, int]

    @property
    def k(self) -> int:
        return len(self.clusters)

    def levels(self, labels) -> np.ndarray:
        return np.array([self.level_of[int(c)] for c in np.asarray(labels)], dtype=int)


def order_clusters(
    result: ClusteringResult | np.ndarray,
    m: FeatureMatrix,
    features: Sequence[str] | None = None,
) -> ClusterOrdering:
    """Rank clusters by severity.

    Severity is the cluster mean of the column z-scores, averaged over
    ``features`` (default: all). Columns where higher means safer enter with a
    flipped sign. Ties fall back to the mean CPI.m2.max, then to the larger
    cluster being safer.
    """
    labels = _labels_of(result)
    if len(labels) != m.n_rows:
        raise ParameterError("labels and feature rows differ in length")
    names = list(features) if features is not None else list(m.feature_names)
    X = m.select(names).values
    const = np.ptp(X, axis=0) == 0
    std = np.where(const, 1.0, X.std(axis=0))
    z = (X - X.mean(axis=0)) / std
    z[:, const] = 0.0
    sign = np.array([-1.0 if n in SAFETY_DIRECTION else 1.0 for n in names])
    row_score = (z * sign).mean(axis=1)
    tb = m.column(TIEBREAK_FEATURE) if TIEBREAK_FEATURE in m.feature_names else np.zeros(len(labels))
    clusters = tuple(int(c) for c in np.unique(labels))
    severity, tie, sizes = {}, {}, {}
    for c in clusters:
        mask = labels == c
        severity[c] = float(row_score[mask].mean())
        tie[c] = float(tb[mask].mean())
        sizes[c] = int(mask.sum())
    # rounding keeps the order stable against summation-order noise
    key = lambda c: (round(severity[c], 12), round(tie[c], 12), -sizes[c], c)
    ranked = sorted(clusters, key=key)
    return ClusterOrdering(clusters, {c: i for i, c in enumerate(ranked)}, severity, sizes)


def imbalance_ratio(counts: Sequence[int], high_risk: Sequence[int]) -> tuple[float, int]:
    """Largest level count over the summed high-risk counts, exact and floored."""
    counts = [int(c) for c in counts]
    if len(counts) < 2:
        logger.warning("a single level has no imbalance ratio; reporting 1")
        return 1.0, 1
    minority = sum(counts[i] for i in high_risk)
    if not high_risk or minority == 0:
        raise ParameterError("high-risk levels must be non-empty and populated")
    exact = max(counts) / minority
    return exact, int(math.floor(exact))


@dataclass
class RiskLabelMap:
    vehicle_ids: np.ndarray
    levels: np.ndarray
    cluster_to_level: dict[int, int]
    counts: list[int]
    high_risk: tuple[int, ...]
    ir_exact: float
    ir: int

    @property
    def k(self) -> int:
        return len(self.counts)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["vehicle_id", "risk_level"])
            for v, lv in zip(self.vehicle_ids, self.levels):
                w.writerow([int(v), int(lv)])

    def summary(self) -> dict:
        return {
            "k": self.k,
            "counts": self.counts,
            "cluster_to_level": {str(c): lv for c, lv in sorted(self.cluster_to_level.items())},
            "high_risk": list(self.high_risk),
            "IR_exact": self.ir_exact,
            "IR": self.ir,
        }


def default_high_risk(
    levels: np.ndarray, k: int, m: FeatureMatrix | None, cpi_tol: float = 0.01
) -> tuple[int, ...]:
    """Levels where the median of some CPI column exceeds ``cpi_tol``.

    The tolerance ignores the vanishing Gaussian-tail probabilities that the
    distributed-MADR variant assigns to almost every closing vehicle.

    Falls back to the most severe level when no CPI column is available or no
    level qualifies.
    """
    cols = [c for c in CPI_FEATURES if m is not None and c in m.feature_names]
    high = []
    for lv in range(k):
        mask = levels == lv
        if mask.any() and any(np.median(m.column(c)[mask]) > cpi_tol for c in cols):
            high.append(lv)
    if not high:
        logger.warning("no level has a positive median CPI; treating level %d as high risk", k - 1)
        high = [k - 1]
    return tuple(high)


def label_dataset(
    result: ClusteringResult | np.ndarray,
    ordering: ClusterOrdering,
    m: FeatureMatrix | None = None,
    high_risk: Sequence[int] | None = None,
    vehicle_ids=None,
    cpi_tol: float = 0.01,
) -> RiskLabelMap:
    labels = _labels_of(result)
    levels = ordering.levels(labels)
    k = ordering.k
    counts = np.bincount(levels, minlength=k).tolist()
    if vehicle_ids is None:
        vehicle_ids = m.vehicle_ids if m is not None else np.arange(len(labels))
    if k < 2:
        hr: tuple[int, ...] = ()
        ir_exact, ir = imbalance_ratio(counts, hr)
    else:
        hr = tuple(high_risk) if high_risk is not None else default_high_risk(levels, k, m, cpi_tol)
        ir_exact, ir = imbalance_ratio(counts, hr)
    return RiskLabelMap(np.asarray(vehicle_ids), levels, dict(ordering.level_of), counts, hr, ir_exact, ir)


def threshold_from_ranges(lower: tuple[float, float], upper: tuple[float, float], increasing: bool = True):
    """Threshold and overlap fraction for a (lower level, upper level) pair of (min, max) ranges.

    For a feature that grows with risk the threshold is the lower level's
    maximum and the overlap is ``(max(lower) - min(upper)) / (max(upper) - min(lower))``
    clamped at 0. A decreasing feature is handled on the mirrored axis.
    """
    (lo_min, lo_max), (up_min, up_max) = lower, upper
    if not increasing:
        t, ov = threshold_from_ranges((-lo_max, -lo_min), (-up_max, -up_min), True)
        return -t, ov
    span = up_max - lo_min
    if span <= 0:
        overlap = 1.0 if lo_max >= up_min else 0.0
    else:
        overlap = max(0.0, (lo_max - up_min) / span)
    return lo_max, overlap


@dataclass(frozen=True)
class LevelStats:
    mean: float
    std: float
    min: float
    max: float

    @classmethod
    def of(cls, x) -> "LevelStats":
        x = np.asarray(x, dtype=float)
        return cls(float(x.mean()), float(x.std()), float(x.min()), float(x.max()))


@dataclass(frozen=True)
class ThresholdRow:
    feature: str
    lower_level: int
    upper_level: int
    lower: LevelStats
    upper: LevelStats
    threshold: float
    overlap: float
    increasing: bool = True

    def as_row(self) -> list:
        return [
            self.feature,
            self.lower_level,
            self.upper_level,
            *(getattr(self.lower, a) for a in ("mean", "std", "min", "max")),
            *(getattr(self.upper, a) for a in ("mean", "std", "min", "max")),
            self.threshold,
            self.overlap,
        ]


THRESHOLD_HEADER = [
    "feature",
    "lower_level",
    "upper_level",
    "lower_mean",
    "lower_std",
    "lower_min",
    "lower_max",
    "upper_mean",
    "upper_std",
    "upper_min",
    "upper_max",
    "threshold",
    "overlap",
]


@dataclass
class ThresholdTable:
    rows: list[ThresholdRow] = field(default_factory=list)
    candidates: list[ThresholdRow] = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(THRESHOLD_HEADER)
            for r in self.rows:
                w.writerow([_fmt(v) for v in r.as_row()])


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def calibrate_thresholds(
    labels: RiskLabelMap, m: FeatureMatrix, features: Sequence[str] | None = None
) -> ThresholdTable:
    """One threshold per adjacent level pair, from the least-overlapping feature.

    ``m`` should be on the reporting scale (raw or rectified), row-aligned
    with ``labels``. Ties in overlap go to the larger gap between level
    means relative to the pooled range, then to feature order.
    """
    if labels.k < 2:
        raise ParameterError("thresholds need at least 2 levels")
    if len(labels.levels) != m.n_rows:
        raise ParameterError("labels and feature rows differ in length")
    names = list(features) if features is not None else list(m.feature_names)
    table = ThresholdTable()
    for c in range(labels.k - 1):
        lo_mask, up_mask = labels.levels == c, labels.levels == c + 1
        if not lo_mask.any() or not up_mask.any():
            continue
        best, best_key = None, None
        for j, name in enumerate(names):
            col = m.column(name)
            lo, up = LevelStats.of(col[lo_mask]), LevelStats.of(col[up_mask])
            if up.mean != lo.mean:
                increasing = up.mean > lo.mean
            else:
                increasing = name not in SAFETY_DIRECTION
            t, ov = threshold_from_ranges((lo.min, lo.max), (up.min, up.max), increasing)
            row = ThresholdRow(name, c, c + 1, lo, up, t, ov, increasing)
            table.candidates.append(row)
            pooled = max(lo.max, up.max) - min(lo.min, up.min)
            sep = abs(up.mean - lo.mean) / pooled if pooled > 0 else 0.0
            key = (ov, -sep, j)
            if best_key is None or key < best_key:
                best, best_key = row, key
        table.rows.append(best)
    return table


@dataclass(frozen=True)
class SankeyEdge:
    k_from: int
    k_to: int
    source: int
    target: int
    count: int


def _as_partition(p) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(p, RiskLabelMap):
        return np.asarray(p.vehicle_ids), np.asarray(p.levels)
    ids, lv = p
    return np.asarray(ids), np.asarray(lv)


def sankey_flows(partitions: Mapping[int, RiskLabelMap | tuple]) -> list[SankeyEdge]:
    """Edges between consecutive partitions (sorted by k) with vehicle counts."""
    if len(partitions) < 2:
        raise ParameterError("need at least 2 partitions")
    ks = sorted(partitions)
    parts = {k: _as_partition(partitions[k]) for k in ks}
    edges = []
    for a, b in zip(ks, ks[1:]):
        ids_a, lv_a = parts[a]
        ids_b, lv_b = parts[b]
        if len(ids_a) != len(ids_b) or set(ids_a.tolist()) != set(ids_b.tolist()):
            raise DataError(f"partitions k={a} and k={b} cover different vehicles")
        pos = {int(v): i for i, v in enumerate(ids_b)}
        lv_b_aligned = lv_b[[pos[int(v)] for v in ids_a]]
        pairs, counts = np.unique(np.column_stack([lv_a, lv_b_aligned]), axis=0, return_counts=True)
        for (s, t), n in zip(pairs, counts):
            edges.append(SankeyEdge(a, b, int(s), int(t), int(n)))
    return edges


def write_sankey(edges: Sequence[SankeyEdge], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k_from", "k_to", "source", "target", "count"])
        for e in edges:
            w.writerow([e.k_from, e.k_to, e.source, e.target, e.count])


def align_labels(reference: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Relabel ``labels`` onto ``reference`` by the maximum-overlap one-to-one matching."""
    ref_u, ref_inv = np.unique(reference, return_inverse=True)
    lab_u, lab_inv = np.unique(labels, return_inverse=True)
    conf = np.zeros((len(lab_u), len(ref_u)), dtype=np.int64)
    np.add.at(conf, (lab_inv, ref_inv), 1)
    rows, cols = linear_sum_assignment(-conf)
    mapping = dict(zip(rows.tolist(), cols.tolist()))
    return ref_u[[mapping[i] for i in lab_inv]]


def ensemble_vote(results: Sequence, scores: Sequence[float] | None = None, X=None) -> np.ndarray:
    """Majority vote over partitions aligned to the first one.

    Row ties go to the result with the best score: ``scores`` if given, else
    bSI on ``X``, else the first result.
    """
    if len(results) < 3:
        raise ParameterError("ensemble voting needs at least 3 results")
    labs = [_labels_of(r) for r in results]
    n = len(labs[0])
    if any(len(l) != n for l in labs):
        raise ParameterError("results differ in row count")
    ks = {len(np.unique(l)) for l in labs}
    if len(ks) != 1:
        raise ParameterError(f"results have different k: {sorted(ks)}")
    if scores is None and X is not None:
        from .evaluation import evaluate

        scores = [evaluate(X, l).bsi for l in labs]
    best = int(np.argmax(scores)) if scores is not None else 0
    aligned = np.vstack([labs[0]] + [align_labels(labs[0], l) for l in labs[1:]])
    cats = np.unique(labs[0])
    votes = np.stack([(aligned == c).sum(axis=0) for c in cats])  # k x n
    top = votes.max(axis=0)
    out = cats[np.argmax(votes, axis=0)]
    tied = (votes == top).sum(axis=0) > 1
    out[tied] = aligned[best, tied]
    return out


PROFILE_HEADER = ["lane_id", "vehicle_id", "timestamp_s", "position_m", "risk_level"]


def risk_profile_export(
    labels: RiskLabelMap, tracks: TrackSet | Mapping[int, VehicleTrack], tick: float = 0.1, path=None
) -> list[tuple]:
    """Per-frame rows for time-space risk plots, sorted by lane then time."""
    lookup = tracks.tracks if isinstance(tracks, TrackSet) else dict(tracks)
    level_of = {int(v): int(l) for v, l in zip(labels.vehicle_ids, labels.levels)}
    missing = set(level_of) - set(lookup)
    if missing:
        raise DataError(f"{len(missing)} labelled vehicles have no track, e.g. {min(missing)}")
    rows = []
    for vid in sorted(level_of):
        tr = lookup[vid]
        for f, x, lane in zip(tr.frames, tr.position, tr.lane):
            rows.append((int(lane), vid, round(int(f) * tick, 10), float(x), level_of[vid]))
    rows.sort(key=lambda r: (r[0], r[2], r[1]))
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PROFILE_HEADER)
            for r in rows:
                w.writerow([r[0], r[1], repr(r[2]), repr(r[3]), r[4]])
    return rows


def letter_values(m: FeatureMatrix, levels, depth: int = 3, features: Sequence[str] | None = None) -> list[dict]:
    """Median plus tail-halving quantile pairs per (level, feature).

    Depth ``d`` adds the ``1/2^(d+1)`` and ``1 - 1/2^(d+1)`` quantiles, so
    depth 1 gives the quartiles.
    """
    if depth < 1:
        raise ParameterError("depth must be >= 1")
    levels = np.asarray(levels)
    names = list(features) if features is not None else list(m.feature_names)
    out = []
    for lv in np.unique(levels):
        mask = levels == lv
        for name in names:
            col = m.column(name)[mask]
            out.append({"level": int(lv), "feature": name, "depth": 0, "p": 0.5,
                        "lower": float(np.median(col)), "upper": float(np.median(col))})
            for d in range(1, depth + 1):
                p = 0.5 ** (d + 1)
                lo, hi = np.quantile(col, [p, 1 - p])
                out.append({"level": int(lv), "feature": name, "depth": d, "p": p,
                            "lower": float(lo), "upper": float(hi)})
    return out
