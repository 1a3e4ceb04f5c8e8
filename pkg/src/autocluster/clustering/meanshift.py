from __future__ import annotations

import numpy as np
from scipy.spatial.distance import pdist

from ..errors import ParameterError
from .base import ClusteringResult, compact_labels, pairwise_dists, sq_dists

SUBSAMPLE = 2000


def estimate_bandwidth(X: np.ndarray, quantile: float, seed: int = 0) -> float:
    """Given quantile of all pairwise distances (seeded subsample above 2,000 rows)."""
    if X.shape[0] > SUBSAMPLE:
        idx = np.random.default_rng(seed).choice(X.shape[0], SUBSAMPLE, replace=False)
        X = X[np.sort(idx)]
    if X.shape[0] < 2:
        return 0.0
    return float(np.quantile(pdist(X), quantile))


def _bin_seeds(X: np.ndarray, bandwidth: float) -> np.ndarray:
    cells = np.unique(np.round(X / bandwidth), axis=0)
    return cells * bandwidth


def mean_shift(
    X: np.ndarray,
    quantile: float = 0.3,
    bandwidth: float | None = None,
    bin_seeding: bool = True,
    bandwidth_seed: int = 0,
    max_iter: int = 300,
) -> ClusteringResult:
    """Flat-kernel mean shift; modes within one bandwidth of a stronger mode are merged."""
    if bandwidth is None:
        if not 0.0 < quantile <= 1.0:
            raise ParameterError("quantile must lie in (0, 1]")
        bandwidth = estimate_bandwidth(X, quantile, bandwidth_seed)
    n = X.shape[0]
    if bandwidth <= 0:
        return ClusteringResult(np.zeros(n, dtype=np.int64), 1, centers=X[:1].copy())

    seeds = _bin_seeds(X, bandwidth) if bin_seeding else X.copy()
    if len(seeds) >= n:
        seeds = X.copy()
    bw2 = bandwidth * bandwidth
    stop = 1e-3 * bandwidth
    points = seeds.copy()
    alive = np.ones(len(points), dtype=bool)
    done = np.zeros(len(points), dtype=bool)
    it = 0
    for it in range(1, max_iter + 1):
        idx = np.flatnonzero(alive & ~done)
        if not len(idx):
            break
        for s in range(0, len(idx), 512):
            block = idx[s : s + 512]
            within = sq_dists(points[block], X) <= bw2
            counts = within.sum(axis=1)
            empty = counts == 0
            alive[block[empty]] = False
            ok = block[~empty]
            new = (within[~empty].astype(float) @ X) / counts[~empty, None]
            moved = np.sqrt(np.einsum("ij,ij->i", new - points[ok], new - points[ok]))
            points[ok] = new
            done[ok[moved < stop]] = True
    if not np.any(alive):
        if bin_seeding:
            return mean_shift(X, quantile, bandwidth, False, bandwidth_seed, max_iter)
        return ClusteringResult(np.zeros(n, dtype=np.int64), 1, converged=False, iterations=it)

    modes = points[alive]
    intensity = (sq_dists(modes, X) <= bw2).sum(axis=1)
    order = np.lexsort(tuple(modes.T[::-1]) + (-intensity,))
    modes = modes[order]
    keep = []
    for i in range(len(modes)):
        if not keep or np.min(pairwise_dists(modes[i : i + 1], modes[keep])) > bandwidth:
            keep.append(i)
    centers = modes[keep]
    labels = np.argmin(sq_dists(X, centers), axis=1)
    labels_c, k_found = compact_labels(labels)
    return ClusteringResult(
        labels_c,
        k_found,
        converged=bool(np.all(done[alive])),
        iterations=it,
        centers=centers[np.unique(labels)],
    )
