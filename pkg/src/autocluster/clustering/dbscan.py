from __future__ import annotations

from collections import deque

import numpy as np
from scipy.spatial import cKDTree

from ..errors import ParameterError
from .base import ClusteringResult, compact_labels


def dbscan(X: np.ndarray, eps: float = 0.5, min_pts: int = 5) -> ClusteringResult:
    """Density-based clustering; noise rows join their nearest clustered row.

    ``noise`` keeps the original noise flags. When no cluster forms at all,
    every row is noise and the whole set is reported as one cluster.
    """
    if eps <= 0:
        raise ParameterError("eps must be positive")
    if min_pts < 1:
        raise ParameterError("min_pts must be >= 1")
    n = X.shape[0]
    tree = cKDTree(X)
    neighbours = tree.query_ball_point(X, r=eps)
    core = np.array([len(nb) >= min_pts for nb in neighbours])
    labels = np.full(n, -1, dtype=np.int64)
    cluster = 0
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        labels[i] = cluster
        queue = deque([i])
        while queue:
            p = queue.popleft()
            if not core[p]:
                continue
            for q in sorted(neighbours[p]):
                if labels[q] == -1:
                    labels[q] = cluster
                    if core[q]:
                        queue.append(q)
        cluster += 1
    noise = labels == -1
    if cluster == 0:
        return ClusteringResult(np.zeros(n, dtype=np.int64), 1, noise=noise)
    if np.any(noise):
        _, idx = cKDTree(X[~noise]).query(X[noise], k=1)
        labels[noise] = labels[~noise][idx]
    labels, k_found = compact_labels(labels)
    return ClusteringResult(labels, k_found, noise=noise)
