from __future__ import annotations

import numpy as np

from ..errors import ParameterError
from .base import ClusteringResult, compact_labels, sq_dists


def memberships_from_distances(d2: np.ndarray, m: float) -> np.ndarray:
    """Fuzzy c-means membership update from squared distances.

    ``u_ij = 1 / sum_c (d_ij / d_ic)^(2/(m-1))``. A row that coincides with
    one or more centres gets its whole membership split over those centres.
    """
    n, k = d2.shape
    u = np.empty((n, k))
    zero = d2 <= 0.0
    hit = zero.any(axis=1)
    if np.any(~hit):
        # (d_ij/d_ic)^(2/(m-1)) == (d2_ij/d2_ic)^(1/(m-1)); normalise by the row min for stability
        dd = d2[~hit]
        ratio = (dd.min(axis=1, keepdims=True) / dd) ** (1.0 / (m - 1.0))
        u[~hit] = ratio / ratio.sum(axis=1, keepdims=True)
    if np.any(hit):
        z = zero[hit].astype(float)
        u[hit] = z / z.sum(axis=1, keepdims=True)
    return u


def fcm_objective(X, centers, u, m) -> float:
    return float(np.sum((u**m) * sq_dists(X, centers)))


def fuzzy_c_means(
    X: np.ndarray,
    k: int,
    fuzzifier_m: float = 2.0,
    seed: int = 0,
    tol: float = 1e-5,
    max_iter: int = 300,
) -> ClusteringResult:
    """Alternating optimisation of centres and memberships."""
    n = X.shape[0]
    if k > n:
        raise ParameterError(f"k={k} exceeds the number of rows {n}")
    if fuzzifier_m <= 1.0:
        raise ParameterError("fuzzifier m must be > 1")
    rng = np.random.default_rng(seed)
    u = rng.dirichlet(np.ones(k), size=n)
    objective = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        w = u**fuzzifier_m
        centers = (w.T @ X) / w.sum(axis=0)[:, None]
        objective.append(fcm_objective(X, centers, u, fuzzifier_m))
        new_u = memberships_from_distances(sq_dists(X, centers), fuzzifier_m)
        delta = np.max(np.abs(new_u - u))
        u = new_u
        if delta < tol:
            converged = True
            break
    w = u**fuzzifier_m
    centers = (w.T @ X) / w.sum(axis=0)[:, None]
    objective.append(fcm_objective(X, centers, u, fuzzifier_m))
    labels = np.argmax(u, axis=1)
    labels_c, k_found = compact_labels(labels)
    if k_found < k:
        # drop membership columns of centres that own no row, keep rows stochastic
        keep = np.unique(labels)
        u = u[:, keep] / u[:, keep].sum(axis=1, keepdims=True)
    return ClusteringResult(
        labels_c,
        k_found,
        converged=converged,
        iterations=it,
        memberships=u,
        collapsed=k_found < k,
        centers=centers,
        objective=objective,
    )
