"""k-means++ (Lloyd and Elkan cores) and mini-batch k-means."""
from __future__ import annotations

import math

import numpy as np

from ..errors import ParameterError
from .base import ClusteringResult, compact_labels, sq_dists

CORES = ("EM-style", "Elkan")


def kmeanspp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Greedy k-means++ seeding (2 + log k local trials per centre)."""
    n = X.shape[0]
    n_trials = 2 + int(math.log(k))
    centers = np.empty((k, X.shape[1]))
    first = rng.integers(n)
    centers[0] = X[first]
    closest = sq_dists(X, centers[:1])[:, 0]
    for c in range(1, k):
        total = closest.sum()
        if total <= 0:
            # fewer distinct points than k; any choice is as good as another
            cand = rng.integers(n, size=n_trials)
        else:
            cum = np.cumsum(closest)
            cand = np.searchsorted(cum, rng.random(n_trials) * total, side="right")
            cand = np.minimum(cand, n - 1)
        cand_d = np.minimum(closest[:, None], sq_dists(X, X[cand]))
        best = int(np.argmin(cand_d.sum(axis=0)))
        centers[c] = X[cand[best]]
        closest = cand_d[:, best]
    return centers


def _update_centers(X, labels, old_centers):
    k = old_centers.shape[0]
    counts = np.bincount(labels, minlength=k)
    sums = np.zeros_like(old_centers)
    np.add.at(sums, labels, X)
    centers = old_centers.copy()
    nz = counts > 0
    centers[nz] = sums[nz] / counts[nz, None]
    if not np.all(nz):
        # re-seed each empty centre at the point farthest from its own centre
        d = np.einsum("ij,ij->i", X - centers[labels], X - centers[labels])
        order = np.argsort(-d, kind="stable")
        for slot, c in enumerate(np.flatnonzero(~nz)):
            centers[c] = X[order[slot]]
    return centers, counts


def _wcss(X, centers, labels):
    diff = X - centers[labels]
    return float(np.einsum("ij,ij->", diff, diff))


def _lloyd(X, centers, max_iter):
    labels = np.full(X.shape[0], -1, dtype=np.int64)
    history = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        new = np.argmin(sq_dists(X, centers), axis=1)
        history.append(_wcss(X, centers, new))
        if np.array_equal(new, labels):
            converged = True
            break
        labels = new
        centers, _ = _update_centers(X, labels, centers)
    return labels, centers, it, converged, history


def _elkan(X, centers, max_iter):
    """Elkan's triangle-inequality k-means; same iterates as :func:`_lloyd`.

    Bounds are only used to skip distance evaluations. Reassignment decisions
    compare exactly computed squared distances with the same tie rule as
    ``argmin`` (lowest index wins), so the label sequence matches Lloyd.
    """
    n, k = X.shape[0], centers.shape[0]
    slack = 1.0 + 1e-9
    d2 = sq_dists(X, centers)
    labels = np.argmin(d2, axis=1)
    upper = np.sqrt(d2[np.arange(n), labels])
    lower = np.sqrt(d2)
    prev = np.full(n, -1, dtype=np.int64)
    history = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if it > 1:
            tight = np.zeros(n, dtype=bool)
            cc = np.sqrt(sq_dists(centers, centers))
            half = 0.5 * cc
            s = np.where(np.eye(k, dtype=bool), np.inf, half).min(axis=1)
            active = upper * slack > s[labels]
            for j in range(k):
                cand = (
                    active
                    & (labels != j)
                    & (upper * slack > lower[:, j])
                    & (upper * slack > half[labels, j])
                )
                idx = np.flatnonzero(cand & ~tight)
                if len(idx):
                    diff = X[idx] - centers[labels[idx]]
                    exact = np.einsum("ij,ij->i", diff, diff)
                    upper[idx] = np.sqrt(exact)
                    lower[idx, labels[idx]] = upper[idx]
                    tight[idx] = True
                    cand &= (upper * slack > lower[:, j]) & (upper * slack > half[labels, j])
                idx = np.flatnonzero(cand)
                if not len(idx):
                    continue
                diff_j = X[idx] - centers[j]
                dj2 = np.einsum("ij,ij->i", diff_j, diff_j)
                diff_c = X[idx] - centers[labels[idx]]
                dc2 = np.einsum("ij,ij->i", diff_c, diff_c)
                lower[idx, j] = np.sqrt(dj2)
                move = (dj2 < dc2) | ((dj2 == dc2) & (j < labels[idx]))
                mv = idx[move]
                labels[mv] = j
                upper[mv] = np.sqrt(dj2[move])
        history.append(_wcss(X, centers, labels))
        if np.array_equal(labels, prev):
            converged = True
            break
        prev = labels.copy()
        new_centers, _ = _update_centers(X, labels, centers)
        shift = np.sqrt(np.einsum("ij,ij->i", new_centers - centers, new_centers - centers))
        centers = new_centers
        lower = np.maximum(lower - shift[None, :], 0.0)
        upper = upper + shift[labels]
    return labels, centers, it, converged, history


def kmeans_pp(
    X: np.ndarray,
    k: int,
    n_init: int = 10,
    core: str = "EM-style",
    seed: int = 0,
    max_iter: int = 300,
) -> ClusteringResult:
    """k-means with k-means++ seeding, best of ``n_init`` restarts by WCSS."""
    n = X.shape[0]
    if k > n:
        raise ParameterError(f"k={k} exceeds the number of rows {n}")
    if core not in CORES:
        raise ParameterError(f"core must be one of {CORES}, got {core!r}")
    if n_init < 1:
        raise ParameterError("n_init must be >= 1")
    run = _lloyd if core == "EM-style" else _elkan
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(int(n_init)):
        init = kmeanspp_init(X, k, rng)
        labels, centers, it, conv, hist = run(X, init, max_iter)
        wcss = _wcss(X, centers, labels)
        if best is None or wcss < best[0]:
            best = (wcss, labels, centers, it, conv, hist)
    _, labels, centers, it, conv, hist = best
    labels_c, k_found = compact_labels(labels)
    return ClusteringResult(
        labels_c,
        k_found,
        converged=conv,
        iterations=it,
        collapsed=k_found < k,
        centers=centers,
        objective=hist,
    )


def minibatch_kmeans(
    X: np.ndarray,
    k: int,
    n_init: int = 1,
    batch_size: int | None = None,
    seed: int = 0,
    max_iter: int = 100,
    tol: float = 1e-4,
) -> ClusteringResult:
    """Mini-batch k-means with per-centre learning rates (1 / count)."""
    n = X.shape[0]
    if k > n:
        raise ParameterError(f"k={k} exceeds the number of rows {n}")
    if batch_size is None:
        batch_size = max(256, n // 10)
    batch_size = min(int(batch_size), n)
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(int(n_init)):
        init_size = min(n, 3 * batch_size)
        sub = rng.choice(n, size=init_size, replace=False)
        centers = kmeanspp_init(X[sub], k, rng)
        counts = np.zeros(k)
        converged = False
        it = 0
        for it in range(1, max_iter + 1):
            batch = X[rng.choice(n, size=batch_size, replace=False)]
            lab = np.argmin(sq_dists(batch, centers), axis=1)
            old = centers.copy()
            for c in np.unique(lab):
                pts = batch[lab == c]
                counts[c] += len(pts)
                centers[c] += (pts.sum(axis=0) - len(pts) * centers[c]) / counts[c]
            shift = np.einsum("ij,ij->", centers - old, centers - old) / k
            if shift < tol * tol:
                converged = True
                break
        labels = np.argmin(sq_dists(X, centers), axis=1)
        wcss = _wcss(X, centers, labels)
        if best is None or wcss < best[0]:
            best = (wcss, labels, centers, it, converged)
    _, labels, centers, it, conv = best
    labels_c, k_found = compact_labels(labels)
    return ClusteringResult(
        labels_c, k_found, converged=conv, iterations=it, collapsed=k_found < k, centers=centers
    )
