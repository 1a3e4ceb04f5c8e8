"""Internal clustering validity indices and replicate-based stability."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .clustering import ModelSpec, fit
from .clustering.base import pairwise_dists
from .errors import ParameterError, UndefinedMetricError

BOUNDARY_TOL = 0.05


@dataclass
class QualityReport:
    sample_silhouettes: np.ndarray
    cluster_scores: np.ndarray
    cluster_sizes: np.ndarray
    bsi: float
    sigma_sk: float
    si: float
    ch: float
    db: float
    boundary_count: int
    db_degenerate: bool = False

    @property
    def k(self) -> int:
        return len(self.cluster_scores)

    def to_dict(self, include_samples: bool = False) -> dict:
        d = {
            "bSI": self.bsi,
            "sigma_Sk": self.sigma_sk,
            "SI": self.si,
            "CH": self.ch,
            "DB": self.db,
            "boundary_count": int(self.boundary_count),
            "S_k": [float(s) for s in self.cluster_scores],
            "cluster_sizes": [int(s) for s in self.cluster_sizes],
            "db_degenerate": self.db_degenerate,
        }
        if include_samples:
            d["s_i"] = [float(s) for s in self.sample_silhouettes]
        return d


def _check_labels(X, labels):
    labels = np.asarray(labels)
    if labels.shape[0] != X.shape[0]:
        raise ParameterError("labels and rows differ in length")
    uniq, inv = np.unique(labels, return_inverse=True)
    if len(uniq) < 2:
        raise UndefinedMetricError("validity index undefined for fewer than 2 clusters")
    return inv, len(uniq)


def silhouette(X, labels, chunk: int = 2048):
    """Sample silhouettes, per-cluster means and the overall mean.

    Singleton clusters get ``s(i) = 0``. Cluster scores follow the sorted
    order of the distinct labels.
    """
    X = np.asarray(getattr(X, "values", X), dtype=float)
    inv, k = _check_labels(X, labels)
    n = X.shape[0]
    sizes = np.bincount(inv, minlength=k).astype(float)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), inv] = 1.0
    s = np.empty(n)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        sums = pairwise_dists(X[start:stop], X) @ onehot
        own = inv[start:stop]
        rows = np.arange(stop - start)
        own_size = sizes[own]
        with np.errstate(invalid="ignore", divide="ignore"):
            a = sums[rows, own] / (own_size - 1)
            mean_other = sums / sizes
        mean_other[rows, own] = np.inf
        b = mean_other.min(axis=1)
        denom = np.maximum(a, b)
        with np.errstate(invalid="ignore", divide="ignore"):
            si = np.where(denom > 0, (b - a) / denom, 0.0)
        si[own_size == 1] = 0.0
        s[start:stop] = si
    cluster_scores = np.bincount(inv, weights=s, minlength=k) / sizes
    return s, cluster_scores, float(s.mean())


def bsi(cluster_scores: Sequence[float], weights: Sequence[float] | None = None) -> float:
    """Weighted mean of the per-cluster silhouette scores."""
    sk = np.asarray(cluster_scores, dtype=float)
    if sk.size == 0:
        raise ParameterError("no cluster scores")
    w = np.ones_like(sk) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != sk.shape or np.any(w <= 0):
        raise ParameterError("weights must be positive, one per cluster")
    if np.ptp(sk) == 0:
        return float(sk[0])  # exact, free of summation rounding
    return float(np.sum(w * sk) / np.sum(w))


def sigma_sk(cluster_scores, weights=None, bsi_value: float | None = None) -> float:
    """Dispersion of cluster scores around bSI (weighted population std)."""
    sk = np.asarray(cluster_scores, dtype=float)
    w = np.ones_like(sk) if weights is None else np.asarray(weights, dtype=float)
    center = bsi(sk, w) if bsi_value is None else bsi_value
    if np.ptp(sk) == 0 and sk[0] == center:
        return 0.0
    return float(math.sqrt(np.sum(w * (sk - center) ** 2) / np.sum(w)))


def calinski_harabasz(X, labels) -> float:
    X = np.asarray(getattr(X, "values", X), dtype=float)
    inv, k = _check_labels(X, labels)
    n = X.shape[0]
    mean = X.mean(axis=0)
    sizes = np.bincount(inv, minlength=k)
    cents = np.zeros((k, X.shape[1]))
    np.add.at(cents, inv, X)
    cents /= sizes[:, None]
    between = float(np.sum(sizes * np.sum((cents - mean) ** 2, axis=1)))
    within = float(np.sum((X - cents[inv]) ** 2))
    if within == 0:
        return math.inf if between > 0 else 1.0
    return between / within * (n - k) / (k - 1)


def davies_bouldin(X, labels) -> tuple[float, bool]:
    """Davies-Bouldin index; the flag is set when two centroids coincide."""
    X = np.asarray(getattr(X, "values", X), dtype=float)
    inv, k = _check_labels(X, labels)
    sizes = np.bincount(inv, minlength=k)
    cents = np.zeros((k, X.shape[1]))
    np.add.at(cents, inv, X)
    cents /= sizes[:, None]
    scatter = np.bincount(inv, weights=np.linalg.norm(X - cents[inv], axis=1), minlength=k) / sizes
    sep = pairwise_dists(cents)
    degenerate = False
    ratios = np.empty((k, k))
    for i in range(k):
        for j in range(k):
            if i == j:
                ratios[i, j] = -np.inf
            elif sep[i, j] == 0:
                ratios[i, j] = np.inf
                degenerate = True
            else:
                ratios[i, j] = (scatter[i] + scatter[j]) / sep[i, j]
    return float(np.mean(ratios.max(axis=1))), degenerate


def boundary_count(s, tol: float = BOUNDARY_TOL) -> int:
    return int(np.sum(np.abs(np.asarray(s)) < tol))


def evaluate(X, labels, weights=None, boundary_tol: float = BOUNDARY_TOL) -> QualityReport:
    X = np.asarray(getattr(X, "values", X), dtype=float)
    s, sk, si = silhouette(X, labels)
    b = bsi(sk, weights)
    db, degenerate = davies_bouldin(X, labels)
    return QualityReport(
        sample_silhouettes=s,
        cluster_scores=sk,
        cluster_sizes=np.unique(labels, return_counts=True)[1],
        bsi=b,
        sigma_sk=sigma_sk(sk, weights, b),
        si=si,
        ch=calinski_harabasz(X, labels),
        db=db,
        boundary_count=boundary_count(s, boundary_tol),
        db_degenerate=degenerate,
    )


def coefficient_of_variation(values: Sequence[float], beta: float = 1.0, norm: int = 2) -> float:
    """Replicate dispersion around the mean, damped by ``beta`` in the denominator.

    The dispersion is the power mean ``(mean |y_t - E y|^n)^(1/n)``: the mean
    absolute deviation for ``n=1`` and the standard deviation for ``n=2``.
    """
    y = np.asarray(values, dtype=float)
    if len(y) < 2:
        raise ParameterError("need at least 2 replicates")
    if not np.all(np.isfinite(y)):
        return math.inf
    if np.ptp(y) == 0:
        return 0.0
    mean = float(np.mean(y))
    dev = np.abs(y - mean)
    spread = float(np.mean(dev**norm) ** (1.0 / norm))
    denom = beta + mean
    if denom <= 0:
        return math.inf
    return spread / denom


METRICS: dict[str, Callable[[QualityReport], float]] = {
    "bSI": lambda q: q.bsi,
    "sigma_Sk": lambda q: q.sigma_sk,
    "SI": lambda q: q.si,
}


@dataclass
class StabilityReport:
    """c_V per setting and metric, plus the per-algorithm mean."""

    settings: list[ModelSpec]
    cv: dict[str, dict[str, float]]
    replicates: dict[str, list[dict[str, float]]]
    algorithm_cv: dict[str, float] = field(default_factory=dict)
    algorithm_cv_by_metric: dict[str, dict[str, float]] = field(default_factory=dict)

    def setting_cv(self, spec: ModelSpec) -> float:
        return self.cv[spec.key()]["combined"]

    def to_dict(self) -> dict:
        return {
            "settings": [s.to_dict() for s in self.settings],
            "cv": self.cv,
            "replicates": self.replicates,
            "algorithm_cv": self.algorithm_cv,
            "algorithm_cv_by_metric": self.algorithm_cv_by_metric,
        }


def replicate_metrics(spec: ModelSpec, X, T: int, metrics: Iterable[str], weights=None, threads: int = 1):
    """Fit ``spec`` with seeds ``seed+1 .. seed+T``; ``None`` entries mark failed replicates.

    With ``threads > 1`` replicates run in a thread pool; results keep seed order.
    """
    metrics = tuple(metrics)

    def one(t):
        try:
            res = fit(spec.with_seed(spec.seed + t), X)
            q = evaluate(X, res.labels, weights)
        except (UndefinedMetricError, ParameterError):
            return None
        return {m: float(METRICS[m](q)) for m in metrics}

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, range(1, T + 1)))
    return [one(t) for t in range(1, T + 1)]


def setting_cv(reps, metrics, beta: float = 1.0, norm: int = 2) -> dict[str, float]:
    if any(r is None for r in reps):
        cv = {m: math.inf for m in metrics}
    else:
        cv = {m: coefficient_of_variation([r[m] for r in reps], beta, norm) for m in metrics}
    cv["combined"] = float(np.mean([cv[m] for m in metrics]))
    return cv


def stability_cv(
    specs: Sequence[ModelSpec],
    X,
    T: int = 10,
    metrics: Sequence[str] = ("bSI", "sigma_Sk"),
    beta: float = 1.0,
    norm: int = 2,
    weights=None,
    threads: int = 1,
) -> StabilityReport:
    """Replicate each setting ``T`` times and summarise its coefficient of variation.

    A setting with any failed replicate gets ``c_V = inf``. The per-algorithm
    value averages its settings' combined c_V (mean over the chosen metrics).
    """
    if T < 2:
        raise ParameterError("T must be >= 2")
    X = np.asarray(getattr(X, "values", X), dtype=float)
    cv, reps = {}, {}
    for spec in specs:
        r = replicate_metrics(spec, X, T, metrics, weights, threads)
        reps[spec.key()] = r
        cv[spec.key()] = setting_cv(r, metrics, beta, norm)
    by_alg: dict[str, list[str]] = {}
    for spec in specs:
        by_alg.setdefault(spec.algorithm, []).append(spec.key())
    alg_cv = {a: float(np.mean([cv[k]["combined"] for k in keys])) for a, keys in by_alg.items()}
    alg_metric = {
        a: {m: float(np.mean([cv[k][m] for k in keys])) for m in metrics} for a, keys in by_alg.items()
    }
    return StabilityReport(list(specs), cv, reps, alg_cv, alg_metric)
