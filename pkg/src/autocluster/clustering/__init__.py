"""Clustering portfolio behind a single :func:`fit` entry point."""
from __future__ import annotations

import numpy as np

from ..errors import ParameterError
from .base import (
    ALGORITHMS,
    DETERMINISTIC,
    EMERGENT_K,
    K_DEMANDING,
    ClusteringResult,
    ModelSpec,
    compact_labels,
)
from .birch import birch
from .dbscan import dbscan
from .fuzzy import fuzzy_c_means
from .hierarchy import agglomerative
from .kmeans import kmeans_pp, minibatch_kmeans
from .meanshift import mean_shift

# empirical defaults used when a spec leaves a hyperparameter unset
DEFAULT_HYPERPARAMETERS = {
    "kmeans_pp": {"n_init": 10, "core": "EM-style"},
    "minibatch_kmeans": {"n_init": 1},
    "fuzzy_c_means": {"m": 2.0},
    "mean_shift": {"quantile": 0.3},
    "ward": {"connectivity_neighbours": None},
    "average_linkage": {"connectivity_neighbours": None},
    "birch": {"threshold": 0.5, "branching": 50},
    "dbscan": {"eps": 0.5, "min_pts": 5},
}


def _as_array(m) -> np.ndarray:
    values = getattr(m, "values", m)
    return np.ascontiguousarray(values, dtype=float)


def fit(spec: ModelSpec, m) -> ClusteringResult:
    """Fit ``spec`` to a feature matrix (or plain 2-d array).

    A pure function of ``(spec, m)``: the spec's seed drives every random choice.
    """
    X = _as_array(m)
    alg = spec.algorithm
    if alg in K_DEMANDING and spec.k is None:
        raise ParameterError(f"{alg} requires k")
    hp = dict(DEFAULT_HYPERPARAMETERS[alg])
    hp.update(spec.hyperparameters)
    unknown = set(hp) - set(DEFAULT_HYPERPARAMETERS[alg]) - _EXTRA[alg]
    if unknown:
        raise ParameterError(f"unknown hyperparameters for {alg}: {sorted(unknown)}")
    k = spec.k
    if alg == "kmeans_pp":
        return kmeans_pp(X, k, int(hp["n_init"]), hp["core"], spec.seed, int(hp.get("max_iter", 300)))
    if alg == "minibatch_kmeans":
        return minibatch_kmeans(
            X, k, int(hp["n_init"]), hp.get("batch_size"), spec.seed, int(hp.get("max_iter", 100))
        )
    if alg == "fuzzy_c_means":
        return fuzzy_c_means(
            X, k, float(hp["m"]), spec.seed, float(hp.get("tol", 1e-5)), int(hp.get("max_iter", 300))
        )
    if alg == "mean_shift":
        return mean_shift(
            X,
            float(hp["quantile"]),
            bin_seeding=bool(hp.get("bin_seeding", True)),
            bandwidth_seed=int(hp.get("bandwidth_seed", 0)),
        )
    if alg in ("ward", "average_linkage"):
        nb = hp["connectivity_neighbours"]
        linkage = "ward" if alg == "ward" else "average"
        return agglomerative(X, k, linkage, None if nb is None else int(nb))
    if alg == "birch":
        return birch(X, k, float(hp["threshold"]), int(hp["branching"]))
    if alg == "dbscan":
        return dbscan(X, float(hp["eps"]), int(hp["min_pts"]))
    raise ParameterError(f"unknown algorithm {alg!r}")  # pragma: no cover


_EXTRA = {
    "kmeans_pp": {"max_iter"},
    "minibatch_kmeans": {"batch_size", "max_iter"},
    "fuzzy_c_means": {"tol", "max_iter"},
    "mean_shift": {"bin_seeding", "bandwidth_seed"},
    "ward": set(),
    "average_linkage": set(),
    "birch": set(),
    "dbscan": set(),
}

__all__ = [
    "ALGORITHMS",
    "DETERMINISTIC",
    "DEFAULT_HYPERPARAMETERS",
    "EMERGENT_K",
    "K_DEMANDING",
    "ClusteringResult",
    "ModelSpec",
    "agglomerative",
    "birch",
    "compact_labels",
    "dbscan",
    "fit",
    "fuzzy_c_means",
    "kmeans_pp",
    "mean_shift",
    "minibatch_kmeans",
]
