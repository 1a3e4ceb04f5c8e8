from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np
from scipy.spatial.distance import cdist

from ..errors import ParameterError

K_DEMANDING = frozenset(
    {"kmeans_pp", "minibatch_kmeans", "fuzzy_c_means", "ward", "average_linkage", "birch"}
)
EMERGENT_K = frozenset({"mean_shift", "dbscan"})
ALGORITHMS = tuple(sorted(K_DEMANDING | EMERGENT_K))
# algorithms whose output does not depend on the seed
DETERMINISTIC = frozenset({"mean_shift", "ward", "average_linkage", "birch", "dbscan"})


@dataclass(frozen=True)
class ModelSpec:
    algorithm: str
    k: int | None = None
    hyperparameters: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ParameterError(f"unknown algorithm {self.algorithm!r}")
        if self.k is not None and self.k < 1:
            raise ParameterError("k must be >= 1")
        object.__setattr__(self, "hyperparameters", dict(self.hyperparameters))

    @property
    def is_deterministic(self) -> bool:
        return self.algorithm in DETERMINISTIC

    def with_seed(self, seed: int) -> "ModelSpec":
        return ModelSpec(self.algorithm, self.k, self.hyperparameters, seed)

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "k": self.k,
            "hyperparameters": {k: _plain(v) for k, v in sorted(self.hyperparameters.items())},
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelSpec":
        return cls(d["algorithm"], d.get("k"), d.get("hyperparameters", {}), d.get("seed", 0))

    def key(self) -> str:
        """Seed-free identity used to group replicates of the same setting."""
        d = self.to_dict()
        d.pop("seed")
        return json.dumps(d, sort_keys=True)


def _plain(v):
    if isinstance(v, np.generic):
        return v.item()
    return v


@dataclass
class ClusteringResult:
    labels: np.ndarray
    k_found: int
    converged: bool = True
    iterations: int = 0
    memberships: np.ndarray | None = None
    noise: np.ndarray | None = None
    collapsed: bool = False
    centers: np.ndarray | None = None
    objective: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.k_found < 1:
            raise ParameterError("k_found must be >= 1")


def compact_labels(labels: np.ndarray) -> tuple[np.ndarray, int]:
    """Map arbitrary labels onto ``0..k-1`` (sorted order of the original values)."""
    uniq, inv = np.unique(labels, return_inverse=True)
    return inv.astype(np.int64), len(uniq)


def sq_dists(X: np.ndarray, C: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Squared Euclidean distances by explicit differences (no expansion trick)."""
    out = np.empty((X.shape[0], C.shape[0]))
    for s in range(0, X.shape[0], chunk):
        diff = X[s : s + chunk, None, :] - C[None, :, :]
        out[s : s + chunk] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def pairwise_dists(X: np.ndarray, Y: np.ndarray | None = None) -> np.ndarray:
    """Euclidean distance matrix computed from explicit differences."""
    return cdist(X, X if Y is None else Y)
