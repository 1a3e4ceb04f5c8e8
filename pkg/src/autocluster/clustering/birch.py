"""BIRCH: a clustering-feature (CF) tree followed by Ward on the leaf sub-clusters."""
from __future__ import annotations

import numpy as np

from ..errors import ParameterError
from .base import ClusteringResult, compact_labels, sq_dists
from .hierarchy import agglomerative


class CFEntry:
    """Clustering feature: count, linear sum and sum of squared norms."""

    __slots__ = ("n", "ls", "ss", "child")

    def __init__(self, n, ls, ss, child=None):
        self.n = n
        self.ls = ls
        self.ss = ss
        self.child = child

    @classmethod
    def of_point(cls, x):
        return cls(1, x.astype(float, copy=True), float(x @ x))

    @property
    def centroid(self):
        return self.ls / self.n

    @property
    def radius(self) -> float:
        c = self.centroid
        return float(np.sqrt(max(self.ss / self.n - c @ c, 0.0)))

    def merged_radius(self, other) -> float:
        n = self.n + other.n
        ls = self.ls + other.ls
        c = ls / n
        return float(np.sqrt(max((self.ss + other.ss) / n - c @ c, 0.0)))

    def absorb(self, other):
        self.n += other.n
        self.ls = self.ls + other.ls
        self.ss += other.ss


class CFNode:
    __slots__ = ("entries", "leaf")

    def __init__(self, leaf: bool):
        self.entries: list[CFEntry] = []
        self.leaf = leaf


class CFTree:
    def __init__(self, threshold: float, branching_factor: int):
        self.threshold = threshold
        self.branching = branching_factor
        self.root = CFNode(leaf=True)

    def insert(self, x: np.ndarray):
        split = self._insert(self.root, CFEntry.of_point(x))
        if split is not None:
            new_root = CFNode(leaf=False)
            new_root.entries = list(split)
            self.root = new_root

    def _closest(self, node, entry):
        cents = np.array([e.centroid for e in node.entries])
        d = sq_dists(entry.centroid[None, :], cents)[0]
        return int(np.argmin(d))

    def _insert(self, node: CFNode, entry: CFEntry):
        """Insert ``entry`` below ``node``; return two replacement entries if ``node`` split."""
        if not node.entries:
            node.entries.append(entry)
            return None
        i = self._closest(node, entry)
        target = node.entries[i]
        if node.leaf:
            if target.merged_radius(entry) <= self.threshold:
                target.absorb(entry)
                return None
            node.entries.append(entry)
        else:
            split = self._insert(target.child, entry)
            if split is None:
                target.absorb(entry)
                return None
            node.entries[i : i + 1] = list(split)
        if len(node.entries) > self.branching:
            return self._split(node)
        return None

    def _split(self, node: CFNode):
        cents = np.array([e.centroid for e in node.entries])
        d = sq_dists(cents, cents)
        a, b = np.unravel_index(int(np.argmax(d)), d.shape)
        left, right = CFNode(node.leaf), CFNode(node.leaf)
        for j, e in enumerate(node.entries):
            (left if d[j, a] <= d[j, b] else right).entries.append(e)
        if not right.entries:
            # all centroids coincide; split positionally
            half = len(left.entries) // 2
            left.entries, right.entries = left.entries[:half], left.entries[half:]
        out = []
        for part in (left, right):
            agg = CFEntry(0, np.zeros_like(cents[0]), 0.0, child=part)
            for e in part.entries:
                agg.absorb(e)
            out.append(agg)
        return out

    def leaves(self) -> list[CFEntry]:
        out, stack = [], [self.root]
        while stack:
            node = stack.pop()
            if node.leaf:
                out.extend(node.entries)
            else:
                stack.extend(e.child for e in reversed(node.entries))
        return out


def birch(
    X: np.ndarray,
    k: int | None,
    threshold: float = 0.5,
    branching_factor: int = 50,
) -> ClusteringResult:
    """Single-pass CF tree, leaf sub-clusters grouped to ``k`` by Ward linkage.

    Rows are labelled by their nearest leaf sub-cluster centroid.
    """
    if threshold <= 0:
        raise ParameterError("threshold must be positive")
    if branching_factor < 2:
        raise ParameterError("branching_factor must be >= 2")
    tree = CFTree(threshold, int(branching_factor))
    for x in X:
        tree.insert(x)
    subclusters = tree.leaves()
    centroids = np.array([e.centroid for e in subclusters])
    nearest = np.argmin(sq_dists(X, centroids), axis=1)
    n_sub = len(subclusters)
    if k is None or n_sub <= k:
        group = np.arange(n_sub)
    else:
        group = agglomerative(centroids, k, "ward").labels
    labels, k_found = compact_labels(group[nearest])
    return ClusteringResult(
        labels,
        k_found,
        collapsed=k is not None and k_found < k,
        centers=centroids,
    )
