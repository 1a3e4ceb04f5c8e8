"""Agglomerative clustering (Ward and average linkage), optionally graph-constrained."""
from __future__ import annotations

import heapq

import numpy as np
from scipy.spatial import cKDTree

from ..errors import ParameterError
from .base import ClusteringResult, compact_labels, pairwise_dists

LINKAGES = ("ward", "average")


def _initial(X, linkage):
    d = pairwise_dists(X)
    if linkage == "ward":
        # merge cost of two singletons: ||a-b||^2 / 2
        d = 0.5 * d * d
    return d


def _lance_williams(linkage, d_ai, d_bi, d_ab, na, nb, ni):
    if linkage == "ward":
        return ((na + ni) * d_ai + (nb + ni) * d_bi - ni * d_ab) / (na + nb + ni)
    return (na * d_ai + nb * d_bi) / (na + nb)


def nn_chain(D: np.ndarray, sizes: np.ndarray, linkage: str) -> list[tuple[int, int, float]]:
    """Nearest-neighbour-chain agglomeration on a dense dissimilarity matrix.

    Returns merges ``(a, b, height)`` in the order they were performed; the
    merged cluster keeps index ``b``. Both linkages are reducible, so sorting
    the merges by height yields the greedy dendrogram.
    """
    D = D.astype(float, copy=True)
    n = D.shape[0]
    np.fill_diagonal(D, np.inf)
    sizes = sizes.astype(float, copy=True)
    active = np.ones(n, dtype=bool)
    merges = []
    chain: list[int] = []
    remaining = n
    while remaining > 1:
        if not chain:
            chain.append(int(np.flatnonzero(active)[0]))
        while True:
            a = chain[-1]
            row = D[a]
            b = int(np.argmin(row))
            # prefer the previous chain element on ties so the chain terminates
            if len(chain) > 1 and row[chain[-2]] <= row[b]:
                b = chain[-2]
            if len(chain) > 1 and b == chain[-2]:
                break
            chain.append(b)
        b = chain.pop()
        a = chain.pop()
        height = D[a, b]
        lo, hi = min(a, b), max(a, b)
        others = active.copy()
        others[[a, b]] = False
        new = _lance_williams(linkage, D[a, others], D[b, others], height, sizes[a], sizes[b], sizes[others])
        D[hi, others] = new
        D[others, hi] = new
        D[lo, :] = np.inf
        D[:, lo] = np.inf
        active[lo] = False
        sizes[hi] += sizes[lo]
        merges.append((lo, hi, float(height)))
        remaining -= 1
    return merges


def cut_merges(n: int, merges, k: int) -> np.ndarray:
    """Apply the ``n - k`` lowest merges (stable by height) and label the forest."""
    order = sorted(range(len(merges)), key=lambda i: merges[i][2])
    parent = np.arange(n)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i in order[: n - k]:
        a, b, _ = merges[i]
        ra, rb = find(a), find(b)
        parent[ra] = rb
    roots = np.array([find(i) for i in range(n)])
    return compact_labels(roots)[0]


def knn_graph(X: np.ndarray, n_neighbors: int) -> list[set[int]]:
    n = X.shape[0]
    kk = min(n_neighbors, n - 1)
    if kk <= 0:
        return [set() for _ in range(n)]
    _, idx = cKDTree(X).query(X, k=kk + 1)
    adj = [set() for _ in range(n)]
    for i in range(n):
        for j in idx[i]:
            j = int(j)
            if j != i:
                adj[i].add(j)
                adj[j].add(i)
    return adj


def _constrained(X, k, linkage, adj):
    """Greedy merging restricted to graph edges, then unconstrained across components."""
    n = X.shape[0]
    sizes = {i: 1 for i in range(n)}
    sums = {i: X[i].copy() for i in range(n)}
    members = {i: [i] for i in range(n)}
    adj = {i: set(a) for i, a in enumerate(adj)}

    def cost(a, b):
        if linkage == "ward":
            ca, cb = sums[a] / sizes[a], sums[b] / sizes[b]
            diff = ca - cb
            return sizes[a] * sizes[b] / (sizes[a] + sizes[b]) * float(diff @ diff)
        return float(pairwise_dists(X[members[a]], X[members[b]]).mean())

    heap = [(cost(i, j), i, j) for i in range(n) for j in adj[i] if i < j]
    heapq.heapify(heap)
    alive = set(range(n))
    next_id = n
    while len(alive) > k and heap:
        c, a, b = heapq.heappop(heap)
        if a not in alive or b not in alive:
            continue
        new = next_id
        next_id += 1
        sizes[new] = sizes.pop(a) + sizes.pop(b)
        sums[new] = sums.pop(a) + sums.pop(b)
        members[new] = members.pop(a) + members.pop(b)
        nbrs = (adj.pop(a) | adj.pop(b)) - {a, b}
        alive -= {a, b}
        for o in nbrs:
            adj[o] -= {a, b}
            adj[o].add(new)
        adj[new] = nbrs
        alive.add(new)
        for o in sorted(nbrs):
            heapq.heappush(heap, (cost(new, o), min(new, o), max(new, o)))

    ids = sorted(alive)
    if len(ids) > k:
        # disconnected components: finish with unconstrained merging between them
        m = len(ids)
        D = np.empty((m, m))
        for i in range(m):
            for j in range(m):
                D[i, j] = 0.0 if i == j else cost(ids[i], ids[j])
        sz = np.array([sizes[i] for i in ids], dtype=float)
        merges = nn_chain(D, sz, linkage)
        comp = cut_merges(m, merges, k)
    else:
        comp = np.arange(len(ids))
    labels = np.empty(n, dtype=np.int64)
    for c, cid in zip(comp, ids):
        labels[members[cid]] = c
    return labels


def agglomerative(
    X: np.ndarray,
    k: int,
    linkage: str = "ward",
    connectivity_neighbours: int | None = None,
) -> ClusteringResult:
    n = X.shape[0]
    if linkage not in LINKAGES:
        raise ParameterError(f"linkage must be one of {LINKAGES}")
    if k > n:
        raise ParameterError(f"k={k} exceeds the number of rows {n}")
    if n == 1:
        return ClusteringResult(np.zeros(1, dtype=np.int64), 1)
    if connectivity_neighbours is None:
        merges = nn_chain(_initial(X, linkage), np.ones(n), linkage)
        labels = cut_merges(n, merges, k)
    else:
        if connectivity_neighbours < 1:
            raise ParameterError("connectivity_neighbours must be >= 1")
        labels = _constrained(X, k, linkage, knn_graph(X, int(connectivity_neighbours)))
    labels, k_found = compact_labels(labels)
    return ClusteringResult(labels, k_found, collapsed=k_found < k)
