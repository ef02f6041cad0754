"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``.

Distances use the same 8-way interleaved accumulation as the compiled code,
so both backends agree bit for bit.
"""
from __future__ import annotations

import numpy as np

_ROW_BLOCK = 256


def _interleaved_sum(terms: np.ndarray) -> np.ndarray:
    m, dim = terms.shape
    pad = (-dim) % 8
    if pad:
        terms = np.concatenate([terms, np.zeros((m, pad))], axis=1)
    chunks = terms.reshape(m, -1, 8)
    acc = chunks[:, 0, :].copy()
    for t in range(1, chunks.shape[1]):
        acc += chunks[:, t, :]
    return ((acc[:, 0] + acc[:, 1]) + (acc[:, 2] + acc[:, 3])) + (
        (acc[:, 4] + acc[:, 5]) + (acc[:, 6] + acc[:, 7])
    )


def distances_to(X: np.ndarray, x: np.ndarray, metric: int) -> np.ndarray:
    """Distances from every row of ``X`` to the single vector ``x``."""
    A = X.astype(np.float64, copy=False)
    b = x.astype(np.float64, copy=False)
    if metric == 0:
        diff = A - b
        return np.sqrt(_interleaved_sum(diff * diff))
    s = 1.0 - _interleaved_sum(A * b)
    return np.where(s > 0.0, s, 0.0)


def pairwise_rows(X: np.ndarray, start: int, stop: int, metric: int) -> np.ndarray:
    out = np.empty((stop - start, X.shape[0]), dtype=np.float64)
    for i in range(start, stop):
        out[i - start] = distances_to(X, X[i], metric)
    return out


def core_distances(X: np.ndarray, k: int, metric: int) -> np.ndarray:
    n = X.shape[0]
    core = np.empty(n, dtype=np.float64)
    for start in range(0, n, _ROW_BLOCK):
        stop = min(start + _ROW_BLOCK, n)
        block = pairwise_rows(X, start, stop, metric)
        # drop self-distance before selecting the k-th neighbour
        block[np.arange(stop - start), np.arange(start, stop)] = np.inf
        core[start:stop] = np.partition(block, k - 1, axis=1)[:, k - 1]
    return core


def _pair_key(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return np.minimum(a, b), np.maximum(a, b)


def prim_mst(X: np.ndarray, core: np.ndarray, metric: int):
    n = X.shape[0]
    src = np.empty(max(n - 1, 0), dtype=np.int64)
    dst = np.empty(max(n - 1, 0), dtype=np.int64)
    weight = np.empty(max(n - 1, 0), dtype=np.float64)
    if n < 2:
        return src, dst, weight
    best = np.full(n, np.inf)
    frm = np.full(n, -1, dtype=np.int64)
    rem = np.arange(1, n, dtype=np.int64)
    cur = 0
    for step in range(n - 1):
        d = np.maximum(distances_to(X[rem], X[cur], metric), np.maximum(core[rem], core[cur]))
        old = best[rem]
        lo_new, hi_new = _pair_key(np.full(rem.shape, cur), rem)
        lo_old, hi_old = _pair_key(frm[rem], rem)
        tie_wins = (lo_new < lo_old) | ((lo_new == lo_old) & (hi_new < hi_old))
        update = (d < old) | ((d == old) & tie_wins)
        best[rem[update]] = d[update]
        frm[rem[update]] = cur

        cand = best[rem]
        minimal = np.flatnonzero(cand == cand.min())
        lo, hi = _pair_key(frm[rem[minimal]], rem[minimal])
        pick = minimal[np.lexsort((hi, lo))[0]]
        j = rem[pick]
        src[step], dst[step], weight[step] = frm[j], j, best[j]
        rem = np.delete(rem, pick)
        cur = j
    return src, dst, weight


class UnionFind:
    """Disjoint sets over dendrogram node ids with path compression."""

    def __init__(self, n: int):
        self.parent = list(range(2 * n))
        self.size = [1] * n + [0] * n
        self.next_label = n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> int:
        label = self.next_label
        self.parent[a] = self.parent[b] = label
        self.size[label] = self.size[a] + self.size[b]
        self.next_label += 1
        return label


def single_linkage(src: np.ndarray, dst: np.ndarray, weight: np.ndarray, n: int) -> np.ndarray:
    Z = np.empty((len(src), 4), dtype=np.float64)
    uf = UnionFind(n)
    for r, (i, j, w) in enumerate(zip(src.tolist(), dst.tolist(), weight.tolist())):
        a, b = uf.find(i), uf.find(j)
        uf.union(a, b)
        Z[r] = (min(a, b), max(a, b), w, uf.size[a] + uf.size[b])
    return Z
