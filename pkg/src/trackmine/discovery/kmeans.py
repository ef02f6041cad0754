"""Seeded KMeans (k-means++ initialisation, Lloyd iterations)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_CHUNK = 4096


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    wcss_history: list[float] = field(default_factory=list)  # WCSS after each assignment step
    n_iter: int = 0

    @property
    def wcss(self) -> float:
        return self.wcss_history[-1]


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    out = np.empty((len(X), len(C)))
    for s in range(0, len(X), _CHUNK):
        diff = X[s:s + _CHUNK, None, :] - C[None, :, :]
        out[s:s + _CHUNK] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def kmeans_plusplus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    chosen = [int(rng.integers(n))]
    d2 = _sq_dists(X, X[chosen])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            # every point coincides with a centre already chosen
            idx = int(rng.integers(n))
        chosen.append(idx)
        d2 = np.minimum(d2, _sq_dists(X, X[idx:idx + 1])[:, 0])
    return X[chosen].copy()


def kmeans(points, k: int, seed: int = 0, max_iter: int = 300, tol: float = 1e-6) -> KMeansResult:
    """Cluster into ``k`` groups; deterministic for a given ``seed``.

    Stops when no centroid moves more than ``tol`` or after ``max_iter``
    iterations. A centroid left without members is moved onto the point
    farthest from its own centroid. Labels are renumbered to be contiguous.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = len(X)
    if k < 1 or k > n:
        raise ValueError(f"k must satisfy 1 <= k <= n (k={k}, n={n})")
    rng = np.random.default_rng(seed)
    C = kmeans_plusplus(X, k, rng)
    history: list[float] = []
    it = 0
    for it in range(1, max_iter + 1):
        d2 = _sq_dists(X, C)
        labels = np.argmin(d2, axis=1)
        own = d2[np.arange(n), labels]
        history.append(float(own.sum()))
        new = C.copy()
        counts = np.bincount(labels, minlength=k)
        for c in range(k):
            if counts[c]:
                new[c] = X[labels == c].mean(axis=0)
        taken: set[int] = set()
        for c in np.flatnonzero(counts == 0):
            order = np.argsort(-own, kind="stable")
            far = next(int(i) for i in order if int(i) not in taken)
            taken.add(far)
            new[c] = X[far]
        shift = float(np.max(np.linalg.norm(new - C, axis=1)))
        C = new
        if shift < tol:
            break
    d2 = _sq_dists(X, C)
    labels = np.argmin(d2, axis=1)
    history.append(float(d2[np.arange(n), labels].sum()))
    _, labels = np.unique(labels, return_inverse=True)
    return KMeansResult(labels.astype(np.int64), C, history, it)
