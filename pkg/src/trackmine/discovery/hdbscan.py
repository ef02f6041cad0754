"""HDBSCAN with excess-of-mass cluster extraction.

Pipeline: core distances -> Prim MST over mutual reachability -> single-linkage
dendrogram -> condensed tree -> stability-maximizing flat clustering. The two
quadratic steps run in the compiled kernels (see ``_backend``).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from ..core import DegenerateInputError
from . import _backend

log = logging.getLogger(__name__)

NOISE = -1
METRICS = {"euclidean": 0, "cosine": 1}


@dataclass(frozen=True)
class HdbscanParams:
    min_cluster_size: int = 10
    min_samples: Optional[int] = None  # defaults to min_cluster_size
    metric: str = "euclidean"

    def __post_init__(self):
        if self.min_cluster_size < 2:
            raise ValueError("min_cluster_size must be at least 2")
        if self.min_samples is not None and self.min_samples < 1:
            raise ValueError("min_samples must be at least 1")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {sorted(METRICS)}")

    @property
    def k(self) -> int:
        return self.min_samples if self.min_samples is not None else self.min_cluster_size


@dataclass
class CondensedTree:
    """Rows ``(parent, child, lambda_val, child_size)``.

    Cluster nodes are numbered from ``n_points`` (the root) upwards; children
    below ``n_points`` are individual points leaving their cluster.
    """

    parent: np.ndarray
    child: np.ndarray
    lambda_val: np.ndarray
    child_size: np.ndarray
    n_points: int
    stability: dict[int, float] = field(default_factory=dict)

    @property
    def root(self) -> int:
        return self.n_points

    def cluster_nodes(self) -> list[int]:
        return [self.root] + [int(c) for c in self.child[self.child >= self.n_points]]

    def birth_lambda(self) -> dict[int, float]:
        births = {self.root: 0.0}
        mask = self.child >= self.n_points
        births.update(zip(self.child[mask].tolist(), self.lambda_val[mask].tolist()))
        return births

    def rows(self):
        return zip(self.parent.tolist(), self.child.tolist(), self.lambda_val.tolist(), self.child_size.tolist())


@dataclass
class HdbscanResult:
    labels: np.ndarray  # cluster id per point, NOISE = -1
    tree: CondensedTree
    selected: list[int]  # condensed-tree nodes chosen as flat clusters
    core: np.ndarray
    mst: tuple[np.ndarray, np.ndarray, np.ndarray]

    @property
    def noise_fraction(self) -> float:
        return float(np.mean(self.labels == NOISE)) if len(self.labels) else 0.0


def _prepare(points, metric: str) -> np.ndarray:
    X = np.asarray(points)
    if X.ndim == 1:
        X = X[:, None]
    if X.dtype not in (np.float32, np.float64):
        X = X.astype(np.float64)
    X = np.ascontiguousarray(X)
    if not np.all(np.isfinite(X)):
        raise ValueError("points must be finite")
    if metric == "cosine":
        norms = np.linalg.norm(X.astype(np.float64), axis=1, keepdims=True)
        if np.any(norms == 0):
            raise DegenerateInputError("cosine metric undefined for zero-norm points")
        X = np.ascontiguousarray((X / norms).astype(X.dtype))
    return X


def core_distances(points, k: int, metric: str = "euclidean", kernels=None) -> np.ndarray:
    """Distance from each point to its k-th nearest neighbour, the point itself excluded."""
    X = _prepare(points, metric)
    n = X.shape[0]
    if k < 1 or k >= n:
        raise ValueError(f"k must satisfy 1 <= k < n (k={k}, n={n})")
    kernels = kernels or _backend.kernels
    return np.asarray(kernels.core_distances(X, int(k), METRICS[metric]))


def mutual_reachability(i: int, j: int, core, dist: Union[np.ndarray, Callable[[int, int], float]]) -> float:
    """max(core(i), core(j), d(i, j)); ``dist`` is a matrix or a callable."""
    d = 0.0 if i == j else (dist(i, j) if callable(dist) else dist[i][j])
    return float(max(core[i], core[j], d))


def _lambda(d: float) -> float:
    return 1.0 / d if d > 0.0 else np.inf


def _leaves(node: int, n: int, Z: np.ndarray) -> list[int]:
    out, stack = [], [node]
    while stack:
        x = stack.pop()
        if x < n:
            out.append(x)
        else:
            r = x - n
            stack.append(int(Z[r, 1]))
            stack.append(int(Z[r, 0]))
    return out


def _split_parts(node: int, n: int, Z: np.ndarray) -> list[int]:
    """Subtrees that separate when ``node``'s merge level is cut.

    Merges at exactly the same distance form one multi-way split, so tied
    edges do not impose an arbitrary binary order on the hierarchy.
    """
    d = Z[node - n, 2]
    parts, stack = [], [node]
    while stack:
        x = stack.pop()
        if x >= n and Z[x - n, 2] == d:
            stack.append(int(Z[x - n, 1]))
            stack.append(int(Z[x - n, 0]))
        else:
            parts.append(x)
    return sorted(parts)


def condense_tree(Z: np.ndarray, n: int, min_cluster_size: int) -> CondensedTree:
    """Collapse a single-linkage dendrogram into clusters of at least ``min_cluster_size`` points."""
    parents, children, lambdas, sizes = [], [], [], []

    def emit(p, c, lam, s):
        parents.append(p)
        children.append(c)
        lambdas.append(lam)
        sizes.append(s)

    root = 2 * n - 2
    label = {root: n}
    next_label = n + 1
    queue = [root] if n > 1 else []
    head = 0
    while head < len(queue):
        node = queue[head]
        head += 1
        d = Z[node - n, 2]
        lam = _lambda(d)
        own = label[node]
        parts = _split_parts(node, n, Z)
        sizes_ = [1 if p < n else int(Z[p - n, 3]) for p in parts]
        big = [(p, s) for p, s in zip(parts, sizes_) if s >= min_cluster_size]
        if len(big) >= 2:
            for p, s in big:
                label[p] = next_label
                emit(own, next_label, lam, s)
                next_label += 1
                queue.append(p)
        elif len(big) == 1:
            # the only large part carries the parent cluster on
            label[big[0][0]] = own
            queue.append(big[0][0])
        for p, s in zip(parts, sizes_):
            if s < min_cluster_size:
                for leaf in _leaves(p, n, Z):
                    emit(own, leaf, lam, 1)
    tree = CondensedTree(
        np.array(parents, dtype=np.int64),
        np.array(children, dtype=np.int64),
        np.array(lambdas, dtype=np.float64),
        np.array(sizes, dtype=np.int64),
        n,
    )
    tree.stability = compute_stability(tree)
    return tree


def compute_stability(tree: CondensedTree) -> dict[int, float]:
    """Excess of mass per cluster: sum over departures of (lambda - lambda_birth) * size."""
    births = tree.birth_lambda()
    stability = {c: 0.0 for c in births}
    for p, _, lam, size in tree.rows():
        if lam != births[p]:
            stability[p] += (lam - births[p]) * size
    return stability


def select_clusters(tree: CondensedTree) -> list[int]:
    """Excess-of-mass selection. The root is only chosen when it has no child clusters."""
    cluster_children: dict[int, list[int]] = {c: [] for c in tree.cluster_nodes()}
    for p, c, _, _ in tree.rows():
        if c >= tree.n_points:
            cluster_children[p].append(c)
    if not cluster_children[tree.root]:
        return [tree.root]
    stability = dict(tree.stability)
    chosen = {c: True for c in cluster_children if c != tree.root}
    # children always carry larger ids than their parent
    for node in sorted(chosen, reverse=True):
        subtree = sum(stability[ch] for ch in cluster_children[node])
        if cluster_children[node] and subtree > stability[node]:
            chosen[node] = False
            stability[node] = subtree
        else:
            stack = list(cluster_children[node])
            while stack:
                x = stack.pop()
                chosen[x] = False
                stack.extend(cluster_children[x])
    return sorted(c for c, keep in chosen.items() if keep)


def label_points(tree: CondensedTree, selected: list[int]) -> np.ndarray:
    """Flat labels; cluster ids are assigned in order of each cluster's smallest point index."""
    n = tree.n_points
    cluster_parent = {int(c): int(p) for p, c in zip(tree.parent, tree.child) if c >= n}
    out_id = {c: i for i, c in enumerate(sorted(selected))}
    resolved: dict[int, int] = {}

    def owner(c: int) -> int:
        path = []
        x = c
        while x not in out_id and x not in resolved and x in cluster_parent:
            path.append(x)
            x = cluster_parent[x]
        lab = out_id.get(x, resolved.get(x, NOISE))
        for y in path:
            resolved[y] = lab
        return lab

    labels = np.full(n, NOISE, dtype=np.int64)
    mask = tree.child < n
    for p, c in zip(tree.parent[mask].tolist(), tree.child[mask].tolist()):
        labels[c] = owner(p)
    # number clusters by their smallest member so ids do not depend on tree order
    first = {}
    for i, lab in enumerate(labels.tolist()):
        if lab != NOISE and lab not in first:
            first[lab] = len(first)
    return np.array([first.get(lab, NOISE) for lab in labels.tolist()], dtype=np.int64)


def hdbscan(points, params: HdbscanParams = HdbscanParams(), kernels=None) -> HdbscanResult:
    """Cluster ``points`` (n x d); returns per-point labels with NOISE = -1 and the condensed tree."""
    X = _prepare(points, params.metric)
    n = X.shape[0]
    kernels = kernels or _backend.kernels
    empty_mst = (np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0))
    if n < params.min_cluster_size:
        log.warning("hdbscan: %d points < min_cluster_size=%d; everything is noise", n, params.min_cluster_size)
        tree = CondensedTree(np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0), np.empty(0, np.int64), n)
        return HdbscanResult(np.full(n, NOISE, dtype=np.int64), tree, [], np.zeros(n), empty_mst)
    k = params.k
    if k >= n:
        log.warning("hdbscan: min_samples=%d clamped to n - 1 = %d", k, n - 1)
        k = n - 1
    metric = METRICS[params.metric]
    if n > 1:
        core = np.asarray(kernels.core_distances(X, k, metric))
        src, dst, w = kernels.prim_mst(X, core, metric)
    else:
        core = np.zeros(1)
        src, dst, w = empty_mst
    lo, hi = np.minimum(src, dst), np.maximum(src, dst)
    order = np.lexsort((hi, lo, w))
    lo, hi, w = (np.ascontiguousarray(a[order]) for a in (lo, hi, w))
    Z = kernels.single_linkage(lo, hi, w, n)
    tree = condense_tree(np.asarray(Z), n, params.min_cluster_size)
    selected = select_clusters(tree)
    labels = label_points(tree, selected)
    return HdbscanResult(labels, tree, selected, core, (lo, hi, w))
