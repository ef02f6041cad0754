# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled HDBSCAN hot loops: k-NN core distances, dense Prim MST, union-find linkage.

Distances are accumulated in double precision over 8 interleaved partial sums
combined in a fixed tree order. ``_kernels_py`` reproduces the same summation
order with numpy, so both backends produce bit-identical distances as long as
the C compiler does not contract or reassociate floating point operations
(see the ``-ffp-contract=off`` flag in setup.py).
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY

cnp.import_array()

ctypedef fused floating:
    float
    double


cdef inline double _distance(const floating* a, const floating* b,
                             Py_ssize_t dim, int metric) noexcept nogil:
    cdef double acc[8]
    cdef double diff, s
    cdef Py_ssize_t base, t, full = dim - dim % 8
    for t in range(8):
        acc[t] = 0.0
    if metric == 0:
        for base in range(0, full, 8):
            for t in range(8):
                diff = <double>a[base + t] - <double>b[base + t]
                acc[t] += diff * diff
        for t in range(dim - full):
            diff = <double>a[full + t] - <double>b[full + t]
            acc[t] += diff * diff
    else:
        for base in range(0, full, 8):
            for t in range(8):
                acc[t] += <double>a[base + t] * <double>b[base + t]
        for t in range(dim - full):
            acc[t] += <double>a[full + t] * <double>b[full + t]
    s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))
    if metric == 0:
        return sqrt(s)
    s = 1.0 - s
    return s if s > 0.0 else 0.0


cdef inline void _push(double* row, Py_ssize_t k, double d) noexcept nogil:
    # row is sorted ascending, length k
    cdef Py_ssize_t p = k - 1
    if d >= row[p]:
        return
    while p > 0 and row[p - 1] > d:
        row[p] = row[p - 1]
        p -= 1
    row[p] = d


def pairwise_rows(const floating[:, ::1] X, Py_ssize_t start, Py_ssize_t stop, int metric):
    """Distances from rows ``start:stop`` to every row, shape ``(stop - start, n)``."""
    cdef Py_ssize_t n = X.shape[0], dim = X.shape[1], i, j
    out = np.empty((stop - start, n), dtype=np.float64)
    cdef double[:, ::1] D = out
    with nogil:
        for i in range(start, stop):
            for j in range(n):
                D[i - start, j] = _distance(&X[i, 0], &X[j, 0], dim, metric)
    return out


def core_distances(const floating[:, ::1] X, Py_ssize_t k, int metric):
    """Distance from each row to its k-th nearest other row."""
    cdef Py_ssize_t n = X.shape[0], dim = X.shape[1]
    cdef Py_ssize_t ib, jb, i, j, iend, jend, jstart
    cdef double d
    knn = np.full((n, k), np.inf, dtype=np.float64)
    cdef double[:, ::1] K = knn
    with nogil:
        for ib in range(0, n, 64):  # tile size keeps both row blocks in L2
            iend = ib + 64 if ib + 64 < n else n
            for jb in range(ib, n, 64):
                jend = jb + 64 if jb + 64 < n else n
                for i in range(ib, iend):
                    jstart = jb if jb > i else i + 1
                    for j in range(jstart, jend):
                        d = _distance(&X[i, 0], &X[j, 0], dim, metric)
                        _push(&K[i, 0], k, d)
                        _push(&K[j, 0], k, d)
    return knn[:, k - 1].copy()


cdef inline bint _pair_less(Py_ssize_t a0, Py_ssize_t a1,
                            Py_ssize_t b0, Py_ssize_t b1) noexcept nogil:
    # lexicographic order on (min, max) index pairs
    cdef Py_ssize_t alo = a0 if a0 < a1 else a1
    cdef Py_ssize_t ahi = a1 if a0 < a1 else a0
    cdef Py_ssize_t blo = b0 if b0 < b1 else b1
    cdef Py_ssize_t bhi = b1 if b0 < b1 else b0
    if alo != blo:
        return alo < blo
    return ahi < bhi


def prim_mst(const floating[:, ::1] X, const double[::1] core, int metric):
    """Minimum spanning tree of the mutual reachability graph.

    Returns ``(src, dst, weight)`` for the n - 1 edges in insertion order.
    Equal weights are resolved towards the lexicographically lower index pair.
    """
    cdef Py_ssize_t n = X.shape[0], dim = X.shape[1]
    src_a = np.empty(max(n - 1, 0), dtype=np.int64)
    dst_a = np.empty(max(n - 1, 0), dtype=np.int64)
    w_a = np.empty(max(n - 1, 0), dtype=np.float64)
    if n < 2:
        return src_a, dst_a, w_a
    cdef long long[::1] src = src_a
    cdef long long[::1] dst = dst_a
    cdef double[::1] wout = w_a
    best_a = np.full(n, np.inf, dtype=np.float64)
    frm_a = np.full(n, -1, dtype=np.int64)
    rem_a = np.arange(1, n, dtype=np.int64)
    cdef double[::1] best = best_a
    cdef long long[::1] frm = frm_a
    cdef long long[::1] rem = rem_a
    cdef Py_ssize_t m = n - 1, step, idx, j, cur = 0, pick_idx
    cdef double lb, d, ccur, bval
    with nogil:
        for step in range(n - 1):
            ccur = core[cur]
            pick_idx = -1
            bval = INFINITY
            for idx in range(m):
                j = rem[idx]
                lb = core[j] if core[j] > ccur else ccur
                if lb <= best[j]:
                    d = _distance(&X[cur, 0], &X[j, 0], dim, metric)
                    if d < lb:
                        d = lb
                    if d < best[j] or (d == best[j] and _pair_less(cur, j, frm[j], j)):
                        best[j] = d
                        frm[j] = cur
                if pick_idx < 0 or best[j] < bval or (
                        best[j] == bval and _pair_less(frm[j], j, frm[rem[pick_idx]], rem[pick_idx])):
                    pick_idx = idx
                    bval = best[j]
            j = rem[pick_idx]
            src[step] = frm[j]
            dst[step] = j
            wout[step] = best[j]
            m -= 1
            rem[pick_idx] = rem[m]
            cur = j
    return src_a, dst_a, w_a


cdef Py_ssize_t _find(long long[::1] parent, Py_ssize_t x) noexcept nogil:
    cdef Py_ssize_t root = x, nxt
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


def single_linkage(const long long[::1] src, const long long[::1] dst,
                   const double[::1] weight, Py_ssize_t n):
    """Linkage matrix ``(n - 1, 4)`` from MST edges already sorted ascending.

    Row ``r`` merges nodes ``Z[r, 0] < Z[r, 1]`` at distance ``Z[r, 2]`` into node
    ``n + r`` of size ``Z[r, 3]``.
    """
    cdef Py_ssize_t m = src.shape[0], r, a, b, na, nb
    Z_a = np.empty((m, 4), dtype=np.float64)
    cdef double[:, ::1] Z = Z_a
    parent_a = np.arange(2 * n, dtype=np.int64)
    size_a = np.zeros(2 * n, dtype=np.int64)
    size_a[:n] = 1
    cdef long long[::1] parent = parent_a
    cdef long long[::1] size = size_a
    with nogil:
        for r in range(m):
            a = _find(parent, src[r])
            b = _find(parent, dst[r])
            na = a if a < b else b
            nb = b if a < b else a
            Z[r, 0] = na
            Z[r, 1] = nb
            Z[r, 2] = weight[r]
            Z[r, 3] = size[a] + size[b]
            parent[a] = n + r
            parent[b] = n + r
            size[n + r] = size[a] + size[b]
    return Z_a
