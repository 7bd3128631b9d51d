"""Baseline transition matrices: exact dense and sparse k-nearest-neighbor.

Both share the Gaussian-kernel row model: the probability of jumping from
point i to point j is the kernel value exp(-||x_i - x_j||^2 / 2 sigma^2)
normalized over the retained edges of row i (all N-1 for the exact model,
the k nearest for the kNN model), computed with a per-row max shift so
that far-apart rows cannot underflow to all zeros.

The kNN search walks the shared partition tree and prunes a subtree when
the triangle-inequality lower bound (distance to the node centroid minus
the node radius) already exceeds the current k-th best distance. Pruning
is lossless: returned neighbor sets always equal the brute-force sets.
"""

from __future__ import annotations

import heapq
import math

import numpy as np
import scipy.sparse

__all__ = [
    "DenseTransition",
    "SparseKnnTransition",
    "exact_transition",
    "knn_build",
    "knn_matvec",
    "knn_refine",
]


class DenseTransition:
    """Dense N x N row-stochastic transition matrix with zero diagonal."""

    def __init__(self, p, sigma):
        p = np.asarray(p, dtype=np.float64)
        n = p.shape[0]
        if p.shape != (n, n):
            raise ValueError("transition matrix must be square")
        if np.diagonal(p).any():
            raise ValueError("diagonal must be zero")
        if (p < 0).any() or (p > 1).any():
            raise ValueError("probabilities must lie in [0, 1]")
        err = np.abs(p.sum(axis=1) - 1.0).max()
        if err > 1e-12:
            raise ValueError(f"rows must sum to 1, worst error {err:.3e}")
        self.p = p
        self.sigma = float(sigma)
        self.n = n

    def matvec(self, y):
        return self.p @ y


def exact_transition(ds, sigma: float, cap: int = 8192) -> DenseTransition:
    """Row-softmax of Gaussian kernel values over all other points."""
    X = ds.points if hasattr(ds, "points") else np.asarray(ds, dtype=np.float64)
    n = X.shape[0]
    if n > cap:
        raise ValueError(f"exact model capped at n <= {cap}, got {n}")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    sq = np.einsum("ij,ij->i", X, X)
    inv = -1.0 / (2.0 * sigma * sigma)
    p = np.empty((n, n))
    xt = np.ascontiguousarray(X.T)
    chunk = min(n, max(1, int(8_000_000 // n)))
    buf = np.empty((chunk, n))  # reused across chunks: no per-chunk allocs
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        logits = buf[: stop - start]
        np.dot(X[start:stop], xt, out=logits)
        logits *= -2.0
        logits += sq[None, :]
        logits += sq[start:stop, None]
        np.maximum(logits, 0.0, out=logits)
        logits *= inv
        rows = np.arange(start, stop)
        logits[rows - start, rows] = -np.inf
        logits -= logits.max(axis=1, keepdims=True)
        np.exp(logits, out=logits)
        logits[rows - start, rows] = 0.0
        logits /= logits.sum(axis=1, keepdims=True)
        p[start:stop] = logits
    return DenseTransition(p, sigma)


class SparseKnnTransition:
    """CSR row-stochastic matrix with exactly k entries per row."""

    def __init__(self, row_offsets, col_indices, probs, k, sigma):
        self.row_offsets = np.asarray(row_offsets, dtype=np.int64)
        self.col_indices = np.asarray(col_indices, dtype=np.int64)
        self.probs = np.asarray(probs, dtype=np.float64)
        self.k = int(k)
        self.sigma = float(sigma)
        self.n = self.row_offsets.size - 1
        self._csr = scipy.sparse.csr_matrix(
            (self.probs, self.col_indices, self.row_offsets),
            shape=(self.n, self.n))

    def matvec(self, y):
        return self._csr @ y

    def to_dense(self):
        return self._csr.toarray()

    def neighbor_sets(self):
        """Per-row frozensets of neighbor column indices."""
        ro = self.row_offsets
        return [frozenset(self.col_indices[ro[i]:ro[i + 1]].tolist())
                for i in range(self.n)]

    def save_triplets(self, path):
        """Dump (row, col, prob) CSV triplets for inspection."""
        ro = self.row_offsets
        with open(path, "w") as fh:
            fh.write("row,col,prob\n")
            for i in range(self.n):
                for t in range(ro[i], ro[i + 1]):
                    fh.write(f"{i},{self.col_indices[t]},{self.probs[t]:.17g}\n")


# subtrees at or below this size are scanned in one vectorized pass
_SCAN_BATCH = 256


class _SearchContext:
    """Per-build geometry shared by all queries."""

    def __init__(self, tree, X):
        self.X = X
        self.perm = tree.perm
        self.left = tree.left.tolist()
        self.right = tree.right.tolist()
        self.count = tree.count.tolist()
        self.lo = tree.span_lo.tolist()
        self.hi = tree.span_hi.tolist()
        self.centers = tree.s1 / tree.count[:, None]
        self.radii = tree.radii().tolist()
        self.root = tree.root


def _knn_search(ctx, i, k):
    """Exact k nearest neighbors of point i, best-first with ball bounds.

    Keeps a max-heap of the k best (distance, index) pairs, ordered
    lexicographically so equal distances favor the lower index. The
    frontier is a min-heap of subtrees keyed by the triangle-inequality
    lower bound (distance to the node centroid minus the node radius);
    once the smallest bound cannot beat the current k-th best, no
    remaining subtree can, and the search stops. A tiny relative slack on
    the comparison keeps float rounding from ever dropping a true
    neighbor. Small subtrees are scanned in one vectorized pass.
    """
    X, centers, radii = ctx.X, ctx.centers, ctx.radii
    left, right, count = ctx.left, ctx.right, ctx.count
    xi = X[i]
    heap = []  # (-d2, -j): heap[0] is the current worst neighbor
    frontier = [(0.0, ctx.root)]  # (lower bound, node)
    while frontier:
        lb, v = heapq.heappop(frontier)
        if len(heap) == k:
            worst = -heap[0][0]
            if lb * lb > worst * (1.0 + 1e-12) + 1e-300:
                break  # every remaining subtree is at least this far
        if count[v] <= _SCAN_BATCH:
            pts = ctx.perm[ctx.lo[v]:ctx.hi[v]]
            diffs = X[pts] - xi
            d2s = np.einsum("ij,ij->i", diffs, diffs)
            if len(heap) == k:  # only candidates that can beat the worst
                keep = np.flatnonzero(d2s <= -heap[0][0])
                pts, d2s = pts[keep], d2s[keep]
            for j, d2 in zip(pts.tolist(), d2s.tolist()):
                if j == i:
                    continue
                if len(heap) < k:
                    heapq.heappush(heap, (-d2, -j))
                elif (-d2, -j) > heap[0]:
                    heapq.heapreplace(heap, (-d2, -j))
            continue
        l, r = left[v], right[v]
        diffs = centers[[l, r]] - xi
        pair = np.einsum("ij,ij->i", diffs, diffs)
        for child, d2c in ((l, pair[0]), (r, pair[1])):
            clb = math.sqrt(float(d2c)) - radii[child]
            if clb < 0.0:
                clb = 0.0
            if len(heap) == k:
                worst = -heap[0][0]
                if clb * clb > worst * (1.0 + 1e-12) + 1e-300:
                    continue
            heapq.heappush(frontier, (clb, child))
    out = [(-nd2, -nj) for nd2, nj in heap]
    out.sort(key=lambda t: t[1])  # CSR wants ascending column order
    return out


def knn_build(ds, tree, k: int, sigma: float) -> SparseKnnTransition:
    """Exact directed kNN graph weighted by renormalized kernel values."""
    X = ds.points if hasattr(ds, "points") else np.asarray(ds, dtype=np.float64)
    n = X.shape[0]
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must lie in 1..{n - 1}, got {k}")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    ctx = _SearchContext(tree, X)
    inv = -1.0 / (2.0 * sigma * sigma)
    cols = np.empty(n * k, dtype=np.int64)
    probs = np.empty(n * k)
    for i in range(n):
        found = _knn_search(ctx, i, k)
        d2 = np.array([t[0] for t in found])
        logits = d2 * inv
        logits -= logits.max()
        w = np.exp(logits)
        w /= w.sum()
        cols[i * k:(i + 1) * k] = [t[1] for t in found]
        probs[i * k:(i + 1) * k] = w
    offsets = np.arange(0, n * k + 1, k, dtype=np.int64)
    return SparseKnnTransition(offsets, cols, probs, k, sigma)


def knn_matvec(m: SparseKnnTransition, y):
    """Sparse row-stochastic multiply; O(k N)."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] != m.n:
        raise ValueError(f"expected {m.n} rows, got shape {y.shape}")
    return m.matvec(y)


def knn_refine(m: SparseKnnTransition, ds, tree, new_k: int) -> SparseKnnTransition:
    """Re-search with a larger k; equivalent to a fresh build."""
    if new_k <= m.k:
        raise ValueError(f"new_k must exceed the current k={m.k}, got {new_k}")
    return knn_build(ds, tree, new_k, m.sigma)
