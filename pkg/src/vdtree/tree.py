"""Shared binary partition tree over a point set, with subtree statistics.

The tree is an anchors-style metric hierarchy: every node represents a
subset of points, leaves are singletons, and each node stores the
sufficient statistics

    count = |A|,  s1 = sum of points in A,  s2 = sum of squared norms,

which make the total squared distance between two disjoint subtrees an
O(d) evaluation::

    D2(A, B) = |A| * s2(B) + |B| * s2(A) - 2 * s1(A) . s1(B)

Construction recursively splits a cell of M points around ceil(sqrt(M))
anchor points (first anchor farthest from the centroid, each next anchor
farthest from its nearest existing anchor), assigns points to the nearest
anchor with triangle-inequality pruning, recurses, and then merges the
anchor cells agglomeratively by smallest centroid distance. Cells at or
below a small size threshold are merged agglomeratively point by point,
which produces the same kind of local hierarchy without the anchor
machinery. All ties break on the lowest original point index, so a given
input always produces the identical tree.

Leaves are ordered so that every subtree occupies a contiguous range of
the leaf permutation; disjointness of two nodes is a constant-time
interval check.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["PartitionTree", "build_tree", "compute_spans", "block_distance",
           "block_distances", "log_block_weight"]

# below this size a cell is merged point-by-point instead of anchor-split
_SMALL_CELL = 12


class PartitionTree:
    """Binary hierarchy over n points: n leaves, n-1 internal nodes.

    Node ids are assigned bottom-up, so every child id is smaller than its
    parent id and ``root == n_nodes - 1``. The tree is immutable once built
    and safe for concurrent reads.
    """

    def __init__(self, left, right, leaf_point, perm, s1, s2, count,
                 span_lo, span_hi, points=None):
        self.left = left
        self.right = right
        self.leaf_point = leaf_point
        self.perm = perm
        self.s1 = s1
        self.s2 = s2
        self.count = count
        self.span_lo = span_lo
        self.span_hi = span_hi
        self.points = points
        self.n = perm.size
        self.dim = s1.shape[1]
        self.n_nodes = left.size
        self.root = self.n_nodes - 1
        self.parent = np.full(self.n_nodes, -1, dtype=np.int64)
        internal = np.flatnonzero(left >= 0)
        self.parent[left[internal]] = internal
        self.parent[right[internal]] = internal
        self.inv_perm = np.empty(self.n, dtype=np.int64)
        self.inv_perm[perm] = np.arange(self.n)
        # leaf node id for each position in the permutation
        self.leaf_id_by_pos = np.empty(self.n, dtype=np.int64)
        leaves = np.flatnonzero(left < 0)
        self.leaf_id_by_pos[span_lo[leaves]] = leaves
        self._depth = None
        self._up_levels = None
        self._up_schedule = None
        self._down_levels = None
        self._down_schedule = None
        self._radii = None

    def is_leaf(self, v):
        return self.left[v] < 0

    def sibling(self, v):
        p = self.parent[v]
        if p < 0:
            raise ValueError("root has no sibling")
        l = self.left[p]
        return self.right[p] if l == v else l

    def leaf_for(self, i):
        """Leaf node id holding original point i."""
        return int(self.leaf_id_by_pos[self.inv_perm[i]])

    def node_indices(self, v):
        """Original dataset indices of the points under node v."""
        return self.perm[self.span_lo[v]:self.span_hi[v]]

    def overlapping(self, a, b):
        return (self.span_lo[a] < self.span_hi[b]
                and self.span_lo[b] < self.span_hi[a])

    def depths(self):
        if self._depth is None:
            depth = np.zeros(self.n_nodes, dtype=np.int64)
            left, right = self.left, self.right
            for v in range(self.n_nodes - 1, -1, -1):
                if left[v] >= 0:
                    depth[left[v]] = depth[v] + 1
                    depth[right[v]] = depth[v] + 1
            self._depth = depth
        return self._depth

    def down_levels(self):
        """Node ids grouped by depth, root level first."""
        if self._down_levels is None:
            depth = self.depths()
            order = np.argsort(depth, kind="stable")
            bounds = np.searchsorted(depth[order], np.arange(depth.max() + 2))
            self._down_levels = [order[bounds[k]:bounds[k + 1]]
                                 for k in range(depth.max() + 1)]
        return self._down_levels

    def down_schedule(self):
        """(ids, parents) per depth level below the root, cached."""
        if self._down_schedule is None:
            self._down_schedule = [(ids, self.parent[ids])
                                   for ids in self.down_levels()[1:]]
        return self._down_schedule

    def up_levels(self):
        """Internal node ids grouped by height, lowest level first."""
        if self._up_levels is None:
            height = np.zeros(self.n_nodes, dtype=np.int64)
            left, right = self.left, self.right
            hl = height  # alias; ids are bottom-up so children are done first
            for v in range(self.n_nodes):
                if left[v] >= 0:
                    hl[v] = max(hl[left[v]], hl[right[v]]) + 1
            internal = np.flatnonzero(self.left >= 0)
            h = height[internal]
            order = np.argsort(h, kind="stable")
            ids = internal[order]
            hs = h[order]
            bounds = np.searchsorted(hs, np.arange(1, hs.max() + 2))
            self._up_levels = [ids[bounds[j]:bounds[j + 1]]
                               for j in range(hs.max())]
        return self._up_levels

    def up_schedule(self):
        """(ids, left children, right children) per height level, cached."""
        if self._up_schedule is None:
            self._up_schedule = [(ids, self.left[ids], self.right[ids])
                                 for ids in self.up_levels()]
        return self._up_schedule

    def radii(self):
        """Max distance from each node's centroid to any point under it."""
        if self._radii is None:
            if self.points is None:
                raise ValueError("tree was loaded without point coordinates")
            r = np.zeros(self.n_nodes)
            xp = self.points[self.perm]
            for v in range(self.n_nodes):
                if self.left[v] < 0:
                    continue
                seg = xp[self.span_lo[v]:self.span_hi[v]]
                c = self.s1[v] / self.count[v]
                d2 = ((seg - c) ** 2).sum(axis=1)
                r[v] = math.sqrt(d2.max())
            self._radii = r
        return self._radii


# ---------------------------------------------------------------------------
# construction


class _Builder:
    __slots__ = ("X", "left", "right", "leafpt")

    def __init__(self, X):
        self.X = X
        self.left = []
        self.right = []
        self.leafpt = []

    def leaf(self, pt):
        self.left.append(-1)
        self.right.append(-1)
        self.leafpt.append(pt)
        return len(self.leafpt) - 1

    def internal(self, l, r):
        self.left.append(l)
        self.right.append(r)
        self.leafpt.append(-1)
        return len(self.leafpt) - 1

    # each cluster is [node_id, count, centroid(list), minleaf]

    def agglomerate(self, items):
        """Merge clusters pairwise, always joining the closest centroids.

        Ties go to the pair with the lexicographically smallest
        (min leaf index, max leaf index). The child with the smaller
        minimum leaf index becomes the left child.
        """
        if len(items) > 8:
            return self._agglomerate_np(items)
        while len(items) > 1:
            best = None
            bi = bj = 0
            for i in range(len(items) - 1):
                ci = items[i]
                for j in range(i + 1, len(items)):
                    cj = items[j]
                    d2 = 0.0
                    for a, b in zip(ci[2], cj[2]):
                        t = a - b
                        d2 += t * t
                    if ci[3] < cj[3]:
                        key = (d2, ci[3], cj[3])
                    else:
                        key = (d2, cj[3], ci[3])
                    if best is None or key < best:
                        best, bi, bj = key, i, j
            b = items.pop(bj)  # bj > bi, so bi stays valid
            a = items.pop(bi)
            if b[3] < a[3]:
                a, b = b, a
            cnt = a[1] + b[1]
            cent = [(u * a[1] + v * b[1]) / cnt for u, v in zip(a[2], b[2])]
            items.append([self.internal(a[0], b[0]), cnt, cent, a[3]])
        return items[0]

    def _agglomerate_np(self, items):
        k = len(items)
        ids = [it[0] for it in items]
        counts = np.array([it[1] for it in items], dtype=np.float64)
        cents = np.array([it[2] for it in items])
        minleaf = np.array([it[3] for it in items], dtype=np.int64)
        sq = (cents ** 2).sum(axis=1)
        d2 = sq[:, None] + sq[None, :] - 2.0 * (cents @ cents.T)
        np.fill_diagonal(d2, np.inf)
        alive = np.ones(k, dtype=bool)
        for _ in range(k - 1):
            mn = d2.min()
            pairs = np.argwhere(d2 == mn)
            best = None
            bi = bj = 0
            for i, j in pairs:
                if i > j:
                    continue
                lo, hi = ((minleaf[i], minleaf[j]) if minleaf[i] < minleaf[j]
                          else (minleaf[j], minleaf[i]))
                if best is None or (lo, hi) < best:
                    best, bi, bj = (lo, hi), i, j
            if minleaf[bj] < minleaf[bi]:
                bi, bj = bj, bi
            nid = self.internal(ids[bi], ids[bj])
            tot = counts[bi] + counts[bj]
            cents[bi] = (cents[bi] * counts[bi] + cents[bj] * counts[bj]) / tot
            counts[bi] = tot
            ids[bi] = nid
            alive[bj] = False
            d2[bj, :] = np.inf
            d2[:, bj] = np.inf
            diff = cents[alive] - cents[bi]
            nd = (diff ** 2).sum(axis=1)
            d2[bi, alive] = nd
            d2[alive, bi] = nd
            d2[bi, bi] = np.inf
        i = int(np.flatnonzero(alive)[0])
        return [ids[i], int(counts[i]), list(cents[i]), int(minleaf[i])]

    def balanced(self, idx):
        """Balanced pairing for cells of identical points."""
        m = idx.size
        if m == 1:
            return [self.leaf(int(idx[0])), 1, list(self.X[idx[0]]), int(idx[0])]
        half = m // 2
        a = self.balanced(idx[:half])
        b = self.balanced(idx[half:])
        nid = self.internal(a[0], b[0])
        cent = [(u * a[1] + v * b[1]) / m for u, v in zip(a[2], b[2])]
        return [nid, m, cent, a[3]]

    def build_cell(self, idx):
        """Build a subtree over the (index-sorted) cell ``idx``."""
        m = idx.size
        if m == 1:
            return [self.leaf(int(idx[0])), 1, list(self.X[idx[0]]), int(idx[0])]
        if m <= _SMALL_CELL:
            pts = self.X[idx]
            items = [[self.leaf(int(i)), 1, list(pts[k]), int(i)]
                     for k, i in enumerate(idx)]
            return self.agglomerate(items)
        pts = self.X[idx]
        cent = pts.mean(axis=0)
        diff = pts - cent
        d2c = np.einsum("ij,ij->i", diff, diff)
        if d2c.max() == 0.0:
            return self.balanced(idx)

        k = math.isqrt(m - 1) + 1  # ceil(sqrt(m))
        piv = np.empty(k, dtype=np.int64)
        piv[0] = np.argmax(d2c)  # ties: first occurrence = lowest index
        owner = np.zeros(m, dtype=np.int64)
        diff = pts - pts[piv[0]]
        dist2 = np.einsum("ij,ij->i", diff, diff)
        dist2[piv[0]] = 0.0
        npiv = 1
        for t in range(1, k):
            p = int(np.argmax(dist2))
            if dist2[p] <= 0.0:
                break  # every point sits on an existing anchor
            # a point x owned by anchor c cannot move to the new anchor
            # when d(c, new) >= 2 d(x, c); prune those outright
            dpa = ((pts[piv[:npiv]] - pts[p]) ** 2).sum(axis=1)
            cand = np.flatnonzero(dist2 > 0.25 * dpa[owner])
            if cand.size:
                cd = pts[cand] - pts[p]
                dn = np.einsum("ij,ij->i", cd, cd)
                old = dist2[cand]
                take = dn < old
                tie = dn == old
                if tie.any():
                    take |= tie & (idx[p] < idx[piv[owner[cand]]])
                upd = cand[take]
                owner[upd] = t
                dist2[upd] = dn[take]
            owner[p] = t
            dist2[p] = 0.0
            piv[t] = p
            npiv = t + 1

        order = np.argsort(owner[: m], kind="stable")
        sorted_owner = owner[order]
        bounds = np.searchsorted(sorted_owner, np.arange(npiv + 1))
        children = []
        for t in range(npiv):
            sub = idx[order[bounds[t]:bounds[t + 1]]]
            if sub.size:
                children.append(self.build_cell(sub))
        if len(children) == 1:  # defensive; cannot happen with npiv >= 2
            return children[0]
        return self.agglomerate(children)


def compute_spans(left, right, leaf_point, root):
    """Leaf permutation and contiguous per-node spans via iterative DFS."""
    n_nodes = left.size
    n = (n_nodes + 1) // 2
    span_lo = np.zeros(n_nodes, dtype=np.int64)
    span_hi = np.zeros(n_nodes, dtype=np.int64)
    perm = np.empty(n, dtype=np.int64)
    pos = 0
    stack = [(root, False)]
    while stack:
        v, done = stack.pop()
        if done:
            span_hi[v] = pos
            continue
        span_lo[v] = pos
        if left[v] < 0:
            perm[pos] = leaf_point[v]
            pos += 1
            span_hi[v] = pos
        else:
            stack.append((v, True))
            stack.append((right[v], False))
            stack.append((left[v], False))
    if pos != n:
        raise ValueError("malformed tree: wrong leaf count")
    return perm, span_lo, span_hi


def build_tree(ds) -> PartitionTree:
    """Build the shared anchors hierarchy over a dataset or point array."""
    X = ds.points if hasattr(ds, "points") else np.asarray(ds, dtype=np.float64)
    n, dim = X.shape
    if n < 2:
        raise ValueError("need at least 2 points")
    b = _Builder(X)
    root = b.build_cell(np.arange(n, dtype=np.int64))[0]
    left = np.asarray(b.left, dtype=np.int64)
    right = np.asarray(b.right, dtype=np.int64)
    leafpt = np.asarray(b.leafpt, dtype=np.int64)
    n_nodes = left.size
    assert root == n_nodes - 1 and n_nodes == 2 * n - 1
    perm, span_lo, span_hi = compute_spans(left, right, leafpt, root)

    # node statistics, aggregated children-first (ids are bottom-up)
    count = np.zeros(n_nodes, dtype=np.int64)
    s1 = np.zeros((n_nodes, dim))
    s2 = np.zeros(n_nodes)
    leaves = np.flatnonzero(left < 0)
    count[leaves] = 1
    s1[leaves] = X[leafpt[leaves]]
    s2[leaves] = np.einsum("ij,ij->i", X[leafpt[leaves]], X[leafpt[leaves]])
    tree = PartitionTree(left, right, leafpt, perm, s1, s2, count,
                         span_lo, span_hi, points=X)
    for ids in tree.up_levels():
        l, r = left[ids], right[ids]
        count[ids] = count[l] + count[r]
        s1[ids] = s1[l] + s1[r]
        s2[ids] = s2[l] + s2[r]
    return tree


# ---------------------------------------------------------------------------
# block geometry


def block_distance(tree: PartitionTree, a: int, b: int) -> float:
    """Total squared distance between all point pairs of two disjoint nodes."""
    if tree.overlapping(a, b):
        raise ValueError(f"nodes {a} and {b} overlap; block is invalid")
    d2 = (tree.count[a] * tree.s2[b] + tree.count[b] * tree.s2[a]
          - 2.0 * float(tree.s1[a] @ tree.s1[b]))
    return d2 if d2 > 0.0 else 0.0


def block_distances(tree: PartitionTree, a, b) -> np.ndarray:
    """Vectorized :func:`block_distance` over id arrays (no overlap check)."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    d2 = (tree.count[a] * tree.s2[b] + tree.count[b] * tree.s2[a]
          - 2.0 * np.einsum("ij,ij->i", tree.s1[a], tree.s1[b]))
    return np.maximum(d2, 0.0)


def log_block_weight(tree: PartitionTree, a: int, b: int, sigma: float) -> float:
    """Block-average negative scaled squared distance.

    Equals ``-D2(A,B) / (2 sigma^2 |A| |B|)``; always <= 0, and 0 exactly
    when every point under A coincides with every point under B.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    d2 = block_distance(tree, a, b)
    return -d2 / (2.0 * sigma * sigma * float(tree.count[a] * tree.count[b]))
