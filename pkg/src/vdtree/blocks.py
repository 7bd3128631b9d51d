"""Block-structured transition model over a partition tree.

A block model ties together groups of transition probabilities: a block
``(A, B)`` over two disjoint tree nodes gives every ordered pair
``(i in A, j in B)`` the same probability ``q_AB`` of jumping from i to j.
A *valid* set of blocks covers every off-diagonal pair exactly once
(diagonal entries are implicit zeros). The shared probabilities are chosen
to maximize a variational lower bound on the Gaussian-kernel data
log-likelihood,

    ell = c - (1 / 2 sigma^2) * sum_B q_AB * D2_AB
            - sum_B |A| |B| * q_AB * log q_AB,
    c   = -N * log((2 pi)^(d/2) * sigma^d * (N - 1)),

subject to the per-row sum-to-one constraints

    sum over blocks (A, B) on the leaf-to-root path of i:  |B| q_AB = 1.

The program is concave with linear constraints, so a point satisfying the
stationarity conditions is the unique global optimum. :func:`optimize_q`
finds it in two linear-time tree passes, entirely in the log domain:
block log-weights can drop far below -700, where direct exponentials
underflow. The closed form is validated against an independent
projected-gradient maximizer in the test suite before being trusted.
"""

from __future__ import annotations

import math

import numpy as np

from .tree import PartitionTree, block_distances

__all__ = [
    "BlockModel",
    "coarsest_partition",
    "fully_refined_partition",
    "optimize_q",
    "lower_bound",
    "objective_decomposition",
    "row_sums",
    "validate_model",
    "sigma_init",
    "sigma_update",
    "fit",
]


class BlockModel:
    """A valid block partition with per-block shared probabilities.

    Blocks are stored column-oriented: ``block_a[i]`` and ``block_b[i]``
    are tree node ids, ``block_q[i]`` the shared probability (None until
    optimized), ``block_d2``/``block_g`` the cached total squared distance
    and block-average log kernel weight. Instances are treated as
    immutable between operations; mutating operations require exclusive
    access.
    """

    def __init__(self, tree: PartitionTree, block_a, block_b, sigma=None):
        self.tree = tree
        self.block_a = np.asarray(block_a, dtype=np.int64)
        self.block_b = np.asarray(block_b, dtype=np.int64)
        self.block_d2 = block_distances(tree, self.block_a, self.block_b)
        self.block_q = None
        self.block_g = None
        self.sigma = None
        self.ell = None
        self.refine_exhausted = False
        if sigma is not None:
            self.set_sigma(sigma)

    @property
    def n(self):
        return self.tree.n

    @property
    def block_count(self):
        return int(self.block_a.size)

    def pair_sizes(self):
        """|A| * |B| per block, as float64."""
        c = self.tree.count
        return (c[self.block_a] * c[self.block_b]).astype(np.float64)

    def set_sigma(self, sigma):
        """Set the bandwidth and refresh the cached block log-weights."""
        sigma = float(sigma)
        if not sigma > 0:
            raise ValueError(f"sigma must be positive, got {sigma}")
        self.sigma = sigma
        self.block_g = -self.block_d2 / (2.0 * sigma * sigma * self.pair_sizes())
        self.ell = None
        return self

    def copy(self):
        dup = BlockModel.__new__(BlockModel)
        dup.tree = self.tree
        dup.block_a = self.block_a.copy()
        dup.block_b = self.block_b.copy()
        dup.block_d2 = self.block_d2.copy()
        dup.block_q = None if self.block_q is None else self.block_q.copy()
        dup.block_g = None if self.block_g is None else self.block_g.copy()
        dup.sigma = self.sigma
        dup.ell = self.ell
        dup.refine_exhausted = self.refine_exhausted
        return dup

    def marks_by_node(self):
        """Block indices grouped by data node id (the mark lists)."""
        order = np.argsort(self.block_a, kind="stable")
        marks = {}
        a_sorted = self.block_a[order]
        start = 0
        for end in range(1, order.size + 1):
            if end == order.size or a_sorted[end] != a_sorted[start]:
                marks[int(a_sorted[start])] = order[start:end]
                start = end
        return marks

    def __repr__(self):
        q = "optimized" if self.block_q is not None else "unset q"
        return (f"BlockModel(n={self.n}, blocks={self.block_count}, "
                f"sigma={self.sigma}, {q})")


def coarsest_partition(tree: PartitionTree) -> BlockModel:
    """Sibling-pair partition: every non-root node marked with its sibling.

    This is the smallest valid partition, with 2(N - 1) off-diagonal
    blocks.
    """
    nodes = np.arange(tree.n_nodes - 1, dtype=np.int64)  # root is last
    par = tree.parent[nodes]
    sib = np.where(tree.left[par] == nodes, tree.right[par], tree.left[par])
    return BlockModel(tree, nodes, sib)


def fully_refined_partition(tree: PartitionTree, cap: int = 4096) -> BlockModel:
    """All N(N-1) singleton off-diagonal blocks (quadratic; testing aid)."""
    n = tree.n
    if n > cap:
        raise ValueError(f"fully refined partition needs n <= {cap}, got {n}")
    leaves = tree.leaf_id_by_pos
    a = np.repeat(leaves, n - 1)
    grid = np.broadcast_to(leaves, (n, n))
    b = grid[~np.eye(n, dtype=bool)]
    return BlockModel(tree, a, b)


# ---------------------------------------------------------------------------
# optimizer


def _mark_logsumexp(model):
    """Per-node logsumexp of log|B| + G over that node's marks."""
    tree = model.tree
    t = np.log(tree.count[model.block_b].astype(np.float64)) + model.block_g
    mmax = np.full(tree.n_nodes, -np.inf)
    np.maximum.at(mmax, model.block_a, t)
    acc = np.zeros(tree.n_nodes)
    np.add.at(acc, model.block_a, np.exp(t - mmax[model.block_a]))
    out = np.full(tree.n_nodes, -np.inf)
    has = acc > 0
    out[has] = mmax[has] + np.log(acc[has])
    return out


def optimize_q(model: BlockModel) -> BlockModel:
    """Fill q with the unique maximizer of the lower bound at fixed sigma.

    Upward pass: each node aggregates its own mark weights with its
    children's size-weighted average log-weight. Downward pass: a per-leaf
    log-mass starts at 0 at the root and is discounted by each node's
    aggregate on the way down; the q of a mark is the exponential of
    (incoming log-mass + G - node aggregate). Row sums come out at 1 by
    construction; optimality follows from stationarity of the concave
    program.
    """
    if model.sigma is None:
        raise ValueError("sigma is unset; call set_sigma first")
    tree = model.tree
    count = tree.count.astype(np.float64)
    marklse = _mark_logsumexp(model)

    logw = marklse.copy()
    zhat = np.zeros(tree.n_nodes)
    for ids, l, r in tree.up_schedule():
        zhat[ids] = (count[l] * logw[l] + count[r] * logw[r]) / count[ids]
        logw[ids] = np.logaddexp(marklse[ids], zhat[ids])

    leaves = np.flatnonzero(tree.left < 0)
    if not np.isfinite(logw[leaves]).all():
        raise ValueError("invalid partition: some leaf carries no marks")

    drop = zhat - logw
    logmu = np.zeros(tree.n_nodes)
    for ids, par in tree.down_schedule():
        logmu[ids] = logmu[par] + drop[par]

    logq = logmu[model.block_a] + model.block_g - logw[model.block_a]
    model.block_q = np.exp(logq)
    model.ell = None
    return model


def row_sums(model: BlockModel) -> np.ndarray:
    """Per-point sum of |B| q_AB over the blocks covering that row."""
    if model.block_q is None:
        raise ValueError("q is unset; run optimize_q first")
    tree = model.tree
    val = np.zeros(tree.n_nodes)
    np.add.at(val, model.block_a,
              tree.count[model.block_b] * model.block_q)
    fence = np.zeros(tree.n + 1)
    np.add.at(fence, tree.span_lo, val)
    np.add.at(fence, tree.span_hi, -val)
    out = np.empty(tree.n)
    out[tree.perm] = np.cumsum(fence[:-1])
    return out


def log_constant(n: int, dim: int, sigma: float) -> float:
    """The additive constant c of the lower bound."""
    return -n * (0.5 * dim * math.log(2.0 * math.pi)
                 + dim * math.log(sigma) + math.log(n - 1))


def objective_decomposition(model: BlockModel):
    """(trace term, entropy term) of the lower bound.

    The trace term is the negative scaled sum of q-weighted block
    distances, i.e. the expected jump distance of the random walk; the
    entropy term is the total entropy of the per-row transition
    distributions, which keeps the walk from collapsing onto nearest
    neighbors. They satisfy trace + entropy + c = lower_bound.
    """
    if model.block_q is None:
        raise ValueError("q is unset; run optimize_q first")
    q = model.block_q
    trace_term = -float(q @ model.block_d2) / (2.0 * model.sigma ** 2)
    pos = q > 0
    ent = -(model.pair_sizes()[pos] * q[pos] * np.log(q[pos])).sum()
    return trace_term, float(ent)


def lower_bound(model: BlockModel) -> float:
    """Variational lower bound on the data log-likelihood."""
    trace_term, ent = objective_decomposition(model)
    c = log_constant(model.n, model.tree.dim, model.sigma)
    model.ell = c + trace_term + ent
    return model.ell


# ---------------------------------------------------------------------------
# bandwidth


def _sigma_from_pair_sum(total, n, dim):
    # total = sum over ordered pairs of squared distances
    if not total > 0:
        raise ValueError("degenerate dataset: zero diameter")
    return math.sqrt(total / dim) / n


def sigma_init(ds) -> float:
    """Bandwidth maximizing the Jensen lower bound of the log-likelihood.

    Equals sqrt(sum of all pairwise squared distances / d) / N, evaluated
    in O(Nd) through the identity
    sum_ij ||x_i - x_j||^2 = 2 N S2 - 2 ||S1||^2.
    """
    X = ds.points if hasattr(ds, "points") else np.asarray(ds, dtype=np.float64)
    n, dim = X.shape
    if n < 2:
        raise ValueError("need at least 2 points")
    s1 = X.sum(axis=0)
    s2 = float(np.einsum("ij,ij->", X, X))
    total = 2.0 * n * s2 - 2.0 * float(s1 @ s1)
    if total <= 2.0 * n * s2 * 1e-14:
        raise ValueError("degenerate dataset: zero diameter")
    return _sigma_from_pair_sum(total, n, dim)


def sigma_update(model: BlockModel) -> float:
    """Closed-form bandwidth maximizing the lower bound at fixed q."""
    if model.block_q is None:
        raise ValueError("q is unset; run optimize_q first")
    total = float(model.block_q @ model.block_d2)
    if not total > 0:
        raise ValueError("degenerate bandwidth: all probability mass on "
                         "duplicate points")
    return math.sqrt(total / (model.n * model.tree.dim))


def fit(tree: PartitionTree, sigma0=None, tol: float = 1e-6,
        max_iters: int = 50) -> BlockModel:
    """Coarsest partition fitted by alternating q and sigma updates.

    Each half-step is an exact coordinate maximization, so the lower bound
    never decreases. Stops when the relative change of the bound drops
    below ``tol``. The bound after every outer iteration is kept on the
    returned model as ``fit_history``.
    """
    model = coarsest_partition(tree)
    if sigma0 is None:
        s1 = tree.s1[tree.root]
        s2 = float(tree.s2[tree.root])
        total = 2.0 * tree.n * s2 - 2.0 * float(s1 @ s1)
        if total <= 2.0 * tree.n * s2 * 1e-14:
            raise ValueError("degenerate dataset: zero diameter")
        sigma0 = _sigma_from_pair_sum(total, tree.n, tree.dim)
    model.set_sigma(sigma0)
    history = []
    prev = None
    for _ in range(max_iters):
        optimize_q(model)
        model.set_sigma(sigma_update(model))
        ell = lower_bound(model)
        history.append(ell)
        if prev is not None and abs(ell - prev) / (1.0 + abs(ell)) < tol:
            break
        prev = ell
    # leave q consistent with the final sigma
    optimize_q(model)
    lower_bound(model)
    model.fit_history = history
    return model


# ---------------------------------------------------------------------------
# validation


def validate_model(model: BlockModel, rtol: float = 1e-9) -> None:
    """Check partition validity and, if q is set, row stochasticity.

    Validity means the blocks tile every off-diagonal pair exactly once:
    per leaf, the kernel spans collected on the leaf-to-root path plus the
    leaf's own position must tile the whole permutation range.

    Raises ValueError on the first violation.
    """
    tree = model.tree
    n = tree.n
    a, b = model.block_a, model.block_b
    lo_a, hi_a = tree.span_lo[a], tree.span_hi[a]
    lo_b, hi_b = tree.span_lo[b], tree.span_hi[b]
    if ((lo_a < hi_b) & (lo_b < hi_a)).any():
        raise ValueError("invalid partition: overlapping block sides")
    cells = int((tree.count[a] * tree.count[b]).sum())
    if cells != n * n - n:
        raise ValueError(
            f"invalid partition: blocks cover {cells} cells, "
            f"expected {n * n - n}")

    spans_at = {}
    for i in range(a.size):
        spans_at.setdefault(int(a[i]), []).append((int(lo_b[i]), int(hi_b[i])))
    path = []
    depth_added = []
    stack = [(tree.root, False)]
    while stack:
        v, done = stack.pop()
        if done:
            for _ in range(depth_added.pop()):
                path.pop()
            continue
        own = spans_at.get(v, ())
        path.extend(own)
        depth_added.append(len(own))
        stack.append((v, True))
        if tree.left[v] >= 0:
            stack.append((tree.right[v], False))
            stack.append((tree.left[v], False))
        else:
            pos = int(tree.span_lo[v])
            tiles = sorted(path + [(pos, pos + 1)])
            cur = 0
            for lo, hi in tiles:
                if lo != cur:
                    raise ValueError(
                        f"invalid partition: row {int(tree.perm[pos])} has a "
                        f"gap or overlap at span position {cur}")
                cur = hi
            if cur != n:
                raise ValueError(
                    f"invalid partition: row {int(tree.perm[pos])} covers "
                    f"only {cur} of {n} positions")

    if model.block_q is not None:
        q = model.block_q
        if (q < 0).any():
            raise ValueError("negative block probability")
        if (tree.count[b] * q > 1.0 + rtol).any():
            raise ValueError("block mass |B| q exceeds 1")
        sums = row_sums(model)
        err = np.abs(sums - 1.0).max()
        if err > rtol:
            raise ValueError(f"row sums deviate from 1 by {err:.3e}")
