"""Independent reference implementations used as test oracles.

Everything here deliberately avoids the tree/block machinery under test:
brute-force pair loops, dense row softmax, dense linear algebra, and a
generic projected-gradient maximizer for the constrained block objective.
"""

import math

import numpy as np


def brute_block_distance(X, a_indices, b_indices):
    """Plain double loop over point pairs."""
    total = 0.0
    for i in a_indices:
        for j in b_indices:
            diff = X[i] - X[j]
            total += float(diff @ diff)
    return total


def pairwise_sq_dists(X):
    """Full n x n squared-distance matrix, row by row.

    Uses the same per-row einsum reduction as the production code so that
    near-tied distances agree to the last ulp.
    """
    n = X.shape[0]
    out = np.empty((n, n))
    for i in range(n):
        diffs = X - X[i]
        out[i] = np.einsum("ij,ij->i", diffs, diffs)
    return out


def row_softmax_transition(X, sigma):
    """Exact transition matrix: normalized kernel rows, zero diagonal."""
    n = X.shape[0]
    d2 = pairwise_sq_dists(X)
    logits = -d2 / (2.0 * sigma * sigma)
    np.fill_diagonal(logits, -np.inf)
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    np.fill_diagonal(p, 0.0)
    return p / p.sum(axis=1, keepdims=True)


def dense_log_likelihood(X, sigma):
    """Sum over points of the log leave-one-out mixture density."""
    n, d = X.shape
    d2 = pairwise_sq_dists(X)
    const = -math.log(n - 1) - 0.5 * d * math.log(2.0 * math.pi * sigma * sigma)
    total = 0.0
    for i in range(n):
        logs = np.delete(-d2[i] / (2.0 * sigma * sigma), i) + const
        m = logs.max()
        total += m + math.log(np.exp(logs - m).sum())
    return total


def brute_knn_sets(X, k):
    """Per-row k nearest neighbor sets, ties resolved to the lower index."""
    n = X.shape[0]
    d2 = pairwise_sq_dists(X)
    sets = []
    for i in range(n):
        order = np.lexsort((np.arange(n), d2[i]))
        neighbors = [j for j in order.tolist() if j != i][:k]
        sets.append(frozenset(neighbors))
    return sets


def brute_pair_sum(X):
    """Sum over all ordered pairs of squared distances, by double loop."""
    n = X.shape[0]
    total = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                diff = X[i] - X[j]
                total += float(diff @ diff)
    return total


def lp_dense(P, y0, alpha, iters):
    """Reference label-propagation recurrence on a dense matrix."""
    y = y0.copy()
    for _ in range(iters):
        y = alpha * (P @ y) + (1.0 - alpha) * y0
    return y


def lp_fixed_point(P, y0, alpha):
    """Closed-form limit (1 - alpha) (I - alpha P)^-1 Y0."""
    n = P.shape[0]
    return (1.0 - alpha) * np.linalg.solve(np.eye(n) - alpha * P, y0)


def block_objective(model, q=None, sigma=None):
    """Lower-bound objective without the additive constant, from arrays."""
    if q is None:
        q = model.block_q
    if sigma is None:
        sigma = model.sigma
    tree = model.tree
    pairs = (tree.count[model.block_a] * tree.count[model.block_b]).astype(float)
    pos = q > 0
    return float(-(q @ model.block_d2) / (2.0 * sigma * sigma)
                 - (pairs[pos] * q[pos] * np.log(q[pos])).sum())


def constraint_matrix(model):
    """Rows x blocks matrix of the per-row sum-to-one constraints."""
    tree = model.tree
    n = tree.n
    a = model.block_a
    nb = a.size
    cb = tree.count[model.block_b].astype(float)
    M = np.zeros((n, nb))
    for j in range(nb):
        rows = tree.perm[tree.span_lo[a[j]]:tree.span_hi[a[j]]]
        M[rows, j] = cb[j]
    return M


def pgd_max_objective(model, iters=1500, dykstra=25):
    """Projected-gradient ascent on the constrained block objective.

    Generic and independent of the closed-form optimizer: Euclidean
    projection onto {q >= 0, row sums = 1} by Dykstra's alternating
    method, gradient steps with backtracking. Returns the best objective
    value (without the additive constant) reached from the feasible
    uniform start.
    """
    tree = model.tree
    pairs = (tree.count[model.block_a] * tree.count[model.block_b]).astype(float)
    d2 = model.block_d2
    sig2 = 2.0 * model.sigma ** 2
    M = constraint_matrix(model)
    MMT_inv = np.linalg.pinv(M @ M.T)
    MT = M.T

    def project(x):
        p = np.zeros_like(x)
        qc = np.zeros_like(x)
        y = x.copy()
        for _ in range(dykstra):
            u = y + p
            z = u - MT @ (MMT_inv @ (M @ u - 1.0))
            p = u - z
            w = z + qc
            y = np.maximum(w, 0.0)
            qc = w - y
        return np.maximum(y, 0.0)

    def f(q):
        pos = q > 0
        return float(-(q @ d2) / sig2
                     - (pairs[pos] * q[pos] * np.log(q[pos])).sum())

    q = np.full(d2.size, 1.0 / (tree.n - 1))  # feasible start
    fq = f(q)
    best = fq
    eta0 = 1.0 / pairs.max()
    for _ in range(iters):
        qs = np.maximum(q, 1e-300)
        grad = -d2 / sig2 - pairs * (np.log(qs) + 1.0)
        eta = eta0
        q_new, f_new = q, fq
        for _ in range(30):
            cand = project(q + eta * grad)
            fc = f(cand)
            if fc >= fq - 1e-13:
                q_new, f_new = cand, fc
                break
            eta *= 0.35
        if f_new < fq - 1e-13 or (q_new is q):
            break  # no ascent step found at any tried step size
        q, fq = q_new, f_new
        best = max(best, fq)
    return best


def kkt_certificate_residual(model):
    """Residual of the stationarity system for the optimized q.

    Stationarity of the concave program demands per-leaf multipliers l_i
    with mean(l_i over A) = G_AB - 1 - log q_AB for every block (A, B).
    Returns the worst equation residual of the least-squares solution;
    a tiny residual certifies global optimality (with feasibility).
    """
    tree = model.tree
    n = tree.n
    a = model.block_a
    nb = a.size
    A = np.zeros((nb, n))
    rhs = np.empty(nb)
    q = np.maximum(model.block_q, 1e-300)
    for j in range(nb):
        rows = tree.perm[tree.span_lo[a[j]]:tree.span_hi[a[j]]]
        A[j, rows] = 1.0 / rows.size
        rhs[j] = model.block_g[j] - 1.0 - math.log(q[j])
    lam, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    return float(np.abs(A @ lam - rhs).max())


def manual_tree(X, nested):
    """Build a PartitionTree from an explicit nested-pair structure.

    ``nested`` is a point index for a leaf or a 2-tuple of nested
    structures; e.g. ``((0, 1), (2, 3))``. Lets tests pin exact tree
    shapes independently of the anchor construction.
    """
    from vdtree.tree import PartitionTree

    X = np.asarray(X, dtype=np.float64)
    left, right, leaf_point = [], [], []
    span_lo, span_hi = [], []
    perm = []

    def rec(node):
        if not isinstance(node, tuple):
            lo = len(perm)
            perm.append(int(node))
            left.append(-1)
            right.append(-1)
            leaf_point.append(int(node))
            span_lo.append(lo)
            span_hi.append(lo + 1)
            return len(left) - 1
        l = rec(node[0])
        r = rec(node[1])
        left.append(l)
        right.append(r)
        leaf_point.append(-1)
        span_lo.append(span_lo[l])
        span_hi.append(span_hi[r])
        return len(left) - 1

    rec(nested)
    left = np.asarray(left, dtype=np.int64)
    right = np.asarray(right, dtype=np.int64)
    leaf_point = np.asarray(leaf_point, dtype=np.int64)
    n_nodes = left.size
    count = np.zeros(n_nodes, dtype=np.int64)
    s1 = np.zeros((n_nodes, X.shape[1]))
    s2 = np.zeros(n_nodes)
    for v in range(n_nodes):
        if left[v] < 0:
            count[v] = 1
            s1[v] = X[leaf_point[v]]
            s2[v] = float(X[leaf_point[v]] @ X[leaf_point[v]])
        else:
            count[v] = count[left[v]] + count[right[v]]
            s1[v] = s1[left[v]] + s1[right[v]]
            s2[v] = s2[left[v]] + s2[right[v]]
    return PartitionTree(left, right, leaf_point,
                         np.asarray(perm, dtype=np.int64), s1, s2, count,
                         np.asarray(span_lo, dtype=np.int64),
                         np.asarray(span_hi, dtype=np.int64), points=X)


def node_by_indices(tree, indices):
    """Tree node whose leaf set equals ``indices`` (must exist)."""
    want = frozenset(int(i) for i in indices)
    for v in range(tree.n_nodes):
        if frozenset(tree.node_indices(v).tolist()) == want:
            return v
    raise AssertionError(f"no node covers exactly {sorted(want)}")


def random_refined(model, n_splits, rng):
    """Apply random valid horizontal splits; q stays row-stochastic."""
    from vdtree.refinement import split_local

    for _ in range(n_splits):
        refinable = np.flatnonzero(model.tree.left[model.block_b] >= 0)
        if refinable.size == 0:
            break
        split_local(model, int(rng.choice(refinable)))
    return model
