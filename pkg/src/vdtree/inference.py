"""Fast inference over a block model: matvec and label propagation.

Multiplying the implied dense transition matrix Q by a vector (or an
N x C matrix) costs O(N + |blocks|) instead of O(N^2): an upward pass
aggregates per-node column totals T_A = sum of y over the points under A,
and a downward pass accumulates, along each root-to-leaf path, the
contribution q_AB * T_B of every mark encountered. The result at leaf i
is exactly sum_j q_ij y_j because each row's blocks partition its
off-diagonal entries and T_B collapses the inner sum over j in B.

Label propagation iterates Y <- alpha * Q Y + (1 - alpha) * Y0 on a soft
label matrix, with Y0 one-hot on the labeled rows and zero elsewhere.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "LabelMatrix",
    "matvec",
    "dense_expand",
    "initial_labels",
    "label_propagate",
    "predict_labels",
    "predict_and_ccr",
]


class LabelMatrix:
    """N x C soft-label state driven by label propagation."""

    def __init__(self, values):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("label matrix must be 2-D (points x classes)")
        if not np.isfinite(values).all():
            raise ValueError("label matrix contains NaN or Inf")
        self.values = values
        self.n, self.classes = values.shape


def initial_labels(labels, n_classes=None) -> LabelMatrix:
    """One-hot matrix from an integer label vector (-1 = unlabeled)."""
    labels = np.asarray(labels, dtype=np.int64)
    observed = labels[labels >= 0]
    if observed.size == 0:
        raise ValueError("no labeled points")
    c = int(observed.max()) + 1 if n_classes is None else int(n_classes)
    c = max(c, 2)
    y0 = np.zeros((labels.size, c))
    rows = np.flatnonzero(labels >= 0)
    y0[rows, labels[rows]] = 1.0
    return LabelMatrix(y0)


def matvec(model, y, stats=None):
    """Product of the block transition matrix with a vector or matrix.

    ``stats``, when given a dict, receives ``block_visits``: the leaves
    touched plus the marks applied, always exactly N + |blocks|.
    """
    if model.block_q is None:
        raise ValueError("q is unset; run optimize_q first")
    tree = model.tree
    y = np.asarray(y, dtype=np.float64)
    is_vector = y.ndim == 1
    Y = y[:, None] if is_vector else y
    if Y.ndim != 2 or Y.shape[0] != tree.n:
        raise ValueError(f"expected {tree.n} rows, got shape {y.shape}")

    # CollectUp: per-node column totals are span sums in leaf order,
    # so one prefix sum serves every node at once
    prefix = np.zeros((tree.n + 1, Y.shape[1]))
    np.cumsum(Y[tree.perm], axis=0, out=prefix[1:])
    totals = prefix[tree.span_hi] - prefix[tree.span_lo]

    # DistributeDown: each mark adds q_AB * T_B to every leaf under its
    # data node, i.e. an interval add over the node's span
    contrib = np.zeros_like(totals)
    np.add.at(contrib, model.block_a,
              model.block_q[:, None] * totals[model.block_b])
    fence = np.zeros((tree.n + 1, Y.shape[1]))
    np.add.at(fence, tree.span_lo, contrib)
    np.add.at(fence, tree.span_hi, -contrib)
    acc = np.cumsum(fence[:-1], axis=0)

    out = np.empty_like(Y)
    out[tree.perm] = acc
    if stats is not None:
        stats["block_visits"] = tree.n + model.block_count
    return out[:, 0] if is_vector else out


def dense_expand(model, cap: int = 2048) -> np.ndarray:
    """Materialize the implied dense N x N row-stochastic matrix."""
    if model.block_q is None:
        raise ValueError("q is unset; run optimize_q first")
    tree = model.tree
    n = tree.n
    if n > cap:
        raise ValueError(f"dense expansion capped at n <= {cap}, got {n}")
    q = np.zeros((n, n))
    lo_a, hi_a = tree.span_lo[model.block_a], tree.span_hi[model.block_a]
    lo_b, hi_b = tree.span_lo[model.block_b], tree.span_hi[model.block_b]
    perm = tree.perm
    for i in range(model.block_count):
        rows = perm[lo_a[i]:hi_a[i]]
        cols = perm[lo_b[i]:hi_b[i]]
        q[np.ix_(rows, cols)] = model.block_q[i]
    return q


def _as_multiply(operator):
    if hasattr(operator, "block_q"):
        return lambda y: matvec(operator, y)
    if hasattr(operator, "matvec"):
        return operator.matvec
    if isinstance(operator, np.ndarray):
        return lambda y: operator @ y
    if callable(operator):
        return operator
    raise TypeError(f"cannot multiply with {type(operator).__name__}")


def label_propagate(operator, y0: LabelMatrix, alpha: float = 0.01,
                    iters: int = 500) -> LabelMatrix:
    """Iterate Y <- alpha * P Y + (1 - alpha) * Y0 for ``iters`` steps.

    ``operator`` may be a block model, a baseline transition object, a
    dense array, or any callable performing the multiplication. Rows are
    not renormalized between iterations.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if iters < 0:
        raise ValueError("iters must be nonnegative")
    mult = _as_multiply(operator)
    base = (1.0 - alpha) * y0.values
    y = y0.values
    for _ in range(iters):
        y = alpha * mult(y) + base
    return LabelMatrix(y)


def predict_labels(y: LabelMatrix) -> np.ndarray:
    """Arg-max class per row; ties resolve to the lowest class id."""
    return np.argmax(y.values, axis=1)


def predict_and_ccr(y: LabelMatrix, truth, eval_indices) -> float:
    """Correct classification rate of the arg-max prediction.

    ``eval_indices`` must be disjoint from the labeled training rows;
    :meth:`LabelSplit.eval_indices` produces exactly that set.
    """
    eval_indices = np.asarray(eval_indices, dtype=np.int64)
    if eval_indices.size == 0:
        raise ValueError("empty evaluation set")
    truth = np.asarray(truth, dtype=np.int64)
    pred = predict_labels(y)
    return float(np.mean(pred[eval_indices] == truth[eval_indices]))
