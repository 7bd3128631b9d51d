"""Scikit-learn style estimators wrapping the functional core.

Both estimators are transductive: they operate on the training points
themselves (the transition matrix is defined over exactly those points),
like the classic graph-based semi-supervised setting.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import blocks, inference
from .baselines import exact_transition, knn_build
from .refinement import refine
from .tree import build_tree

__all__ = ["BlockTransition", "TransitionLabelPropagation"]


def _resolve_sigma(sigma, X):
    if sigma == "auto":
        return None
    sigma = float(sigma)
    if not sigma > 0:
        raise ValueError(f"sigma must be positive or 'auto', got {sigma}")
    return sigma


class BlockTransition(BaseEstimator):
    """Block-structured approximation of the random-walk transition matrix.

    Parameters
    ----------
    sigma : "auto" or float
        Gaussian kernel bandwidth. "auto" learns it by alternating the
        closed-form update with the block-probability optimization.
    blocks_max : int or None
        When set, greedily refine the coarsest partition up to this many
        blocks.
    batch : int or None
        Splits between global re-optimizations during refinement
        (default n // 2).
    tol, max_iter : float, int
        Convergence control of the alternating fit.

    Attributes
    ----------
    model_ : BlockModel
    tree_ : PartitionTree
    sigma_, lower_bound_, n_blocks_ : fitted scalars
    """

    def __init__(self, sigma="auto", blocks_max=None, batch=None,
                 tol=1e-6, max_iter=50):
        self.sigma = sigma
        self.blocks_max = blocks_max
        self.batch = batch
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64, ensure_min_samples=2)
        sigma0 = _resolve_sigma(self.sigma, X)
        tree = build_tree(X)
        model = blocks.fit(tree, sigma0=sigma0, tol=self.tol,
                           max_iters=self.max_iter)
        if self.blocks_max is not None:
            refine(model, int(self.blocks_max), batch=self.batch)
        self.tree_ = tree
        self.model_ = model
        self.sigma_ = model.sigma
        self.lower_bound_ = model.ell
        self.n_blocks_ = model.block_count
        self.n_features_in_ = X.shape[1]
        return self

    def matvec(self, y):
        """Multiply the fitted transition matrix with a vector or matrix."""
        check_is_fitted(self, "model_")
        return inference.matvec(self.model_, y)

    def transform(self, Y):
        """Alias of :meth:`matvec` (one transition step of the walk)."""
        return self.matvec(Y)

    def to_dense(self, cap=2048):
        check_is_fitted(self, "model_")
        return inference.dense_expand(self.model_, cap=cap)


class TransitionLabelPropagation(ClassifierMixin, BaseEstimator):
    """Transductive label propagation over a chosen transition model.

    Fit with the full point set and a label vector where ``-1`` marks
    unlabeled points (the scikit-learn semi-supervised convention).
    ``predict`` returns the propagated labels of the training points.

    Parameters
    ----------
    method : {"block", "exact", "knn"}
        Transition-matrix backend.
    alpha : float in (0, 1)
        Update rate of the propagation recurrence.
    max_iter : int
        Number of propagation steps.
    sigma : "auto" or float
        Kernel bandwidth; "auto" uses the learned (block) or closed-form
        initial (exact/knn) bandwidth.
    blocks_max : int or None
        Refinement budget for the block backend.
    n_neighbors : int
        k for the knn backend.
    """

    def __init__(self, method="block", alpha=0.01, max_iter=500,
                 sigma="auto", blocks_max=None, n_neighbors=2):
        self.method = method
        self.alpha = alpha
        self.max_iter = max_iter
        self.sigma = sigma
        self.blocks_max = blocks_max
        self.n_neighbors = n_neighbors

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64, ensure_min_samples=2)
        y = np.asarray(y, dtype=np.int64)
        if y.shape != (X.shape[0],):
            raise ValueError("y must be one integer per point (-1 = unlabeled)")
        if not (y >= 0).any():
            raise ValueError("need at least one labeled point")
        sigma0 = _resolve_sigma(self.sigma, X)

        if self.method == "block":
            tree = build_tree(X)
            model = blocks.fit(tree, sigma0=sigma0)
            if self.blocks_max is not None:
                refine(model, int(self.blocks_max))
            operator = model
        elif self.method == "exact":
            operator = exact_transition(
                X, sigma0 if sigma0 is not None else blocks.sigma_init(X))
        elif self.method == "knn":
            tree = build_tree(X)
            operator = knn_build(
                X, tree, self.n_neighbors,
                sigma0 if sigma0 is not None else blocks.sigma_init(X))
        else:
            raise ValueError(f"unknown method {self.method!r}")

        y0 = inference.initial_labels(y)
        propagated = inference.label_propagate(operator, y0,
                                               alpha=self.alpha,
                                               iters=self.max_iter)
        self.operator_ = operator
        self.classes_ = np.arange(y0.classes)
        self.label_distributions_ = propagated.values
        self.transduction_ = inference.predict_labels(propagated)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X=None):
        """Propagated labels of the training points (transductive)."""
        check_is_fitted(self, "transduction_")
        return self.transduction_

    def fit_predict(self, X, y):
        return self.fit(X, y).predict()
