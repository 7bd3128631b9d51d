"""Point-set loading, generation, splitting, and on-disk formats.

A :class:`Dataset` is the canonical in-memory layout every other module
consumes: an ``(n, dim)`` float64 matrix of points plus an optional integer
label vector (``-1`` marks an unlabeled point).

Supported file formats:

* ``csv``     comma-separated doubles, one point per row; a non-numeric
  first row is treated as a header and skipped.
* ``libsvm``  ``<label> <idx>:<val> ...`` with 1-based indices; absent
  indices are zero, the dimension is the largest index seen.
* ``f32raw``  little-endian float32, row-major, with a JSON sidecar
  ``<path>.meta`` holding ``{"n": N, "d": d}``.

Class labels for semi-supervised tasks live in a separate CSV of
``index,label`` rows (0-based index into the dataset), so unlabeled
benchmark data needs no dummy column.
"""

from __future__ import annotations

import json
import os

import numpy as np

__all__ = [
    "Dataset",
    "LabelSplit",
    "load_dataset",
    "save_dataset",
    "load_labels",
    "save_labels",
    "make_split",
    "split_indices",
    "sample_labeled",
    "make_synthetic",
]

FORMATS = ("csv", "libsvm", "f32raw")


class Dataset:
    """Immutable point set with optional class labels.

    Duplicate points are permitted: a zero pairwise distance simply yields
    the maximum kernel value downstream, never an error.
    """

    def __init__(self, points, labels=None):
        points = np.ascontiguousarray(points, dtype=np.float64)
        if points.ndim != 2:
            raise ValueError("points must be a 2-D array")
        n, dim = points.shape
        if n < 2:
            raise ValueError(f"need at least 2 points, got {n}")
        if dim < 1:
            raise ValueError("need at least 1 feature dimension")
        if not np.isfinite(points).all():
            raise ValueError("points contain NaN or Inf")
        if labels is not None:
            labels = np.asarray(labels, dtype=np.int64)
            if labels.shape != (n,):
                raise ValueError("labels must have one entry per point")
            observed = labels[labels >= 0]
            if observed.size:
                c = int(observed.max()) + 1
                if c < 2:
                    c = 2
                if (observed >= c).any():
                    raise ValueError("label ids must lie in 0..C-1")
            points.setflags(write=False)
            labels.setflags(write=False)
        else:
            points.setflags(write=False)
        self.points = points
        self.labels = labels
        self.n = n
        self.dim = dim

    @property
    def n_classes(self):
        """Number of classes C (max labeled id + 1, at least 2), or 0."""
        if self.labels is None:
            return 0
        observed = self.labels[self.labels >= 0]
        if observed.size == 0:
            return 0
        return max(int(observed.max()) + 1, 2)

    def labeled_indices(self):
        if self.labels is None:
            return np.empty(0, dtype=np.int64)
        return np.flatnonzero(self.labels >= 0)

    def __repr__(self):
        lab = "labeled" if self.labels is not None else "unlabeled"
        return f"Dataset(n={self.n}, dim={self.dim}, {lab})"


class LabelSplit:
    """A seeded random subset of labeled points used as LP training input."""

    def __init__(self, labeled_indices, seed, fraction):
        self.labeled_indices = np.asarray(labeled_indices, dtype=np.int64)
        self.seed = int(seed)
        self.fraction = float(fraction)

    def eval_indices(self, n):
        """Complement of the training indices in 0..n-1."""
        mask = np.ones(n, dtype=bool)
        mask[self.labeled_indices] = False
        return np.flatnonzero(mask)


def split_indices(labels, fraction: float, seed: int) -> LabelSplit:
    """Split a raw label vector (-1 = unlabeled); see :func:`make_split`."""
    labels = np.asarray(labels, dtype=np.int64)
    pool = np.flatnonzero(labels >= 0)
    if pool.size == 0:
        raise ValueError("cannot split an unlabeled dataset")
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    n = labels.size
    size = int(round(fraction * n))
    if size < 1:
        raise ValueError(
            f"fraction {fraction} of {n} points rounds to an empty split"
        )
    if size > pool.size:
        raise ValueError(f"requested {size} labeled points, only {pool.size} available")
    rng = np.random.default_rng(seed)
    picked = rng.choice(pool, size=size, replace=False)
    return LabelSplit(np.sort(picked), seed, fraction)


def make_split(ds: Dataset, fraction: float, seed: int) -> LabelSplit:
    """Draw round(fraction * n) labeled training indices without replacement.

    Deterministic for a fixed seed. Only points that carry a label are
    eligible.
    """
    if ds.labels is None:
        raise ValueError("cannot split an unlabeled dataset")
    return split_indices(ds.labels, fraction, seed)


def sample_labeled(ds: Dataset, size: int, seed: int) -> LabelSplit:
    """Like :func:`make_split` but with an absolute training-set size."""
    if ds.labels is None or ds.labeled_indices().size == 0:
        raise ValueError("cannot split an unlabeled dataset")
    pool = ds.labeled_indices()
    if not 1 <= size <= pool.size:
        raise ValueError(f"size must lie in 1..{pool.size}, got {size}")
    rng = np.random.default_rng(seed)
    picked = rng.choice(pool, size=size, replace=False)
    return LabelSplit(np.sort(picked), seed, size / ds.n)


def make_synthetic(kind: str, n: int, d: int, seed: int) -> Dataset:
    """Generate a deterministic synthetic dataset.

    ``two_gaussians``: n/2 points per class around means +-(2, 0, ..., 0)
    with unit variance, labels 0 and 1. ``uniform_cube``: unlabeled points
    uniform in [0, 1]^d.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    if d < 1:
        raise ValueError("need d >= 1")
    rng = np.random.default_rng(seed)
    if kind == "two_gaussians":
        n0 = n - n // 2
        mean = np.zeros(d)
        mean[0] = 2.0
        pts0 = rng.standard_normal((n0, d)) - mean
        pts1 = rng.standard_normal((n - n0, d)) + mean
        points = np.vstack([pts0, pts1])
        labels = np.concatenate([np.zeros(n0, np.int64), np.ones(n - n0, np.int64)])
        order = rng.permutation(n)
        return Dataset(points[order], labels[order])
    if kind == "uniform_cube":
        return Dataset(rng.random((n, d)))
    raise ValueError(f"unknown synthetic kind {kind!r}")


# ---------------------------------------------------------------------------
# file formats


def load_dataset(path: str, format: str = "csv") -> Dataset:
    if format not in FORMATS:
        raise ValueError(f"unknown format {format!r}, expected one of {FORMATS}")
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    if format == "csv":
        points = _read_csv_points(path)
        return Dataset(points)
    if format == "libsvm":
        points, labels = _read_libsvm(path)
        return Dataset(points, labels)
    return Dataset(_read_f32raw(path))


def save_dataset(ds: Dataset, path: str, format: str = "csv") -> None:
    if format == "csv":
        # 17 significant digits keeps text round-trips lossless for doubles
        with open(path, "w") as fh:
            for row in ds.points:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    elif format == "libsvm":
        labels = ds.labels if ds.labels is not None else np.zeros(ds.n, np.int64)
        with open(path, "w") as fh:
            for row, lab in zip(ds.points, labels):
                feats = " ".join(
                    f"{j + 1}:{v:.17g}" for j, v in enumerate(row) if v != 0.0
                )
                fh.write(f"{lab} {feats}".rstrip() + "\n")
    elif format == "f32raw":
        data = ds.points.astype("<f4")
        with open(path, "wb") as fh:
            fh.write(data.tobytes())
        with open(path + ".meta", "w") as fh:
            json.dump({"n": ds.n, "d": ds.dim}, fh)
    else:
        raise ValueError(f"unknown format {format!r}, expected one of {FORMATS}")


def _read_csv_points(path):
    rows = []
    dim = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            try:
                row = [float(f) for f in fields]
            except ValueError:
                if lineno == 1:
                    continue  # header row
                raise ValueError(f"{path}: parse error on line {lineno}: {line!r}")
            if dim is None:
                dim = len(row)
            elif len(row) != dim:
                raise ValueError(
                    f"{path}: line {lineno} has {len(row)} fields, expected {dim}"
                )
            if not all(np.isfinite(row)):
                raise ValueError(f"{path}: non-finite value on line {lineno}")
            rows.append(row)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return np.asarray(rows, dtype=np.float64)


def _read_libsvm(path):
    rows = []
    labels = []
    dim = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            try:
                labels.append(int(float(parts[0])))
                feats = {}
                for tok in parts[1:]:
                    idx, val = tok.split(":")
                    idx = int(idx)
                    if idx < 1:
                        raise ValueError
                    feats[idx] = float(val)
            except (ValueError, IndexError):
                raise ValueError(f"{path}: parse error on line {lineno}: {line!r}")
            if feats:
                dim = max(dim, max(feats))
            rows.append(feats)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    points = np.zeros((len(rows), max(dim, 1)), dtype=np.float64)
    for i, feats in enumerate(rows):
        for idx, val in feats.items():
            points[i, idx - 1] = val
    if not np.isfinite(points).all():
        raise ValueError(f"{path}: non-finite value")
    return points, np.asarray(labels, dtype=np.int64)


def _read_f32raw(path):
    meta_path = path + ".meta"
    if not os.path.exists(meta_path):
        raise ValueError(f"{path}: missing sidecar {meta_path}")
    with open(meta_path) as fh:
        meta = json.load(fh)
    try:
        n, d = int(meta["n"]), int(meta["d"])
    except (KeyError, TypeError, ValueError):
        raise ValueError(f"{meta_path}: sidecar must hold {{'n': N, 'd': d}}")
    raw = np.fromfile(path, dtype="<f4")
    if raw.size != n * d:
        raise ValueError(f"{path}: expected {n * d} float32 values, found {raw.size}")
    return raw.reshape(n, d).astype(np.float64)


def load_labels(path: str, n: int) -> np.ndarray:
    """Read an ``index,label`` CSV into a length-n vector (-1 = unlabeled)."""
    labels = np.full(n, -1, dtype=np.int64)
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            try:
                idx, lab = int(fields[0]), int(fields[1])
            except (ValueError, IndexError):
                if lineno == 1:
                    continue  # header row
                raise ValueError(f"{path}: parse error on line {lineno}: {line!r}")
            if not 0 <= idx < n:
                raise ValueError(f"{path}: index {idx} out of range on line {lineno}")
            labels[idx] = lab
    return labels


def save_labels(labels: np.ndarray, path: str, indices=None) -> None:
    """Write ``index,label`` rows; by default only the labeled entries."""
    labels = np.asarray(labels)
    if indices is None:
        indices = np.flatnonzero(labels >= 0)
    with open(path, "w") as fh:
        for idx in indices:
            fh.write(f"{int(idx)},{int(labels[idx])}\n")
