"""Binary model files and small CSV helpers.

Model file layout (all integers little-endian)::

    bytes 0..3    magic "VDT1"
    bytes 4..7    uint32 header length H
    next H bytes  JSON header {block_count, d, n, node_count, version}
    payload       sigma f8; perm i8[n]; left, right, leaf_point, count
                  i8[nodes]; s1 f8[nodes*d]; s2 f8[nodes];
                  block_a, block_b i8[B]; q f8[B]
    last 4 bytes  uint32 CRC-32 of everything before it

Loading rebuilds the tree (spans are recomputed and cross-checked against
the stored permutation), restores q, s1, s2 bit-identically, and refuses
files whose partition is invalid or whose rows do not sum to one.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from .blocks import BlockModel, validate_model
from .tree import PartitionTree, compute_spans

__all__ = ["save_model", "load_model", "read_matrix_csv", "write_matrix_csv"]

MAGIC = b"VDT1"
VERSION = 1


def _payload(model):
    tree = model.tree
    parts = [
        np.float64(model.sigma).astype("<f8").tobytes(),
        tree.perm.astype("<i8").tobytes(),
        tree.left.astype("<i8").tobytes(),
        tree.right.astype("<i8").tobytes(),
        tree.leaf_point.astype("<i8").tobytes(),
        tree.count.astype("<i8").tobytes(),
        tree.s1.astype("<f8").tobytes(),
        tree.s2.astype("<f8").tobytes(),
        model.block_a.astype("<i8").tobytes(),
        model.block_b.astype("<i8").tobytes(),
        model.block_q.astype("<f8").tobytes(),
    ]
    return b"".join(parts)


def save_model(model, path: str) -> None:
    if model.block_q is None:
        raise ValueError("refusing to save a model with unoptimized q")
    if model.sigma is None:
        raise ValueError("refusing to save a model without a bandwidth")
    tree = model.tree
    header = {
        "version": VERSION,
        "n": int(tree.n),
        "d": int(tree.dim),
        "sigma": float(model.sigma),
        "block_count": model.block_count,
        "node_count": int(tree.n_nodes),
    }
    hjson = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    blob = MAGIC + struct.pack("<I", len(hjson)) + hjson + _payload(model)
    crc = zlib.crc32(blob) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(blob)
        fh.write(struct.pack("<I", crc))


def _corrupt(reason):
    return ValueError(f"corrupt model file: {reason}")


def load_model(path: str) -> BlockModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != MAGIC:
        raise _corrupt("bad magic")
    stored_crc = struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != stored_crc:
        raise _corrupt("checksum mismatch")
    hlen = struct.unpack("<I", data[4:8])[0]
    if 8 + hlen > len(data) - 4:
        raise _corrupt("truncated header")
    try:
        header = json.loads(data[8:8 + hlen])
    except json.JSONDecodeError:
        raise _corrupt("unreadable header")
    if header.get("version") != VERSION:
        raise ValueError(
            f"unsupported model file version {header.get('version')!r}")
    n, d = header["n"], header["d"]
    nodes, nb = header["node_count"], header["block_count"]
    if nodes != 2 * n - 1:
        raise _corrupt("inconsistent node count")

    off = 8 + hlen
    expect = 8 * (1 + n + 5 * nodes + nodes * d + 3 * nb)
    if len(data) - 4 - off != expect:
        raise _corrupt(f"payload is {len(data) - 4 - off} bytes, "
                       f"expected {expect}")

    def take(count, dtype):
        nonlocal off
        nbytes = count * 8
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=off).copy()
        off += nbytes
        return arr

    sigma = float(take(1, "<f8")[0])
    perm = take(n, "<i8")
    left = take(nodes, "<i8")
    right = take(nodes, "<i8")
    leaf_point = take(nodes, "<i8")
    count = take(nodes, "<i8")
    s1 = take(nodes * d, "<f8").reshape(nodes, d)
    s2 = take(nodes, "<f8")
    block_a = take(nb, "<i8")
    block_b = take(nb, "<i8")
    block_q = take(nb, "<f8")

    try:
        perm2, span_lo, span_hi = compute_spans(left, right, leaf_point,
                                                nodes - 1)
    except (ValueError, IndexError):
        raise _corrupt("malformed tree structure")
    if not np.array_equal(perm, perm2):
        raise _corrupt("stored permutation disagrees with tree structure")
    tree = PartitionTree(left, right, leaf_point, perm, s1, s2, count,
                         span_lo, span_hi, points=None)
    model = BlockModel(tree, block_a, block_b, sigma=sigma)
    model.block_q = block_q
    validate_model(model)
    return model


# ---------------------------------------------------------------------------
# vector / label-matrix CSV (one row per point)


def read_matrix_csv(path: str) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([float(f) for f in line.split(",")])
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise ValueError(f"{path}: parse error on line {lineno}")
    if not rows:
        raise ValueError(f"{path}: no data rows")
    arr = np.asarray(rows, dtype=np.float64)
    return arr[:, 0] if arr.shape[1] == 1 else arr


def write_matrix_csv(arr, path: str) -> None:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    with open(path, "w") as fh:
        for row in arr:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
