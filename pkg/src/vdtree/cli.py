"""Command-line surface: build, refine, matvec, propagate, eval, bench, synth.

Every run with identical flags and ``--seed`` writes byte-identical data
files; wall-clock timing columns in benchmark reports are the only
nondeterministic output and live in their own columns.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import bench, blocks, inference
from .dataset import (load_dataset, load_labels, make_synthetic,
                      save_dataset, save_labels, split_indices)
from .model_io import load_model, read_matrix_csv, save_model, write_matrix_csv
from .refinement import refine
from .tree import build_tree

__all__ = ["main"]


def _print_summary(model):
    print(json.dumps({
        "n": model.n,
        "d": model.tree.dim,
        "sigma": model.sigma,
        "block_count": model.block_count,
        "ell": model.ell,
    }, sort_keys=True))


def _cmd_synth(args):
    ds = make_synthetic(args.kind, args.n, args.d, args.seed)
    save_dataset(ds, args.output, args.format)
    if args.labels:
        if ds.labels is None:
            raise ValueError(f"synthetic kind {args.kind!r} has no labels")
        save_labels(ds.labels, args.labels)
    return 0


def _cmd_build(args):
    ds = load_dataset(args.input, args.format)
    sigma0 = None if args.sigma == "auto" else float(args.sigma)
    tree = build_tree(ds)
    model = blocks.fit(tree, sigma0=sigma0, tol=args.tol,
                       max_iters=args.max_iters)
    if args.blocks_max is not None:
        refine(model, args.blocks_max, batch=args.batch)
    save_model(model, args.output)
    _print_summary(model)
    return 0


def _cmd_refine(args):
    model = load_model(args.model)
    refine(model, args.blocks_max, batch=args.batch)
    save_model(model, args.output)
    _print_summary(model)
    return 0


def _cmd_matvec(args):
    model = load_model(args.model)
    y = read_matrix_csv(args.vector)
    write_matrix_csv(inference.matvec(model, y), args.output)
    return 0


def _write_predictions(path, propagated):
    pred = inference.predict_labels(propagated)
    with open(path, "w") as fh:
        cols = ",".join(f"score_{c}" for c in range(propagated.classes))
        fh.write(f"index,label,{cols}\n")
        for i in range(propagated.n):
            scores = ",".join(f"{v:.17g}" for v in propagated.values[i])
            fh.write(f"{i},{pred[i]},{scores}\n")


def _cmd_propagate(args):
    model = load_model(args.model)
    labels = load_labels(args.labels, model.n)
    y0 = inference.initial_labels(labels)
    propagated = inference.label_propagate(model, y0, alpha=args.alpha,
                                           iters=args.iters)
    _write_predictions(args.output, propagated)
    return 0


def _cmd_eval(args):
    model = load_model(args.model)
    truth = load_labels(args.labels, model.n)
    split = split_indices(truth, args.fraction, args.seed)
    train = np.full(model.n, -1, dtype=np.int64)
    train[split.labeled_indices] = truth[split.labeled_indices]
    y0 = inference.initial_labels(train, n_classes=int(truth.max()) + 1)
    propagated = inference.label_propagate(model, y0, alpha=args.alpha,
                                           iters=args.iters)
    if args.output:
        _write_predictions(args.output, propagated)
    eval_idx = split.eval_indices(model.n)
    eval_idx = eval_idx[truth[eval_idx] >= 0]  # score only where truth known
    ccr = inference.predict_and_ccr(propagated, truth, eval_idx)
    print(json.dumps({
        "ccr": ccr,
        "n_eval": int(eval_idx.size),
        "n_labeled": int(split.labeled_indices.size),
        "seed": args.seed,
    }, sort_keys=True))
    return 0


def _cmd_bench(args):
    if args.suite == "scaling":
        sizes = [int(s) for s in args.sizes.split(",")] if args.sizes else \
            [1000, 2000, 4000]
        rows = bench.run_scaling_suite(sizes, seed=args.seed, dim=args.dim,
                                       with_ccr=not args.no_ccr,
                                       alpha=args.alpha, iters=args.iters,
                                       parallel=args.parallel)
    elif args.suite == "refinement":
        if not args.input:
            raise ValueError("refinement suite needs --input")
        ds = load_dataset(args.input, args.format)
        if args.labels:
            from .dataset import Dataset
            ds = Dataset(ds.points, load_labels(args.labels, ds.n))
        rows = bench.run_refinement_suite(ds, seed=args.seed,
                                          alpha=args.alpha, iters=args.iters)
    else:
        raise ValueError(f"unknown suite {args.suite!r}")
    if args.output:
        with open(args.output, "w") as fh:
            bench.write_report(rows, fh)
    else:
        bench.write_report(rows, sys.stdout)
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="vdtree",
        description="Block-structured random-walk transition matrices: "
                    "build, refine, multiply, propagate labels, benchmark.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--kind", choices=("two_gaussians", "uniform_cube"),
                   required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--d", type=int, default=2)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--output", required=True)
    s.add_argument("--labels", help="also write an index,label CSV here")
    s.add_argument("--format", choices=("csv", "libsvm", "f32raw"),
                   default="csv")
    s.set_defaults(func=_cmd_synth)

    s = sub.add_parser("build", help="build and fit a block model")
    s.add_argument("--input", required=True)
    s.add_argument("--format", choices=("csv", "libsvm", "f32raw"),
                   default="csv")
    s.add_argument("--sigma", default="auto",
                   help="'auto' to learn the bandwidth, or a float")
    s.add_argument("--blocks-max", type=int, default=None)
    s.add_argument("--batch", type=int, default=None)
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--max-iters", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)  # accepted for uniformity
    s.add_argument("--output", required=True)
    s.set_defaults(func=_cmd_build)

    s = sub.add_parser("refine", help="refine a saved model")
    s.add_argument("--model", required=True)
    s.add_argument("--blocks-max", type=int, required=True)
    s.add_argument("--batch", type=int, default=None)
    s.add_argument("--output", required=True)
    s.set_defaults(func=_cmd_refine)

    s = sub.add_parser("matvec", help="multiply the model with a CSV vector")
    s.add_argument("--model", required=True)
    s.add_argument("--vector", required=True)
    s.add_argument("--output", required=True)
    s.set_defaults(func=_cmd_matvec)

    s = sub.add_parser("propagate", help="run label propagation")
    s.add_argument("--model", required=True)
    s.add_argument("--labels", required=True,
                   help="index,label CSV of the known labels")
    s.add_argument("--alpha", type=float, default=0.01)
    s.add_argument("--iters", type=int, default=500)
    s.add_argument("--output", required=True)
    s.set_defaults(func=_cmd_propagate)

    s = sub.add_parser("eval", help="split, propagate, report CCR")
    s.add_argument("--model", required=True)
    s.add_argument("--labels", required=True,
                   help="index,label CSV of the full ground truth")
    s.add_argument("--fraction", type=float, default=0.1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--alpha", type=float, default=0.01)
    s.add_argument("--iters", type=int, default=500)
    s.add_argument("--output", help="optional prediction CSV")
    s.set_defaults(func=_cmd_eval)

    s = sub.add_parser("bench", help="run a benchmark suite")
    s.add_argument("--suite", choices=("scaling", "refinement"),
                   required=True)
    s.add_argument("--sizes", help="comma-separated sizes (scaling suite)")
    s.add_argument("--dim", type=int, default=8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--input", help="dataset (refinement suite)")
    s.add_argument("--format", choices=("csv", "libsvm", "f32raw"),
                   default="csv")
    s.add_argument("--labels", help="labels CSV (refinement suite)")
    s.add_argument("--alpha", type=float, default=0.01)
    s.add_argument("--iters", type=int, default=500)
    s.add_argument("--no-ccr", action="store_true",
                   help="skip label-propagation accuracy columns")
    s.add_argument("--parallel", action="store_true",
                   help="run suite cells concurrently; timing columns "
                        "become unreliable and are marked as such")
    s.add_argument("--output")
    s.set_defaults(func=_cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else 0
    try:
        return args.func(args)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
