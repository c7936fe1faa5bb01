"""Command-line interface: ``rfnet <command> [options]``.

Commands: ``gen``, ``train``, ``transform``, ``eval``, ``bench``, ``filters``.
Exit status is 0 on success, 1 on a numeric failure during fitting and 2 on
bad usage or unreadable/unwritable files.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, replace

import numpy as np

from . import bench as bench_mod
from .io import (
    FormatError,
    ModelFile,
    load_model,
    read_matrix,
    save_model,
    write_matrix,
    write_pgm,
)
from .metrics import metric_co, metric_er, metric_sp
from .model import center, estep_stats, posterior
from .numerics import DimensionMismatch
from .projection import ProjectionKind
from .trainer import ESTEP_MODES, TrainConfig, TrainingError, train, transform

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2
METHOD_NAMES = {m.lower(): m for m in bench_mod.METHODS}
log = logging.getLogger("rfnet")


class UsageError(Exception):
    pass


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _ext(fmt: str) -> str:
    return ".tsv" if fmt == "text" else ".bin"


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get("RFNET_NUM_THREADS", "1")))
    except ValueError:
        return 1


# -- commands ---------------------------------------------------------------

def cmd_gen(args) -> int:
    if args.suite:
        spec = bench_mod.named_suite(args.suite, args.dataset, args.seed)
        if args.spread is not None:
            spec = replace(spec, spread_std=args.spread)
    else:
        if args.sigma is None or args.n1 is None or args.n2 is None:
            raise UsageError("give --suite or all of --sigma, --n1, --n2")
        spread = args.spread if args.spread is not None else bench_mod.DATASET_SPREAD[args.dataset]
        spec = bench_mod.BenchSpec(sigma=args.sigma, n1=args.n1, n2=args.n2,
                                   spread_std=spread, seed=args.seed, name="custom")
    os.makedirs(args.out_dir, exist_ok=True)
    ext = _ext(args.format)
    manifest = []
    printed = []
    for k in range(args.instances):
        inst = bench_mod.gen_instance(spec, bench_mod.instance_rng(args.seed, spec.name, k))
        stem = os.path.join(args.out_dir, f"{spec.name}_{k:03d}")
        files = {
            "data": stem + ext,
            "sample_masks": stem + ".samples" + ext,
            "feature_masks": stem + ".features" + ext,
        }
        write_matrix(files["data"], inst.data, args.format)
        write_matrix(files["sample_masks"], inst.sample_masks.astype(np.float64), args.format)
        write_matrix(files["feature_masks"], inst.feature_masks.astype(np.float64), args.format)
        # manifest paths are relative to its own directory
        manifest.append({"instance": k, **{key: os.path.basename(f) for key, f in files.items()}})
        printed.append(files["data"])
    doc = {"suite": spec.name, "seed": args.seed, "spec": asdict(spec), "instances": manifest}
    with open(os.path.join(args.out_dir, "manifest.json"), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for path in printed:
        print(path)
    return EXIT_OK


def cmd_train(args) -> int:
    V = read_matrix(args.input)
    kind = ProjectionKind.RECTIFY_NORMALIZE if args.normalize else ProjectionKind.RECTIFY
    config = TrainConfig(l=args.units, eta=args.eta, iterations=args.iters,
                         psi_min=args.psi_min, w_max=args.w_max, dropout_rate=args.dropout,
                         psi_mode=args.psi_mode, projection=kind, seed=args.seed,
                         estep=args.estep)
    model, _, trace = train(V, config)
    save_model(args.out, ModelFile(model=model, config=config.to_dict(), seed=args.seed))
    trace_path = args.trace or args.out + ".trace.tsv"
    with open(trace_path, "w") as fh:
        fh.write(trace.to_text())
    print(f"F\t{trace.final['F']:.12g}")
    print(f"SP\t{trace.final['SP']:.4f}")
    print(f"ER\t{trace.final['ER']:.12g}")
    return EXIT_OK


def cmd_transform(args) -> int:
    model = load_model(args.model).model
    code = transform(model, read_matrix(args.input))
    write_matrix(args.out, code, args.format)
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_model(args.model).model
    V = read_matrix(args.input)
    code = transform(model, V)
    Vc = V - model.mean if model.mean is not None else V
    _, Sigma_p, _ = posterior(model, Vc)
    _, S = estep_stats(Vc, code, Sigma_p)
    method = "RFN" if model.column_rms is not None else "RFNn"
    report = bench_mod.MetricsReport(
        method=method, units=model.l, suite=args.suite or "",
        SP=metric_sp(code, exact_zero=True),
        ER=metric_er(Vc, model, code, args.er_normalization),
        CO=metric_co(Vc, model, S),
    )
    text = json.dumps(asdict(report), indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_bench(args) -> int:
    methods = []
    for name in args.methods.split(","):
        name = name.strip().lower()
        if name not in METHOD_NAMES:
            raise UsageError(f"unknown method {name!r}; expected one of {', '.join(METHOD_NAMES)}")
        methods.append(METHOD_NAMES[name])
    suites = [s.strip() for s in args.suites.split(",") if s.strip()]
    for s in suites:
        bench_mod.named_suite(s)  # fail fast on a bad id
    units = [int(u) for u in args.units.split(",")]
    rfn = TrainConfig(iterations=args.iters, eta=args.eta, estep=args.estep)
    options = bench_mod.BenchOptions(rfn=rfn, er_normalization=args.er_normalization)
    cells, reports = bench_mod.run_benchmark(suites, units, methods, args.instances, args.seed,
                                             args.dataset, options, args.workers)
    if args.overall:
        cells = cells + [bench_mod.overall(reports, m, u) for m in methods for u in units]
    table = bench_mod.format_table(cells)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(table)
    if args.report:
        with open(args.report, "w") as fh:
            json.dump({"seed": args.seed, "dataset": args.dataset, "instances": args.instances,
                       "cells": [asdict(c) for c in cells]}, fh, indent=2, sort_keys=True)
            fh.write("\n")
    sys.stdout.write(table)
    return EXIT_OK


def cmd_filters(args) -> int:
    model = load_model(args.model).model
    try:
        rows, cols = (int(x) for x in args.shape.lower().split("x"))
    except ValueError:
        raise UsageError(f"--shape must look like ROWSxCOLS, got {args.shape!r}") from None
    if rows * cols != model.m:
        raise UsageError(f"--shape {rows}x{cols} has {rows * cols} pixels, the model has m={model.m} inputs")
    os.makedirs(args.out_dir, exist_ok=True)
    index = []
    for j in range(model.l):
        name = f"unit_{j:04d}.pgm"
        write_pgm(os.path.join(args.out_dir, name), model.W[:, j].reshape(rows, cols))
        index.append(name)
    with open(os.path.join(args.out_dir, "index.txt"), "w") as fh:
        fh.write("".join(f"{j}\t{name}\n" for j, name in enumerate(index)))
    write_matrix(os.path.join(args.out_dir, "filters" + _ext(args.format)), model.W.T, args.format)
    print(f"wrote {len(index)} filters to {args.out_dir}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rfnet", description="Rectified factor networks.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-iteration progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate synthetic bicluster instances")
    g.add_argument("--suite", help="named suite D1..D9")
    g.add_argument("--sigma", type=float)
    g.add_argument("--n1", type=int)
    g.add_argument("--n2", type=int)
    g.add_argument("--dataset", type=int, default=1, choices=(1, 2))
    g.add_argument("--spread", type=float, help="std of non-member components")
    g.add_argument("--instances", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out-dir", default=".")
    g.add_argument("--format", choices=("binary", "text"), default="binary")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="fit a model")
    t.add_argument("--input", required=True)
    t.add_argument("--units", type=int, default=50)
    t.add_argument("--iters", type=int, default=1000)
    t.add_argument("--eta", type=float, default=0.1)
    t.add_argument("--dropout", type=float, default=0.0)
    t.add_argument("--normalize", type=_bool, default=True)
    t.add_argument("--psi-min", type=float, default=1e-4)
    t.add_argument("--w-max", type=float, default=100.0)
    t.add_argument("--psi-mode", choices=("diagonal", "full"), default="diagonal")
    t.add_argument("--estep", choices=ESTEP_MODES, default="projection")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="model file")
    t.add_argument("--trace", help="trace file (default: <out>.trace.tsv)")
    t.set_defaults(func=cmd_train)

    x = sub.add_parser("transform", help="code data with a trained model")
    x.add_argument("--model", required=True)
    x.add_argument("--input", required=True)
    x.add_argument("--out", required=True)
    x.add_argument("--format", choices=("binary", "text"), default="binary")
    x.set_defaults(func=cmd_transform)

    e = sub.add_parser("eval", help="score a trained model on data")
    e.add_argument("--model", required=True)
    e.add_argument("--input", required=True)
    e.add_argument("--out", help="JSON report file")
    e.add_argument("--suite", help="label stored in the report")
    e.add_argument("--er-normalization", choices=("frobenius", "mean", "sum"), default="frobenius")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="compare methods on the synthetic suites")
    b.add_argument("--methods", default="rfn,rfnn,fa,pca")
    b.add_argument("--units", default="50")
    b.add_argument("--suites", default=",".join(bench_mod.SUITES))
    b.add_argument("--instances", type=int, default=20)
    b.add_argument("--dataset", type=int, default=1, choices=(1, 2))
    b.add_argument("--iters", type=int, default=1000)
    b.add_argument("--eta", type=float, default=0.1)
    b.add_argument("--estep", choices=ESTEP_MODES, default="projection")
    b.add_argument("--er-normalization", choices=("frobenius", "mean", "sum"), default="frobenius")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--workers", type=int, default=_default_workers())
    b.add_argument("--out", help="delimited table file")
    b.add_argument("--report", help="JSON report file")
    b.add_argument("--overall", action="store_true", help="append rows pooled over suites")
    b.set_defaults(func=cmd_bench)

    f = sub.add_parser("filters", help="export loading columns as images")
    f.add_argument("--model", required=True)
    f.add_argument("--shape", required=True, help="ROWSxCOLS with ROWS*COLS = m")
    f.add_argument("--out-dir", required=True)
    f.add_argument("--format", choices=("binary", "text"), default="binary")
    f.set_defaults(func=cmd_filters)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except TrainingError as exc:
        print(f"rfnet {args.command}: numeric failure at {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except np.linalg.LinAlgError as exc:
        print(f"rfnet {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except bench_mod.UnknownSuite as exc:
        print(f"rfnet {args.command}: {exc.args[0]}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, FormatError, DimensionMismatch, ValueError, OSError) as exc:
        print(f"rfnet {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
