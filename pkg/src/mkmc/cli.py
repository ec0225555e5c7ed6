"""Command-line driver: ``mkmc {synth,mask,complete,eval,bench}``.

Exit codes: 0 success, 1 usage or validation error, 2 numerical failure
(including a completion run that hit ``--max-iters`` without converging;
its outputs and trace are still written).
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds
from .baselines import impute_set
from .completion import DEFAULT_LAMBDA, CompletionTrace, MkmcConfig, run
from .errors import ConvergenceError, MKMCError, NotPositiveDefinite, QSingular
from .evalsuite import corr_matrix_distance, evaluate, split_roc
from .symmat import SymmetricKernel

METHODS = ("mkmc", "zero", "mean")


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _ratios(text):
    try:
        vals = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad ratio list {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty ratio list")
    return vals


def _methods(text):
    vals = tuple(x.strip() for x in text.split(",") if x.strip())
    bad = [m for m in vals if m not in METHODS]
    if bad or not vals:
        raise argparse.ArgumentTypeError(f"methods must be drawn from {','.join(METHODS)}")
    return vals


def _common():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA)
    g.add_argument("--tol", type=float, default=1e-6)
    g.add_argument("--max-iters", type=int, default=200)
    g.add_argument("--threads", type=int, default=1)
    g.add_argument("--format", choices=("csv", "binary"), default="csv")
    g.add_argument("--json", action="store_true", help="machine-readable errors on stderr")
    return p


def build_parser():
    common = _common()
    parser = _Parser(prog="mkmc", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic kernel set")
    p.add_argument("--l", type=int, default=200)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--d", type=int, default=20)
    p.add_argument("--sigma", type=float, default=0.3)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("mask", parents=[common], help="write a nested masking schedule")
    p.add_argument("in_dir", type=Path, nargs="?")
    p.add_argument("--ratios", type=_ratios, default=ds.DEFAULT_RATIOS)
    p.add_argument("--out", type=Path)
    p.add_argument("--check", type=Path, metavar="SCHEDULE_DIR",
                   help="verify an emitted schedule instead of writing one")

    p = sub.add_parser("complete", parents=[common], help="complete a kernel set")
    p.add_argument("in_dir", type=Path)
    p.add_argument("--method", choices=METHODS, default="mkmc")
    p.add_argument("--masks", type=Path, help="directory of mask_<k>.txt sidecars")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval", parents=[common], help="score completed kernels")
    p.add_argument("truth_dir", type=Path)
    p.add_argument("est_dir", type=Path)
    p.add_argument("--labels", type=Path, required=True)
    p.add_argument("--train-size", type=int, default=200)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("bench", parents=[common], help="method x ratio x seed sweep")
    p.add_argument("--l", type=int, default=200)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--d", type=int, default=20)
    p.add_argument("--sigma", type=float, default=0.3)
    p.add_argument("--ratios", type=_ratios, default=ds.DEFAULT_RATIOS)
    p.add_argument("--methods", type=_methods, default=METHODS)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--train-size", type=int)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--out", type=Path, required=True)
    return parser


def _config(args):
    try:
        return MkmcConfig(lam=args.lam, tol=args.tol, max_iters=args.max_iters, threads=args.threads)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _ext(fmt):
    return "csv" if fmt == "csv" else "bin"


def _write_model(directory, model, fmt):
    path = Path(directory) / f"M.{_ext(fmt)}"
    ds.save_kernel(path, SymmetricKernel(model), fmt, hide=False)
    return path


def _read_model(directory):
    for name in ("M.csv", "M.bin"):
        p = Path(directory) / name
        if p.exists():
            return ds.load_kernel(p).values
    return None


# --- subcommands ---------------------------------------------------------

def cmd_synth(args):
    try:
        spec = ds.SyntheticSpec(args.l, args.k, args.d, args.sigma, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    kernels, split = ds.synth_kernel_set(spec)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    paths = ds.save_kernel_dir(out, kernels, args.format)
    ds.save_labels(out / "labels.csv", split.labels)
    manifest = {
        "generator": "synth_kernel_set",
        "l": spec.ell, "k": spec.K, "d": spec.d, "sigma": spec.sigma, "seed": spec.seed,
        "format": args.format,
        "kernels": [p.name for p in paths],
        "labels": "labels.csv",
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(json.dumps(manifest))
    return 0


def _ratio_dir(r):
    return f"ratio_{r:.2f}"


def cmd_mask(args):
    if args.check is not None:
        return _check_schedule(args.check)
    if args.in_dir is None or args.out is None:
        raise UsageError("mask: IN_DIR and --out are required unless --check is given")
    kernels = ds.load_kernel_dir(args.in_dir)
    try:
        sched = ds.make_mask_schedule(kernels.dim, kernels.K, args.ratios, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    args.out.mkdir(parents=True, exist_ok=True)
    for r in sched.ratios:
        d = args.out / _ratio_dir(r)
        d.mkdir(exist_ok=True)
        for k, m in enumerate(sched.masks(r), start=1):
            ds.write_mask(d / f"mask_{k}.txt", m)
    meta = {"l": sched.ell, "k": sched.K, "seed": sched.seed, "ratios": list(sched.ratios),
            "dirs": [_ratio_dir(r) for r in sched.ratios],
            "hidden_slots": [sched.n_hidden(r) for r in sched.ratios]}
    (args.out / "schedule.json").write_text(json.dumps(meta, indent=2) + "\n")
    print(json.dumps({"ratios": len(sched.ratios), "out": str(args.out)}))
    return 0


def _check_schedule(directory):
    directory = Path(directory)
    meta_path = directory / "schedule.json"
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        dirs = [directory / d for d in meta["dirs"]]
        counts = meta.get("hidden_slots")
    else:
        dirs = sorted(directory.glob("ratio_*"), key=lambda p: float(p.name.split("_", 1)[1]))
        counts = None
    if not dirs:
        raise UsageError(f"{directory}: no ratio directories")
    sets = []
    for d in dirs:
        files = sorted(d.glob("mask_*.txt"), key=lambda p: int(p.stem.split("_")[1]))
        if not files:
            raise UsageError(f"{d}: no mask files")
        sets.append([set(np.flatnonzero(~ds.read_mask(f)).tolist()) for f in files])
    problems = []
    if not ds.check_nested(sets):
        problems.append("hidden sets are not nested across ratios")
    if counts is not None:
        got = [sum(len(s) for s in per) for per in sets]
        if got != list(counts):
            problems.append(f"hidden slot counts {got} differ from schedule {counts}")
    if problems:
        raise UsageError("; ".join(problems))
    print(json.dumps({"ok": True, "ratios": len(dirs)}))
    return 0


def _num(x):
    return repr(float(x))


def _trace_rows(trace, K):
    header = ["iter", "J_total", "J_prior"] + [f"kl_{k}" for k in range(1, K + 1)] + [
        "max_block_delta", "J_reduced"]
    rows = [header]
    for rec in trace.iterations:
        o = rec.objective
        rows.append([rec.iteration, _num(o.total), _num(o.lam * o.prior_kl)]
                    + [_num(x) for x in o.per_matrix_kl]
                    + [_num(rec.max_block_delta), _num(o.reduced_total)])
    return rows


def cmd_complete(args):
    cfg = _config(args)
    kernels = ds.load_kernel_dir(args.in_dir, mask_dir=args.masks, lam=cfg.lam)
    args.out.mkdir(parents=True, exist_ok=True)
    trace = None
    failure = None
    if args.method == "mkmc":
        records = []
        try:
            done, trace = run(kernels, cfg, callback=records.append)
        except (ConvergenceError, NotPositiveDefinite) as exc:
            failure = exc
            done = None
            trace = CompletionTrace(records)
        with open(args.out / "trace.csv", "w", newline="") as fh:
            csv.writer(fh).writerows(_trace_rows(trace, kernels.K))
        if failure is not None:
            raise NumericalFailure(str(failure))
    else:
        done = impute_set(kernels, args.method, lam=cfg.lam)
    ds.save_kernel_dir(args.out, done, args.format, hide=False)
    _write_model(args.out, done.model, args.format)
    summary = {"method": args.method, "K": kernels.K, "l": kernels.dim, "out": str(args.out)}
    if trace is not None:
        summary.update(iterations=trace.n_iter, converged=trace.converged,
                       stop_reason=trace.stop_reason.value)
    print(json.dumps(summary))
    if trace is not None and not trace.converged:
        raise NumericalFailure(f"no convergence within {cfg.max_iters} iterations")
    return 0


def cmd_eval(args):
    truth = ds.load_kernel_dir(args.truth_dir)
    if any(k.n_hidden for k in truth.kernels):
        raise UsageError("truth kernels must be fully observed")
    est = ds.load_kernel_dir(args.est_dir, lam=args.lam)
    if est.K != truth.K or est.dim != truth.dim:
        raise UsageError("truth and estimate kernel sets differ in shape")
    model = _read_model(args.est_dir)
    if model is not None:
        est = est.replace(model=model)
    labels = ds.load_labels(args.labels)
    if labels.size != truth.dim:
        raise UsageError(f"{labels.size} labels for {truth.dim} objects")
    try:
        split = ds.make_split(labels, args.train_size, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    report = evaluate(truth, est, split, args.c, seed=args.seed)
    out = args.out or (args.est_dir / "report.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["measure", "matrix", "value"])
        for measure, matrix, value in report.rows():
            w.writerow([measure, matrix, _num(value)])
    print(json.dumps({"report": str(out), "corr_distance": report.mean_corr_distance,
                      "roc_M": report.roc_model}))
    return 0


def bench_cell(kernels, masked, split, method, cfg, c):
    """Distance and model-matrix ROC for one (method, ratio, seed) cell."""
    if method == "mkmc":
        done, _ = run(masked, cfg)
    else:
        done = impute_set(masked, method, lam=cfg.lam)
    return corr_matrix_distance(kernels, done), split_roc(done.model, split, c)


def cmd_bench(args):
    cfg = _config(args)
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    n_train = args.train_size if args.train_size is not None else min(200, args.l // 2)
    try:
        ds.make_mask_schedule(args.l, args.k, args.ratios, 0)
        specs = [ds.SyntheticSpec(args.l, args.k, args.d, args.sigma, args.seed + i, n_train)
                 for i in range(args.seeds)]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rows = []
    for spec in specs:
        try:
            kernels, split = ds.synth_kernel_set(spec, lam=cfg.lam)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        sched = ds.make_mask_schedule(spec.ell, spec.K, args.ratios, spec.seed)
        for r in sched.ratios:
            masked = sched.apply(kernels, r)
            for method in args.methods:
                dist, roc = bench_cell(kernels, masked, split, method, cfg, args.c)
                rows.append([method, _num(r), spec.seed, _num(dist), _num(roc)])
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "ratio", "seed", "distance", "roc_model"])
        w.writerows(rows)
    print(json.dumps({"rows": len(rows), "out": str(args.out)}))
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "mask": cmd_mask,
    "complete": cmd_complete,
    "eval": cmd_eval,
    "bench": cmd_bench,
}


def _fail(exc, code, as_json):
    if as_json:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc),
                                     "exit_code": code}) + "\n")
    else:
        sys.stderr.write(f"mkmc: error: {exc}\n")
    return code


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    as_json = "--json" in argv
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail(exc, 1, as_json)
    except (NumericalFailure, ConvergenceError, NotPositiveDefinite, QSingular) as exc:
        return _fail(exc, 2, as_json)
    except (MKMCError, ValueError, OSError) as exc:
        return _fail(exc, 1, as_json)


if __name__ == "__main__":
    sys.exit(main())
