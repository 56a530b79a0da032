"""Command-line front end: ``gradridge {sample,train,eval,sweep}``.

Exit codes: 0 success, 2 input error, 3 compatibility error, 4 numerical
failure. All numbers in CSV output use ``%.17g`` formatting.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from ._rng import make_rng
from .bench import BENCHMARKS, get_benchmark, sample_benchmark
from .errors import CompatibilityError, GradRidgeError, InputError, NumericalError
from .featuremap import SolverOptions
from .pipeline import CvConfig, SurrogateModel, cv_train, evaluate, trace_csv
from .sample import load_sample, save_sample

logger = logging.getLogger("gradridge")

SWEEP_HEADER = ("bench", "m", "N", "repeat", "mse", "j_hat", "card_lambda", "card_gamma")
VALIDATION_STREAM = 104729  # spawn key separating validation draws from training draws


def _int_list(text):
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("list must not be empty")
    return values


def _add_source(p, required=True):
    src = p.add_mutually_exclusive_group(required=required)
    src.add_argument("--bench", choices=sorted(BENCHMARKS), help="built-in benchmark")
    src.add_argument("--sample", type=Path, help="sample file (JSON or binary)")


def _add_learning(p):
    p.add_argument("--theta", type=float, default=0.3, help="bulk-chasing fraction (default 0.3)")
    p.add_argument("--folds", type=int, default=5, help="number of CV folds (default 5)")
    p.add_argument("--kmax", type=int, default=60, help="max feature-map enrichments (default 60)")
    p.add_argument("--lmax", type=int, default=200, help="max profile enrichments (default 200)")
    p.add_argument("--no-gradient-profile", action="store_true",
                   help="fit the profile from values only")
    p.add_argument("--monitor", choices=("value", "gradient"), default="value",
                   help="profile CV loss (default value)")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads; 1 gives the sequential deterministic mode")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gradridge",
        description="Learn composed surrogates u ~ f(g(x)) from values and gradients. "
                    "Benchmarks: isotropic, borehole, composed16 (the FEM bridge model is not included).",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="draw a benchmark sample and write it to a file")
    p.add_argument("--bench", choices=sorted(BENCHMARKS), required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, required=True, help=".json, or .bin/.grs for binary")

    p = sub.add_parser("train", help="cross-validated training of f o g")
    _add_source(p)
    p.add_argument("--n", type=int, help="sample size for --bench")
    p.add_argument("--m", type=int, required=True, help="intermediate dimension")
    p.add_argument("--seed", type=int)
    _add_learning(p)
    p.add_argument("--out", type=Path, help="model JSON path")
    p.add_argument("--trace", type=Path, help="trace CSV path")
    val = p.add_mutually_exclusive_group()
    val.add_argument("--validate", type=Path, help="validation sample file")
    val.add_argument("--validate-n", type=int, help="fresh benchmark validation sample size")

    p = sub.add_parser("eval", help="validation metrics of a trained model")
    p.add_argument("--model", type=Path, required=True)
    val = p.add_mutually_exclusive_group(required=True)
    val.add_argument("--validate", "--sample", dest="validate", type=Path, help="validation sample file")
    val.add_argument("--bench", choices=sorted(BENCHMARKS), help="draw validation points from a benchmark")
    p.add_argument("--validate-n", "--n", dest="validate_n", type=int, default=1000,
                   help="benchmark validation size (default 1000)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, help="metrics JSON path")

    p = sub.add_parser("sweep", help="benchmark sweep over m and N with repeats")
    p.add_argument("--bench", choices=sorted(BENCHMARKS), required=True)
    ms = p.add_mutually_exclusive_group(required=True)
    ms.add_argument("--m", type=int)
    ms.add_argument("--m-list", type=_int_list)
    ns = p.add_mutually_exclusive_group(required=True)
    ns.add_argument("--n", type=int)
    ns.add_argument("--n-list", type=_int_list)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("--validate-n", type=int, default=1000)
    _add_learning(p)
    p.add_argument("--out", type=Path, help="CSV path (stdout if omitted)")
    return parser


def resolve_seed(seed):
    """Explicit ``--seed``, else ``GRADRIDGE_SEED``, else 0."""
    if seed is not None:
        return seed
    env = os.environ.get("GRADRIDGE_SEED")
    if env is None or env.strip() == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise InputError(f"GRADRIDGE_SEED must be an integer, got {env!r}") from None


def _config(args, m, seed, threads=None):
    return CvConfig(
        m=m, k_max=args.kmax, l_max=args.lmax, theta=args.theta, folds=args.folds, seed=seed,
        use_gradients=not args.no_gradient_profile, monitor=args.monitor,
        threads=args.threads if threads is None else threads, solver=SolverOptions(),
    )


def _write(path, text):
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc}") from exc


def _fmt(x):
    return format(float(x), ".17g")


def cmd_sample(args):
    seed = resolve_seed(args.seed)
    sample = sample_benchmark(get_benchmark(args.bench), args.n, seed)
    try:
        save_sample(sample, args.out)
    except OSError as exc:
        raise InputError(f"cannot write {args.out}: {exc}") from exc
    return 0


def cmd_train(args):
    seed = resolve_seed(args.seed)
    bench = None
    if args.bench:
        if args.n is None:
            raise InputError("--bench needs --n")
        bench = get_benchmark(args.bench)
        sample = sample_benchmark(bench, args.n, seed)
    else:
        sample = load_sample(args.sample)
    if args.validate_n is not None and bench is None:
        raise InputError("--validate-n needs --bench")

    model = cv_train(sample, _config(args, args.m, seed))
    md = model.metadata
    summary = {
        "k_star": md["k_star"], "l_star": md["l_star"],
        "card_lambda": md["card_lambda"], "card_gamma": md["card_gamma"],
        "train_j_hat": md["train_j_hat"], "train_mse": md["train_mse"],
        "cv_feature_loss": md["cv_feature_loss"][md["k_star"]],
        "cv_profile_loss": md["cv_profile_loss"][md["l_star"]],
    }
    if args.validate is not None or args.validate_n is not None:
        if args.validate is not None:
            validation = load_sample(args.validate)
        else:
            validation = sample_benchmark(bench, args.validate_n, make_rng(seed, VALIDATION_STREAM))
        summary["validation"] = evaluate(model, validation)
    if args.out:
        _write(args.out, model.to_json())
    if args.trace:
        _write(args.trace, trace_csv(model.trace))
    print(json.dumps(summary, indent=1))
    return 0


def _load_model(path):
    try:
        text = Path(path).read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise InputError(f"cannot read model file {path}: {exc}") from exc
    return SurrogateModel.from_json(text)


def cmd_eval(args):
    model = _load_model(args.model)
    if args.validate is not None:
        validation = load_sample(args.validate)
    else:
        bench = get_benchmark(args.bench)
        if bench.d != model.d:
            raise CompatibilityError(f"model has d={model.d}, benchmark {bench.name} has d={bench.d}")
        validation = sample_benchmark(bench, args.validate_n, make_rng(resolve_seed(args.seed), VALIDATION_STREAM))
    metrics = evaluate(model, validation)
    text = json.dumps(metrics, indent=1) + "\n"
    if args.out:
        _write(args.out, text)
    sys.stdout.write(text)
    return 0


def sweep_rows(bench_name, m_list, n_list, repeats, seed, make_config, validate_n=1000, threads=1):
    """One result row per ``(m, N, repeat)``; failed cells give NaN metrics.

    The training sample of a cell depends on ``(seed, N, repeat)`` only, so
    every ``m`` sees identical data.
    """
    bench = get_benchmark(bench_name)
    validation = sample_benchmark(bench, validate_n, make_rng(seed, VALIDATION_STREAM))
    cells = [(m, n, r) for n in n_list for r in range(repeats) for m in m_list]

    def run(cell):
        m, n, r = cell
        try:
            sample = sample_benchmark(bench, n, make_rng(seed, n, r))
            model = cv_train(sample, make_config(m, seed + r))
            metrics = evaluate(model, validation)
            md = model.metadata
            return (bench_name, m, n, r, metrics["mse"], metrics["j_hat"], md["card_lambda"], md["card_gamma"])
        except GradRidgeError as exc:
            logger.warning("sweep cell m=%d N=%d repeat=%d failed: %s", m, n, r, exc)
            return (bench_name, m, n, r, math.nan, math.nan, "", "")

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, cells))
    return [run(c) for c in cells]


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    for row in rows:
        writer.writerow([*row[:4], _fmt(row[4]), _fmt(row[5]), *row[6:]])
    return buf.getvalue()


def cmd_sweep(args):
    seed = resolve_seed(args.seed)
    m_list = args.m_list or [args.m]
    n_list = args.n_list or [args.n]
    if args.repeats < 1:
        raise InputError("--repeats must be positive")
    rows = sweep_rows(args.bench, m_list, n_list, args.repeats, seed,
                      lambda m, s: _config(args, m, s, threads=1),
                      validate_n=args.validate_n, threads=args.threads)
    text = sweep_csv(rows)
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


COMMANDS = {"sample": cmd_sample, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except GradRidgeError as exc:
        print(f"gradridge: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
