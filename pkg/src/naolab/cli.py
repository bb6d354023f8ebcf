"""Command-line experiment runner.

Exit codes: 0 success, 1 failed oracle, 2 configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import shutil
import sys
import tempfile
from contextlib import contextmanager
from importlib import resources

from .errors import ConfigurationError, NumericError

EXIT_OK, EXIT_ORACLE, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("naolab")


def bundled_config(name):
    """Path of a config shipped with the package (``name`` without ``.cfg``)."""
    ref = resources.files("naolab") / "configs" / f"{name}.cfg"
    if not ref.is_file():
        raise ConfigurationError(f"no bundled config named {name!r}")
    return str(ref)


def _resolve_config(value):
    if value is None:
        raise ConfigurationError("--config is required for this command")
    if os.path.exists(value):
        return value
    return bundled_config(value)


def _load(args):
    from .config import load_config, with_seed
    cfg = load_config(_resolve_config(args.config))
    if args.seed is not None:
        cfg = with_seed(cfg, args.seed)
    return cfg


@contextmanager
def atomic_output(out, overwrite):
    """Yield a staging directory that replaces ``out`` only on success."""
    out = os.path.abspath(out)
    if os.path.isdir(out) and os.listdir(out) and not overwrite:
        raise ConfigurationError(f"output directory {out} is not empty (use --overwrite)")
    parent = os.path.dirname(out)
    os.makedirs(parent, exist_ok=True)
    stage = tempfile.mkdtemp(prefix=".naolab-", dir=parent)
    try:
        yield stage
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    if os.path.exists(out):
        shutil.rmtree(out)
    os.replace(stage, out)


def _set_threads(n):
    if n is None:
        env = os.environ.get("NAOLAB_THREADS")
        n = int(env) if env else None
    if n is None:
        return None
    if n < 1:
        raise ConfigurationError(f"--threads must be positive, got {n}")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def _meta_all(directory, cfg, command):
    from .experiment import write_meta
    for root, _, files in os.walk(directory):
        for f in sorted(files):
            if not f.endswith(".meta.json"):
                write_meta(os.path.join(root, f), cfg, command)


# ---------------------------------------------------------------- commands

def cmd_gen_data(args):
    from .experiment import build_data, save_data
    cfg = _load(args)
    if args.dry_run:
        print(f"config {cfg.name} ok ({cfg.digest[:12]})")
        return EXIT_OK
    with atomic_output(args.out, args.overwrite) as stage:
        data = build_data(cfg)
        paths = save_data(data, stage)
        _meta_all(stage, cfg, "gen-data")
    print(f"wrote {len(paths)} datasets to {args.out}")
    return EXIT_OK


def _data_for(cfg, args):
    from .experiment import build_data, load_data
    if getattr(args, "data", None):
        return load_data(cfg, args.data)
    return build_data(cfg)


def cmd_train(args):
    from .experiment import train_variants
    cfg = _load(args)
    if args.dry_run:
        print(f"config {cfg.name} ok ({cfg.digest[:12]}); variants: {', '.join(cfg.variants)}")
        return EXIT_OK
    with atomic_output(args.out, args.overwrite) as stage:
        data = _data_for(cfg, args)
        ckpt = os.path.join(stage, "checkpoints")
        os.makedirs(ckpt)
        train_variants(cfg, data, stage, checkpoint_dir=ckpt)
        _meta_all(stage, cfg, "train")
    print(f"trained {', '.join(cfg.variants)} into {args.out}")
    return EXIT_OK


def cmd_eval(args):
    from .experiment import evaluate_models, load_model
    cfg = _load(args)
    if not args.models:
        raise ConfigurationError("eval needs --models DIR (the output of train)")
    if args.dry_run:
        print(f"config {cfg.name} ok ({cfg.digest[:12]})")
        return EXIT_OK
    models = {}
    for v in cfg.variants:
        p = os.path.join(args.models, f"{v}.ckpt")
        if not os.path.exists(p):
            raise ConfigurationError(f"missing checkpoint {p}")
        models[v] = load_model(p)
    with atomic_output(args.out, args.overwrite) as stage:
        data = _data_for(cfg, args)
        evaluate_models(cfg, data, models, stage)
        _meta_all(stage, cfg, "eval")
    _print_results(os.path.join(args.out, "results.csv"))
    return EXIT_OK


def cmd_run(args):
    from .experiment import build_data, evaluate_models, save_data, train_variants
    cfg = _load(args)
    if args.dry_run:
        print(f"config {cfg.name} ok ({cfg.digest[:12]}); variants: {', '.join(cfg.variants)}")
        return EXIT_OK
    with atomic_output(args.out, args.overwrite) as stage:
        data = build_data(cfg)
        save_data(data, os.path.join(stage, "data"))
        ckpt = os.path.join(stage, "checkpoints")
        os.makedirs(ckpt)
        trained = train_variants(cfg, data, os.path.join(stage, "models"), checkpoint_dir=ckpt)
        evaluate_models(cfg, data, {v: p for v, (p, _) in trained.items()}, stage)
        _meta_all(stage, cfg, "run")
    _print_results(os.path.join(args.out, "results.csv"))
    return EXIT_OK


def _print_results(path):
    with open(path) as fh:
        from .experiment import markdown_table
        print(markdown_table(list(csv.DictReader(fh))), end="")


def cmd_report(args):
    from .experiment import markdown_table
    if not args.results:
        raise ConfigurationError("report needs at least one results.csv")
    rows = []
    for p in args.results:
        if not os.path.exists(p):
            raise ConfigurationError(f"missing results file {p}")
        with open(p) as fh:
            rows.extend(csv.DictReader(fh))
    table = markdown_table(rows)
    if args.dry_run:
        return EXIT_OK
    if args.out:
        with atomic_output(args.out, args.overwrite) as stage:
            with open(os.path.join(stage, "table.md"), "w") as fh:
                fh.write(table)
    print(table, end="")
    return EXIT_OK


def cmd_oracle(args):
    from .oracles import SUITES, run_suite
    names = list(SUITES) if args.suite == "all" else [args.suite]
    for n in names:
        if n not in SUITES:
            raise ConfigurationError(f"unknown suite {n!r} (choose from {', '.join(SUITES)}, all)")
    if args.dry_run:
        return EXIT_OK
    failed = False
    for n in names:
        res = run_suite(n)
        print(res.line())
        if not res.passed:
            print(f"  margin {res.margin:.3e}")
            failed = True
    return EXIT_ORACLE if failed else EXIT_OK


def _int_list(text):
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated integer list: {text!r}") from exc
    if not vals:
        raise argparse.ArgumentTypeError("list must be nonempty")
    return vals


def cmd_bench(args):
    from .bench import core_benchmark, scaling_benchmark, write_scaling_csv
    if args.dry_run:
        return EXIT_OK
    rows, summary = scaling_benchmark(args.n_list, args.d_list, args.repeats, args.fixed_d,
                                      args.fixed_n)
    print("N,d,seconds")
    for r in rows:
        print(f"{r.n},{r.d},{r.seconds:.6e}")
    print(f"N exponent {summary['n_exponent']:.3f}; N doubling ratios "
          + ", ".join(f"{x:.2f}" for x in summary["n_ratios"]))
    print(f"d exponent {summary['d_exponent']:.3f}; d doubling ratios "
          + ", ".join(f"{x:.2f}" for x in summary["d_ratios"]))
    core = core_benchmark(repeats=args.repeats)
    for name, sec in core.items():
        print(f"core backend {name}: {sec * 1e3:.3f} ms per radial-operator call")
    if args.out:
        with atomic_output(args.out, args.overwrite) as stage:
            write_scaling_csv(os.path.join(stage, "scaling.csv"), rows)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="naolab", description="Nonlocal attention operator experiments")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True, out_required=False):
        if config:
            sp.add_argument("--config", help="config file or bundled config name")
        sp.add_argument("--out", required=out_required, help="output directory")
        sp.add_argument("--seed", type=int, help="override every seed in the config")
        sp.add_argument("--overwrite", action="store_true", help="replace a populated --out")
        sp.add_argument("--dry-run", action="store_true", help="validate only, write nothing")
        sp.add_argument("--threads", type=int, help="BLAS threads (default: NAOLAB_THREADS)")

    sp = sub.add_parser("gen-data", help="generate token datasets")
    common(sp, out_required=True)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="train the configured variants")
    common(sp, out_required=True)
    sp.add_argument("--data", help="directory written by gen-data (default: regenerate)")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate trained models")
    common(sp, out_required=True)
    sp.add_argument("--models", help="directory written by train")
    sp.add_argument("--data", help="directory written by gen-data (default: regenerate)")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("run", help="gen-data, train and eval in one go")
    common(sp, out_required=True)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("report", help="merge results files into a Markdown table")
    common(sp, config=False)
    sp.add_argument("results", nargs="*", help="results.csv files")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("oracle", help="run a theory oracle suite")
    common(sp, config=False)
    sp.add_argument("--suite", default="all", help="suite name or 'all'")
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("bench", help="forward+backward scaling benchmark")
    common(sp, config=False)
    sp.add_argument("--n-list", type=_int_list, default=[256, 512, 1024, 2048])
    sp.add_argument("--d-list", type=_int_list, default=[16, 32, 64, 128])
    sp.add_argument("--fixed-d", type=int, default=32, help="d used along the N sweep")
    sp.add_argument("--fixed-n", type=int, default=512, help="N used along the d sweep")
    sp.add_argument("--repeats", type=int, default=3)
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        limiter = _set_threads(args.threads)
        try:
            return args.func(args)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except ConfigurationError as exc:
        print(f"naolab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"naolab: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
