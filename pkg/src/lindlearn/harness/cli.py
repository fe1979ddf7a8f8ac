"""Command line entry point ``lindlearn``.

Exit codes: 0 success, 1 verification failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys


def _set_threads(n):
    if n is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ[var] = str(n)
    try:
        import numba

        numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))
    except ImportError:
        pass


def _config(args):
    from .config import ConfigError, load_config, override_seed, parse_config

    if not args.config:
        raise ConfigError("--config is required for this command")
    if args.seed is None:
        return load_config(args.config)
    try:
        with open(args.config) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    return parse_config(override_seed(doc, args.seed))


def _print_summary(summary):
    print(json.dumps({k: v for k, v in summary.items() if k != "config"}, indent=1, sort_keys=True))


def cmd_simulate(args):
    from .experiments import run_simulation

    cfg = _config(args)
    if cfg.simulate is None:
        from .config import ConfigError

        raise ConfigError("simulate command needs a 'simulate' block")
    _print_summary(run_simulation(cfg, args.out).summary)
    return 0


def cmd_generate(args):
    from .data import generate_data, write_dataset

    cfg = _config(args)
    ds = generate_data(cfg)
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "dataset.csv")
    write_dataset(ds, path)
    print(path)
    return 0


def cmd_learn(args):
    from .experiments import run_experiment

    cfg = _config(args)
    art = run_experiment(cfg, args.out, data_path=args.data, log=None if args.quiet else print)
    _print_summary(art.summary)
    return 0


def cmd_sse(args):
    from .experiments import run_sse

    cfg = _config(args)
    if cfg.sse is None:
        from .config import ConfigError

        raise ConfigError("sse command needs an 'sse' block")
    _print_summary(run_sse(cfg, args.out, threads=args.threads or 1).summary)
    return 0


def cmd_verify(args):
    from .config import EXIT_OK, EXIT_VERIFY_FAILED
    from .verify import verify_suite, write_report

    checks = verify_suite(args.scope)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name} = {c.value:.4g} (accepted [{c.low:g}, {c.high:g}])")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_report(checks, os.path.join(args.out, "verify_report.csv"))
    return EXIT_OK if all(c.passed for c in checks) else EXIT_VERIFY_FAILED


def cmd_reproduce(args):
    from .experiments import reproduce

    arts = reproduce(args.figure, args.out, max_iter=args.max_iter, seed=args.seed, log=None if args.quiet else print)
    for a in arts:
        _print_summary(a.summary)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="lindlearn", description="Lindblad simulation and parameter learning")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="override all seeds (true model s, data s+1, theta0 s+2)")
    common.add_argument("--threads", type=int, help="worker threads")
    common.add_argument("--quiet", action="store_true", help="suppress per-iteration logging")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="expectation trajectories").set_defaults(func=cmd_simulate)
    sub.add_parser("generate-data", parents=[common], help="synthetic measurement dataset").set_defaults(func=cmd_generate)
    learn = sub.add_parser("learn", parents=[common], help="Levenberg-Marquardt parameter identification")
    learn.add_argument("--data", help="existing dataset file (default: generate from config)")
    learn.set_defaults(func=cmd_learn)
    sub.add_parser("sse", parents=[common], help="Monte Carlo unraveling").set_defaults(func=cmd_sse)
    ver = sub.add_parser("verify", parents=[common], help="numerical self-checks")
    ver.add_argument("--scope", choices=("quick", "full"), default="quick")
    ver.set_defaults(func=cmd_verify)
    rep = sub.add_parser("reproduce", parents=[common], help="canned figure configurations")
    rep.add_argument("figure", help="fig1 ... fig6")
    rep.add_argument("--max-iter", type=int, help="cap LM iterations")
    rep.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    _set_threads(args.threads)
    from .config import EXIT_CONFIG_ERROR, ConfigError

    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except KeyError as exc:
        if args.command == "reproduce":
            print(f"config error: {exc.args[0]}", file=sys.stderr)
            return EXIT_CONFIG_ERROR
        raise


if __name__ == "__main__":
    sys.exit(main())
