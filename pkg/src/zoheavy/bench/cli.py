"""``zo-bench`` command line: run, sweep, validate, report.

Exit codes: 0 success, 2 validation failure, 3 runtime error.
"""
from __future__ import annotations

import argparse
import sys

from ..errors import ConfigurationError
from .config import ExperimentConfig, load_config, validate
from .runner import report, run_experiment

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


def _checkpoints(text: str):
    if text in ("log", "final"):
        return text
    try:
        pts = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'log', 'final' or comma-separated integers, got {text!r}")
    return pts


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="zo-bench", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--trials", type=int)
        sp.add_argument("--out")
        sp.add_argument("--threads", type=int)
        sp.add_argument("--checkpoints", type=_checkpoints)

    common(sub.add_parser("run", help="run the configured experiment"))
    common(sub.add_parser("sweep", help="run the [sweep] grid over T, Delta or kappa"))
    sub.add_parser("validate", help="parse and validate a config").add_argument("config")
    sub.add_parser("report", help="summarise the CSVs in a results directory").add_argument("results_dir")
    return p


def _override(cfg: ExperimentConfig, args) -> ExperimentConfig:
    changes = {}
    for key in ("seed", "trials", "out", "threads", "checkpoints"):
        val = getattr(args, key, None)
        if val is not None:
            changes[key] = val
    return cfg.replace(**changes) if changes else cfg


def _fmt(v) -> str:
    return "-" if v is None else f"{v:.6g}"


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID

    if args.command == "report":
        try:
            rows = report(args.results_dir)
        except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        print("file\tT\ttrials\tmean\tmedian\tq90\tq99")
        for r in rows:
            print(f"{r['file']}\t{r['T']}\t{r['trials']}\t{_fmt(r['mean'])}\t{_fmt(r['median'])}\t"
                  f"{_fmt(r['q90'])}\t{_fmt(r['q99'])}")
        fits = {r["file"]: r.get("fit") for r in rows if r.get("fit")}
        for f in {id(v): v for v in fits.values()}.values():
            print(f"slope {f['slope']:.4f} +/- {f['half_width']:.4f} ({f['n_used']} points)")
        return EXIT_OK

    try:
        cfg = _override(load_config(args.config), args)
        validate(cfg)
        if args.command == "sweep" and cfg.sweep is None:
            raise ConfigurationError(f"{args.config}: sweep needs a [sweep] table")
    except ConfigurationError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.command == "validate":
        print(f"{args.config}: ok ({cfg.config_hash()})")
        return EXIT_OK
    if args.command == "run" and cfg.sweep is not None:
        cfg = cfg.replace(sweep=None)
    try:
        res = run_experiment(cfg, threads=args.threads)
    except ConfigurationError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for row in res.rows:
        print(f"{row.label}\ttrials={row.trials}\tmedian={_fmt(row.median)}\tq99={_fmt(row.q99)}")
    if res.fit is not None:
        print(f"slope {res.fit.slope:.4f} +/- {res.fit.half_width:.4f}")
    if res.floor_fit is not None:
        print(f"floor slope {res.floor_fit.slope:.4f} +/- {res.floor_fit.half_width:.4f}")
    for p in res.paths:
        print(f"wrote {p}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
