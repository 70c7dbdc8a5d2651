"""Multi-trial execution, CSV/JSON persistence and summaries."""
from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..algorithms import RunRecord, make_restart_plan, make_schedule, zo_clip_smd, zo_restarts, zo_rsmd
from ..errors import ConfigurationError, DomainError
from ..geometry import compute_constants
from ..randomness import SeedStream
from .config import Experiment, ExperimentConfig, apply_sweep, validate
from .stats import MIN_TRIALS_TAIL, RateFit, fit_loglog, fit_rate, nearest_rank

SCHEMA_VERSION = 1
CSV_HEADER = ("config_hash", "trial", "iter", "queries", "subopt", "wall_ms")
# trials are batched in fixed-size chunks so results do not depend on the worker count
CHUNK = 64


@dataclass
class SummaryRow:
    config_hash: str
    label: str
    T: int
    trials: int
    mean: float
    median: float
    q90: float | None
    q99: float | None
    queries: int
    slope: float | None = None
    slope_half_width: float | None = None
    noise_floor: float | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    labels: list
    records: dict
    rows: list
    fit: RateFit | None = None
    floor_fit: RateFit | None = None
    paths: list = field(default_factory=list)
    flags: dict = field(default_factory=dict)


def resolve_threads(requested: int | None, default: int = 1) -> int:
    """``ZO_THREADS`` wins over the argument, which wins over ``default``."""
    env = os.environ.get("ZO_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise ConfigurationError(f"ZO_THREADS must be a positive integer, got {env!r}") from exc
        if n < 1:
            raise ConfigurationError(f"ZO_THREADS must be a positive integer, got {env!r}")
        return n
    return default if requested is None else int(requested)


def run_trials(exp: Experiment, T: int, trials: int, seed: int, threads: int = 1,
               checkpoints="log") -> list[RunRecord]:
    """Run ``trials`` independent trials; trial ``i`` draws from ``SeedStream(seed, i)``."""
    cfg = exp.config
    ac = cfg.algorithm
    fs = exp.problem.feasible_set
    x_star = exp.problem.x_star if ac.use_x_star else None
    constants = compute_constants(exp.setup, fs, exp.params, exp.regime, x_star=x_star)
    eps = ac.epsilon if ac.tau == "epsilon" else None

    if ac.name == "restarts":
        plan = make_restart_plan(exp.regime, constants, exp.params, exp.problem.growth, ac.epsilon,
                                 refine_sigma=ac.refine_sigma)

        def job(streams):
            return zo_restarts(exp.oracle, exp.setup, fs, plan, streams)
    else:
        sched = make_schedule(exp.regime, constants, exp.params, max(T, 1), epsilon=eps)
        if T == 0:
            sched = dataclasses.replace(sched, T=0)
        cp = checkpoints

        def job(streams):
            if ac.name == "rsmd":
                return zo_rsmd(exp.oracle, exp.setup, fs, sched, streams, checkpoints=cp)
            return zo_clip_smd(exp.oracle, exp.setup, fs, sched, streams, checkpoints=cp,
                               clipping=ac.name == "clip-smd")

    chunks = [[SeedStream(seed, i) for i in range(s, min(s + CHUNK, trials))] for s in range(0, trials, CHUNK)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(job, chunks))
    else:
        parts = [job(c) for c in chunks]
    return [r for part in parts for r in part]


def summarize(config_hash: str, label: str, records: list[RunRecord]) -> SummaryRow:
    finals = np.array([r.subopt[-1] for r in records])
    n = len(records)
    T = int(records[0].iters[-1])
    tail = n >= MIN_TRIALS_TAIL
    return SummaryRow(
        config_hash=config_hash, label=label, T=T, trials=n, mean=float(finals.mean()),
        median=nearest_rank(finals, 0.5),
        q90=nearest_rank(finals, 0.9) if tail else None,
        q99=nearest_rank(finals, 0.99) if tail else None,
        queries=int(sum(int(r.queries[-1]) for r in records)),
    )


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_csv(path: Path, config_hash: str, records: list[RunRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for trial, rec in enumerate(records):
            ms = rec.checkpoint_ms if rec.checkpoint_ms is not None else np.full(len(rec.iters), rec.wall_ms)
            for it, q, s, t in zip(rec.iters, rec.queries, rec.subopt, ms):
                w.writerow((config_hash, trial, int(it), int(q), _fmt(s), _fmt(t)))


def read_csv(path: str | Path) -> dict:
    """Columns of a results CSV as numpy arrays (``config_hash`` as a list of str)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise DomainError(f"{path}: not a results file (header mismatch)")
    body = rows[1:]
    return {
        "config_hash": [r[0] for r in body],
        "trial": np.array([int(r[1]) for r in body], dtype=np.int64),
        "iter": np.array([int(r[2]) for r in body], dtype=np.int64),
        "queries": np.array([int(r[3]) for r in body], dtype=np.int64),
        "subopt": np.array([float(r[4]) for r in body]),
        "wall_ms": np.array([float(r[5]) for r in body]),
    }


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    return v


def _fit_dict(fit: RateFit | None):
    return None if fit is None else dataclasses.asdict(fit)


def _grid(cfg: ExperimentConfig) -> list[tuple[str, ExperimentConfig]]:
    if cfg.sweep is not None:
        p = cfg.sweep.parameter
        return [(f"{p}={v}", apply_sweep(cfg, v)) for v in cfg.sweep.values]
    T = cfg.algorithm.T
    if isinstance(T, list):
        out = []
        for t in T:
            c = cfg.replace()
            c.algorithm.T = int(t)
            out.append((f"T={t}", c))
        return out
    if cfg.algorithm.name == "restarts":
        return [("restarts", cfg)]
    return [(f"T={T}", cfg)]


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None, threads: int | None = None,
                   write: bool = True) -> ExperimentResult:
    """Validate, run every grid point, and write one CSV per point plus a JSON summary.

    A grid comes from ``[sweep]`` or from a list-valued ``algorithm.T``.  When
    ``T`` varies over at least four points the median suboptimality is fitted
    against ``T``; a ``Delta`` sweep fits the final-error floor against ``Delta``.
    """
    validate(cfg)
    n_threads = resolve_threads(threads, cfg.threads)
    chash = cfg.config_hash()
    labels, records, rows = [], {}, []
    flags = {}
    for label, sub in _grid(cfg):
        exp = validate(sub)
        T = int(sub.algorithm.T)
        recs = run_trials(exp, T, cfg.trials, cfg.seed, n_threads, sub.checkpoints)
        labels.append(label)
        records[label] = recs
        rows.append(summarize(chash, label, recs))
        if any(r.flags.get("noise_above_threshold") for r in recs):
            flags.setdefault("noise_above_threshold", []).append(label)

    result = ExperimentResult(cfg, labels, records, rows, flags=flags)
    param = cfg.sweep.parameter if cfg.sweep is not None else ("T" if isinstance(cfg.algorithm.T, list) else None)
    if param == "T" and len(rows) >= 4:
        try:
            result.fit = fit_rate(rows, "median")
        except DomainError as exc:
            flags["fit_error"] = str(exc)
        if result.fit is not None:
            for r in rows:
                r.slope, r.slope_half_width = result.fit.slope, result.fit.half_width
    if param == "Delta":
        deltas = [float(v) for v in cfg.sweep.values]
        for r in rows:
            r.noise_floor = r.median
        pos = [(d, r.median) for d, r in zip(deltas, rows) if d > 0]
        if len(pos) >= 3:
            try:
                result.floor_fit = fit_loglog([p[0] for p in pos], [p[1] for p in pos], min_points=3)
            except DomainError as exc:
                flags["floor_fit_error"] = str(exc)

    if write:
        out = Path(out_dir if out_dir is not None else cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        for label in labels:
            path = out / f"{cfg.name}-{label.replace('=', '')}.csv"
            write_csv(path, chash, records[label])
            result.paths.append(path)
        summary = {
            "schema_version": SCHEMA_VERSION,
            "name": cfg.name,
            "config_hash": chash,
            "config": cfg.to_dict(),
            "rows": [r.to_dict() for r in rows],
            "fit": _fit_dict(result.fit),
            "floor_fit": _fit_dict(result.floor_fit),
            "flags": flags,
            "csv": [p.name for p in result.paths],
            "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        }
        spath = out / f"{cfg.name}-summary.json"
        spath.write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        result.paths.append(spath)
    return result


def report(results_dir: str | Path) -> list[dict]:
    """Re-derive final-iteration statistics from every CSV in ``results_dir``.

    Returns one dict per CSV with the file name, config hash, final ``T``, trial
    count, mean/median and (with >= 50 trials) the 0.9/0.99 quantiles, plus any
    fit stored in a matching summary file.
    """
    root = Path(results_dir)
    if not root.is_dir():
        raise DomainError(f"{root} is not a directory")
    out = []
    for path in sorted(root.glob("*.csv")):
        data = read_csv(path)
        if len(data["trial"]) == 0:
            continue
        finals = {}
        for t, it, s in zip(data["trial"], data["iter"], data["subopt"]):
            if int(t) not in finals or it >= finals[int(t)][0]:
                finals[int(t)] = (int(it), float(s))
        vals = [v[1] for v in finals.values()]
        n = len(vals)
        out.append({
            "file": path.name, "config_hash": data["config_hash"][0],
            "T": max(v[0] for v in finals.values()), "trials": n,
            "mean": float(np.mean(vals)), "median": nearest_rank(vals, 0.5),
            "q90": nearest_rank(vals, 0.9) if n >= MIN_TRIALS_TAIL else None,
            "q99": nearest_rank(vals, 0.99) if n >= MIN_TRIALS_TAIL else None,
        })
    for spath in sorted(root.glob("*-summary.json")):
        summ = json.loads(spath.read_text(encoding="utf-8"))
        if summ.get("schema_version") != SCHEMA_VERSION:
            raise DomainError(f"{spath}: unsupported schema version {summ.get('schema_version')}")
        for entry in out:
            if entry["file"] in summ.get("csv", []):
                entry["fit"] = summ.get("fit")
                entry["floor_fit"] = summ.get("floor_fit")
    return out
