"""Log-log rate fits and nearest-rank quantiles."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from ..errors import DomainError


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    half_width: float
    n_used: int
    n_excluded: int

    def contains(self, target: float, tol: float) -> bool:
        return abs(self.slope - target) <= tol


def fit_loglog(x, y, min_points: int = 4, min_decades: float = 0.0) -> RateFit:
    """Least squares of ``log y`` on ``log x``.

    Non-positive ``y`` are dropped and counted.  ``half_width`` is the 95%
    t-interval half-width of the slope (``inf`` with exactly two points).
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if x.shape != y.shape:
        raise DomainError("x and y must have equal length")
    keep = (y > 0) & (x > 0) & np.isfinite(y)
    excluded = int(np.sum(~keep))
    x, y = x[keep], y[keep]
    if len(x) < min_points:
        raise DomainError(
            f"rate fit needs at least {min_points} positive points, got {len(x)} ({excluded} excluded)"
        )
    lx, ly = np.log(x), np.log(y)
    if min_decades > 0 and (lx.max() - lx.min()) / math.log(10.0) < min_decades - 1e-9:
        raise DomainError(f"rate fit grid must span at least {min_decades:g} decades")
    n = len(x)
    slope, intercept = np.polyfit(lx, ly, 1)
    if n > 2:
        resid = ly - (slope * lx + intercept)
        s2 = float(resid @ resid) / (n - 2)
        se = math.sqrt(s2 / float(np.sum((lx - lx.mean()) ** 2)))
        hw = float(stats.t.ppf(0.975, n - 2)) * se
    else:
        hw = math.inf
    return RateFit(float(slope), float(intercept), hw, n, excluded)


def fit_rate(rows: Sequence, statistic: str = "median") -> RateFit:
    """Slope of ``statistic`` suboptimality against ``T`` over summary rows.

    Needs at least four usable rows spanning two decades of ``T``.
    """
    if statistic not in ("mean", "median"):
        raise DomainError(f"statistic must be 'mean' or 'median', got {statistic!r}")
    T = [r.T for r in rows]
    vals = [getattr(r, statistic) for r in rows]
    return fit_loglog(T, vals, min_points=4, min_decades=2.0)


def nearest_rank(values, level: float) -> float:
    """Order statistic ``sorted[ceil(level * n) - 1]`` (no interpolation)."""
    v = np.sort(np.asarray(values, float))
    n = len(v)
    if n == 0:
        raise DomainError("no values")
    if not 0.0 < level <= 1.0:
        raise DomainError(f"quantile level must lie in (0, 1], got {level}")
    k = max(1, math.ceil(level * n - 1e-12))
    return float(v[k - 1])


MIN_TRIALS_TAIL = 50


def quantile_report(records, levels: Sequence[float]) -> dict:
    """Nearest-rank quantiles of suboptimality per checkpoint.

    ``records`` is a list of run records sharing one checkpoint grid, or a
    ``(trials, checkpoints)`` array.  Levels >= 0.9 need at least 50 trials.
    Returns ``{level: array over checkpoints}``.
    """
    if isinstance(records, np.ndarray):
        data = np.atleast_2d(records)
    else:
        data = np.stack([np.asarray(r.subopt, float) for r in records])
    n = data.shape[0]
    out = {}
    for lev in levels:
        if lev >= 0.9 and n < MIN_TRIALS_TAIL:
            raise DomainError(f"quantile level {lev} needs at least {MIN_TRIALS_TAIL} trials, got {n}")
        out[lev] = np.array([nearest_rank(data[:, j], lev) for j in range(data.shape[1])])
    return out
