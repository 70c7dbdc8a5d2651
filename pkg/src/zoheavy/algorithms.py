"""ZO-RSMD, ZO-Clip-SMD and ZO-Restarts plus their parameter schedules.

All three solvers share one engine that advances a batch of independent
trials in lock-step.  Every trial owns its :class:`SeedStream`, every
operation acts row-wise, and so a trial's trajectory does not depend on which
other trials share its batch.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import AssumptionParams, FeasibleSet, Growth, NoisyOracle, lp_norm
from .errors import ConfigurationError, DomainError
from .estimators import clip_rows, two_point
from .geometry import GeometryConstants, ProxSetup, Regime, distance_exponent, sigma_q
from .randomness import SeedStream, _unit_rows, as_stream

CLIP_REGIMES = (Regime.CLIP_EXPECTATION, Regime.CLIP_HIGHPROB)


def min_growth_exponent(regime: Regime, kappa: float) -> float:
    regime = Regime(regime)
    if regime is Regime.ROBUST:
        return (1.0 + kappa) / kappa
    if regime is Regime.CLIP_EXPECTATION:
        return 2.0
    return 1.0


def check_setup(setup: ProxSetup, regime: Regime, kappa: float) -> None:
    """Raise if the prox setup lacks the convexity certificate the regime relies on."""
    regime = Regime(regime)
    K, r = setup.certificate
    if regime is Regime.ROBUST:
        if math.isinf(setup.q):
            raise ConfigurationError(
                f"the robust regime needs a finite dual exponent; the {setup.kind} setup has q = inf"
            )
        need = (1.0 + kappa) / kappa
        if not (math.isclose(r, need) and K >= 1.0 - 1e-12):
            raise ConfigurationError(
                f"robust regime with kappa={kappa} needs a (1, {need:g})-uniformly convex prox-function; "
                f"the {setup.kind} setup certifies ({K:g}, {r:g})"
            )
    elif not (math.isclose(r, 2.0) and K >= 1.0 - 1e-12):
        raise ConfigurationError(
            f"clipped regimes need a 1-strongly convex prox-function; the {setup.kind} setup certifies ({K:g}, {r:g})"
        )


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Schedule:
    regime: Regime
    nu: float
    tau: float
    T: int
    kappa: float
    clip_level: float | None = None
    sigma_q: float | None = None
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "regime": Regime(self.regime).value, "nu": self.nu, "tau": self.tau, "T": self.T,
            "kappa": self.kappa, "clip_level": self.clip_level, "sigma_q": self.sigma_q,
            "provenance": dict(self.provenance),
        }


def _optimal_tau(regime: Regime, constants: GeometryConstants, params: AssumptionParams, T: int) -> float:
    d, aq, D, R0, k = constants.d, constants.a_q, constants.D_psi, constants.R0, params.kappa
    if regime is Regime.ROBUST:
        radius = R0
    elif regime is Regime.CLIP_EXPECTATION:
        radius = R0 ** (2 * k / (1 + k)) * D ** ((1 - k) / (1 + k))
    else:
        radius = D
    num = math.sqrt(d) * params.Delta * D + 4.0 * radius * d * aq * params.Delta * T ** (-k / (1 + k))
    return math.sqrt(num / (2.0 * params.M2))


def make_schedule(regime: Regime | str, constants: GeometryConstants, params: AssumptionParams, T: int,
                  epsilon: float | None = None, delta_conf: float | None = None,
                  tau_floor: float = 1e-6) -> Schedule:
    """Stepsize, smoothing radius and clip level prescribed for ``T`` iterations.

    ``tau`` priority: ``params.tau`` if set, else ``epsilon / M2`` if ``epsilon``
    is given, else the optimal closed form for the regime.  The optimal form
    vanishes when ``Delta == 0``; ``tau_floor`` is used instead.
    ``sigma_q`` is then re-evaluated with the chosen ``tau``.
    """
    regime = Regime(regime)
    if T < 1:
        raise DomainError("a schedule needs T >= 1")
    if Regime(constants.regime) is not regime:
        raise ConfigurationError(f"constants were computed for {constants.regime.value}, not {regime.value}")
    kappa = params.kappa
    if regime is Regime.CLIP_EXPECTATION and kappa == 1.0:
        raise ConfigurationError(
            "clip level 2*kappa*D/((1-kappa)*nu) is undefined at kappa = 1; use the clip-highprob regime"
        )
    prov = {}
    if params.tau is not None:
        tau, prov["tau"] = params.tau, "fixed by configuration"
    elif epsilon is not None:
        if epsilon <= 0:
            raise DomainError("epsilon must be positive")
        tau, prov["tau"] = epsilon / params.M2, "epsilon / M2"
    else:
        tau = _optimal_tau(regime, constants, params, T)
        prov["tau"] = "sqrt((sqrt(d)*Delta*D + 4*R*d*a_q*Delta*T^(-kappa/(1+kappa))) / (2*M2))"
        if tau <= 0:
            tau, prov["tau"] = tau_floor, "floor (Delta = 0 makes the optimal radius vanish)"
    sig = sigma_q(constants.d, constants.q, kappa, params.M2, params.Delta, tau)
    prov["sigma_q"] = "2^k (sqrt(d) a_q M2 / 2^(1/4))^(1+k) + 2^k (d a_q Delta / tau)^(1+k), to the 1/(1+k)"
    R0, D = constants.R0, constants.D_psi
    c = None
    if regime is Regime.ROBUST:
        nu = R0 ** (1.0 / kappa) / sig * T ** (-1.0 / (1.0 + kappa))
        prov["nu"] = "R0^(1/kappa) / sigma_q * T^(-1/(1+kappa))"
    elif regime is Regime.CLIP_EXPECTATION:
        nu = (R0**2 / (4.0 * T * sig ** (1 + kappa) * D ** (1 - kappa))) ** (1.0 / (1 + kappa))
        if nu <= 0:
            raise ConfigurationError("clip-expectation stepsize vanishes (R0 = 0); clip level undefined")
        c = 2.0 * kappa * D / ((1.0 - kappa) * nu)
        prov["nu"] = "(R0^2 / (4 T sigma_q^(1+kappa) D^(1-kappa)))^(1/(1+kappa))"
        prov["clip_level"] = "2 kappa D / ((1 - kappa) nu)"
    else:
        c = T ** (1.0 / (1 + kappa)) * sig
        nu = D / c
        prov["clip_level"] = "T^(1/(1+kappa)) * sigma_q"
        prov["nu"] = "D / clip_level"
    if delta_conf is not None:
        prov["delta_conf"] = f"{delta_conf} (log factors not applied)"
    return Schedule(regime, nu, tau, int(T), kappa, c, sig, prov)


@dataclass(frozen=True)
class RestartPlan:
    regime: Regime
    N: int
    T: tuple
    tau: tuple
    nu: tuple
    clip: tuple | None
    R: tuple
    R0: float
    epsilon: float
    growth: Growth
    kappa: float
    sigma_q: float
    delta_thresholds: tuple
    provenance: dict = field(default_factory=dict)

    @property
    def total_iterations(self) -> int:
        return int(sum(self.T))

    def stage_schedule(self, k: int) -> Schedule:
        """Schedule of stage ``k`` (0-based)."""
        c = None if self.clip is None else self.clip[k]
        return Schedule(self.regime, self.nu[k], self.tau[k], self.T[k], self.kappa, c, self.sigma_q)

    def to_dict(self) -> dict:
        return {
            "regime": Regime(self.regime).value, "N": self.N, "T": list(self.T), "tau": list(self.tau),
            "nu": list(self.nu), "clip": None if self.clip is None else list(self.clip), "R": list(self.R),
            "R0": self.R0, "epsilon": self.epsilon,
            "growth": {"r": self.growth.r, "mu": self.growth.mu, "p": self.growth.p},
            "kappa": self.kappa, "sigma_q": self.sigma_q, "delta_thresholds": list(self.delta_thresholds),
        }


def restart_count(r: float, mu: float, R0: float, epsilon: float) -> int:
    """``ceil((1/r) * log2(mu R0^r / (2 eps)))``, floored at zero."""
    val = math.log2(mu * R0**r / (2.0 * epsilon)) / r
    return max(0, math.ceil(val - 1e-12))


def stage_iterations(sigma: float, r: float, mu: float, R_k: float, kappa: float) -> int:
    return math.ceil((sigma * 2.0 ** (1.0 + r) / (mu * R_k ** (r - 1.0))) ** ((1.0 + kappa) / kappa))


def make_restart_plan(regime: Regime | str, constants: GeometryConstants, params: AssumptionParams,
                      growth: Growth, epsilon: float, delta_conf: float | None = None,
                      refine_sigma: bool = False) -> RestartPlan:
    """Number of stages and per-stage ``T_k, tau_k, nu_k, (c_k)`` on radii ``R_k = R0 / 2^k``.

    ``R0`` is the Bregman diameter in the regime's exponent.  ``sigma_q`` is
    evaluated once with ``tau = epsilon / M2``; ``refine_sigma`` re-evaluates it
    per stage with that stage's ``tau_k`` and recomputes the stage once.
    """
    regime = Regime(regime)
    kappa = params.kappa
    if epsilon <= 0:
        raise DomainError("epsilon must be positive")
    r, mu = growth.r, growth.mu
    r_min = min_growth_exponent(regime, kappa)
    if r < r_min - 1e-12:
        raise ConfigurationError(
            f"{regime.value} restarts require growth exponent r >= {r_min:g}, got r = {r:g}"
        )
    if mu <= 0:
        raise ConfigurationError("growth modulus mu must be positive")
    e = 2.0 if regime in CLIP_REGIMES else distance_exponent(Regime.ROBUST, kappa)
    R0 = (e * constants.sup_divergence) ** (1.0 / e)
    N = restart_count(r, mu, R0, epsilon)
    sig0 = sigma_q(constants.d, constants.q, kappa, params.M2, params.Delta, epsilon / params.M2)
    Ts, taus, nus, clips, Rs, deltas = [], [], [], [], [], []
    for k in range(1, N + 1):
        Rk = R0 / 2.0**k
        sig = sig0
        for _ in range(2 if refine_sigma else 1):
            Tk = stage_iterations(sig, r, mu, Rk, kappa)
            tauk = sig * Rk / (params.M2 * Tk ** (kappa / (1.0 + kappa)))
            if refine_sigma:
                sig = sigma_q(constants.d, constants.q, kappa, params.M2, params.Delta, tauk)
        if regime in CLIP_REGIMES:
            ck = Tk ** (1.0 / (1.0 + kappa)) * sig
            nuk = Rk / ck
            clips.append(ck)
        else:
            nuk = Rk ** (1.0 / kappa) / sig * Tk ** (-1.0 / (1.0 + kappa))
        Ts.append(Tk)
        taus.append(tauk)
        nus.append(nuk)
        Rs.append(Rk)
        deltas.append(mu**2 * R0 ** (2 * r - 1) / (params.M2 * math.sqrt(constants.d) * 2.0 ** (k * (2 * r - 1))))
    prov = {
        "N": "ceil(log2(mu R0^r / (2 eps)) / r)",
        "T_k": "ceil((sigma_q 2^(1+r) / (mu R_k^(r-1)))^((1+kappa)/kappa))",
        "tau_k": "sigma_q R_k / (M2 T_k^(kappa/(1+kappa)))",
        "nu_k": "R_k / c_k" if regime in CLIP_REGIMES else "R_k^(1/kappa) / sigma_q * T_k^(-1/(1+kappa))",
        "Delta_k": "mu^2 R0^(2r-1) / (M2 sqrt(d) 2^(k(2r-1)))",
    }
    if regime in CLIP_REGIMES:
        prov["c_k"] = "T_k^(1/(1+kappa)) sigma_q"
    if delta_conf is not None:
        prov["delta_conf"] = f"{delta_conf} (log factors not applied)"
    return RestartPlan(regime, N, tuple(Ts), tuple(taus), tuple(nus),
                       tuple(clips) if regime in CLIP_REGIMES else None, tuple(Rs), R0, epsilon,
                       growth, kappa, sig0, tuple(deltas), prov)


# ---------------------------------------------------------------------------
# run records and the engine
# ---------------------------------------------------------------------------

@dataclass
class RunRecord:
    """Trajectory summary of one trial.

    ``subopt[i]`` is ``f(xbar_k) - f*`` at ``k = iters[i]`` where ``xbar_k`` is
    the mean of the first ``k`` iterates (``x0`` itself at ``k = 0``).
    ``wall_ms`` is the batch wall time divided by the batch size.
    """

    config: dict
    seed: tuple
    iters: np.ndarray
    subopt: np.ndarray
    queries: np.ndarray
    x_final: np.ndarray
    wall_ms: float
    iterates: np.ndarray | None = None
    stage_subopt: np.ndarray | None = None
    max_grad_norm: float | None = None
    flags: dict = field(default_factory=dict)
    checkpoint_ms: np.ndarray | None = None

    @property
    def final_subopt(self) -> float:
        return float(self.subopt[-1])


def log_checkpoints(T: int, ratio: float = 1.3) -> list[int]:
    """Iteration counts ``1, ..., T`` spaced geometrically by ``ratio``."""
    if T <= 0:
        return [0]
    out, k = [], 1
    while k < T:
        out.append(k)
        k = max(k + 1, int(math.ceil(k * ratio)))
    out.append(T)
    return out


def _resolve_checkpoints(T: int, checkpoints) -> list[int]:
    if checkpoints is None or checkpoints == "log":
        return log_checkpoints(T)
    if checkpoints == "final":
        return [T]
    pts = sorted({int(c) for c in checkpoints if 1 <= int(c) <= T} | {T})
    return pts


@dataclass
class _BatchResult:
    iters: list
    subopt: np.ndarray          # (B, n_checkpoints)
    x_final: np.ndarray         # (B, d)
    iterates: np.ndarray | None
    max_grad_norm: np.ndarray | None
    wall_s: float
    times: np.ndarray | None = None    # elapsed seconds at each checkpoint


def mirror_descent_batch(oracle: NoisyOracle, setup: ProxSetup, feasible_set: FeasibleSet, *,
                         nu: float, tau: float, T: int, streams: Sequence[SeedStream],
                         clip_level: float | None = None, x0=None, checkpoints=None,
                         keep_iterates: bool = False, track_grad_norm: bool = False,
                         block: int = 2048) -> _BatchResult:
    """Advance ``len(streams)`` independent trials of (clipped) zeroth-order mirror descent.

    Per iteration: sample ``e`` and ``xi``, form the two-point estimate, clip it
    when ``clip_level`` is set, take the dual step and Bregman-project.
    Returns the running average ``(1/T) sum_{k<T} x_k`` per trial.
    """
    if tau <= 0:
        raise DomainError("tau must be positive")
    if tau > feasible_set.margin:
        raise DomainError(f"tau = {tau} exceeds the enlargement margin {feasible_set.margin} of the feasible set")
    if T < 0:
        raise DomainError("T must be non-negative")
    problem = oracle.problem
    d = problem.dimension
    B = len(streams)
    start = setup.start(feasible_set) if x0 is None else np.asarray(x0, float)
    x = np.array(np.broadcast_to(start, (B, d)), dtype=float)
    q = setup.q
    noise = oracle.stochastic_noise
    t0 = time.perf_counter()
    f = problem.objective
    fstar = problem.f_star

    if T == 0:
        sub = (f(x) - fstar)[:, None]
        wall = time.perf_counter() - t0
        return _BatchResult([0], sub, x.copy(), np.empty((B, 0, d)) if keep_iterates else None,
                            np.zeros(B) if track_grad_norm else None, wall, np.array([wall]))

    cps = _resolve_checkpoints(T, checkpoints)
    cp_index = {k: i for i, k in enumerate(cps)}
    sub = np.empty((B, len(cps)))
    times = np.empty(len(cps))
    total = np.zeros((B, d))
    its = np.empty((B, T, d)) if keep_iterates else None
    gmax = np.zeros(B) if track_grad_norm else None
    project = setup.project
    grad, grad_conj = setup.grad, setup.grad_conj

    for b0 in range(0, T, block):
        m = min(block, T - b0)
        E = np.empty((B, m, d))
        XI = np.zeros((B, m, d))
        for i, st in enumerate(streams):
            rng = st.generator()
            E[i] = _unit_rows(rng, m, d)
            if noise.active:
                XI[i] = noise.draw(rng, m, d)
        for j in range(m):
            k = b0 + j
            total += x
            if keep_iterates:
                its[:, k] = x
            ci = cp_index.get(k + 1)
            if ci is not None:
                sub[:, ci] = f(total / (k + 1)) - fstar
                times[ci] = time.perf_counter() - t0
            g = two_point(oracle, x, tau, E[:, j], XI[:, j])[0]
            if track_grad_norm:
                np.maximum(gmax, lp_norm(g, q), out=gmax)
            if clip_level is not None:
                g = clip_rows(g, clip_level, q)
            x = project(feasible_set, grad_conj(grad(x) - nu * g))
    return _BatchResult(cps, sub, total / T, its, gmax, time.perf_counter() - t0, times)


def _records(res: _BatchResult, streams, config: dict) -> list[RunRecord]:
    iters = np.asarray(res.iters, dtype=np.int64)
    out = []
    B = len(streams)
    for i, st in enumerate(streams):
        out.append(RunRecord(
            config=dict(config), seed=(st.root, st.stream), iters=iters, subopt=res.subopt[i].copy(),
            queries=2 * iters, x_final=res.x_final[i].copy(), wall_ms=1e3 * res.wall_s / max(B, 1),
            iterates=None if res.iterates is None else res.iterates[i],
            max_grad_norm=None if res.max_grad_norm is None else float(res.max_grad_norm[i]),
            checkpoint_ms=1e3 * res.times / max(B, 1),
        ))
    return out


def _streams(stream) -> list[SeedStream]:
    if isinstance(stream, (list, tuple)):
        return [as_stream(s) for s in stream]
    return [as_stream(stream)]


def _unwrap(records, stream):
    return records if isinstance(stream, (list, tuple)) else records[0]


def zo_rsmd(oracle: NoisyOracle, setup: ProxSetup, feasible_set: FeasibleSet, schedule: Schedule,
            stream, *, x0=None, checkpoints=None, keep_iterates=False, track_grad_norm=False):
    """Zeroth-order robust stochastic mirror descent.

    ``stream`` may be a single seed/stream (returns one :class:`RunRecord`) or a
    list of them (returns a list, one record per trial).
    """
    if Regime(schedule.regime) is not Regime.ROBUST:
        raise ConfigurationError(f"zo_rsmd runs the robust regime, schedule is {schedule.regime.value}")
    check_setup(setup, Regime.ROBUST, schedule.kappa)
    streams = _streams(stream)
    res = mirror_descent_batch(oracle, setup, feasible_set, nu=schedule.nu, tau=schedule.tau, T=schedule.T,
                               streams=streams, x0=x0, checkpoints=checkpoints,
                               keep_iterates=keep_iterates, track_grad_norm=track_grad_norm)
    cfg = {"algorithm": "zo-rsmd", "setup": setup.to_dict(), "schedule": schedule.to_dict()}
    return _unwrap(_records(res, streams, cfg), stream)


def zo_clip_smd(oracle: NoisyOracle, setup: ProxSetup, feasible_set: FeasibleSet, schedule: Schedule,
                stream, *, x0=None, checkpoints=None, keep_iterates=False, track_grad_norm=False,
                clipping: bool = True):
    """Zeroth-order stochastic mirror descent with gradient clipping at ``schedule.clip_level``.

    ``clipping=False`` runs the identical schedule without clipping, for paired comparisons.
    """
    if Regime(schedule.regime) not in CLIP_REGIMES:
        raise ConfigurationError(f"zo_clip_smd needs a clipped regime, schedule is {schedule.regime.value}")
    c = schedule.clip_level
    if c is None or not math.isfinite(c) or c <= 0:
        raise ConfigurationError("clip level must be a finite positive number")
    check_setup(setup, schedule.regime, schedule.kappa)
    streams = _streams(stream)
    res = mirror_descent_batch(oracle, setup, feasible_set, nu=schedule.nu, tau=schedule.tau, T=schedule.T,
                               streams=streams, clip_level=c if clipping else None, x0=x0,
                               checkpoints=checkpoints, keep_iterates=keep_iterates,
                               track_grad_norm=track_grad_norm)
    cfg = {"algorithm": "zo-clip-smd" if clipping else "zo-smd-unclipped", "setup": setup.to_dict(),
           "schedule": schedule.to_dict()}
    return _unwrap(_records(res, streams, cfg), stream)


def zo_restarts(oracle: NoisyOracle, setup: ProxSetup, feasible_set: FeasibleSet, plan: RestartPlan,
                stream, *, x0=None):
    """Run ``plan.N`` stages of the base method, warm-starting each at the previous average.

    Records the suboptimality at iteration 0 and at the end of every stage.
    ``flags["noise_above_threshold"]`` is set when ``Delta`` exceeds any stage's
    admissible level; the run still proceeds.
    """
    problem = oracle.problem
    growth = problem.growth
    if growth is not None:
        r_min = min_growth_exponent(plan.regime, plan.kappa)
        if growth.r < r_min - 1e-12:
            raise ConfigurationError(
                f"problem growth r = {growth.r:g} is below the {Regime(plan.regime).value} minimum {r_min:g}"
            )
    check_setup(setup, plan.regime, plan.kappa)
    streams = _streams(stream)
    B, d = len(streams), problem.dimension
    start = setup.start(feasible_set) if x0 is None else np.asarray(x0, float)
    x = np.array(np.broadcast_to(start, (B, d)), dtype=float)
    subs = [problem.objective(x) - problem.f_star]
    iters = [0]
    t0 = time.perf_counter()
    times = [0.0]
    for k in range(plan.N):
        sched = plan.stage_schedule(k)
        # each trial warm-starts from its own previous average, so x0 is per-row
        res = _stage(oracle, setup, feasible_set, sched, streams, x)
        x = res.x_final
        subs.append(res.subopt[:, -1])
        iters.append(iters[-1] + sched.T)
        times.append(time.perf_counter() - t0)
    wall = time.perf_counter() - t0
    sub = np.stack(subs, axis=1)
    over = any(oracle.Delta > t for t in plan.delta_thresholds)
    cfg = {"algorithm": "zo-restarts", "setup": setup.to_dict(), "plan": plan.to_dict()}
    iters = np.asarray(iters, dtype=np.int64)
    records = []
    for i, st in enumerate(streams):
        records.append(RunRecord(
            config=dict(cfg), seed=(st.root, st.stream), iters=iters, subopt=sub[i].copy(), queries=2 * iters,
            x_final=x[i].copy(), wall_ms=1e3 * wall / B, stage_subopt=sub[i, 1:].copy(),
            flags={"noise_above_threshold": over}, checkpoint_ms=1e3 * np.asarray(times) / B,
        ))
    return _unwrap(records, stream)


def _stage(oracle, setup, feasible_set, sched: Schedule, streams, x_start) -> _BatchResult:
    """One restart stage with a per-trial starting point."""
    return mirror_descent_batch(oracle, setup, feasible_set, nu=sched.nu, tau=sched.tau, T=sched.T,
                                streams=streams, clip_level=sched.clip_level, x0=x_start,
                                checkpoints="final")
