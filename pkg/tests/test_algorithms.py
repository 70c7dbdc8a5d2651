import math
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zoheavy import (
    AdversarialNoiseModel, AssumptionParams, BallSetup, ConfigurationError, DomainError, EntropySetup, Growth,
    L2Ball, LpBall, NoisyOracle, Regime, Schedule, SeedStream, Simplex, UniformlyConvexSetup, compute_constants,
    make_restart_plan, make_schedule, sharp_problem, sigma_q, zo_clip_smd, zo_restarts, zo_rsmd,
)
from zoheavy.algorithms import log_checkpoints, restart_count, stage_iterations
from zoheavy.bench.config import build, load_config
from zoheavy.bench.stats import nearest_rank
from zoheavy.geometry import GeometryConstants

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
X_STAR = np.array([0.3, -0.2, 0.1, 0.4])


def constants(regime, R0=1.0, D=1.0, sup_d=0.5, d=16, q=2.0, kappa=1.0, M2=1.0):
    sig = sigma_q(d, q, kappa, M2)
    return GeometryConstants(math.sqrt(3), 10.0, sig, D, R0, d, q, kappa, Regime(regime), sup_d)


def test_robust_schedule_example():
    s = make_schedule("robust", constants("robust"), AssumptionParams(1.0, 1.0), 10_000)
    assert s.sigma_q == pytest.approx(8.239, abs=5e-4)
    assert s.nu == pytest.approx(1.0 / (s.sigma_q * 100), rel=1e-14)
    assert s.nu == pytest.approx(1.2137e-3, rel=1e-4)
    assert s.clip_level is None and "nu" in s.provenance


def test_highprob_schedule_example():
    s = make_schedule("clip-highprob", constants("clip-highprob", D=0.7), AssumptionParams(1.0, 1.0), 10_000)
    assert s.clip_level == pytest.approx(100 * s.sigma_q, rel=1e-14)
    assert s.clip_level == pytest.approx(823.9, abs=0.05)
    assert s.nu == pytest.approx(0.7 / s.clip_level, rel=1e-14)


def test_clip_expectation_schedule():
    k, T, R0, D = 0.5, 1000, 0.8, 1.3
    s = make_schedule("clip-expectation", constants("clip-expectation", R0=R0, D=D, kappa=k),
                      AssumptionParams(k, 1.0), T)
    nu = (R0**2 / (4 * T * s.sigma_q ** (1 + k) * D ** (1 - k))) ** (1 / (1 + k))
    assert s.nu == pytest.approx(nu, rel=1e-14)
    assert s.clip_level == pytest.approx(2 * k * D / ((1 - k) * nu), rel=1e-14)
    with pytest.raises(ConfigurationError, match="clip-highprob"):
        make_schedule("clip-expectation", constants("clip-expectation"), AssumptionParams(1.0, 1.0), T)


def test_schedule_boundaries_and_tau_priority():
    for regime, k in (("robust", 1.0), ("clip-highprob", 1.0), ("clip-expectation", 0.5), ("robust", 0.3)):
        s = make_schedule(regime, constants(regime, kappa=k), AssumptionParams(k, 1.0), 1)
        vals = [s.nu, s.tau] + ([s.clip_level] if s.clip_level is not None else [])
        assert all(math.isfinite(v) and v > 0 for v in vals)
    with pytest.raises(DomainError):
        make_schedule("robust", constants("robust"), AssumptionParams(1.0, 1.0), 0)
    with pytest.raises(ConfigurationError):
        make_schedule("robust", constants("clip-highprob"), AssumptionParams(1.0, 1.0), 10)
    c = constants("robust")
    assert make_schedule("robust", c, AssumptionParams(1.0, 2.0, tau=0.3), 10).tau == 0.3
    assert make_schedule("robust", c, AssumptionParams(1.0, 2.0), 10, epsilon=0.1).tau == 0.05
    assert make_schedule("robust", c, AssumptionParams(1.0, 2.0), 10).tau == 1e-6
    p = AssumptionParams(1.0, 2.0, Delta=1e-4)
    s = make_schedule("robust", c, p, 100)
    assert s.tau == pytest.approx(math.sqrt((4 * 1e-4 + 4 * 16 * math.sqrt(3) * 1e-4 / 10) / 4))
    assert s.sigma_q == pytest.approx(sigma_q(16, 2.0, 1.0, 2.0, 1e-4, s.tau))


def test_restart_count_examples():
    assert restart_count(1.0, 1.0, 1.0, 1 / 32) == 4
    for r, mu, R0 in ((1.0, 2.0, 1.5), (2.0, 0.5, 3.0), (3.0, 1.0, 0.7)):
        assert restart_count(r, mu, R0, mu * R0**r / 2) <= 1


@given(r=st.floats(1.0, 4.0), mu=st.floats(0.01, 100.0), R0=st.floats(0.01, 10.0), eps=st.floats(1e-8, 1.0))
@settings(max_examples=300, deadline=None)
def test_doubling_epsilon_reduces_restarts_by_bounded_amount(r, mu, R0, eps):
    n1, n2 = restart_count(r, mu, R0, eps), restart_count(r, mu, R0, 2 * eps)
    assert 0 <= n1 - n2 <= math.ceil(1 / r)


def _stage_budget_oracle(sigma, r, mu, R0, k, kappa):
    # exact rational evaluation of ceil((sigma 2^(1+r) / (mu R_k^(r-1)))^((1+kappa)/kappa))
    # for integer exponents, so the ceiling is decided without rounding
    Rk = Fraction(R0) / 2**k
    base = Fraction(sigma) * 2 ** (1 + r) / (Fraction(mu) * Rk ** (r - 1))
    power = Fraction(1 + kappa) / Fraction(kappa)
    assert power.denominator == 1
    v = base ** power.numerator
    return -(-v.numerator // v.denominator)


def test_stage_budget_matches_independent_evaluation():
    sig = sigma_q(16, 2.0, 1.0, 1.0)
    plan = make_restart_plan("clip-highprob", constants("clip-highprob"), AssumptionParams(1.0, 1.0),
                             Growth(1.0, 2.0, 2.0), 0.01)
    assert plan.R0 == pytest.approx(1.0)
    plan2 = make_restart_plan("clip-highprob", constants("clip-highprob"), AssumptionParams(1.0, 1.0),
                              Growth(1.0, 2.0, 2.0), 0.01)
    assert plan2.T == plan.T
    # r = 2, kappa = 1, mu = 1, R0 = 1: T_1 = ceil((sigma * 8 / (1/2))^2)
    t1 = stage_iterations(sig, 2.0, 1.0, 0.5, 1.0)
    assert t1 == math.ceil((sig * 16) ** 2)
    assert t1 == _stage_budget_oracle(sig, 2, 1.0, 1.0, 1, 1)
    plan = make_restart_plan("clip-highprob", constants("clip-highprob"), AssumptionParams(1.0, 1.0),
                             Growth(1.0, 2.0, 2.0), 1e-3)
    for k, Tk in enumerate(plan.T, start=1):
        assert Tk == _stage_budget_oracle(plan.sigma_q, 1, 2.0, plan.R0, k, 1)
        assert plan.R[k - 1] == plan.R0 / 2**k
        assert plan.clip[k - 1] == pytest.approx(Tk**0.5 * plan.sigma_q, rel=1e-14)
        assert plan.nu[k - 1] == pytest.approx(plan.R[k - 1] / plan.clip[k - 1], rel=1e-14)
        assert plan.tau[k - 1] == pytest.approx(plan.sigma_q * plan.R[k - 1] / Tk**0.5, rel=1e-14)


def test_restart_growth_minimum():
    with pytest.raises(ConfigurationError, match="r >= 2"):
        make_restart_plan("clip-expectation", constants("clip-expectation", kappa=0.5), AssumptionParams(0.5, 1.0),
                          Growth(1.0, 1.0, 2.0), 0.1)
    with pytest.raises(ConfigurationError, match="r >= 3"):
        make_restart_plan("robust", constants("robust", kappa=0.5), AssumptionParams(0.5, 1.0),
                          Growth(2.0, 1.0, 2.0), 0.1)
    make_restart_plan("robust", constants("robust", kappa=0.5), AssumptionParams(0.5, 1.0), Growth(3.0, 1.0, 2.0), 0.1)


def noiseless_sharp(x_star=X_STAR, radius=1.0):
    fs = L2Ball(len(x_star), radius)
    return NoisyOracle(sharp_problem(fs, x_star)), fs


def robust_schedule(fs, oracle, T, setup=None, kappa=1.0, M2=1.0):
    setup = setup or BallSetup()
    params = AssumptionParams(kappa, M2)
    c = compute_constants(setup, fs, params, "robust", x_star=oracle.problem.x_star)
    return make_schedule("robust", c, params, T)


def test_rsmd_noiseless_reduces_suboptimality():
    oracle, fs = noiseless_sharp()
    rec = zo_rsmd(oracle, BallSetup(), fs, robust_schedule(fs, oracle, 10_000), SeedStream(21))
    assert rec.iters[-1] == 10_000
    assert rec.final_subopt <= 0.1 * rec.subopt[0]
    assert rec.queries[-1] == 20_000


def test_rsmd_zero_iterations_returns_start():
    oracle, fs = noiseless_sharp()
    sched = robust_schedule(fs, oracle, 10)
    sched = Schedule(sched.regime, sched.nu, sched.tau, 0, sched.kappa)
    rec = zo_rsmd(oracle, BallSetup(), fs, sched, SeedStream(0))
    assert np.array_equal(rec.x_final, np.zeros(4))
    assert rec.final_subopt == pytest.approx(np.linalg.norm(X_STAR))
    assert list(rec.iters) == [0]


def test_rsmd_started_at_optimum_stays_in_envelope():
    oracle, fs = noiseless_sharp()
    sched = robust_schedule(fs, oracle, 2000)
    rec = zo_rsmd(oracle, BallSetup(), fs, sched, SeedStream(22), x0=X_STAR, track_grad_norm=True)
    # one worst-case step moves by nu * max ||g|| and f is 1-Lipschitz
    envelope = sched.nu * rec.max_grad_norm
    assert rec.max_grad_norm <= 4 + 1e-9
    # at x* the two function values coincide, so only rounding of the running mean remains
    assert np.all(rec.subopt <= envelope + 1e-12)


def test_rsmd_geometry_mismatch():
    oracle, fs = noiseless_sharp()
    params = AssumptionParams(0.5, 1.0)
    sched = make_schedule("robust", compute_constants(BallSetup(), fs, params, "robust"), params, 10)
    with pytest.raises(ConfigurationError, match="uniformly convex"):
        zo_rsmd(oracle, BallSetup(), fs, sched, SeedStream(0))
    sfs = Simplex(4)
    so = NoisyOracle(sharp_problem(sfs, [0.25] * 4))
    with pytest.raises(ConfigurationError, match="finite dual exponent"):
        zo_rsmd(so, EntropySetup(), sfs, Schedule(Regime.ROBUST, 0.1, 0.01, 10, 1.0), SeedStream(0))
    hp = Schedule(Regime.CLIP_HIGHPROB, 0.1, 0.01, 10, 1.0, 5.0)
    with pytest.raises(ConfigurationError):
        zo_rsmd(oracle, BallSetup(), fs, hp, SeedStream(0))


def test_uniformly_convex_run_is_feasible():
    kappa = 0.5
    fs = LpBall(4, 1.5, 1.0)
    oracle = NoisyOracle(sharp_problem(fs, [0.2, 0.1, -0.1, 0.0]))
    setup = UniformlyConvexSetup(1.5, kappa)
    sched = robust_schedule(fs, oracle, 500, setup=setup, kappa=kappa)
    rec = zo_rsmd(oracle, setup, fs, sched, SeedStream(23), keep_iterates=True)
    assert np.all(fs.contains(rec.iterates))
    assert rec.final_subopt < rec.subopt[0]


def test_averaging_identity_and_feasibility():
    from zoheavy import StochasticNoiseModel
    fs = L2Ball(4, 1.0)
    oracle = NoisyOracle(sharp_problem(fs, X_STAR), StochasticNoiseModel("pareto", 2.5, 0.5))
    sched = robust_schedule(fs, oracle, 300, M2=3.0)
    rec = zo_rsmd(oracle, BallSetup(), fs, sched, SeedStream(24), keep_iterates=True)
    assert rec.iterates.shape == (300, 4)
    assert np.allclose(rec.x_final, rec.iterates.mean(axis=0), rtol=0, atol=1e-13)
    assert np.all(fs.contains(rec.iterates))
    for k, s in zip(rec.iters, rec.subopt):
        xbar = rec.iterates[:k].mean(axis=0)
        assert s == pytest.approx(float(oracle.problem(xbar)) - oracle.problem.f_star, abs=1e-13)


def test_determinism_and_batch_independence():
    from zoheavy import StochasticNoiseModel
    fs = Simplex(5)
    oracle = NoisyOracle(sharp_problem(fs, [0.1, 0.2, 0.3, 0.2, 0.2]), StochasticNoiseModel("pareto", 1.6, 1.0))
    params = AssumptionParams(0.5, 5.0)
    c = compute_constants(EntropySetup(), fs, params, "clip-highprob")
    sched = make_schedule("clip-highprob", c, params, 3000)
    streams = [SeedStream(30, i) for i in range(6)]
    batch = zo_clip_smd(oracle, EntropySetup(), fs, sched, streams)
    again = zo_clip_smd(oracle, EntropySetup(), fs, sched, [SeedStream(30, i) for i in range(6)])
    solo = zo_clip_smd(oracle, EntropySetup(), fs, sched, SeedStream(30, 4))
    for a, b in zip(batch, again):
        assert np.array_equal(a.subopt, b.subopt) and np.array_equal(a.x_final, b.x_final)
    assert np.array_equal(batch[4].subopt, solo.subopt)
    assert np.array_equal(batch[4].x_final, solo.x_final)
    assert not np.array_equal(batch[0].subopt, batch[1].subopt)


def test_clip_inactive_matches_rsmd_bit_for_bit():
    oracle, fs = noiseless_sharp()
    base = robust_schedule(fs, oracle, 2000)
    clipped = Schedule(Regime.CLIP_HIGHPROB, base.nu, base.tau, base.T, 1.0, 1e9)
    a = zo_rsmd(oracle, BallSetup(), fs, base, SeedStream(40), keep_iterates=True, track_grad_norm=True)
    b = zo_clip_smd(oracle, BallSetup(), fs, clipped, SeedStream(40), keep_iterates=True)
    assert a.max_grad_norm < 1e9
    assert np.array_equal(a.iterates, b.iterates)
    assert np.array_equal(a.subopt, b.subopt)


def test_clip_level_must_be_finite():
    oracle, fs = noiseless_sharp()
    for c in (math.inf, None, 0.0):
        with pytest.raises(ConfigurationError):
            zo_clip_smd(oracle, BallSetup(), fs, Schedule(Regime.CLIP_HIGHPROB, 0.1, 0.01, 5, 1.0, c), SeedStream(0))


def test_clip_zero_iterations():
    oracle, fs = noiseless_sharp()
    rec = zo_clip_smd(oracle, BallSetup(), fs, Schedule(Regime.CLIP_HIGHPROB, 0.1, 0.01, 0, 1.0, 5.0), SeedStream(0))
    assert np.array_equal(rec.x_final, np.zeros(4))


def test_tau_beyond_margin_is_rejected():
    fs = L2Ball(2, 1.0, margin=0.01)
    oracle = NoisyOracle(sharp_problem(fs, [0.0, 0.0]))
    with pytest.raises(DomainError, match="margin"):
        zo_rsmd(oracle, BallSetup(), fs, Schedule(Regime.ROBUST, 0.1, 0.05, 5, 1.0), SeedStream(0))


def test_heavy_tail_clipping_lowers_median():
    # the documented heavy-tail example: clipped median strictly below the unclipped median
    exp = build(load_config(CONFIGS / "heavy-tail-clip.toml"))
    fs = exp.problem.feasible_set
    c = compute_constants(exp.setup, fs, exp.params, exp.regime, x_star=exp.problem.x_star)
    sched = make_schedule(exp.regime, c, exp.params, 10_000)
    # streams advance as they are consumed, so each arm gets its own fresh copies of the same seeds
    clipped = zo_clip_smd(exp.oracle, exp.setup, fs, sched, [SeedStream(100, i) for i in range(100)],
                          checkpoints="final")
    plain = zo_clip_smd(exp.oracle, exp.setup, fs, sched, [SeedStream(100, i) for i in range(100)],
                        checkpoints="final", clipping=False)
    m_c = nearest_rank([r.final_subopt for r in clipped], 0.5)
    m_u = nearest_rank([r.final_subopt for r in plain], 0.5)
    print(f"clip level {sched.clip_level:.4g}; median clipped {m_c:.6g} vs unclipped {m_u:.6g}")
    assert m_c < m_u


def test_restarts_zero_stages():
    oracle, fs = noiseless_sharp()
    params = AssumptionParams(1.0, 1.0)
    c = compute_constants(BallSetup(), fs, params, "clip-highprob")
    plan = make_restart_plan("clip-highprob", c, params, oracle.problem.growth, 10.0)
    assert plan.N == 0
    rec = zo_restarts(oracle, BallSetup(), fs, plan, SeedStream(0))
    assert np.array_equal(rec.x_final, np.zeros(4)) and list(rec.iters) == [0]


def test_restarts_sharp_example():
    exp = build(load_config(CONFIGS / "restarts-sharp.toml"))
    fs = exp.problem.feasible_set
    c = compute_constants(exp.setup, fs, exp.params, exp.regime)
    eps = exp.config.algorithm.epsilon
    plan = make_restart_plan(exp.regime, c, exp.params, exp.problem.growth, eps)
    recs = zo_restarts(exp.oracle, exp.setup, fs, plan, [SeedStream(3, i) for i in range(50)])
    monotone = sum(bool(np.all(np.diff(r.subopt) <= 0)) for r in recs)
    hit = sum(r.final_subopt <= eps for r in recs)
    assert monotone == 50
    assert hit >= 40
    # geometric envelope of the halving argument with 50% slack
    mu, r_ = exp.problem.growth.mu, exp.problem.growth.r
    for rec in recs:
        for k, s in enumerate(rec.stage_subopt, start=1):
            assert s <= mu * (plan.R0 / 2**k) ** r_ / 2 * 1.5
    assert not recs[0].flags["noise_above_threshold"]


def test_restarts_flag_when_delta_too_large():
    fs = L2Ball(4, 1.0)
    adv = AdversarialNoiseModel("oscillating", 0.6, tuple(np.ones(4) / 2), eps0=0.05)
    oracle = NoisyOracle(sharp_problem(fs, X_STAR), adversarial_noise=adv)
    params = AssumptionParams(1.0, 1.0, Delta=0.6)
    c = compute_constants(BallSetup(), fs, params, "clip-highprob")
    plan = make_restart_plan("clip-highprob", c, params, oracle.problem.growth, 0.25)
    assert plan.N >= 1 and min(plan.delta_thresholds) < 0.6
    rec = zo_restarts(oracle, BallSetup(), fs, plan, SeedStream(1))
    assert rec.flags["noise_above_threshold"] is True


def test_restarts_growth_incompatible_with_problem():
    oracle, fs = noiseless_sharp()
    params = AssumptionParams(0.5, 1.0)
    plan = make_restart_plan("clip-expectation", constants("clip-expectation", kappa=0.5, d=4), params,
                             Growth(2.0, 1.0, 2.0), 0.1)
    with pytest.raises(ConfigurationError, match="below"):
        zo_restarts(oracle, BallSetup(), fs, plan, SeedStream(0))


def test_log_checkpoints():
    cps = log_checkpoints(1000)
    assert cps[0] == 1 and cps[-1] == 1000
    assert all(b > a for a, b in zip(cps, cps[1:]))
    assert all(b <= math.ceil(1.3 * a) for a, b in zip(cps[:-1], cps[1:-1]))
    assert log_checkpoints(0) == [0]


def test_paired_arms_identical_when_clipping_inactive():
    exp = build(load_config(CONFIGS / "heavy-tail-clip.toml"))
    fs = exp.problem.feasible_set
    c = compute_constants(exp.setup, fs, exp.params, exp.regime, x_star=exp.problem.x_star)
    sched = make_schedule(exp.regime, c, exp.params, 300)
    a = zo_clip_smd(exp.oracle, exp.setup, fs, sched, [SeedStream(7, i) for i in range(20)], track_grad_norm=True)
    b = zo_clip_smd(exp.oracle, exp.setup, fs, sched, [SeedStream(7, i) for i in range(20)], clipping=False)
    for ra, rb in zip(a, b):
        if ra.max_grad_norm <= sched.clip_level:
            assert np.array_equal(ra.subopt, rb.subopt)
    assert any(r.max_grad_norm <= sched.clip_level for r in a)
