"""Two-point gradient estimates and robust mirror descent on a sharp minimum.

Run with ``python demos/01_mirror_descent_basics.py``; takes a few seconds.
"""
import numpy as np

import zoheavy as zo

# %% The estimator only sees function values.
# For a linear function the two-point estimate is d * <a, e> * e, whose mean over
# random unit directions e is exactly the gradient a.
a = np.array([1.0, -2.0, 0.5, 3.0])
lin = zo.NoisyOracle(zo.linear_problem(zo.L2Ball(4, 10.0), a))
g = zo.sample_gradients(lin, np.zeros(4), 0.1, 200_000, zo.SeedStream(0))
print("true gradient      ", a)
print("mean of estimates  ", np.round(g.mean(axis=0), 3))
print("per-sample norm is d*|<a,e>|, so single estimates are noisy:", np.round(np.linalg.norm(g[:3], axis=1), 2))

# %% A sharp problem with heavy-tailed noise.
# f(x) = ||x - x*||_2 on the unit ball in R^8, with Pareto radial noise of tail index 2.5.
# The variance is finite here (kappa = 1), so the Euclidean setup applies.
fs = zo.L2Ball(8, 1.0)
problem = zo.sharp_problem(fs, np.full(8, 0.15))
noise = zo.StochasticNoiseModel("pareto", alpha=2.5)
oracle = zo.NoisyOracle(problem, noise)
kappa = 1.0
params = zo.AssumptionParams(kappa, noise.effective_lipschitz(problem.lipschitz, kappa))
setup = zo.BallSetup()
const = zo.compute_constants(setup, fs, params, "robust", x_star=problem.x_star)
print(f"\nsigma_q = {const.sigma_q:.3f}, D_psi = {const.D_psi:.3f}, R0 = {const.R0:.3f}")

# %% Suboptimality against the iteration budget.
# The robust stepsize shrinks like T^(-1/(1+kappa)), so the error should fall roughly
# like T^(-kappa/(1+kappa)) = T^(-1/2).
print("\n     T   median f(xbar)-f*")
Ts, meds = [], []
for T in (100, 1000, 10_000, 100_000):
    sched = zo.make_schedule("robust", const, params, T)
    recs = zo.zo_rsmd(oracle, setup, fs, sched, [zo.SeedStream(1, i) for i in range(30)], checkpoints="final")
    med = np.median([r.final_subopt for r in recs])
    Ts.append(T)
    meds.append(med)
    print(f"{T:6d}   {med:.4f}")
slope = np.polyfit(np.log(Ts), np.log(meds), 1)[0]
print(f"fitted log-log slope {slope:.3f} (reference -1/2)")
