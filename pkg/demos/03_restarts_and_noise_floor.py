"""Restarts on a sharp minimum, and the error floor left by adversarial oracle noise.

Run with ``python demos/03_restarts_and_noise_floor.py``; takes about a minute.
"""
import numpy as np

import zoheavy as zo
from zoheavy.bench.config import build, load_config
from zoheavy.bench.runner import run_experiment

# %% Restarts halve the distance to the minimiser stage by stage.
exp = build(load_config("configs/restarts-sharp.toml"))
fs = exp.problem.feasible_set
const = zo.compute_constants(exp.setup, fs, exp.params, exp.regime)
eps = exp.config.algorithm.epsilon
plan = zo.make_restart_plan(exp.regime, const, exp.params, exp.problem.growth, eps)
print(f"target eps = {eps}, stages N = {plan.N}")
print("stage  T_k    tau_k      nu_k       c_k")
for k in range(plan.N):
    s = plan.stage_schedule(k)
    print(f"{k:5d}  {s.T:5d}  {s.tau:.3e}  {s.nu:.3e}  {s.clip_level:.3e}")
recs = zo.zo_restarts(exp.oracle, exp.setup, fs, plan, [zo.SeedStream(3, i) for i in range(20)])
sub = np.array([r.subopt for r in recs])
print("median suboptimality after each stage:", "  ".join(f"{v:.2e}" for v in np.median(sub, axis=0)))
print(f"trials reaching eps: {np.mean(sub[:, -1] <= eps):.0%}")

# %% With a bounded adversary the error stops shrinking at a level set by Delta.
# The smoothing radius that balances bias against the adversarial term scales like
# sqrt(Delta), and so does the floor. A shortened version of the noise-floor config:
cfg = load_config("configs/noise-floor.toml").replace(trials=8)
cfg.algorithm.T = 20_000
res = run_experiment(cfg, write=False)
print("\n         sweep point  floor")
for row in res.rows:
    print(f"{row.label:>20s}  {row.noise_floor:.4f}")
print(f"floor ~ Delta^{res.floor_fit.slope:.2f} (reference 0.5)")
