"""Gradient-free stochastic mirror descent under heavy-tailed and adversarial noise."""
from .errors import ConfigurationError, DomainError, ZOError
from .randomness import (
    Estimate, SeedStream, StochasticNoiseModel, moment_report, sample_ball, sample_noise, sample_sphere,
)
from .core import (
    AdversarialNoiseModel, AssumptionParams, Box, FeasibleSet, Growth, L1Ball, L2Ball, LpBall,
    NoisyOracle, ProblemSpec, Simplex, evaluate_pair, linear_problem, lp_norm, max_affine_problem,
    project_simplex, quadratic_problem, sharp_problem, skewed_sharp_problem, suboptimality,
)
from .geometry import (
    BallSetup, EntropySetup, GeometryConstants, ProxSetup, Regime, UniformlyConvexSetup, a_q,
    bregman_divergence, bregman_project, compute_constants, grad_psi, grad_psi_star, k_q, sigma_q,
)
from .estimators import (
    ClippedGradient, GradientSample, clip, estimate_gradient, estimate_smoothed_value, moment_check,
    sample_gradients,
)
from .algorithms import (
    RestartPlan, RunRecord, Schedule, log_checkpoints, make_restart_plan, make_schedule,
    zo_clip_smd, zo_restarts, zo_rsmd,
)

__version__ = "0.1.0"
