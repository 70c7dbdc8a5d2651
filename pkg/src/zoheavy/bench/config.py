"""Declarative experiment configuration (TOML) with parse-time validation."""
from __future__ import annotations

import copy
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from ..algorithms import check_setup, min_growth_exponent
from ..core import (
    AdversarialNoiseModel, AssumptionParams, Box, L1Ball, L2Ball, LpBall, NoisyOracle, ProblemSpec,
    Simplex, default_direction, linear_problem, max_affine_problem, quadratic_problem, set_from_dict,
    sharp_problem, skewed_sharp_problem,
)
from ..errors import ConfigurationError, ZOError
from ..geometry import ProxSetup, Regime, setup_from_dict
from ..randomness import StochasticNoiseModel

ALGORITHMS = ("rsmd", "clip-smd", "smd-unclipped", "restarts")
PROBLEMS = ("sharp", "skewed-sharp", "quadratic", "linear", "max-affine")
SWEEPABLE = ("T", "Delta", "kappa")


@dataclass
class ProblemConfig:
    kind: str = "sharp"
    dimension: int = 4
    set: dict = field(default_factory=lambda: {"kind": "l2ball", "radius": 1.0})
    x_star: list | None = None
    mu: float = 1.0
    a: list | None = None
    b: float | list | None = None
    A: list | None = None
    slopes: list | None = None


@dataclass
class NoiseConfig:
    kind: str = "none"
    alpha: float = 2.0
    scale: float = 1.0
    x_ref: list | None = None


@dataclass
class AdversaryConfig:
    kind: str = "none"
    delta: float = 0.0
    eps0: float = 0.05
    h: list | None = None


@dataclass
class SetupConfig:
    kind: str = "ball"
    p: float | None = None
    gamma: float = 0.0


@dataclass
class AlgorithmConfig:
    name: str = "rsmd"
    regime: str = "robust"
    kappa: float = 1.0
    M2: float | str = "auto"
    tau: float | str = "optimal"
    epsilon: float | None = None
    T: int | list = 1000
    use_x_star: bool = True
    refine_sigma: bool = False


@dataclass
class SweepConfig:
    parameter: str = "T"
    values: list = field(default_factory=list)


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    trials: int = 1
    threads: int = 1
    checkpoints: str | list = "log"
    out: str = "results"
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    adversary: AdversaryConfig = field(default_factory=AdversaryConfig)
    setup: SetupConfig = field(default_factory=SetupConfig)
    algorithm: AlgorithmConfig = field(default_factory=AlgorithmConfig)
    sweep: SweepConfig | None = None

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        out = asdict(self)
        if out["sweep"] is None:
            del out["sweep"]
        return _drop_none(out)

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def config_hash(self) -> str:
        """sha256 of the canonical JSON form; output paths and thread count are excluded."""
        d = self.to_dict()
        for key in ("out", "threads"):
            d.pop(key, None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def replace(self, **changes) -> "ExperimentConfig":
        new = copy.deepcopy(self)
        for k, v in changes.items():
            setattr(new, k, v)
        return new


_SECTIONS = {
    "problem": ProblemConfig, "noise": NoiseConfig, "adversary": AdversaryConfig,
    "setup": SetupConfig, "algorithm": AlgorithmConfig, "sweep": SweepConfig,
}


def _drop_none(d):
    if isinstance(d, dict):
        return {k: _drop_none(v) for k, v in d.items() if v is not None}
    return d


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: expected a table")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigurationError(f"{path}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for k, v in data.items():
        where = f"{path}.{k}" if path else k
        if k in _SECTIONS and cls is ExperimentConfig:
            kwargs[k] = _build(_SECTIONS[k], v, where)
        else:
            kwargs[k] = v
    return cls(**kwargs)


def config_from_dict(data: dict) -> ExperimentConfig:
    cfg = _build(ExperimentConfig, data, "")
    validate(cfg)
    return cfg


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"config is not valid TOML: {exc}") from exc
    return config_from_dict(data)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    try:
        return parse_config(text)
    except ConfigurationError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc


def dump_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(cfg.to_toml(), encoding="utf-8")


# ---------------------------------------------------------------------------
# building runtime objects
# ---------------------------------------------------------------------------

@dataclass
class Experiment:
    """Runtime objects assembled from a validated config."""

    config: ExperimentConfig
    problem: ProblemSpec
    oracle: NoisyOracle
    setup: ProxSetup
    params: AssumptionParams
    regime: Regime


def default_x_star(fs) -> np.ndarray:
    d = fs.dim
    if isinstance(fs, Simplex):
        w = np.linspace(1.0, 2.0, d)
        return w / w.sum()
    if isinstance(fs, Box):
        lo, hi = np.asarray(fs.lower), np.asarray(fs.upper)
        return lo + 0.75 * (hi - lo)
    if isinstance(fs, (L2Ball, L1Ball, LpBall)):
        c = np.zeros(d) if fs.center is None else np.asarray(fs.center, float)
        u = np.ones(d) / d ** (1.0 / getattr(fs, "p", 2.0 if isinstance(fs, L2Ball) else 1.0))
        return c + 0.5 * fs.radius * u
    raise ConfigurationError(f"no default minimiser for set {fs.kind}")


def _ctx(path: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ZOError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    except (TypeError, KeyError, ValueError) as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc


def build_problem(pc: ProblemConfig) -> ProblemSpec:
    if pc.kind not in PROBLEMS:
        raise ConfigurationError(f"problem.kind: expected one of {PROBLEMS}, got {pc.kind!r}")
    if not isinstance(pc.dimension, int) or pc.dimension < 1:
        raise ConfigurationError("problem.dimension: must be a positive integer")
    fs = _ctx("problem.set", set_from_dict, pc.dimension, dict(pc.set))
    if pc.kind in ("sharp", "skewed-sharp", "quadratic"):
        xs = default_x_star(fs) if pc.x_star is None else np.asarray(pc.x_star, float)
        if xs.shape != (pc.dimension,):
            raise ConfigurationError("problem.x_star: length must equal problem.dimension")
        if pc.kind == "sharp":
            return _ctx("problem", sharp_problem, fs, xs)
        if pc.kind == "skewed-sharp":
            slopes = [2.0, 1.0] if pc.slopes is None else pc.slopes
            if not (isinstance(slopes, list) and len(slopes) == 2):
                raise ConfigurationError("problem.slopes: expected [up, down]")
            up, down = slopes
            return _ctx("problem", skewed_sharp_problem, fs, xs, float(up), float(down))
        return _ctx("problem", quadratic_problem, fs, xs, pc.mu)
    if pc.kind == "linear":
        if pc.a is None:
            raise ConfigurationError("problem.a: required for linear problems")
        return _ctx("problem", linear_problem, fs, pc.a, float(pc.b or 0.0))
    if pc.A is None or pc.b is None:
        raise ConfigurationError("problem.A and problem.b: required for max-affine problems")
    return _ctx("problem", max_affine_problem, fs, pc.A, pc.b)


def build_params(cfg: ExperimentConfig, problem: ProblemSpec, noise: StochasticNoiseModel,
                 delta: float) -> AssumptionParams:
    ac = cfg.algorithm
    kappa = float(ac.kappa)
    if not 0.0 < kappa <= 1.0:
        raise ConfigurationError(f"algorithm.kappa: must lie in (0, 1], got {kappa}")
    try:
        noise.check_moment(kappa)
    except ConfigurationError as exc:
        raise ConfigurationError(f"noise.alpha: {exc}") from exc
    if ac.M2 == "auto":
        M2 = noise.effective_lipschitz(problem.lipschitz, kappa)
    elif isinstance(ac.M2, (int, float)) and ac.M2 > 0:
        M2 = float(ac.M2)
    else:
        raise ConfigurationError(f"algorithm.M2: expected a positive number or 'auto', got {ac.M2!r}")
    tau = None
    if isinstance(ac.tau, (int, float)) and not isinstance(ac.tau, bool):
        if ac.tau <= 0:
            raise ConfigurationError("algorithm.tau: must be positive")
        tau = float(ac.tau)
    elif ac.tau == "epsilon":
        if ac.epsilon is None:
            raise ConfigurationError("algorithm.tau = 'epsilon' needs algorithm.epsilon")
    elif ac.tau != "optimal":
        raise ConfigurationError(f"algorithm.tau: expected a number, 'optimal' or 'epsilon', got {ac.tau!r}")
    return _ctx("algorithm", AssumptionParams, kappa, M2, delta, tau)


def build(cfg: ExperimentConfig) -> Experiment:
    """Assemble problem, oracle, setup and parameters; raises ConfigurationError with a key path."""
    problem = build_problem(cfg.problem)
    nc = cfg.noise
    noise = _ctx("noise", StochasticNoiseModel, nc.kind, float(nc.alpha), float(nc.scale),
                 None if nc.x_ref is None else tuple(nc.x_ref))
    ad = cfg.adversary
    h = ad.h
    if ad.kind != "none" and h is None:
        h = default_direction(problem.dimension)
    adv = _ctx("adversary", AdversarialNoiseModel, ad.kind, float(ad.delta),
               None if h is None else tuple(h), float(ad.eps0))
    if h is not None and len(h) != problem.dimension:
        raise ConfigurationError("adversary.h: length must equal problem.dimension")
    oracle = NoisyOracle(problem, noise, adv)
    params = build_params(cfg, problem, noise, adv.bound)
    spec = {"kind": cfg.setup.kind, "gamma": cfg.setup.gamma}
    if cfg.setup.p is not None:
        spec["p"] = cfg.setup.p
    setup = _ctx("setup", setup_from_dict, spec, params.kappa)
    if not setup.supports(problem.feasible_set):
        raise ConfigurationError(
            f"setup: the {setup.kind} setup does not support the {problem.feasible_set.kind} set"
        )
    ac = cfg.algorithm
    regime = _ctx("algorithm.regime", Regime, ac.regime)
    if ac.name not in ALGORITHMS:
        raise ConfigurationError(f"algorithm.name: expected one of {ALGORITHMS}, got {ac.name!r}")
    if ac.name == "rsmd" and regime is not Regime.ROBUST:
        raise ConfigurationError("algorithm.regime: rsmd runs the robust regime")
    if ac.name in ("clip-smd", "smd-unclipped") and regime is Regime.ROBUST:
        raise ConfigurationError("algorithm.regime: clip-smd needs clip-expectation or clip-highprob")
    if regime is Regime.CLIP_EXPECTATION and params.kappa == 1.0:
        raise ConfigurationError(
            "algorithm.regime: clip-expectation is undefined at kappa = 1; use clip-highprob"
        )
    _ctx("setup", check_setup, setup, regime, params.kappa)
    if ac.name == "restarts":
        if ac.epsilon is None or ac.epsilon <= 0:
            raise ConfigurationError("algorithm.epsilon: restarts need a positive target accuracy")
        if problem.growth is None:
            raise ConfigurationError(f"problem: the {problem.name} problem declares no growth condition")
        r_min = min_growth_exponent(regime, params.kappa)
        if problem.growth.r < r_min - 1e-12:
            raise ConfigurationError(
                f"problem: growth exponent r = {problem.growth.r:g} is below the {regime.value} minimum {r_min:g}"
            )
    return Experiment(cfg, problem, oracle, setup, params, regime)


def _check_T(T, path="algorithm.T"):
    vals = T if isinstance(T, list) else [T]
    if not vals:
        raise ConfigurationError(f"{path}: empty grid")
    for v in vals:
        if isinstance(v, bool) or not isinstance(v, int) or v < 0:
            raise ConfigurationError(f"{path}: iteration budgets must be non-negative integers, got {v!r}")


def validate(cfg: ExperimentConfig) -> Experiment:
    """Full parse-time validation; returns the assembled experiment."""
    if isinstance(cfg.seed, bool) or not isinstance(cfg.seed, int) or cfg.seed < 0:
        raise ConfigurationError("seed: must be a non-negative integer")
    if not isinstance(cfg.trials, int) or cfg.trials < 1:
        raise ConfigurationError("trials: must be a positive integer")
    if not isinstance(cfg.threads, int) or cfg.threads < 1:
        raise ConfigurationError("threads: must be a positive integer")
    cp = cfg.checkpoints
    if isinstance(cp, str):
        if cp not in ("log", "final"):
            raise ConfigurationError(f"checkpoints: expected 'log', 'final' or a list, got {cp!r}")
    elif not (isinstance(cp, list) and all(isinstance(c, int) and c >= 1 for c in cp)):
        raise ConfigurationError("checkpoints: list entries must be positive integers")
    _check_T(cfg.algorithm.T)
    if cfg.sweep is not None:
        sw = cfg.sweep
        if sw.parameter not in SWEEPABLE:
            raise ConfigurationError(f"sweep.parameter: expected one of {SWEEPABLE}, got {sw.parameter!r}")
        if not sw.values:
            raise ConfigurationError("sweep.values: empty grid")
        if sw.parameter == "T":
            _check_T(sw.values, "sweep.values")
        for v in sw.values:
            if sw.parameter == "Delta" and not (isinstance(v, (int, float)) and v >= 0):
                raise ConfigurationError(f"sweep.values: Delta must be non-negative, got {v!r}")
        # every grid point must itself be a valid experiment
        for v in sw.values:
            build(apply_sweep(cfg, v))
    return build(cfg)


def apply_sweep(cfg: ExperimentConfig, value) -> ExperimentConfig:
    """Copy of ``cfg`` with the sweep parameter set to ``value``."""
    new = copy.deepcopy(cfg)
    new.sweep = None
    p = cfg.sweep.parameter
    if p == "T":
        new.algorithm.T = int(value)
    elif p == "Delta":
        new.adversary.delta = float(value)
        if new.adversary.kind == "none" and value > 0:
            new.adversary.kind = "oscillating"
    else:
        new.algorithm.kappa = float(value)
    return new
