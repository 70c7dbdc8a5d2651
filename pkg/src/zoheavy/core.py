"""Problems, feasible sets and the two-point noisy zeroth-order oracle."""
from __future__ import annotations

import dataclasses
import math
import threading
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError, DomainError
from .randomness import SeedStream, StochasticNoiseModel, as_stream

MEMBERSHIP_TOL = 1e-9


def _vec(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


# ---------------------------------------------------------------------------
# feasible sets
# ---------------------------------------------------------------------------

class FeasibleSet:
    """Compact convex set with a Euclidean projection.

    Objectives built by this package are defined on all of R^d, so the
    enlargement margin defaults to infinity and every point of ``X + tau*B2``
    may be queried.
    """

    kind: str = ""
    margin: float = math.inf

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def contains(self, x, tol: float = MEMBERSHIP_TOL):
        raise NotImplementedError

    def project(self, y) -> np.ndarray:
        """Euclidean projection; rows of a 2-D input are projected independently."""
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """``n`` random feasible points (not necessarily uniform)."""
        raise NotImplementedError

    def min_linear(self, a) -> tuple[float, np.ndarray]:
        """Minimum of ``<a, x>`` over the set and one minimizer."""
        raise NotImplementedError

    def euclidean_diameter(self) -> float:
        raise NotImplementedError

    def distance(self, x) -> np.ndarray:
        x = _vec(x)
        return np.linalg.norm(x - self.project(x), axis=-1)

    def check_enlarged(self, x, tau: float = 0.0) -> None:
        if math.isinf(self.margin):
            return
        dist = np.atleast_1d(self.distance(x))
        if np.any(dist > self.margin + MEMBERSHIP_TOL):
            bad = int(np.argmax(dist))
            raise DomainError(f"point {np.atleast_2d(x)[bad]} lies outside the enlarged set (margin {self.margin})")

    def to_dict(self) -> dict:
        raise NotImplementedError

    def _with_margin(self, out: dict) -> dict:
        if math.isfinite(self.margin):
            out["margin"] = self.margin
        return out


@dataclass(frozen=True)
class L2Ball(FeasibleSet):
    d: int
    radius: float = 1.0
    center: tuple | None = None
    margin: float = math.inf
    kind = "l2ball"

    def __post_init__(self):
        if self.radius <= 0 or self.d < 1:
            raise ConfigurationError("L2Ball needs d >= 1 and positive radius")

    @property
    def dim(self):
        return self.d

    @property
    def c(self) -> np.ndarray:
        return np.zeros(self.d) if self.center is None else _vec(self.center)

    def contains(self, x, tol=MEMBERSHIP_TOL):
        return np.linalg.norm(_vec(x) - self.c, axis=-1) <= self.radius + tol

    def project(self, y):
        y = _vec(y)
        c = self.c
        diff = y - c
        n = np.sqrt(np.sum(diff * diff, axis=-1, keepdims=True))
        scale = np.where(n > self.radius, self.radius / np.where(n > 0, n, 1.0), 1.0)
        return np.where(n > self.radius, c + diff * scale, y)

    def sample(self, rng, n):
        z = rng.standard_normal((n, self.d))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        return self.c + self.radius * z * rng.random((n, 1)) ** (1.0 / self.d)

    def min_linear(self, a):
        a = _vec(a)
        na = np.linalg.norm(a)
        x = self.c - (self.radius * a / na if na > 0 else 0.0)
        return float(a @ x), x

    def euclidean_diameter(self):
        return 2.0 * self.radius

    def to_dict(self):
        out = {"kind": self.kind, "radius": self.radius}
        if self.center is not None:
            out["center"] = list(self.center)
        return self._with_margin(out)


@dataclass(frozen=True)
class Box(FeasibleSet):
    lower: tuple
    upper: tuple
    margin: float = math.inf
    kind = "box"

    def __post_init__(self):
        lo, hi = _vec(self.lower), _vec(self.upper)
        if lo.shape != hi.shape or lo.ndim != 1 or np.any(lo > hi):
            raise ConfigurationError("Box needs equal-length bounds with lower <= upper")

    @property
    def dim(self):
        return len(self.lower)

    def contains(self, x, tol=MEMBERSHIP_TOL):
        x = _vec(x)
        return np.all((x >= _vec(self.lower) - tol) & (x <= _vec(self.upper) + tol), axis=-1)

    def project(self, y):
        return np.clip(_vec(y), _vec(self.lower), _vec(self.upper))

    def sample(self, rng, n):
        lo, hi = _vec(self.lower), _vec(self.upper)
        return lo + (hi - lo) * rng.random((n, self.dim))

    def min_linear(self, a):
        a = _vec(a)
        x = np.where(a > 0, _vec(self.lower), _vec(self.upper))
        return float(a @ x), x

    def euclidean_diameter(self):
        return float(np.linalg.norm(_vec(self.upper) - _vec(self.lower)))

    def to_dict(self):
        return self._with_margin({"kind": self.kind, "lower": list(self.lower), "upper": list(self.upper)})


def project_simplex(y, radius: float = 1.0) -> np.ndarray:
    """Euclidean projection onto ``{x >= 0, sum x = radius}`` by sorting, row-wise."""
    y = _vec(y)
    flat = y.reshape(-1, y.shape[-1])
    d = flat.shape[1]
    u = -np.sort(-flat, axis=1)
    css = np.cumsum(u, axis=1) - radius
    idx = np.arange(1, d + 1)
    cond = u - css / idx > 0
    rho = d - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(flat.shape[0]), rho] / (rho + 1)
    return np.maximum(flat - theta[:, None], 0.0).reshape(y.shape)


@dataclass(frozen=True)
class Simplex(FeasibleSet):
    d: int
    margin: float = math.inf
    kind = "simplex"

    def __post_init__(self):
        if self.d < 1:
            raise ConfigurationError("Simplex needs d >= 1")

    @property
    def dim(self):
        return self.d

    def contains(self, x, tol=MEMBERSHIP_TOL):
        x = _vec(x)
        return np.all(x >= -tol, axis=-1) & (np.abs(np.sum(x, axis=-1) - 1.0) <= tol)

    def project(self, y):
        return project_simplex(y, 1.0)

    def sample(self, rng, n):
        return rng.dirichlet(np.ones(self.d), size=n)

    def min_linear(self, a):
        a = _vec(a)
        x = np.zeros(self.d)
        x[int(np.argmin(a))] = 1.0
        return float(a.min()), x

    def euclidean_diameter(self):
        return math.sqrt(2.0) if self.d > 1 else 0.0

    def to_dict(self):
        return self._with_margin({"kind": self.kind})


@dataclass(frozen=True)
class L1Ball(FeasibleSet):
    d: int
    radius: float = 1.0
    center: tuple | None = None
    margin: float = math.inf
    kind = "l1ball"

    def __post_init__(self):
        if self.radius <= 0 or self.d < 1:
            raise ConfigurationError("L1Ball needs d >= 1 and positive radius")

    @property
    def dim(self):
        return self.d

    @property
    def c(self):
        return np.zeros(self.d) if self.center is None else _vec(self.center)

    def contains(self, x, tol=MEMBERSHIP_TOL):
        return np.sum(np.abs(_vec(x) - self.c), axis=-1) <= self.radius + tol

    def project(self, y):
        y = _vec(y)
        diff = y - self.c
        inside = np.sum(np.abs(diff), axis=-1, keepdims=True) <= self.radius
        proj = np.sign(diff) * project_simplex(np.abs(diff), self.radius)
        return np.where(inside, y, self.c + proj)

    def sample(self, rng, n):
        w = rng.dirichlet(np.ones(self.d + 1), size=n)[:, : self.d]
        signs = rng.choice([-1.0, 1.0], size=(n, self.d))
        return self.c + self.radius * signs * w

    def min_linear(self, a):
        a = _vec(a)
        j = int(np.argmax(np.abs(a)))
        x = self.c.copy()
        x[j] -= self.radius * (np.sign(a[j]) if a[j] != 0 else 0.0)
        return float(a @ x), x

    def euclidean_diameter(self):
        return 2.0 * self.radius

    def to_dict(self):
        out = {"kind": self.kind, "radius": self.radius}
        if self.center is not None:
            out["center"] = list(self.center)
        return self._with_margin(out)


def lp_norm(x, p: float) -> np.ndarray:
    x = np.abs(_vec(x))
    if math.isinf(p):
        return np.max(x, axis=-1)
    if p == 2:
        return np.sqrt(np.sum(x * x, axis=-1))
    if p == 1:
        return np.sum(x, axis=-1)
    return np.sum(x**p, axis=-1) ** (1.0 / p)


@dataclass(frozen=True)
class LpBall(FeasibleSet):
    d: int
    p: float
    radius: float = 1.0
    center: tuple | None = None
    margin: float = math.inf
    kind = "lpball"

    def __post_init__(self):
        if self.radius <= 0 or self.d < 1 or self.p < 1:
            raise ConfigurationError("LpBall needs d >= 1, p >= 1 and positive radius")

    @property
    def dim(self):
        return self.d

    @property
    def c(self):
        return np.zeros(self.d) if self.center is None else _vec(self.center)

    def contains(self, x, tol=MEMBERSHIP_TOL):
        return lp_norm(_vec(x) - self.c, self.p) <= self.radius + tol

    def project(self, y):
        y = _vec(y)
        if self.p == 2:
            return L2Ball(self.d, self.radius, self.center).project(y)
        if self.p == 1:
            return L1Ball(self.d, self.radius, self.center).project(y)
        return _project_lp_euclidean(y, self.p, self.radius, self.c)

    def sample(self, rng, n):
        z = rng.standard_normal((n, self.d))
        z /= lp_norm(z, self.p)[:, None]
        return self.c + self.radius * z * rng.random((n, 1)) ** (1.0 / self.d)

    def min_linear(self, a):
        a = _vec(a)
        if self.p == 1:
            return L1Ball(self.d, self.radius, self.center).min_linear(a)
        q = math.inf if self.p == 1 else self.p / (self.p - 1)
        nq = lp_norm(a, q)
        if nq == 0:
            return float(a @ self.c), self.c.copy()
        w = np.sign(a) * np.abs(a) ** (q - 1) / nq ** (q - 1)
        x = self.c - self.radius * w
        return float(a @ x), x

    def euclidean_diameter(self):
        if self.p <= 2:
            return 2.0 * self.radius
        return 2.0 * self.radius * self.d ** (0.5 - 1.0 / self.p)

    def to_dict(self):
        out = {"kind": self.kind, "p": self.p, "radius": self.radius}
        if self.center is not None:
            out["center"] = list(self.center)
        return self._with_margin(out)


def _project_lp_euclidean(y, p, radius, c):
    # Euclidean projection onto an l_p ball: per coordinate x_i = argmin ½(x-|y_i|)^2 + lam*x^p,
    # outer bisection on lam; only needed for diagnostics, never by the Bregman setups.
    from scipy.optimize import brentq

    y = _vec(y)
    rows = np.atleast_2d(y - c)
    out = np.empty_like(rows)
    for i, row in enumerate(rows):
        a = np.abs(row)
        if lp_norm(a, p) <= radius:
            out[i] = row
            continue

        def coord(lam):
            res = np.empty_like(a)
            for j, aj in enumerate(a):
                if aj == 0:
                    res[j] = 0.0
                    continue
                res[j] = brentq(lambda t: t - aj + lam * p * t ** (p - 1), 0.0, aj)
            return res

        hi = 1.0
        while lp_norm(coord(hi), p) > radius:
            hi *= 2.0
        lam = brentq(lambda l: lp_norm(coord(l), p) - radius, 0.0, hi, xtol=1e-14)
        out[i] = np.sign(row) * coord(lam)
    return (out + c).reshape(y.shape)


def set_from_dict(d: int, spec: dict) -> FeasibleSet:
    fs = _set_from_dict(d, spec)
    if "margin" in spec:
        margin = float(spec["margin"])
        if margin < 0:
            raise ConfigurationError("set margin must be non-negative")
        fs = dataclasses.replace(fs, margin=margin)
    return fs


def _set_from_dict(d: int, spec: dict) -> FeasibleSet:
    kind = spec.get("kind", "l2ball").lower()
    center = tuple(spec["center"]) if "center" in spec else None
    if kind == "l2ball":
        return L2Ball(d, float(spec.get("radius", 1.0)), center)
    if kind == "l1ball":
        return L1Ball(d, float(spec.get("radius", 1.0)), center)
    if kind == "lpball":
        return LpBall(d, float(spec["p"]), float(spec.get("radius", 1.0)), center)
    if kind == "simplex":
        return Simplex(d)
    if kind == "box":
        lo = spec.get("lower", -1.0)
        hi = spec.get("upper", 1.0)
        lo = tuple(lo) if isinstance(lo, (list, tuple)) else (float(lo),) * d
        hi = tuple(hi) if isinstance(hi, (list, tuple)) else (float(hi),) * d
        return Box(lo, hi)
    raise ConfigurationError(f"unknown feasible set kind {kind!r}")


# ---------------------------------------------------------------------------
# problems
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Growth:
    """``(mu/2) * ||x - x*||_p^r <= f(x) - f*``."""

    r: float
    mu: float
    p: float = 2.0


@dataclass(frozen=True)
class ProblemSpec:
    dimension: int
    objective: Callable[[np.ndarray], np.ndarray]
    x_star: np.ndarray
    f_star: float
    lipschitz: float
    feasible_set: FeasibleSet
    growth: Growth | None = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dimension < 1:
            raise ConfigurationError("dimension must be positive")
        if self.lipschitz <= 0:
            raise ConfigurationError("Lipschitz constant must be positive")
        if self.feasible_set.dim != self.dimension:
            raise ConfigurationError("feasible set dimension does not match the problem")

    def __call__(self, x) -> np.ndarray:
        return self.objective(_vec(x))


def suboptimality(problem: ProblemSpec, x) -> float:
    """``f(x) - f*`` for a feasible point."""
    x = _vec(x)
    if not bool(problem.feasible_set.contains(x)):
        raise DomainError(f"point {x} is not feasible")
    gap = float(problem(x)) - problem.f_star
    if gap < -1e-9 * max(1.0, abs(problem.f_star)):
        raise DomainError(f"objective {gap + problem.f_star} is below the recorded optimum {problem.f_star}")
    return max(gap, 0.0) if gap > -1e-12 else gap


def sharp_problem(feasible_set: FeasibleSet, x_star) -> ProblemSpec:
    """``f(x) = ||x - x*||_2``: sharp minimum (r = 1, mu = 2 in the l2 norm), M2 = 1."""
    xs = _vec(x_star)
    if not bool(feasible_set.contains(xs)):
        raise ConfigurationError("x* must be feasible")

    def f(x):
        diff = x - xs
        return np.sqrt(np.sum(diff * diff, axis=-1))

    return ProblemSpec(len(xs), f, xs, 0.0, 1.0, feasible_set, Growth(1.0, 2.0, 2.0), "sharp",
                       {"x_star": xs.tolist()})


def skewed_sharp_problem(feasible_set: FeasibleSet, x_star, up: float = 2.0, down: float = 1.0) -> ProblemSpec:
    """``f(x) = sum_j max(up * y_j, -down * y_j)`` with ``y = x - x*``.

    A sharp minimum whose kink is asymmetric when ``up != down``, so ball
    smoothing moves the minimiser by an amount proportional to the radius.
    Growth ``r = 1, mu = 2 min(up, down)``; Lipschitz ``max(up, down) sqrt(d)``.
    """
    xs = _vec(x_star)
    if not (up > 0 and down > 0):
        raise ConfigurationError("slopes must be positive")
    if not bool(feasible_set.contains(xs)):
        raise ConfigurationError("x* must be feasible")

    def f(x):
        y = x - xs
        return np.sum(np.maximum(up * y, -down * y), axis=-1)

    d = len(xs)
    return ProblemSpec(d, f, xs, 0.0, max(up, down) * math.sqrt(d), feasible_set,
                       Growth(1.0, 2.0 * min(up, down), 2.0), "skewed-sharp",
                       {"x_star": xs.tolist(), "slopes": [up, down]})


def quadratic_problem(feasible_set: FeasibleSet, x_star, mu: float = 1.0) -> ProblemSpec:
    """``f(x) = (mu/2)||x - x*||_2^2``; Lipschitz constant taken over the set's Euclidean diameter."""
    xs = _vec(x_star)
    if not bool(feasible_set.contains(xs)):
        raise ConfigurationError("x* must be feasible")

    def f(x):
        diff = x - xs
        return 0.5 * mu * np.sum(diff * diff, axis=-1)

    lip = mu * max(feasible_set.euclidean_diameter(), 1e-12)
    return ProblemSpec(len(xs), f, xs, 0.0, lip, feasible_set, Growth(2.0, mu, 2.0), "quadratic",
                       {"x_star": xs.tolist(), "mu": mu})


def linear_problem(feasible_set: FeasibleSet, a, b: float = 0.0) -> ProblemSpec:
    a = _vec(a)
    fmin, xs = feasible_set.min_linear(a)

    def f(x):
        return x @ a + b

    return ProblemSpec(len(a), f, xs, fmin + b, max(float(np.linalg.norm(a)), 1e-12), feasible_set,
                       None, "linear", {"a": a.tolist(), "b": b})


def max_affine_problem(feasible_set: FeasibleSet, A, b) -> ProblemSpec:
    """``f(x) = max_i <a_i, x> + b_i`` on a polyhedral set; the optimum comes from an LP."""
    from scipy.optimize import linprog

    A, b = np.atleast_2d(_vec(A)), _vec(b)
    m, d = A.shape
    # variables (x, t): minimise t s.t. A x + b <= t
    cost = np.zeros(d + 1)
    cost[-1] = 1.0
    A_ub = np.hstack([A, -np.ones((m, 1))])
    b_ub = -b
    A_eq = b_eq = None
    bounds = [(None, None)] * (d + 1)
    fs = feasible_set
    if isinstance(fs, Box):
        bounds = list(zip(fs.lower, fs.upper)) + [(None, None)]
    elif isinstance(fs, Simplex):
        bounds = [(0, None)] * d + [(None, None)]
        A_eq = np.hstack([np.ones((1, d)), np.zeros((1, 1))])
        b_eq = np.array([1.0])
    else:
        raise ConfigurationError(f"max-affine problems need a polyhedral Box or Simplex, got {fs.kind}")
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if not res.success:
        raise ConfigurationError(f"LP for the max-affine optimum failed: {res.message}")
    xs = fs.project(res.x[:d])

    def f(x):
        return np.max(x @ A.T + b, axis=-1)

    fstar = float(f(xs))
    lip = float(np.max(np.linalg.norm(A, axis=1)))
    return ProblemSpec(d, f, xs, fstar, lip, fs, None, "max-affine", {"A": A.tolist(), "b": b.tolist()})


# ---------------------------------------------------------------------------
# adversarial noise and the oracle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdversarialNoiseModel:
    """Deterministic bounded perturbation ``delta(x)`` with ``|delta(x)| <= Delta``.

    ``"oscillating"``: ``Delta * sign(sin(<h, x> / eps0))``.  ``"none"``: zero.
    """

    kind: str = "none"
    delta: float = 0.0
    h: tuple | None = None
    eps0: float = 0.05

    def __post_init__(self):
        if self.kind not in ("none", "oscillating"):
            raise ConfigurationError(f"unknown adversarial noise kind {self.kind!r}")
        if self.delta < 0:
            raise ConfigurationError("Delta must be non-negative")
        if self.kind == "oscillating" and self.eps0 <= 0:
            raise ConfigurationError("eps0 must be positive")

    @property
    def bound(self) -> float:
        return self.delta if self.kind != "none" else 0.0

    def __call__(self, x) -> np.ndarray | float:
        x = _vec(x)
        if self.kind == "none" or self.delta == 0.0:
            return np.zeros(x.shape[:-1]) if x.ndim > 1 else 0.0
        h = _vec(self.h)
        return self.delta * np.sign(np.sin((x @ h) / self.eps0))


def default_direction(d: int, seed: int = 7) -> tuple:
    rng = SeedStream(seed, 0xAD).generator()
    h = rng.standard_normal(d)
    return tuple((h / np.linalg.norm(h)).tolist())


class NoisyOracle:
    """Two-point oracle ``phi(x, xi) = f(x) + <xi, x - x_ref> + delta(x)``.

    Both points of a pair share one realization ``xi``.  ``realization`` may be an
    explicit noise vector (or a batch of them), a :class:`SeedStream`, or an int seed.
    """

    def __init__(self, problem: ProblemSpec,
                 stochastic_noise: StochasticNoiseModel | None = None,
                 adversarial_noise: AdversarialNoiseModel | None = None):
        self.problem = problem
        self.stochastic_noise = stochastic_noise or StochasticNoiseModel()
        self.adversarial_noise = adversarial_noise or AdversarialNoiseModel()
        xr = self.stochastic_noise.x_ref
        self._x_ref = np.zeros(problem.dimension) if xr is None else _vec(xr)
        self._lock = threading.Lock()
        self.query_counter = 0

    @property
    def dimension(self) -> int:
        return self.problem.dimension

    @property
    def Delta(self) -> float:
        return self.adversarial_noise.bound

    def draw_realization(self, stream, size: int | None = None) -> np.ndarray:
        rng = as_stream(stream).generator()
        xi = self.stochastic_noise.draw(rng, 1 if size is None else size, self.dimension)
        return xi[0] if size is None else xi

    def _resolve(self, realization, batch_shape) -> np.ndarray:
        if isinstance(realization, np.ndarray):
            return realization
        if realization is None:
            return np.zeros(self.dimension)
        return self.draw_realization(realization, None)

    def stochastic_value(self, x, xi) -> np.ndarray:
        """``f(x, xi)`` without the adversarial term."""
        x = _vec(x)
        val = self.problem.objective(x)
        if self.stochastic_noise.active:
            val = val + np.sum(xi * (x - self._x_ref), axis=-1)
        return val

    def _count(self, n: int) -> None:
        with self._lock:
            self.query_counter += n

    def evaluate(self, x, realization=None):
        x = _vec(x)
        self.problem.feasible_set.check_enlarged(x)
        xi = self._resolve(realization, x.shape[:-1])
        self._count(int(np.prod(x.shape[:-1], dtype=int)) if x.ndim > 1 else 1)
        return self.stochastic_value(x, xi) + self.adversarial_noise(x)

    def evaluate_pair(self, x, y, realization=None):
        """Return ``(phi(x, xi), phi(y, xi))`` for one shared realization."""
        x, y = _vec(x), _vec(y)
        fs = self.problem.feasible_set
        fs.check_enlarged(x)
        fs.check_enlarged(y)
        xi = self._resolve(realization, x.shape[:-1])
        n = int(np.prod(x.shape[:-1], dtype=int)) if x.ndim > 1 else 1
        self._count(2 * n)
        adv = self.adversarial_noise
        return (self.stochastic_value(x, xi) + adv(x), self.stochastic_value(y, xi) + adv(y))


def evaluate_pair(oracle: NoisyOracle, x, y, realization=None):
    return oracle.evaluate_pair(x, y, realization)


@dataclass(frozen=True)
class AssumptionParams:
    """``kappa`` in (0, 1], Lipschitz moment ``M2``, adversarial bound ``Delta`` and optional ``tau``.

    ``tau = None`` lets the schedule pick the smoothing radius.
    """

    kappa: float
    M2: float
    Delta: float = 0.0
    tau: float | None = None

    def __post_init__(self):
        if not 0.0 < self.kappa <= 1.0:
            raise ConfigurationError(f"kappa must lie in (0, 1], got {self.kappa}")
        if self.M2 <= 0:
            raise ConfigurationError("M2 must be positive")
        if self.Delta < 0:
            raise ConfigurationError("Delta must be non-negative")
        if self.tau is not None and self.tau <= 0:
            raise ConfigurationError("tau must be positive")
