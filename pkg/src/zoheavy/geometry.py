"""Mirror-map setups, Bregman divergences and projections, schedule constants.

Three prox-functions are provided:

``BallSetup``
    ``psi(x) = ½||x||_2^2`` (p = 2), 1-strongly convex w.r.t. the l2 norm.
``EntropySetup``
    ``psi(x) = (1+g) * sum (x_i + g/d) log(x_i + g/d)`` on the simplex (p = 1).
``UniformlyConvexSetup``
    ``psi(x) = K_q^(1/kappa) * (kappa/(1+kappa)) * ||x||_p^((1+kappa)/kappa)``,
    (1, (1+kappa)/kappa)-uniformly convex w.r.t. the l_p norm, p in (1, 2].
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .core import AssumptionParams, FeasibleSet, L1Ball, L2Ball, LpBall, Box, Simplex, lp_norm
from .errors import ConfigurationError, DomainError


class Regime(str, enum.Enum):
    ROBUST = "robust"
    CLIP_EXPECTATION = "clip-expectation"
    CLIP_HIGHPROB = "clip-highprob"


def dual_exponent(p: float) -> float:
    if p == 1:
        return math.inf
    if math.isinf(p):
        return 1.0
    return p / (p - 1.0)


class ProxSetup:
    kind: str
    p: float

    @property
    def q(self) -> float:
        return dual_exponent(self.p)

    @property
    def certificate(self) -> tuple[float, float]:
        """``(K, r)`` such that ``D(y, x) >= (K/r) ||x - y||_p^r``."""
        raise NotImplementedError

    def psi(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError

    def grad_conj(self, z):
        raise NotImplementedError

    def divergence(self, y, x):
        y, x = np.asarray(y, float), np.asarray(x, float)
        return self.psi(y) - self.psi(x) - np.sum(self.grad(x) * (y - x), axis=-1)

    def supports(self, fs: FeasibleSet) -> bool:
        raise NotImplementedError

    def _project(self, fs: FeasibleSet, y):
        raise NotImplementedError

    def project(self, fs: FeasibleSet, y):
        if not self.supports(fs):
            raise ConfigurationError(
                f"no exact Bregman projection for the {self.kind} setup on a {fs.kind} set"
            )
        return self._project(fs, np.asarray(y, float))

    def start(self, fs: FeasibleSet) -> np.ndarray:
        """``argmin_X psi``."""
        raise NotImplementedError

    def sup_divergence(self, fs: FeasibleSet) -> float:
        """``sup_{x,y in X} D(x, y)`` (or the proxy used for the entropy setup)."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"kind": self.kind}


@dataclass(frozen=True)
class BallSetup(ProxSetup):
    kind = "ball"
    p = 2.0

    @property
    def certificate(self):
        return (1.0, 2.0)

    def psi(self, x):
        x = np.asarray(x, float)
        return 0.5 * np.sum(x * x, axis=-1)

    def grad(self, x):
        return np.asarray(x, float)

    def grad_conj(self, z):
        return np.asarray(z, float)

    def divergence(self, y, x):
        diff = np.asarray(y, float) - np.asarray(x, float)
        return 0.5 * np.sum(diff * diff, axis=-1)

    def supports(self, fs):
        return isinstance(fs, (L2Ball, Box, Simplex, L1Ball))

    def _project(self, fs, y):
        return fs.project(y)

    def start(self, fs):
        return fs.project(np.zeros(fs.dim))

    def sup_divergence(self, fs):
        return 0.5 * fs.euclidean_diameter() ** 2


@dataclass(frozen=True)
class EntropySetup(ProxSetup):
    gamma: float = 0.0
    kind = "entropy"
    p = 1.0

    def __post_init__(self):
        if self.gamma < 0:
            raise ConfigurationError("entropy parameter gamma must be non-negative")

    @property
    def certificate(self):
        return (1.0, 2.0)

    def _shift(self, x):
        return self.gamma / x.shape[-1] if self.gamma else 0.0

    def psi(self, x):
        x = np.asarray(x, float)
        u = x + self._shift(x)
        if np.any(u < 0):
            raise DomainError("entropy prox-function needs non-negative shifted coordinates")
        return (1.0 + self.gamma) * np.sum(xlogy(u, u), axis=-1)

    def grad(self, x):
        x = np.asarray(x, float)
        u = x + self._shift(x)
        if np.any(u <= 0):
            raise DomainError("entropy mirror map needs strictly positive shifted coordinates")
        return (1.0 + self.gamma) * (np.log(u) + 1.0)

    def grad_conj(self, z):
        z = np.asarray(z, float)
        return np.exp(z / (1.0 + self.gamma) - 1.0) - self._shift(z)

    def divergence(self, y, x):
        y, x = np.asarray(y, float), np.asarray(x, float)
        s = self._shift(x)
        uy, ux = y + s, x + s
        if np.any(ux <= 0) or np.any(uy < 0):
            raise DomainError("entropy divergence needs positive shifted coordinates")
        return (1.0 + self.gamma) * np.sum(xlogy(uy, uy) - xlogy(uy, ux) - uy + ux, axis=-1)

    def supports(self, fs):
        return isinstance(fs, Simplex)

    def _project(self, fs, y):
        s = self._shift(y)
        u = y + s
        if np.any(u < 0):
            raise DomainError("entropy projection needs non-negative shifted coordinates")
        if self.gamma == 0.0:
            x = u / np.sum(u, axis=-1, keepdims=True)
            # keep iterates strictly inside the domain of the mirror map
            return np.maximum(x, np.finfo(float).tiny)
        return self._project_shifted(u, s)

    def _project_shifted(self, u, s):
        # x_i = max(u_i * t - s, 0) with scalar t > 0 fixed by sum x = 1; sum is monotone in t
        hi = (1.0 + self.gamma) / np.sum(u, axis=-1, keepdims=True)
        lo = np.zeros_like(hi)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            total = np.sum(np.maximum(u * mid - s, 0.0), axis=-1, keepdims=True)
            lo = np.where(total < 1.0, mid, lo)
            hi = np.where(total < 1.0, hi, mid)
            if np.all(hi - lo <= 1e-12 * hi):
                break
        x = np.maximum(u * hi - s, 0.0)
        return x / np.sum(x, axis=-1, keepdims=True)

    def start(self, fs):
        return np.full(fs.dim, 1.0 / fs.dim)

    def sup_divergence(self, fs):
        # the pairwise supremum is infinite at gamma = 0; use max_x D(x, uniform), attained at a vertex
        d = fs.dim
        e = np.zeros(d)
        e[0] = 1.0
        return float(self.divergence(e, self.start(fs)))

    def to_dict(self):
        return {"kind": self.kind, "gamma": self.gamma}


@dataclass(frozen=True)
class UniformlyConvexSetup(ProxSetup):
    p: float = 2.0
    kappa: float = 1.0
    kind = "lp"

    def __post_init__(self):
        if not 1.0 < self.p <= 2.0:
            raise ConfigurationError(f"uniformly convex setup needs p in (1, 2], got {self.p}")
        if not 0.0 < self.kappa <= 1.0:
            raise ConfigurationError(f"kappa must lie in (0, 1], got {self.kappa}")

    @property
    def power(self) -> float:
        return (1.0 + self.kappa) / self.kappa

    @property
    def scale(self) -> float:
        return k_q(self.q, self.kappa) ** (1.0 / self.kappa)

    @property
    def certificate(self):
        return (1.0, self.power)

    def psi(self, x):
        return self.scale / self.power * lp_norm(x, self.p) ** self.power

    def grad(self, x):
        x = np.asarray(x, float)
        p, s = self.p, self.power
        n = lp_norm(x, p)[..., None]
        safe = np.where(n > 0, n, 1.0)
        g = self.scale * safe ** (s - p) * np.sign(x) * np.abs(x) ** (p - 1)
        return np.where(n > 0, g, 0.0)

    def grad_conj(self, z):
        z = np.asarray(z, float)
        q, s_conj = self.q, 1.0 + self.kappa
        n = lp_norm(z, q)[..., None]
        safe = np.where(n > 0, n, 1.0)
        x = self.scale ** (1.0 - s_conj) * safe ** (s_conj - q) * np.sign(z) * np.abs(z) ** (q - 1)
        return np.where(n > 0, x, 0.0)

    def supports(self, fs):
        if isinstance(fs, LpBall):
            ok = math.isclose(fs.p, self.p)
        elif isinstance(fs, L2Ball):
            ok = self.p == 2.0
        else:
            return False
        return ok and (fs.center is None or not np.any(np.asarray(fs.center, float)))

    def _project(self, fs, y):
        # psi is radial, so the Bregman projection onto an origin-centred l_p ball is radial scaling
        n = lp_norm(y, self.p)[..., None]
        return np.where(n > fs.radius, y * (fs.radius / np.where(n > 0, n, 1.0)), y)

    def start(self, fs):
        return np.zeros(fs.dim)

    def sup_divergence(self, fs):
        return 2.0 * self.scale * fs.radius ** self.power

    def to_dict(self):
        return {"kind": self.kind, "p": self.p, "kappa": self.kappa}


def setup_from_dict(spec: dict, kappa: float = 1.0) -> ProxSetup:
    kind = spec.get("kind", "ball").lower()
    if kind == "ball":
        return BallSetup()
    if kind == "entropy":
        return EntropySetup(float(spec.get("gamma", 0.0)))
    if kind in ("lp", "uniformly-convex"):
        return UniformlyConvexSetup(float(spec.get("p", 2.0)), float(spec.get("kappa", kappa)))
    raise ConfigurationError(f"unknown prox setup {kind!r}")


# module-level operations --------------------------------------------------

def grad_psi(setup: ProxSetup, x):
    return setup.grad(x)


def grad_psi_star(setup: ProxSetup, z):
    return setup.grad_conj(z)


def bregman_divergence(setup: ProxSetup, y, x):
    return setup.divergence(y, x)


def bregman_project(setup: ProxSetup, feasible_set: FeasibleSet, y):
    return setup.project(feasible_set, y)


# ---------------------------------------------------------------------------
# closed-form constants
# ---------------------------------------------------------------------------

def a_q(d: int, q: float) -> float:
    """Bound on the ``2(1+kappa)``-th root moment of ``||e||_q`` for e uniform on the sphere."""
    if q < 2:
        raise DomainError(f"a_q is defined for q >= 2, got {q}")
    lead = d ** (-0.5) if math.isinf(q) else d ** (1.0 / q - 0.5)
    candidates = [] if math.isinf(q) else [math.sqrt(2.0 * q - 1.0)]
    log_arg = 32.0 * math.log(d) - 8.0 if d >= 2 else -1.0
    if log_arg > 0:
        candidates.append(math.sqrt(log_arg))
    if not candidates:
        raise DomainError(f"a_q is unbounded for d = {d}, q = {q}")
    return lead * min(candidates)


def k_q(q: float, kappa: float) -> float:
    return 10.0 * max(1.0, (q - 1.0) ** ((1.0 + kappa) / 2.0))


def sigma_q(d: int, q: float, kappa: float, M2: float, Delta: float = 0.0, tau: float | None = None) -> float:
    """``sigma`` with ``sigma^(1+kappa)`` bounding ``E||g||_q^(1+kappa)`` for the two-point estimator.

    The adversarial term is dropped when ``Delta == 0``; otherwise ``tau`` is required.
    """
    aq = a_q(d, q)
    p = 1.0 + kappa
    total = 2.0**kappa * (math.sqrt(d) * aq * M2 / 2.0**0.25) ** p
    if Delta > 0:
        if tau is None or tau <= 0:
            raise DomainError("the adversarial term of sigma_q needs a positive tau")
        total += 2.0**kappa * (d * aq * Delta / tau) ** p
    return total ** (1.0 / p)


def distance_exponent(regime: Regime, kappa: float) -> float:
    """Exponent ``e`` with ``D^e = e * sup D_psi`` and ``R0^e = e * D_psi(x*, x0)``."""
    regime = Regime(regime)
    return 2.0 if regime is Regime.CLIP_HIGHPROB else (1.0 + kappa) / kappa


@dataclass(frozen=True)
class GeometryConstants:
    a_q: float
    K_q: float
    sigma_q: float
    D_psi: float
    R0: float
    d: int
    q: float
    kappa: float
    regime: Regime
    sup_divergence: float

    def with_sigma(self, M2: float, Delta: float, tau: float | None) -> "GeometryConstants":
        sig = sigma_q(self.d, self.q, self.kappa, M2, Delta, tau)
        return GeometryConstants(self.a_q, self.K_q, sig, self.D_psi, self.R0, self.d, self.q,
                                 self.kappa, self.regime, self.sup_divergence)

    def to_dict(self) -> dict:
        return {
            "a_q": self.a_q, "K_q": self.K_q, "sigma_q": self.sigma_q, "D_psi": self.D_psi,
            "R0": self.R0, "d": self.d, "q": self.q, "kappa": self.kappa,
            "regime": Regime(self.regime).value, "sup_divergence": self.sup_divergence,
        }


def compute_constants(setup: ProxSetup, feasible_set: FeasibleSet, params: AssumptionParams,
                      regime: Regime | str, x0=None, x_star=None) -> GeometryConstants:
    """Evaluate ``a_q, K_q, sigma_q, D_psi, R0`` for one setup, set and regime.

    ``R0`` falls back to the diameter ``D_psi`` when ``x_star`` is withheld.
    ``sigma_q`` uses ``params.tau``; with ``tau=None`` the adversarial term is
    left out and the schedule fills it in once it has chosen ``tau``.
    """
    regime = Regime(regime)
    d = feasible_set.dim
    kappa = params.kappa
    q = setup.q
    aq = a_q(d, q)
    kq = k_q(q, kappa)
    delta = params.Delta if params.tau is not None else 0.0
    sig = sigma_q(d, q, kappa, params.M2, delta, params.tau)
    e = distance_exponent(regime, kappa)
    sup_d = setup.sup_divergence(feasible_set)
    D = (e * sup_d) ** (1.0 / e)
    if x_star is None:
        R0 = D
    else:
        x0 = setup.start(feasible_set) if x0 is None else np.asarray(x0, float)
        R0 = (e * max(float(setup.divergence(np.asarray(x_star, float), x0)), 0.0)) ** (1.0 / e)
    return GeometryConstants(aq, kq, sig, D, R0, d, q, kappa, regime, sup_d)
