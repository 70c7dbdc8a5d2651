"""Seeded sampling: sphere directions, ball points and heavy-tailed noise vectors.

Every draw goes through a :class:`SeedStream`, a ``(root, stream, counter)``
triple backed by the counter-based Philox generator.  Each call to
:meth:`SeedStream.generator` hands out a generator positioned at the current
counter block and then advances the counter, so an identical triple always
reproduces identical draws and distinct ``(root, stream)`` pairs never overlap.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import special

from .errors import ConfigurationError, DomainError

_MASK64 = (1 << 64) - 1


@dataclass
class SeedStream:
    root: int
    stream: int = 0
    counter: int = 0

    def __post_init__(self):
        self.root = int(self.root) & _MASK64
        self.stream = int(self.stream) & _MASK64
        if self.counter < 0:
            raise DomainError("counter must be non-negative")

    def generator(self) -> np.random.Generator:
        """Return a generator for the current counter block and advance."""
        key = np.array([self.root, self.stream], dtype=np.uint64)
        ctr = np.array([0, 0, 0, self.counter & _MASK64], dtype=np.uint64)
        self.counter += 1
        return np.random.Generator(np.random.Philox(key=key, counter=ctr))

    def spawn(self, stream: int) -> "SeedStream":
        return SeedStream(self.root, stream, 0)

    def copy(self) -> "SeedStream":
        return SeedStream(self.root, self.stream, self.counter)


def as_stream(seed) -> SeedStream:
    if isinstance(seed, SeedStream):
        return seed
    return SeedStream(int(seed))


def _unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    z = rng.standard_normal((n, d))
    norms = np.sqrt(np.sum(z * z, axis=1))
    bad = norms == 0.0
    # an all-zero Gaussian row is measure zero but representable; redraw it
    while np.any(bad):
        z[bad] = rng.standard_normal((int(bad.sum()), d))
        norms = np.sqrt(np.sum(z * z, axis=1))
        bad = norms == 0.0
    return z / norms[:, None]


def sample_sphere(stream: SeedStream, d: int, size: int | None = None) -> np.ndarray:
    """Uniform draw(s) from the Euclidean unit sphere in R^d.

    Returns shape ``(d,)`` when ``size`` is None, else ``(size, d)``.
    """
    if d < 1:
        raise DomainError(f"sphere dimension must be >= 1, got {d}")
    rng = stream.generator()
    out = _unit_rows(rng, 1 if size is None else size, d)
    return out[0] if size is None else out


def sample_ball(stream: SeedStream, d: int, size: int) -> np.ndarray:
    """Uniform draws from the Euclidean unit ball (radius by inverse CDF ``U**(1/d)``)."""
    if d < 1:
        raise DomainError(f"ball dimension must be >= 1, got {d}")
    rng = stream.generator()
    u = _unit_rows(rng, size, d)
    r = rng.random(size) ** (1.0 / d)
    return u * r[:, None]


# ---------------------------------------------------------------------------
# heavy-tailed stochastic noise
# ---------------------------------------------------------------------------

NOISE_KINDS = ("none", "pareto", "student")


@dataclass(frozen=True)
class StochasticNoiseModel:
    """Radially symmetric noise vector ``xi = R * v`` with ``v`` uniform on the sphere.

    The objective seen by the oracle is ``f(x, xi) = f(x) + <xi, x - x_ref>``,
    so ``E[f(x, xi)] = f(x)`` and the per-sample Lipschitz constant grows by
    ``||xi||_2 = R``.

    kind
        ``"none"``, ``"pareto"`` (``R = scale * U**(-1/alpha)``, tail index
        ``alpha``) or ``"student"`` (``R = scale * |t_dof|``).
    """

    kind: str = "none"
    alpha: float = 2.0
    scale: float = 1.0
    x_ref: tuple | None = None

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ConfigurationError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if self.scale < 0:
            raise ConfigurationError("noise scale must be non-negative")
        if self.kind != "none" and self.alpha <= 0:
            raise ConfigurationError("tail parameter must be positive")

    @property
    def active(self) -> bool:
        return self.kind != "none" and self.scale > 0

    def check_moment(self, kappa: float) -> None:
        """Raise unless ``E[R^(1+kappa)]`` is finite."""
        if self.kind != "none" and self.alpha <= 1.0 + kappa:
            raise ConfigurationError(
                f"moment assumption violated: tail parameter {self.alpha} must exceed 1 + kappa = {1 + kappa}"
            )

    def radial_moment(self, power: float) -> float:
        """Closed-form ``E[R^power]`` (``inf`` when the moment does not exist)."""
        if not self.active:
            return 0.0
        a, s = self.alpha, self.scale
        if power >= a:
            return math.inf
        if self.kind == "pareto":
            return a * s**power / (a - power)
        # E|t_nu|^p = nu^(p/2) Gamma((p+1)/2) Gamma((nu-p)/2) / (sqrt(pi) Gamma(nu/2))
        logm = (
            0.5 * power * math.log(a)
            + special.gammaln(0.5 * (power + 1))
            + special.gammaln(0.5 * (a - power))
            - 0.5 * math.log(math.pi)
            - special.gammaln(0.5 * a)
        )
        return s**power * math.exp(logm)

    def effective_lipschitz(self, base: float, kappa: float) -> float:
        """Upper bound on ``E[(base + R)^(1+kappa)]^(1/(1+kappa))`` via Minkowski."""
        self.check_moment(kappa)
        p = 1.0 + kappa
        return base + self.radial_moment(p) ** (1.0 / p)

    def sample_radius(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if not self.active:
            return np.zeros(n)
        if self.kind == "pareto":
            # 1 - U lies in (0, 1], which keeps the power finite
            return self.scale * (1.0 - rng.random(n)) ** (-1.0 / self.alpha)
        return self.scale * np.abs(rng.standard_t(self.alpha, n))

    def draw(self, rng: np.random.Generator, n: int, d: int) -> np.ndarray:
        if not self.active:
            return np.zeros((n, d))
        v = _unit_rows(rng, n, d)
        return v * self.sample_radius(rng, n)[:, None]


def sample_noise(model: StochasticNoiseModel, stream: SeedStream, d: int,
                 kappa: float | None = None, size: int | None = None) -> np.ndarray:
    """Draw noise vector(s) ``xi``; ``kappa`` enables the moment-assumption check."""
    if kappa is not None:
        model.check_moment(kappa)
    rng = stream.generator()
    out = model.draw(rng, 1 if size is None else size, d)
    return out[0] if size is None else out


class Estimate(NamedTuple):
    mean: float
    stderr: float


def moment_report(model: StochasticNoiseModel, kappa: float, n_samples: int,
                  stream: SeedStream | int = 0, d: int = 16) -> Estimate:
    """Empirical ``E[||xi||^(1+kappa)]^(1/(1+kappa))`` with a delta-method standard error."""
    if n_samples < 10_000:
        raise DomainError("moment_report needs at least 10^4 samples")
    if not model.active:
        return Estimate(0.0, 0.0)
    model.check_moment(kappa)
    stream = as_stream(stream)
    p = 1.0 + kappa
    # ||xi||_2 = R exactly, so only the radius is sampled
    r = model.sample_radius(stream.generator(), n_samples)
    vals = r**p
    m = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / math.sqrt(n_samples))
    value = m ** (1.0 / p)
    return Estimate(value, value / (p * m) * se)
