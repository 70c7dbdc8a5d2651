"""Two-point gradient estimator, norm clipping and smoothing diagnostics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import NoisyOracle, lp_norm
from .errors import DomainError
from .randomness import Estimate, SeedStream, as_stream, sample_ball, _unit_rows


@dataclass(frozen=True)
class GradientSample:
    """``g = lam * e`` with ``lam = d/(2 tau) * (phi_plus - phi_minus)``."""

    g: np.ndarray
    direction: np.ndarray
    phi_plus: float
    phi_minus: float
    tau: float

    @property
    def scale(self) -> float:
        d = self.direction.shape[-1]
        return d / (2.0 * self.tau) * (self.phi_plus - self.phi_minus)


@dataclass(frozen=True)
class ClippedGradient:
    g: np.ndarray
    clip_level: float
    was_clipped: bool


def two_point(oracle: NoisyOracle, x, tau: float, e, xi):
    """Vectorised estimator over rows of ``x``/``e``/``xi``; returns ``(g, phi_plus, phi_minus)``."""
    d = e.shape[-1]
    step = tau * e
    plus, minus = oracle.evaluate_pair(x + step, x - step, xi)
    lam = (d / (2.0 * tau)) * (plus - minus)
    return lam[..., None] * e, plus, minus


def estimate_gradient(oracle: NoisyOracle, x, tau: float, stream: SeedStream | int) -> GradientSample:
    """One sphere draw plus one two-point oracle call at ``x +/- tau*e``."""
    if tau <= 0:
        raise DomainError("tau must be positive")
    stream = as_stream(stream)
    x = np.asarray(x, float)
    d = x.shape[-1]
    rng = stream.generator()
    e = _unit_rows(rng, 1, d)[0]
    xi = oracle.stochastic_noise.draw(rng, 1, d)[0]
    g, plus, minus = two_point(oracle, x, tau, e, xi)
    return GradientSample(g, e, float(plus), float(minus), tau)


def clip_rows(g: np.ndarray, c: float, q: float) -> np.ndarray:
    """Rescale rows with ``||g||_q > c`` to norm ``c``; other rows pass through untouched."""
    n = lp_norm(g, q)[..., None]
    out = np.where(n > c, g * (c / np.where(n > 0, n, 1.0)), g)
    # rounding can leave a rescaled row one ulp above c; shrink those rows until they comply
    over = lp_norm(out, q) > c
    while np.any(over):
        out[over] *= 1.0 - 2.0**-52
        over = lp_norm(out, q) > c
    return out


def clip(g, c: float, q: float = 2.0) -> ClippedGradient:
    if not c > 0:
        raise DomainError(f"clip level must be positive, got {c}")
    if q < 2:
        raise DomainError(f"clipping norm exponent must be >= 2, got {q}")
    g = np.asarray(g, float)
    out = clip_rows(g, c, q)
    return ClippedGradient(out, c, bool(np.any(lp_norm(g, q) > c)))


def estimate_smoothed_value(oracle: NoisyOracle, x, tau: float, n_samples: int,
                            stream: SeedStream | int) -> Estimate:
    """Monte Carlo estimate of ``E_{u, xi}[phi(x + tau*u, xi)]`` with u uniform in the unit ball."""
    if n_samples < 1:
        raise DomainError("n_samples must be >= 1")
    stream = as_stream(stream)
    x = np.asarray(x, float)
    d = x.shape[-1]
    u = sample_ball(stream, d, n_samples)
    xi = oracle.stochastic_noise.draw(stream.generator(), n_samples, d)
    vals = oracle.evaluate(x + tau * u, xi)
    se = float(np.std(vals, ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else math.inf
    return Estimate(float(np.mean(vals)), se)


def sample_gradients(oracle: NoisyOracle, x, tau: float, n_samples: int, stream: SeedStream | int,
                     chunk: int = 200_000) -> np.ndarray:
    """``n_samples`` independent estimator draws at a fixed point, shape ``(n, d)``."""
    stream = as_stream(stream)
    x = np.asarray(x, float)
    d = x.shape[-1]
    out = np.empty((n_samples, d))
    for start in range(0, n_samples, chunk):
        m = min(chunk, n_samples - start)
        rng = stream.generator()
        e = _unit_rows(rng, m, d)
        xi = oracle.stochastic_noise.draw(rng, m, d)
        out[start:start + m] = two_point(oracle, np.broadcast_to(x, (m, d)), tau, e, xi)[0]
    return out


def moment_check(oracle: NoisyOracle, x, tau: float, q: float, kappa: float, n_samples: int,
                 stream: SeedStream | int) -> Estimate:
    """Empirical ``E||g||_q^(1+kappa)`` with its standard error."""
    if n_samples < 10_000:
        raise DomainError("moment_check needs at least 10^4 samples")
    g = sample_gradients(oracle, x, tau, n_samples, stream)
    vals = lp_norm(g, q) ** (1.0 + kappa)
    return Estimate(float(np.mean(vals)), float(np.std(vals, ddof=1) / math.sqrt(n_samples)))
