"""Joint Wald region for ``(tau, tau')`` and marginal robust intervals."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import DomainError, InferenceError
from .linalg2 import inv2, require_pd, sqrtm2


def chi2_quantile_2df(prob: float) -> float:
    """Quantile of the chi-square distribution with two degrees of freedom."""
    if not (0.0 < prob < 1.0):
        raise DomainError(f"probability must lie in (0, 1), got {prob!r}", code="bad_probability")
    return -2.0 * math.log1p(-prob)


def normal_quantile(prob):
    """Standard normal quantile; accepts scalars or arrays."""
    prob_arr = np.asarray(prob, dtype=float)
    if np.any((prob_arr <= 0.0) | (prob_arr >= 1.0)):
        raise DomainError("probability must lie in (0, 1)", code="bad_probability")
    out = ndtri(prob_arr)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class ConfidenceRegion:
    """Ellipse ``{(t, t'): D' shape^-1 D <= chi2_crit}`` with ``D = center - (t, t')``."""

    center: tuple
    shape: np.ndarray
    level: float
    chi2_crit: float

    def __post_init__(self):
        shape = np.array(self.shape, dtype=float)
        require_pd(shape)
        shape.setflags(write=False)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        object.__setattr__(self, "_inv", inv2(shape))

    def contains(self, t: float, t_prime: float) -> bool:
        return wald_statistic(self, t, t_prime) <= self.chi2_crit


def confidence_region(center, omega_h, alpha: float) -> ConfidenceRegion:
    """Build the ``1 - alpha`` region around ``center`` with covariance ``omega_h``."""
    if not (0.0 < alpha < 1.0):
        raise DomainError("alpha must lie in (0, 1)", code="bad_alpha")
    return ConfidenceRegion(center=tuple(center), shape=omega_h, level=1.0 - alpha,
                            chi2_crit=chi2_quantile_2df(1.0 - alpha))


def wald_statistic(region: ConfidenceRegion, t: float, t_prime: float) -> float:
    d0 = region.center[0] - t
    d1 = region.center[1] - t_prime
    inv = region._inv
    return float(d0 * d0 * inv[0, 0] + d0 * d1 * (inv[0, 1] + inv[1, 0]) + d1 * d1 * inv[1, 1])


def region_boundary(region: ConfidenceRegion, n_points: int = 256) -> list[tuple[float, float]]:
    """Points on the ellipse boundary at equally spaced angles of the unit circle."""
    if n_points < 8:
        raise DomainError("n_points must be at least 8")
    root = sqrtm2(region.shape) * math.sqrt(region.chi2_crit)
    theta = 2.0 * math.pi * np.arange(n_points) / n_points
    circle = np.vstack([np.cos(theta), np.sin(theta)])
    pts = root @ circle
    cx, cy = region.center
    return [(cx + float(a), cy + float(b)) for a, b in zip(pts[0], pts[1])]


def rbc_marginal_interval(estimate: float, variance: float, alpha: float) -> tuple[float, float]:
    """Two-sided normal interval ``estimate +/- z_{1-alpha/2} * sqrt(variance)``."""
    if not (variance > 0.0) or not math.isfinite(variance):
        raise InferenceError(f"non-positive variance {variance!r}", code="degenerate_covariance")
    if not (0.0 < alpha < 1.0):
        raise DomainError("alpha must lie in (0, 1)", code="bad_alpha")
    half = normal_quantile(1.0 - alpha / 2.0) * math.sqrt(variance)
    return estimate - half, estimate + half
