"""Linear extrapolation of the treatment effect and its uniform band.

Under local linearity on ``[-delta_lo, delta_hi]`` the effect at ``x`` is
``tau + tau' x``. The studentised process over that interval is the
projection of a bivariate normal onto an arc of unit directions, so the
distribution of its supremum depends only on the arc angle ``ell``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .errors import DomainError
from .inference import chi2_quantile_2df, normal_quantile
from .linalg2 import require_pd

VARIANTS = ("uniform", "envelope")


def _point(estimates):
    if hasattr(estimates, "center"):
        return estimates.center
    return float(estimates[0]), float(estimates[1])


def extrapolate_point(estimates, x: float) -> float:
    """Extrapolated effect ``tau + tau' x``."""
    tau, slope = _point(estimates)
    return tau + slope * x


def _gram(omega_h, x, y):
    return (omega_h[0][0] + (x + y) * omega_h[0][1] + x * y * omega_h[1][1])


def direction_angle(omega_h, delta_lo: float, delta_hi: float) -> float:
    """Angle between the standardised directions at ``-delta_lo`` and ``delta_hi``.

    Computed from inner products ``g(x, y) = (1, x) omega_h (1, y)'`` so no
    matrix square root is needed.
    """
    omega_h = require_pd(omega_h)
    g_lh = _gram(omega_h, -delta_lo, delta_hi)
    g_ll = _gram(omega_h, -delta_lo, -delta_lo)
    g_hh = _gram(omega_h, delta_hi, delta_hi)
    cos = g_lh / math.sqrt(g_ll * g_hh)
    return float(math.acos(min(1.0, max(-1.0, cos))))


def _check_angle(arc_angle):
    if not (0.0 <= arc_angle <= math.pi):
        raise DomainError(f"arc angle must lie in [0, pi], got {arc_angle!r}")


def _integrand(u, s2):
    c = math.cos(u)
    if c <= 0.0:
        return 1.0
    return -math.expm1(-s2 / (2.0 * c * c))


def band_coverage_probability(s: float, arc_angle: float) -> float:
    """Distribution function of the supremum statistic at ``s``.

    P(s) = (ell/pi) (1 - exp(-s^2/2))
           + (2/pi) int_0^{pi/2 - ell/2} 1 - exp(-s^2 / (2 cos(u)^2)) du
    """
    if s < 0:
        raise DomainError("s must be nonnegative")
    _check_angle(arc_angle)
    s2 = s * s
    rayleigh = -math.expm1(-0.5 * s2)
    upper = 0.5 * math.pi - 0.5 * arc_angle
    integral = 0.0
    if upper > 0.0 and s2 > 0.0:
        integral, _ = quad(_integrand, 0.0, upper, args=(s2,), epsabs=1e-12, epsrel=1e-12,
                           limit=200)
    return min(1.0, arc_angle / math.pi * rayleigh + 2.0 / math.pi * integral)


def critical_value(alpha: float, arc_angle: float) -> float:
    """Solve ``P(c) = 1 - alpha`` for the band critical value.

    The root lies between the normal quantile (``ell = 0``) and the
    Rayleigh quantile (``ell = pi``).
    """
    if not (0.0 < alpha < 1.0):
        raise DomainError("alpha must lie in (0, 1)", code="bad_alpha")
    _check_angle(arc_angle)
    lo = normal_quantile(1.0 - alpha / 2.0)
    hi = math.sqrt(chi2_quantile_2df(1.0 - alpha))
    if arc_angle == 0.0:
        return lo
    if arc_angle == math.pi:
        return hi
    target = 1.0 - alpha

    def f(s):
        return band_coverage_probability(s, arc_angle) - target

    a, b = lo - 1e-6, hi + 1e-6
    fa, fb = f(a), f(b)
    if fa >= 0.0:
        return a if fa == 0.0 else lo
    if fb <= 0.0:
        return hi
    return float(brentq(f, a, b, xtol=1e-12, rtol=4 * np.finfo(float).eps, maxiter=200))


@dataclass(frozen=True)
class BandRequest:
    delta_lo: float = 0.0
    delta_hi: float = 0.0
    grid_size: int = 101
    alpha: float = 0.05
    variant: str = "uniform"

    def __post_init__(self):
        if not (self.delta_lo >= 0 and self.delta_hi >= 0):
            raise DomainError("extrapolation deltas must be >= 0", code="bad_delta")
        if int(self.grid_size) != self.grid_size or self.grid_size < 2:
            raise DomainError("grid_size must be an integer >= 2", code="bad_grid")
        if not (0.0 < self.alpha < 1.0):
            raise DomainError("alpha must lie in (0, 1)", code="bad_alpha")
        if self.variant not in VARIANTS:
            raise DomainError(f"unknown band variant {self.variant!r}", code="bad_band")

    def grid(self) -> np.ndarray:
        if self.delta_lo == 0 and self.delta_hi == 0:
            return np.zeros(1)
        xs = np.linspace(-self.delta_lo, self.delta_hi, int(self.grid_size))
        return np.unique(np.concatenate([xs, [0.0, -self.delta_lo, self.delta_hi]]))


@dataclass(frozen=True, eq=False)
class UniformBand:
    xs: np.ndarray
    center: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    c_star: float
    arc_angle: float
    variant: str = "uniform"

    @property
    def half_width(self) -> np.ndarray:
        return self.hi - self.center

    def covers(self, truth) -> bool:
        """True when ``truth`` (values on ``xs``) lies inside at every grid point."""
        truth = np.asarray(truth, dtype=float)
        return bool(np.all((self.lo <= truth) & (truth <= self.hi)))


def uniform_band(estimates, omega, request: BandRequest) -> UniformBand:
    """Simultaneous band for the extrapolated effect on the request grid.

    ``omega`` is an ``OmegaMatrix`` or a 2x2 covariance of ``(tau, tau')``.
    The envelope variant uses ``sqrt(chi2_2 quantile)`` in place of ``c*``.
    """
    omega_h = np.asarray(getattr(omega, "omega_h", omega), dtype=float)
    require_pd(omega_h)
    tau, slope = _point(estimates)
    ell = direction_angle(omega_h, request.delta_lo, request.delta_hi)
    if request.variant == "uniform":
        c = critical_value(request.alpha, ell)
    else:
        c = math.sqrt(chi2_quantile_2df(1.0 - request.alpha))
    xs = request.grid()
    center = tau + slope * xs
    half = c * np.sqrt(_gram(omega_h, xs, xs))
    return UniformBand(xs=xs, center=center, lo=center - half, hi=center + half,
                       c_star=float(c), arc_angle=ell, variant=request.variant)
