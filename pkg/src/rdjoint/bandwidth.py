"""Simplified plug-in bandwidths.

Global polynomial pilots on each side give the curvature, residual variance
and a boundary density estimate; these are plugged into the leading terms
of the boundary MSE of a local polynomial derivative estimator.
"""

from __future__ import annotations

import math
import warnings

import numpy as np

from .data import Sample
from .errors import EstimationError, RDWarning
from .locpoly import KernelLike, get_kernel

MIN_PER_SIDE = 20
_NEGLIGIBLE = 1e-8

_nodes, _wts = np.polynomial.legendre.leggauss(40)


def kernel_moments(kernel: KernelLike, degree: int, side: str = "right"):
    """Continuum one-sided moment matrices ``(Gamma, vartheta, Lambda)``.

    Gamma = int K r r', vartheta = int K r u^(degree+1), Lambda = int K^2 r r'
    over ``[0, 1]`` (right) or ``[-1, 0]`` (left), with ``r = r_degree(u)``.
    Gauss-Legendre with 40 nodes is exact for the polynomial kernels used here.
    """
    kern = get_kernel(kernel)
    lo, hi = (0.0, 1.0) if side == "right" else (-1.0, 0.0)
    u = 0.5 * (hi - lo) * _nodes + 0.5 * (hi + lo)
    w = 0.5 * (hi - lo) * _wts
    k = kern(u)
    R = np.vander(u, degree + 1, increasing=True)
    gamma = R.T @ ((w * k)[:, None] * R)
    vartheta = R.T @ (w * k * u ** (degree + 1))
    lam = R.T @ ((w * k * k)[:, None] * R)
    return gamma, vartheta, lam


def _constants(kernel, degree, nu, side):
    gamma, vartheta, lam = kernel_moments(kernel, degree, side)
    ginv = np.linalg.inv(gamma)
    bias = (ginv @ vartheta)[nu]
    var = (ginv @ lam @ ginv)[nu, nu]
    return bias, var


def _pilot(x, y, order):
    """Global polynomial fit in standardised units; returns derivative helpers."""
    sx = np.std(x) or 1.0
    sy = np.std(y) or 1.0
    coef = np.polynomial.polynomial.polyfit(x / sx, y / sy, order)
    resid = y / sy - np.polynomial.polynomial.polyval(x / sx, coef)
    dof = max(x.size - order - 1, 1)
    sigma2 = float(resid @ resid / dof) * sy * sy

    def deriv(j):
        # j-th derivative at 0 in original units, plus its standardised size
        std = coef[j] if j < coef.size else 0.0
        return math.factorial(j) * std * sy / sx**j, abs(std)

    return deriv, sigma2


def _optimal(n, nu, order, bias_terms, var_terms):
    A = sum(t * t for t in bias_terms)
    Vc = sum(var_terms)
    if not (A > 0 and Vc > 0 and math.isfinite(A) and math.isfinite(Vc)):
        return None
    return ((2 * nu + 1) * Vc / (2.0 * (order + 1 - nu) * A * n)) ** (1.0 / (2 * order + 3))


def rule_of_thumb_bandwidths(sample: Sample, p: int = 1, kernel: KernelLike = "triangular",
                             q: int | None = None) -> tuple[float, float]:
    """Plug-in main and pilot bandwidths ``(h, b)``.

    ``h`` minimises the sum over sides of squared leading bias plus variance
    of the order-``p`` boundary level estimate, so it scales as
    ``n^(-1/(2p+3))``; ``b`` does the same for the ``(p+1)``-th derivative
    estimated with order ``q`` (default ``p + 1``). Both are clamped to
    ``(0, max|X - c|]``. A pilot with vanishing curvature, residual variance
    or boundary density falls back to ``sd(X) * n^(-1/(2 order + 3))`` with a
    warning.
    """
    q = p + 1 if q is None else q
    x = sample.x
    y = sample.outcome
    n = sample.n
    sides = {"right": sample.right, "left": sample.left}
    for name, mask in sides.items():
        if mask.sum() < MIN_PER_SIDE:
            raise EstimationError(
                f"bandwidth selection needs >= {MIN_PER_SIDE} observations on the {name} side",
                code="insufficient_data",
            )
    order = max(p + 2, q + 1)
    sd_x = float(np.std(x, ddof=1))
    span = float(np.max(np.abs(x)))
    w_pilot = min(1.06 * sd_x * n ** (-0.2), span)

    pilots = {}
    for name, mask in sides.items():
        deriv, sigma2 = _pilot(x[mask], y[mask], order)
        near = np.abs(x[mask]) < w_pilot if name == "left" else x[mask] < w_pilot
        dens = near.sum() / (n * w_pilot) if w_pilot > 0 else 0.0
        pilots[name] = (deriv, sigma2, dens)

    def select(nu, degree, target):
        bias_terms, var_terms = [], []
        for name, (deriv, sigma2, dens) in pilots.items():
            m, size = deriv(target)
            if size < _NEGLIGIBLE or dens <= 0:
                return None
            bconst, vconst = _constants(kernel, degree, nu, name)
            fact = math.factorial(nu) / math.factorial(degree + 1)
            bias_terms.append(fact * bconst * m)
            var_terms.append(math.factorial(nu) ** 2 * sigma2 / dens * vconst)
        return _optimal(n, nu, degree, bias_terms, var_terms)

    h = select(0, p, p + 1)
    if h is None:
        warnings.warn(RDWarning("degenerate pilot for h; using sd(X) * n^(-1/(2p+3))",
                                "bandwidth_fallback"))
        h = sd_x * n ** (-1.0 / (2 * p + 3))
    b = select(p + 1, q, q + 1)
    if b is None:
        warnings.warn(RDWarning("degenerate pilot for b; using sd(X) * n^(-1/(2q+3))",
                                "bandwidth_fallback"))
        b = sd_x * n ** (-1.0 / (2 * q + 3))
    return float(min(h, span)), float(min(b, span))
