"""Kernels and one-sided local polynomial least squares.

Fits are carried out in the scaled basis ``r_p(x / h) = (1, x/h, ..., (x/h)^p)``
so that the moment matrices stay well conditioned for any bandwidth;
derivatives are recovered by dividing by powers of the bandwidth.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Union

import numpy as np
import scipy.linalg

from .data import KERNELS, Sample
from .errors import DomainError, EstimationError, RDWarning

COND_WARN = 1e10
RANK_TOL = 1e-10


@dataclass(frozen=True)
class Kernel:
    """Second-order kernel supported on ``[-1, 1]``.

    ``scale`` multiplies the kernel; estimates do not depend on it.
    """

    name: str = "triangular"
    scale: float = 1.0

    def __post_init__(self):
        if self.name not in KERNELS:
            raise DomainError(f"unknown kernel {self.name!r}", code="bad_kernel")
        if not self.scale > 0:
            raise DomainError("kernel scale must be positive")

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        a = np.abs(u)
        inside = a <= 1.0
        if self.name == "triangular":
            w = np.where(inside, 1.0 - a, 0.0)
        elif self.name == "epanechnikov":
            w = np.where(inside, 0.75 * (1.0 - u * u), 0.0)
        else:
            w = np.where(inside, 0.5, 0.0)
        return self.scale * w


KernelLike = Union[Kernel, str]


def get_kernel(kernel: KernelLike) -> Kernel:
    return kernel if isinstance(kernel, Kernel) else Kernel(kernel)


def kernel_weight(kernel: KernelLike, u: float) -> float:
    """Evaluate ``K(u)`` for a single point."""
    return float(get_kernel(kernel)(u))


@dataclass(frozen=True, eq=False)
class OneSidedFit:
    """Result of a one-sided kernel-weighted polynomial fit.

    All per-observation arrays have the full sample length; observations
    on the other side of the cutoff or outside the window carry zero weight.
    ``smoother`` is the ``(degree + 1, n)`` matrix with
    ``beta_scaled = smoother @ y``.
    """

    side: str
    degree: int
    bandwidth: float
    beta_scaled: np.ndarray
    Gamma: np.ndarray
    vartheta: np.ndarray
    weights: np.ndarray
    residuals: np.ndarray
    u: np.ndarray
    n_effective: int
    smoother: np.ndarray

    @property
    def n(self) -> int:
        return self.weights.size

    @property
    def level(self) -> float:
        return float(self.beta_scaled[0])

    @property
    def slope(self) -> float:
        return float(self.beta_scaled[1] / self.bandwidth)

    def derivative(self, order: int) -> float:
        return float(math.factorial(order) * self.beta_scaled[order] / self.bandwidth**order)

    @property
    def design(self) -> np.ndarray:
        """Matrix ``R`` with rows ``r_degree(X_i / bandwidth)``."""
        return np.vander(self.u, self.degree + 1, increasing=True)


def fit_local_polynomial(x, y, mask, degree: int, bandwidth: float,
                         kernel: KernelLike = "triangular", side: str = "right") -> OneSidedFit:
    """Weighted least squares of ``y`` on ``r_degree(x / bandwidth)``.

    Parameters
    ----------
    x, y : array-like
        Recentred running variable and response, full sample.
    mask : array-like of bool
        Observations eligible for the fit (one side of the cutoff).
    degree, bandwidth, kernel
        Polynomial order, window half-width and kernel.

    Raises
    ------
    EstimationError
        If the window is empty or holds fewer than ``degree + 1`` distinct
        points, or the weighted design is rank deficient.
    """
    kern = get_kernel(kernel)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    u = x / bandwidth
    weights = np.where(np.asarray(mask, dtype=bool), kern(u) / bandwidth, 0.0)
    active = weights > 0.0
    n_eff = int(active.sum())
    label = f"{side} side, order {degree}"
    if n_eff == 0:
        raise EstimationError(f"empty window ({label})", code="empty_window")
    if np.unique(x[active]).size < degree + 1:
        raise EstimationError(f"singular local design ({label})", code="singular_design")

    R = np.vander(u[active], degree + 1, increasing=True)
    w = weights[active]
    sw = np.sqrt(w)
    q_mat, r_mat, piv = scipy.linalg.qr(sw[:, None] * R, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r_mat))
    if diag[-1] <= RANK_TOL * diag[0]:
        raise EstimationError(f"singular local design ({label})", code="singular_design")
    # rows of (R'WR)^-1 R'W without forming the normal equations
    rows = scipy.linalg.solve_triangular(r_mat, q_mat.T) * sw
    smoother = np.zeros((degree + 1, n))
    smoother[np.ix_(piv, np.flatnonzero(active))] = rows
    beta = smoother[:, active] @ y[active]

    wR = w[:, None] * R
    gamma = R.T @ wR / n
    vartheta = wR.T @ u[active] ** (degree + 1) / n
    cond = np.linalg.cond(gamma)
    if cond > COND_WARN:
        warnings.warn(RDWarning(f"ill-conditioned local design ({label}): cond={cond:.3g}",
                                 "ill_conditioned"))

    residuals = np.zeros(n)
    residuals[active] = y[active] - R @ beta
    for arr in (weights, residuals, smoother):
        arr.setflags(write=False)
    return OneSidedFit(
        side=side, degree=degree, bandwidth=float(bandwidth), beta_scaled=beta,
        Gamma=gamma, vartheta=vartheta, weights=weights, residuals=residuals,
        u=u, n_effective=n_eff, smoother=smoother,
    )


def fit_one_sided(sample: Sample, outcome_selector: str, side: str, degree: int,
                  bandwidth: float, kernel: KernelLike = "triangular") -> OneSidedFit:
    """Fit one side of the cutoff; ``outcome_selector`` is ``"y"`` or ``"t"``."""
    if side == "right":
        mask = sample.right
    elif side == "left":
        mask = sample.left
    else:
        raise DomainError(f"side must be 'left' or 'right', got {side!r}")
    if not mask.any():
        which = "treated" if side == "right" else "control"
        raise EstimationError(f"empty {which} side", code=f"empty_{which}_side")
    return fit_local_polynomial(sample.x, sample.response(outcome_selector), mask,
                                degree, bandwidth, kernel, side=side)


def bias_constants(fit: OneSidedFit) -> tuple[float, float]:
    """Leading-bias constants ``(e0' G^-1 theta, e1' G^-1 theta)`` of a fit.

    Computed as the fit's smoother applied to ``u^(p+1)``, which equals
    ``G^-1 theta`` without solving the normal equations.
    """
    sol = fit.smoother[:2] @ fit.u ** (fit.degree + 1)
    return float(sol[0]), float(sol[1])
