"""Sharp-design estimation with robust bias correction.

Point estimates of the jump and slope-jump at the cutoff, their
bias-corrected versions, nearest-neighbour conditional variances and the
finite-sample sandwich covariance of the bias-corrected pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import FitSpec, Sample, _in_window
from .errors import EstimationError
from .linalg2 import require_pd
from .locpoly import OneSidedFit, bias_constants, fit_one_sided, get_kernel


@dataclass(frozen=True, eq=False)
class JointEstimates:
    """Raw and bias-corrected estimates of ``(tau, tau')`` at the cutoff.

    ``right_p``/``left_p`` are the order-``p`` fits with bandwidth ``h``;
    ``right_q``/``left_q`` the order-``q`` pilot fits with bandwidth ``b``.
    """

    tau_hat: float
    tau_prime_hat: float
    mu_p1_right: float
    mu_p1_left: float
    tau_tilde: float
    tau_prime_tilde: float
    right_p: OneSidedFit
    left_p: OneSidedFit
    right_q: OneSidedFit
    left_q: OneSidedFit
    B_right: float
    B_left: float
    Bp_right: float
    Bp_left: float
    p: int
    q: int
    h: float
    b: float

    @property
    def n(self) -> int:
        return self.right_p.n

    @property
    def center(self) -> tuple[float, float]:
        return self.tau_tilde, self.tau_prime_tilde


def _fit(sample, selector, side, degree, bandwidth, kernel):
    try:
        return fit_one_sided(sample, selector, side, degree, bandwidth, kernel)
    except EstimationError as exc:
        if exc.code in ("empty_treated_side", "empty_control_side"):
            raise
        raise EstimationError(f"{exc} [outcome {selector}]", code=exc.code) from None


def estimate_sharp(sample: Sample, spec: FitSpec, outcome: str = "y") -> JointEstimates:
    """Local polynomial estimates of the jump and slope-jump, with bias correction."""
    p, q, h, b = spec.p, spec.q, spec.h, spec.b
    kernel = get_kernel(spec.kernel)
    right_p = _fit(sample, outcome, "right", p, h, kernel)
    left_p = _fit(sample, outcome, "left", p, h, kernel)
    right_q = _fit(sample, outcome, "right", q, b, kernel)
    left_q = _fit(sample, outcome, "left", q, b, kernel)

    B_r, Bp_r = bias_constants(right_p)
    B_l, Bp_l = bias_constants(left_p)
    mu_r = right_q.derivative(p + 1)
    mu_l = left_q.derivative(p + 1)
    fact = math.factorial(p + 1)

    tau_hat = right_p.level - left_p.level
    tau_prime_hat = right_p.slope - left_p.slope
    tau_tilde = tau_hat - h ** (p + 1) * (B_r * mu_r - B_l * mu_l) / fact
    tau_prime_tilde = tau_prime_hat - h**p * (Bp_r * mu_r - Bp_l * mu_l) / fact
    return JointEstimates(
        tau_hat=tau_hat, tau_prime_hat=tau_prime_hat,
        mu_p1_right=mu_r, mu_p1_left=mu_l,
        tau_tilde=tau_tilde, tau_prime_tilde=tau_prime_tilde,
        right_p=right_p, left_p=left_p, right_q=right_q, left_q=left_q,
        B_right=B_r, B_left=B_l, Bp_right=Bp_r, Bp_left=Bp_l,
        p=p, q=q, h=float(h), b=float(b),
    )


@dataclass(frozen=True, eq=False)
class VarianceDiagonals:
    """Per-observation conditional (co)variance estimates.

    ``yt`` may violate the Cauchy-Schwarz bound; nearest-neighbour products
    are not projected back.
    """

    y: np.ndarray
    t: Optional[np.ndarray] = None
    yt: Optional[np.ndarray] = None


def _neighbour_means(xs, values, J):
    """Mean of ``values`` over the ``J`` nearest same-side neighbours of each point."""
    m = xs.size
    order = np.argsort(xs, kind="stable")
    xs_sorted = xs[order]
    offsets = np.array([s * k for k in range(1, J + 1) for s in (-1, 1)])
    pos = np.arange(m)[:, None] + offsets[None, :]
    valid = (pos >= 0) & (pos < m)
    pos_c = np.clip(pos, 0, m - 1)
    dist = np.where(valid, np.abs(xs_sorted[pos_c] - xs_sorted[:, None]), np.inf)
    pick = np.argsort(dist, axis=1, kind="stable")[:, :J]
    nbr = np.take_along_axis(pos_c, pick, axis=1)
    means = []
    for v in values:
        v_sorted = v[order]
        mean_sorted = v_sorted[nbr].mean(axis=1)
        out = np.empty(m)
        out[order] = mean_sorted
        means.append(out)
    return means


def nn_variance(sample: Sample, spec: FitSpec, include_treatment: bool = False) -> VarianceDiagonals:
    """Nearest-neighbour conditional variance estimates.

    For each observation the ``J = spec.nn_neighbors`` closest observations on
    the same side of the cutoff (excluding itself) give a local mean, and

        sigma2_i = J / (J + 1) * (Y_i - mean_J)^2.

    Entries for observations outside both the ``h`` and ``b`` windows are
    set to zero; they carry no weight in any sandwich.
    """
    J = spec.nn_neighbors
    x = sample.x
    y = sample.outcome
    t = sample.response("t") if include_treatment else None
    keep = _in_window(x, spec.h, spec.kernel) | _in_window(x, spec.b, spec.kernel)
    sig_y = np.zeros(sample.n)
    sig_t = np.zeros(sample.n) if include_treatment else None
    sig_yt = np.zeros(sample.n) if include_treatment else None
    factor = J / (J + 1.0)
    for name, side in (("control", sample.left), ("treated", sample.right)):
        m = int(side.sum())
        if m <= J:
            raise EstimationError(
                f"insufficient neighbors on the {name} side ({m} observations, J={J})",
                code="insufficient_neighbors",
            )
        values = [y[side]] if t is None else [y[side], t[side]]
        means = _neighbour_means(x[side], values, J)
        dy = y[side] - means[0]
        sig_y[side] = factor * dy * dy
        if t is not None:
            dt = t[side] - means[1]
            sig_t[side] = factor * dt * dt
            sig_yt[side] = factor * dy * dt
    for arr in (sig_y, sig_t, sig_yt):
        if arr is not None:
            arr[~keep] = 0.0
    return VarianceDiagonals(y=sig_y, t=sig_t, yt=sig_yt)


@dataclass(frozen=True)
class OmegaMatrix:
    """Joint covariance of the bias-corrected pair.

    ``V``, ``Vp`` and ``C`` are in the scaling of ``(tau_tilde, h * tau_prime_tilde)``;
    ``omega_h`` is the covariance of ``(tau_tilde, tau_prime_tilde)`` itself.
    """

    V: float
    Vp: float
    C: float
    h: float
    omega_h: np.ndarray

    @property
    def scaled(self) -> np.ndarray:
        return np.array([[self.V, self.C], [self.C, self.Vp]])

    @classmethod
    def from_scaled(cls, mat, h: float, check: bool = True) -> "OmegaMatrix":
        mat = np.asarray(mat, dtype=float)
        V, C, Vp = float(mat[0, 0]), float(0.5 * (mat[0, 1] + mat[1, 0])), float(mat[1, 1])
        omega_h = np.array([[V, C / h], [C / h, Vp / h**2]])
        omega_h.setflags(write=False)
        if check:
            require_pd(omega_h)
        return cls(V=V, Vp=Vp, C=C, h=float(h), omega_h=omega_h)


def _side_sandwich(fit_p: OneSidedFit, fit_q: OneSidedFit, sigma, p, h, b, B, Bp):
    # influence rows of the bias-corrected level and scaled slope
    k = (h / b) ** (p + 1)
    curv = fit_q.smoother[p + 1]
    a0 = fit_p.smoother[0] - k * B * curv
    a1 = fit_p.smoother[1] - k * Bp * curv
    V = a0 @ (sigma * a0)
    Vp = a1 @ (sigma * a1)
    C = a0 @ (sigma * a1)
    return np.array([[V, C], [C, Vp]])


def sandwich(est: JointEstimates, sigma) -> np.ndarray:
    """Scaled 2x2 covariance ``[[V, C], [C, V']]`` for a diagonal ``sigma``.

    Sums the left and right contributions; ``sigma`` may be any per-observation
    (co)variance vector, which is what the fuzzy design needs.
    """
    sigma = np.asarray(sigma, dtype=float)
    right = _side_sandwich(est.right_p, est.right_q, sigma, est.p, est.h, est.b,
                           est.B_right, est.Bp_right)
    left = _side_sandwich(est.left_p, est.left_q, sigma, est.p, est.h, est.b,
                          est.B_left, est.Bp_left)
    return right + left


def assemble_omega(estimates: JointEstimates, variances: VarianceDiagonals,
                   spec: Optional[FitSpec] = None, check: bool = True) -> OmegaMatrix:
    """Covariance of ``(tau_tilde, tau_prime_tilde)``.

    Raises ``InferenceError`` ("degenerate covariance") when the result is not
    positive definite, unless ``check`` is false.
    """
    return OmegaMatrix.from_scaled(sandwich(estimates, variances.y), estimates.h, check=check)
