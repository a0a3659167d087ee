"""Fuzzy designs: ratio estimands and their delta-method covariance.

The effect and its derivative are ratios of outcome to first-stage jumps.
Bias correction and variance both come from linearising each ratio around
the raw estimates, which turns them into weighted differences of two sharp
bias-corrected statistics sharing the same local designs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import FitSpec, Sample
from .errors import EstimationError, InferenceError, SchemaError
from .sharp import (JointEstimates, OmegaMatrix, VarianceDiagonals, estimate_sharp, nn_variance,
                    sandwich)

LEVEL_FLOOR = 1e-2
DERIVATIVE_T_RATIO = 4.0


@dataclass(frozen=True, eq=False)
class FuzzyEstimates:
    y_part: JointEstimates
    t_part: JointEstimates
    tau_frd: float
    tau_hat_frd: float
    tau_prime_hat_frd: float
    tau_t_hat: float
    tau_prime_t_hat: float
    tau_prime_t_se: float
    derivative_issue: Optional[str] = None
    _tau_prime_frd: Optional[float] = None

    @property
    def h(self) -> float:
        return self.y_part.h

    @property
    def derivative_weak(self) -> bool:
        return self.derivative_issue is not None

    @property
    def tau_prime_frd(self) -> float:
        if self.derivative_issue is not None:
            raise EstimationError(self.derivative_issue, code="weak_first_stage_derivative")
        return self._tau_prime_frd

    @property
    def center(self) -> tuple[float, float]:
        return self.tau_frd, self.tau_prime_frd

    @property
    def level_weights(self) -> tuple[float, float]:
        """Linearisation weights ``(1/tau_T, tau_Y/tau_T^2)`` at the raw estimates."""
        ty, tt = self.y_part.tau_hat, self.t_part.tau_hat
        return 1.0 / tt, ty / tt**2

    @property
    def derivative_weights(self) -> tuple[float, float]:
        ty, tt = self.y_part.tau_prime_hat, self.t_part.tau_prime_hat
        return 1.0 / tt, ty / tt**2


def _raw_slope_se(est: JointEstimates, sigma) -> float:
    """Standard error of the raw slope-jump from the main-fit sandwich only."""
    total = 0.0
    for fit in (est.right_p, est.left_p):
        row = fit.smoother[1]
        total += row @ (sigma * row)
    return math.sqrt(max(total, 0.0)) / est.h


def combine_fuzzy(y_part: JointEstimates, t_part: JointEstimates,
                  slope_se: float = 0.0) -> FuzzyEstimates:
    """Form bias-corrected ratio estimates from outcome and first-stage fits.

    Each ratio is corrected by ``(1/tau_T) * bias_Y - (tau_Y/tau_T^2) * bias_T``
    where the biases are the sharp corrections already applied to each part.
    """
    ty, tt = y_part.tau_hat, t_part.tau_hat
    if not abs(tt) >= LEVEL_FLOOR:
        raise EstimationError(
            f"weak first stage (level): |first-stage jump| = {abs(tt):.3g} < {LEVEL_FLOOR}",
            code="weak_first_stage_level",
        )
    bias_y = ty - y_part.tau_tilde
    bias_t = tt - t_part.tau_tilde
    tau_hat_frd = ty / tt
    tau_frd = tau_hat_frd - (bias_y / tt - ty / tt**2 * bias_t)

    dy, dt = y_part.tau_prime_hat, t_part.tau_prime_hat
    issue = None
    if abs(dt) * y_part.h < LEVEL_FLOOR or abs(dt) < DERIVATIVE_T_RATIO * slope_se:
        issue = (f"weak first stage (derivative): first-stage slope jump {dt:.3g} "
                 f"with standard error {slope_se:.3g}")
    tau_prime_hat_frd = dy / dt if dt != 0.0 else math.nan
    tau_prime_frd = None
    if issue is None:
        slope_bias_y = dy - y_part.tau_prime_tilde
        slope_bias_t = dt - t_part.tau_prime_tilde
        tau_prime_frd = tau_prime_hat_frd - (slope_bias_y / dt - dy / dt**2 * slope_bias_t)
    return FuzzyEstimates(
        y_part=y_part, t_part=t_part, tau_frd=tau_frd, tau_hat_frd=tau_hat_frd,
        tau_prime_hat_frd=tau_prime_hat_frd, tau_t_hat=tt, tau_prime_t_hat=dt,
        tau_prime_t_se=slope_se, derivative_issue=issue, _tau_prime_frd=tau_prime_frd,
    )


def estimate_fuzzy(sample: Sample, spec: FitSpec,
                   variances: Optional[VarianceDiagonals] = None) -> FuzzyEstimates:
    """Bias-corrected fuzzy estimates; numerator and denominator share ``h`` and ``b``."""
    if sample.treatment is None:
        raise SchemaError("fuzzy estimation requires a treatment column", code="missing_treatment")
    y_part = estimate_sharp(sample, spec, outcome="y")
    t_part = estimate_sharp(sample, spec, outcome="t")
    if variances is None or variances.t is None:
        variances = nn_variance(sample, spec, include_treatment=True)
    return combine_fuzzy(y_part, t_part, _raw_slope_se(t_part, variances.t))


def _blocks(fz, variances):
    if variances.t is None or variances.yt is None:
        raise InferenceError("fuzzy covariance needs treatment variance diagonals",
                             code="missing_variances")
    est = fz.y_part
    return sandwich(est, variances.y), sandwich(est, variances.yt), sandwich(est, variances.t)


def fuzzy_level_variance(fz: FuzzyEstimates, variances: VarianceDiagonals) -> float:
    """Variance of the linearised level ratio; defined even if the slope is weak."""
    m_y, m_yt, m_t = _blocks(fz, variances)
    a, b = fz.level_weights
    return float(a * a * m_y[0, 0] - 2.0 * a * b * m_yt[0, 0] + b * b * m_t[0, 0])


def assemble_omega_fuzzy(fz: FuzzyEstimates, variances: VarianceDiagonals,
                         spec: Optional[FitSpec] = None, check: bool = True) -> OmegaMatrix:
    """Joint covariance of ``(tau_frd, tau_prime_frd)``.

    Level and scaled-slope influence weights are ``a Y-part - b T-part``
    with ``(a, b)`` the linearisation weights, so every entry is a weighted
    sum of sharp sandwiches evaluated at ``Sigma_Y``, ``Sigma_YT`` and ``Sigma_T``.
    """
    if fz.derivative_weak:
        raise InferenceError(fz.derivative_issue, code="weak_first_stage_derivative")
    m_y, m_yt, m_t = _blocks(fz, variances)
    a0, b0 = fz.level_weights
    a1, b1 = fz.derivative_weights
    V = a0 * a0 * m_y[0, 0] - 2.0 * a0 * b0 * m_yt[0, 0] + b0 * b0 * m_t[0, 0]
    Vp = a1 * a1 * m_y[1, 1] - 2.0 * a1 * b1 * m_yt[1, 1] + b1 * b1 * m_t[1, 1]
    C = (a0 * a1 * m_y[0, 1] - b0 * a1 * m_yt[0, 1] - a0 * b1 * m_yt[0, 1]
         + b0 * b1 * m_t[0, 1])
    return OmegaMatrix.from_scaled(np.array([[V, C], [C, Vp]]), fz.h, check=check)
