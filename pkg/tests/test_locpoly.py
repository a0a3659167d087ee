import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from oracles import wls_oracle
from rdjoint import Kernel, Sample, bias_constants, fit_one_sided, kernel_weight
from rdjoint.errors import EstimationError, RDWarning
from rdjoint.locpoly import fit_local_polynomial

KERNELS = ["triangular", "epanechnikov", "uniform"]


def test_kernel_values():
    assert kernel_weight("triangular", 0.5) == 0.5
    assert kernel_weight("epanechnikov", 0.0) == 0.75
    assert kernel_weight("uniform", -1.0) == 0.5
    for k in KERNELS:
        assert kernel_weight(k, 1.2) == 0.0
        assert kernel_weight(k, -1.0001) == 0.0


@pytest.mark.parametrize("name", KERNELS)
def test_kernel_symmetric_and_integrates_to_one(name):
    u = np.linspace(-1.5, 1.5, 3001)
    k = Kernel(name)(u)
    assert np.all(k >= 0)
    assert_allclose(k, k[::-1])
    # Gauss-Legendre on [0, 1] is exact for these piecewise polynomials
    nodes, wts = np.polynomial.legendre.leggauss(20)
    half = 0.5 * wts @ Kernel(name)(0.5 * (nodes + 1))
    assert_allclose(2 * half, 1.0, rtol=1e-12)


def test_linear_data_reproduced():
    x = np.linspace(-1, 1, 201)
    s = Sample(x, 2 + 3 * x)
    fit = fit_one_sided(s, "y", "right", 1, 0.4, "triangular")
    assert_allclose(fit.level, 2.0, atol=1e-8)
    assert_allclose(fit.slope, 3.0, atol=1e-8)


def test_single_point_window_is_singular():
    x = np.array([-0.5, -0.2, 0.1, 0.9])
    s = Sample(x, x)
    with pytest.raises(EstimationError, match="singular local design") as info:
        fit_one_sided(s, "y", "right", 1, 0.5, "triangular")
    assert info.value.code == "singular_design"


def test_empty_window():
    x = np.array([-0.5, -0.2, 0.6, 0.9])
    with pytest.raises(EstimationError) as info:
        fit_one_sided(Sample(x, x), "y", "right", 1, 0.5)
    assert info.value.code == "empty_window"


def test_two_point_normal_equations():
    # hand-written 2x2 weighted normal equations in u = x / h
    x = np.array([0.5, 1.0])
    y = np.array([1.0, 3.0])
    h = 2.0
    u = x / h
    w = (1 - u) / h
    a = np.array([[w.sum(), (w * u).sum()], [(w * u).sum(), (w * u * u).sum()]])
    rhs = np.array([(w * y).sum(), (w * u * y).sum()])
    det = a[0, 0] * a[1, 1] - a[0, 1] ** 2
    expected = np.array([a[1, 1] * rhs[0] - a[0, 1] * rhs[1],
                         a[0, 0] * rhs[1] - a[0, 1] * rhs[0]]) / det
    fit = fit_local_polynomial(x, y, np.ones(2, bool), 1, h, "triangular")
    assert_allclose(fit.beta_scaled, expected, rtol=1e-12)
    assert_allclose(fit.beta_scaled, [-1.0, 8.0], rtol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3), st.sampled_from(KERNELS),
       st.floats(0.3, 2.0))
def test_matches_dense_lstsq(seed, degree, kernel, h):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(degree + 12, 51))
    x = rng.uniform(-1, 1, n)
    y = rng.normal(size=n)
    mask = x >= 0
    if np.sum(mask & (x < 0.95 * h)) < degree + 3:
        return
    fit = fit_local_polynomial(x, y, mask, degree, h, kernel)
    assert_allclose(fit.beta_scaled, wls_oracle(x, y, mask, degree, h, kernel),
                    rtol=1e-10, atol=1e-10 * np.abs(y).max())


@pytest.mark.parametrize("kernel", KERNELS)
@pytest.mark.parametrize("degree", [1, 2, 3])
def test_polynomial_reproduction(kernel, degree):
    rng = np.random.default_rng(degree)
    x = rng.uniform(-1, 1, 400)
    coef = rng.normal(size=degree + 1)
    y = np.polynomial.polynomial.polyval(x, coef)
    h = 0.7
    fit = fit_local_polynomial(x, y, x >= 0, degree, h, kernel)
    assert_allclose(fit.beta_scaled, coef * h ** np.arange(degree + 1), rtol=1e-8)
    for j in range(degree + 1):
        assert_allclose(fit.derivative(j), math.factorial(j) * coef[j], rtol=1e-8)


def test_residuals_zero_outside_window():
    rng = np.random.default_rng(1)
    x = rng.uniform(-1, 1, 300)
    fit = fit_local_polynomial(x, rng.normal(size=300), x >= 0, 1, 0.3)
    outside = fit.weights == 0
    assert np.all(fit.residuals[outside] == 0.0)
    assert np.all(fit.weights[x < 0] == 0.0)
    assert np.all(fit.weights[x > 0.3] == 0.0)
    assert fit.n_effective == int(np.sum(fit.weights > 0))


def test_weight_locality():
    rng = np.random.default_rng(2)
    x = rng.uniform(-1, 1, 200)
    y = rng.normal(size=200)
    full = fit_local_polynomial(x, y, x >= 0, 2, 0.5)
    keep = (x >= 0) & (x < 0.5)
    sub = fit_local_polynomial(x[keep], y[keep], np.ones(keep.sum(), bool), 2, 0.5)
    assert_allclose(sub.beta_scaled, full.beta_scaled, rtol=1e-14, atol=1e-14)


def test_uniform_kernel_continuum_bias_constants():
    # nu_j = int_0^1 u^j / 2 du; Gamma = [[1/2, 1/4], [1/4, 1/6]], theta = (1/6, 1/8)
    gamma = np.array([[1 / 2, 1 / 4], [1 / 4, 1 / 6]])
    theta = np.array([1 / 6, 1 / 8])
    B_exact, Bp_exact = np.linalg.solve(gamma, theta)
    assert_allclose([B_exact, Bp_exact], [-1 / 6, 1.0], rtol=1e-12)
    h = 0.5
    x = (np.arange(100_000) + 0.5) / 100_000 * h
    fit = fit_local_polynomial(x, x, np.ones_like(x, bool), 1, h, "uniform")
    B, Bp = bias_constants(fit)
    assert abs(B - B_exact) < 1e-3
    assert abs(Bp - Bp_exact) < 1e-3


def test_symmetric_two_sided_design():
    # odd moments vanish: Gamma is diagonal and theta = (nu2, 0)
    x = np.linspace(-1, 1, 401)
    fit = fit_local_polynomial(x, x, np.ones_like(x, bool), 1, 1.0, "triangular")
    B, Bp = bias_constants(fit)
    w = np.maximum(1 - np.abs(x), 0.0)
    assert abs(Bp) < 1e-12
    assert_allclose(B, (w * x * x).sum() / w.sum(), rtol=1e-12)


@pytest.mark.parametrize("scale", [1e-3, 0.37, 42.0])
def test_kernel_scaling_invariance(scale):
    rng = np.random.default_rng(3)
    x = rng.uniform(-1, 1, 150)
    y = np.sin(3 * x) + rng.normal(scale=0.1, size=150)
    base = fit_local_polynomial(x, y, x >= 0, 2, 0.6, Kernel("epanechnikov"))
    scaled = fit_local_polynomial(x, y, x >= 0, 2, 0.6, Kernel("epanechnikov", scale))
    assert_allclose(scaled.beta_scaled, base.beta_scaled, rtol=1e-12)
    assert_allclose(bias_constants(scaled), bias_constants(base), rtol=1e-12)


def test_ill_conditioned_design_warns():
    x = np.concatenate([-np.linspace(0.1, 1, 10), 3e-3 * np.arange(1, 12)])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fit_local_polynomial(x, x, x >= 0, 3, 1.0, "uniform")
    codes = [getattr(w.message, "code", None) for w in caught
             if issubclass(w.category, RDWarning)]
    assert "ill_conditioned" in codes


def test_treatment_selector_requires_column():
    x = np.linspace(-1, 1, 20)
    with pytest.raises(Exception, match="treatment"):
        fit_one_sided(Sample(x, x), "t", "right", 1, 1.0)
