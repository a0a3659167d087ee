import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from oracles import sharp_omega_oracle
from rdjoint import (FitSpec, Sample, VarianceDiagonals, assemble_omega, confidence_region,
                     estimate_sharp, nn_variance)
from rdjoint.errors import EstimationError, InferenceError
from rdjoint.sharp import sandwich
from rdjoint.simlab import DgpSpec, generate_dgp


def _uniform_x(n, seed=0):
    return np.random.default_rng(seed).uniform(-1, 1, n)


def test_piecewise_linear_exact():
    x = _uniform_x(500)
    y = np.where(x >= 0, 1 + 0.5 * x, 0.0)
    est = estimate_sharp(Sample(x, y), FitSpec(h=0.6, b=0.8, p=1, q=2))
    assert_allclose([est.tau_hat, est.tau_prime_hat], [1.0, 0.5], atol=1e-8)
    assert_allclose([est.tau_tilde, est.tau_prime_tilde], [1.0, 0.5], atol=1e-8)


@pytest.mark.parametrize("h, b", [(0.3, 0.5), (0.6, 0.6), (0.9, 0.7)])
def test_piecewise_quadratic_bias_formula(h, b):
    x = _uniform_x(800, seed=1)
    y = np.where(x >= 0, 2 + x + 3 * x**2, x**2)
    est = estimate_sharp(Sample(x, y), FitSpec(h=h, b=b, p=1, q=2))
    assert_allclose([est.tau_tilde, est.tau_prime_tilde], [2.0, 1.0], atol=1e-6)
    assert abs(est.tau_hat - 2.0) > 1e-3
    leading = h**2 * (est.B_right * 6 - est.B_left * 2) / 2
    assert_allclose(est.tau_hat - 2.0, leading, atol=1e-8)
    assert_allclose(est.mu_p1_right, 6.0, atol=1e-8)
    assert_allclose(est.mu_p1_left, 2.0, atol=1e-8)


def test_higher_order_bias_correction():
    # p = 2: cubic data is reproduced by the bias-corrected estimator
    x = _uniform_x(1500, seed=2)
    y = np.where(x >= 0, 1 + 0.3 * x - x**2 + 2 * x**3, 0.5 * x + x**3)
    est = estimate_sharp(Sample(x, y), FitSpec(h=0.7, b=0.9, p=2, q=3))
    assert_allclose([est.tau_tilde, est.tau_prime_tilde], [1.0, -0.2], atol=1e-6)


def test_empty_control_side():
    x = np.linspace(0, 1, 30)
    with pytest.raises(EstimationError, match="empty control side"):
        estimate_sharp(Sample(x, x), FitSpec(h=0.5, b=0.5))


def test_nn_variance_zero_on_flat_sides():
    x = _uniform_x(200)
    var = nn_variance(Sample(x, np.where(x >= 0, 3.0, -1.0)), FitSpec(h=2, b=2))
    assert np.all(var.y == 0.0)


def test_nn_variance_constant_outcome():
    x = _uniform_x(100)
    var = nn_variance(Sample(x, np.full(100, 5.0)), FitSpec(h=2, b=2))
    assert np.all(var.y == 0.0)


def test_nn_variance_hand_example():
    x = np.array([-2.0, -1.0, 1.0, 2.0])
    y = np.array([0.0, 0.0, 0.0, 2.0])
    var = nn_variance(Sample(x, y), FitSpec(h=5, b=5, nn_neighbors=1))
    assert var.y[2] == 2.0
    assert var.y[3] == 2.0
    assert var.y[0] == var.y[1] == 0.0


def test_nn_variance_ignores_other_side():
    x = np.array([-0.3, -0.2, -0.1, 0.1, 0.2, 0.3])
    y = np.array([0, 0, 0, 10, 10, 10.0])
    var = nn_variance(Sample(x, y), FitSpec(h=1, b=1, nn_neighbors=2))
    assert np.all(var.y == 0.0)


def test_nn_variance_matches_direct_search():
    rng = np.random.default_rng(4)
    x = rng.uniform(-1, 1, 60)
    y = rng.normal(size=60)
    J = 3
    var = nn_variance(Sample(x, y), FitSpec(h=3, b=3, nn_neighbors=J))
    for i in range(60):
        same = np.flatnonzero(((x >= 0) == (x[i] >= 0)) & (np.arange(60) != i))
        nbrs = same[np.argsort(np.abs(x[same] - x[i]), kind="stable")[:J]]
        assert_allclose(var.y[i], J / (J + 1) * (y[i] - y[nbrs].mean()) ** 2, rtol=1e-12)


def test_nn_variance_consistency():
    rng = np.random.default_rng(5)
    x = rng.uniform(-1, 1, 200_000)
    var = nn_variance(Sample(x, rng.normal(size=x.size)), FitSpec(h=2, b=2))
    assert 0.97 <= var.y.mean() <= 1.03


def test_nn_variance_zero_outside_windows():
    x = _uniform_x(300, 6)
    var = nn_variance(Sample(x, np.sin(9 * x)), FitSpec(h=0.2, b=0.4))
    assert np.all(var.y[np.abs(x) >= 0.4] == 0.0)


def test_insufficient_neighbours():
    x = np.array([-0.5, -0.4, -0.3, -0.2, 0.1, 0.2])
    with pytest.raises(EstimationError) as info:
        nn_variance(Sample(x, x), FitSpec(h=1, b=1, nn_neighbors=3))
    assert info.value.code == "insufficient_neighbors"


def _random_problem(seed, n=40):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, n)
    y = rng.normal(size=n)
    sigma = rng.uniform(0.2, 2.0, n)
    p = int(rng.integers(1, 3))
    q = p + int(rng.integers(1, 3))
    h = rng.uniform(0.8, 1.5)
    b = rng.uniform(0.9, 1.5)
    kernel = ["triangular", "epanechnikov", "uniform"][seed % 3]
    return x, y, sigma, FitSpec(h=h, b=b, p=p, q=q, kernel=kernel)


@pytest.mark.parametrize("seed", range(25))
def test_sandwich_matches_influence_oracle(seed):
    x, y, sigma, spec = _random_problem(seed)
    est = estimate_sharp(Sample(x, y), spec)
    got = assemble_omega(est, VarianceDiagonals(sigma), spec).scaled
    want = sharp_omega_oracle(x, sigma, spec.p, spec.q, spec.h, spec.b, spec.kernel)
    assert_allclose(got, want, rtol=1e-10, atol=1e-10 * np.abs(want).max())


def test_sandwich_oracle_with_equal_bandwidths():
    x, y, sigma, _ = _random_problem(99)
    spec = FitSpec(h=1.1, b=1.1, p=1, q=2)
    est = estimate_sharp(Sample(x, y), spec)
    want = sharp_omega_oracle(x, sigma, 1, 2, 1.1, 1.1)
    assert_allclose(sandwich(est, sigma), want, rtol=1e-10)


def test_zero_variance_is_degenerate():
    x = _uniform_x(200)
    s = Sample(x, np.where(x >= 0, 1 + x, 0.0))
    spec = FitSpec(h=0.5, b=0.5)
    est = estimate_sharp(s, spec)
    var = VarianceDiagonals(np.zeros(200))
    omega = assemble_omega(est, var, spec, check=False)
    assert np.all(omega.omega_h == 0.0)
    with pytest.raises(InferenceError, match="degenerate covariance"):
        assemble_omega(est, var, spec)


def test_omega_structure():
    s = generate_dgp(DgpSpec((0, 0.5), (1, 0.8)), 600)
    spec = FitSpec(h=0.5, b=0.7)
    omega = assemble_omega(estimate_sharp(s, spec), nn_variance(s, spec), spec)
    oh = omega.omega_h
    assert abs(oh[0, 1] - oh[1, 0]) <= 1e-14 * abs(oh).max()
    assert oh[0, 0] == omega.V
    assert_allclose(oh[1, 1] * spec.h**2, omega.Vp, rtol=1e-14)
    assert_allclose(oh[0, 1] * spec.h, omega.C, rtol=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(-50, 50).filter(lambda a: abs(a) > 1e-3),
       st.floats(-100, 100))
def test_affine_outcome_equivariance(seed, a, d):
    s = generate_dgp(DgpSpec((0, 0.5, 0.3), (1, 0.8, -0.2), seed=seed % 1000), 400)
    spec = FitSpec(h=0.6, b=0.8)
    est = estimate_sharp(s, spec)
    omega = assemble_omega(est, nn_variance(s, spec), spec)
    s2 = s.with_outcome(a * s.outcome + d)
    est2 = estimate_sharp(s2, spec)
    omega2 = assemble_omega(est2, nn_variance(s2, spec), spec)
    for name in ("tau_hat", "tau_prime_hat", "tau_tilde", "tau_prime_tilde"):
        base = getattr(est, name)
        assert_allclose(getattr(est2, name), a * base, rtol=1e-10,
                        atol=1e-10 * (abs(a * base) + abs(d)))
    # the NN variance is translation invariant, so only the a^2 factor remains
    assert_allclose(omega2.omega_h, a * a * omega.omega_h, rtol=1e-9)


@pytest.mark.parametrize("shift", [-1234.5, 0.001, 87.25])
def test_cutoff_shift_invariance(shift):
    s = generate_dgp(DgpSpec((0, 0.5), (1, 0.8, 0.4)), 500)
    spec = FitSpec(h=0.5, b=0.75)
    moved = Sample(s.running + shift, s.outcome, cutoff=shift)
    e1, e2 = estimate_sharp(s, spec), estimate_sharp(moved, spec)
    assert_allclose(e2.center, e1.center, rtol=1e-10, atol=1e-10)
    o1 = assemble_omega(e1, nn_variance(s, spec), spec).omega_h
    o2 = assemble_omega(e2, nn_variance(moved, spec), spec).omega_h
    assert_allclose(o2, o1, rtol=1e-8)


def test_no_degenerate_covariance_under_noise():
    dgp = DgpSpec((0, 0.5, 0.25), (1, 0.8, 0.45), seed=11)
    spec = FitSpec(h=0.5, b=0.7)
    for rep in range(500):
        s = generate_dgp(dgp, 500, rep)
        omega = assemble_omega(estimate_sharp(s, spec), nn_variance(s, spec), spec)
        confidence_region((0.0, 0.0), omega.omega_h, 0.05)
        assert math.isfinite(omega.V)
