import numpy as np
import pytest
from scipy.stats import norm

from multiperc.quadrature import (
    IntegrationError,
    McConfig,
    expect_gaussian_2d,
    expect_gaussian_nd,
    gauss_hermite,
    integrate_1d,
    mc_gaussian,
    philox,
)


def test_rule_low_orders():
    r1 = gauss_hermite(1)
    assert np.allclose(r1.nodes, [0.0]) and np.allclose(r1.weights, [1.0])
    r2 = gauss_hermite(2)
    assert np.allclose(np.sort(r2.nodes), [-1.0, 1.0])
    assert np.allclose(r2.weights, [0.5, 0.5])


def test_rule_bounds():
    with pytest.raises(ValueError):
        gauss_hermite(0)
    with pytest.raises(ValueError):
        gauss_hermite(201)


def test_fourth_moment_order3():
    r = gauss_hermite(3)
    assert abs(np.sum(r.weights * r.nodes**4) - 3.0) < 1e-12


def test_weight_and_moment_invariants():
    for order in (2, 5, 20, 80):
        r = gauss_hermite(order)
        assert abs(r.weights.sum() - 1.0) < 1e-13
        assert abs(np.sum(r.weights * r.nodes)) < 1e-13
        assert abs(np.sum(r.weights * r.nodes**2) - 1.0) < 1e-12


def test_polynomial_exactness_degree_2n_minus_1():
    # Order n integrates monomials up to degree 2n-1 exactly: degrees 0..9 at n=5.
    r = gauss_hermite(5)
    gauss_moments = [1, 0, 1, 0, 3, 0, 15, 0, 105, 0]
    for deg, want in enumerate(gauss_moments):
        got = np.sum(r.weights * r.nodes**deg)
        assert abs(got - want) < 1e-10 * max(1.0, want)


def test_expect_gaussian_2d_examples():
    r = gauss_hermite(60)
    cov = expect_gaussian_2d(lambda x: np.outer(x, x), gauss_hermite(2))
    assert np.abs(cov - np.eye(2)).max() < 1e-12
    one = expect_gaussian_2d(lambda x: np.array(1.0), gauss_hermite(2))
    assert abs(one - 1.0) < 1e-14
    val = expect_gaussian_2d(lambda x: norm.cdf(x[0]) * norm.cdf(x[1]), r)
    assert abs(val - 0.25) < 1e-8


def test_expect_gaussian_nd_matches_2d():
    r = gauss_hermite(20)
    def fvec(nodes):
        return norm.cdf(nodes[:, 0]) * norm.cdf(nodes[:, 1])
    got = expect_gaussian_nd(fvec, r, 2)
    want = expect_gaussian_2d(lambda x: norm.cdf(x[0]) * norm.cdf(x[1]), r)
    assert abs(got - want) < 1e-14


def test_expect_gaussian_reports_nonfinite():
    r = gauss_hermite(4)
    with pytest.raises(IntegrationError):
        expect_gaussian_nd(lambda nodes: np.where(nodes[:, 0] > 0, np.inf, 1.0), r, 2)


def test_integrate_1d_examples():
    val, err = integrate_1d(norm.pdf, -np.inf, np.inf)
    assert abs(val - 1.0) < 1e-12
    val, _ = integrate_1d(norm.pdf, 0.0, np.inf)
    assert abs(val - 0.5) < 1e-12
    val, _ = integrate_1d(lambda t: norm.pdf(t) * norm.cdf(t), -np.inf, np.inf)
    assert abs(val - 0.5) < 1e-12


def _simpson_oracle(f, lo, hi, n=40_001):
    xs = np.linspace(lo, hi, n)
    from scipy.integrate import simpson

    return simpson(f(xs), x=xs)


def test_integrate_1d_vs_simpson_oracle():
    rng = philox(3)
    for _ in range(20):
        mu = float(rng.uniform(-2, 2))
        sig = float(rng.uniform(0.5, 2.0))
        a = float(rng.uniform(-3, 3))
        f = lambda t: norm.pdf(t, mu, sig) * norm.cdf(a * t)
        got, _ = integrate_1d(f, mu - 12 * sig, mu + 12 * sig, tol=1e-12)
        want = _simpson_oracle(f, mu - 12 * sig, mu + 12 * sig)
        assert abs(got - want) < 1e-8


def test_mc_gaussian_trivial_and_reproducible():
    cfg = McConfig(n_samples=50_000, seed=11)
    mean, err = mc_gaussian(2, lambda x: np.ones(len(x)), cfg)
    assert mean == 1.0 and err == 0.0
    mean, err = mc_gaussian(1, lambda x: x[:, 0], cfg)
    assert abs(mean) < 4 * max(err, 1e-12)
    a = mc_gaussian(3, lambda x: x[:, 0] * x[:, 1], cfg)
    b = mc_gaussian(3, lambda x: x[:, 0] * x[:, 1], cfg)
    assert a[0] == b[0] and a[1] == b[1]  # bit-for-bit


def test_mc_matches_orthant_oracle():
    # P(argmax(x1, x2, 0) = 1) = P(x1 > x2, x1 > 0) = 3/8 by the centered
    # orthant identity (rho = 1/sqrt(2)); the MC estimate must agree to 4 se.
    from multiperc.channel import gaussian_orthant

    cfg = McConfig(n_samples=400_000, seed=5)
    f = lambda x: (np.argmax(np.column_stack([x, np.zeros(len(x))]), axis=1) == 0).astype(float)
    mean, err = mc_gaussian(2, f, cfg)
    want = gaussian_orthant([0.0, 0.0], [[1.0, 1.0], [1.0, 2.0]])
    assert abs(want - 0.375) < 1e-12
    assert abs(mean - want) < 4 * err


def test_philox_streams_differ():
    assert philox(1, 0).standard_normal() != philox(1, 1).standard_normal()
