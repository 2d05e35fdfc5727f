import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from seqtrial.exceptions import BracketError, ConvergenceError, DomainError
from seqtrial.numerics import (
    BivariateNormalSpec,
    bivariate_normal_cdf,
    bvn_cdf,
    find_root_bracketed,
    find_roots_vectorized,
    solve_fixed_point,
    std_normal_cdf,
    std_normal_pdf,
    std_normal_quantile,
)

finite = st.floats(-6, 6, allow_nan=False)
corr = st.floats(-0.999, 0.999, allow_nan=False)


def bvn_quad(a, b, rho):
    """Independent oracle: integrate phi(x) Phi((b - rho x)/sqrt(1-rho^2)) over x <= a."""
    s = math.sqrt(1.0 - rho * rho)

    def f(x):
        return stats.norm.pdf(x) * stats.norm.cdf((b - rho * x) / s)

    val, _ = integrate.quad(f, -np.inf, a, epsabs=1e-14, epsrel=1e-12, limit=200)
    return val


class TestUnivariate:
    def test_cdf_against_mpmath(self):
        for x in (-8.0, -2.797, -1.0, 0.0, 0.5, 2.797, 7.5):
            assert std_normal_cdf(x) == pytest.approx(float(mpmath.ncdf(x)), rel=1e-14)

    def test_pdf_against_mpmath(self):
        for x in (-3.0, 0.0, 1.3):
            expected = float(mpmath.npdf(x))
            assert std_normal_pdf(x) == pytest.approx(expected, rel=1e-14)

    def test_quantile_round_trip(self):
        for p in (1e-10, 0.001, 0.025, 0.5, 0.975, 1 - 1e-10):
            assert std_normal_cdf(std_normal_quantile(p)) == pytest.approx(p, rel=1e-12)

    def test_scalar_in_scalar_out(self):
        assert isinstance(std_normal_cdf(0.3), float)
        assert std_normal_cdf(np.array([0.0, 1.0])).shape == (2,)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
    def test_quantile_domain(self, p):
        with pytest.raises(DomainError):
            std_normal_quantile(p)

    def test_fixed_sample_critical_value(self):
        assert std_normal_quantile(0.975) == pytest.approx(1.959963984540054, abs=1e-12)


class TestBivariate:
    def test_orthant_identity(self):
        for rho in (-0.95, -0.5, 0.0, 0.3, 0.891, 0.99):
            assert bvn_cdf(0.0, 0.0, rho) == pytest.approx(
                0.25 + math.asin(rho) / (2 * math.pi), abs=1e-15)

    def test_independence_factorises(self):
        assert bvn_cdf(0.7, -1.2, 0.0) == pytest.approx(
            std_normal_cdf(0.7) * std_normal_cdf(-1.2), abs=1e-15)

    @pytest.mark.parametrize("a,b,rho", [
        (2.797, 2.718, 0.891), (-1.0, 0.5, 0.3), (0.2, -3.0, -0.7),
        (3.5, 3.5, 0.97), (-2.0, -2.5, 0.95), (1.0, 1.0, -0.99),
    ])
    def test_against_quadrature(self, a, b, rho):
        assert bvn_cdf(a, b, rho) == pytest.approx(bvn_quad(a, b, rho), abs=1e-10)

    def test_against_mpmath_high_precision(self):
        mpmath.mp.dps = 30
        try:
            a, b, rho = 2.797, 1.5, 0.891
            s = mpmath.sqrt(1 - mpmath.mpf(rho) ** 2)
            f = lambda x: mpmath.npdf(x) * mpmath.ncdf((b - rho * x) / s)  # noqa: E731
            expected = float(mpmath.quad(f, [-mpmath.inf, 0, a]))
        finally:
            mpmath.mp.dps = 15
        assert bvn_cdf(a, b, rho) == pytest.approx(expected, abs=1e-14)

    def test_infinite_limits(self):
        assert bvn_cdf(np.inf, 1.1, 0.4) == pytest.approx(std_normal_cdf(1.1), abs=1e-15)
        assert bvn_cdf(-0.3, np.inf, 0.4) == pytest.approx(std_normal_cdf(-0.3), abs=1e-15)
        assert bvn_cdf(-np.inf, 1.0, 0.4) == 0.0
        assert bvn_cdf(np.inf, np.inf, 0.4) == 1.0

    def test_vectorised_shape(self):
        a = np.linspace(-2, 2, 12).reshape(3, 4)
        out = bvn_cdf(a, 0.5, 0.6)
        assert out.shape == (3, 4)
        assert out[1, 2] == pytest.approx(bvn_cdf(a[1, 2], 0.5, 0.6), abs=0)

    @pytest.mark.parametrize("rho", [1.0, -1.0, 1.2, np.nan])
    def test_domain(self, rho):
        with pytest.raises(DomainError):
            bvn_cdf(0.0, 0.0, rho)

    def test_spec_with_means(self):
        spec = BivariateNormalSpec(mean1=1.0, mean2=-0.5, correlation=0.5)
        assert bivariate_normal_cdf(1.0, -0.5, spec) == pytest.approx(1 / 3, abs=1e-15)
        with pytest.raises(DomainError):
            BivariateNormalSpec(correlation=1.0)

    @settings(max_examples=150, deadline=None)
    @given(finite, finite, corr)
    def test_symmetric_in_arguments(self, a, b, rho):
        assert bvn_cdf(a, b, rho) == pytest.approx(bvn_cdf(b, a, rho), abs=1e-14)

    @settings(max_examples=150, deadline=None)
    @given(finite, finite, corr)
    def test_frechet_bounds(self, a, b, rho):
        p = bvn_cdf(a, b, rho)
        pa, pb = std_normal_cdf(a), std_normal_cdf(b)
        assert max(0.0, pa + pb - 1.0) - 1e-14 <= p <= min(pa, pb) + 1e-14

    @settings(max_examples=150, deadline=None)
    @given(finite, finite, corr)
    def test_reflection(self, a, b, rho):
        # P(X <= a, Y <= b) + P(X <= a, Y > b) = Phi(a), with Y -> -Y flipping rho.
        total = bvn_cdf(a, b, rho) + bvn_cdf(a, -b, -rho)
        assert total == pytest.approx(std_normal_cdf(a), abs=1e-14)

    @settings(max_examples=60, deadline=None)
    @given(finite, finite, corr)
    def test_matches_scipy(self, a, b, rho):
        ref = stats.multivariate_normal(mean=[0, 0], cov=[[1, rho], [rho, 1]]).cdf([a, b])
        assert bvn_cdf(a, b, rho) == pytest.approx(ref, abs=1e-6)

    @settings(max_examples=100, deadline=None)
    @given(finite, st.floats(-6, 5.5), corr)
    def test_monotone_in_b(self, a, b, rho):
        assert bvn_cdf(a, b + 0.5, rho) >= bvn_cdf(a, b, rho) - 1e-15


class TestRootFinding:
    def test_brent(self):
        assert find_root_bracketed(lambda x: x ** 3 - 2.0, 0.0, 2.0) == pytest.approx(
            2 ** (1 / 3), abs=1e-10)

    def test_no_sign_change(self):
        with pytest.raises(BracketError):
            find_root_bracketed(lambda x: x * x + 1.0, -1.0, 1.0)

    def test_fixed_point_cosine(self):
        res = solve_fixed_point(math.cos, 1.0, tol=1e-13)
        assert res.converged and not res.used_fallback
        assert res.value == pytest.approx(0.7390851332151607, abs=1e-12)

    def test_damping_rescues_oscillation(self):
        # g has slope -1.5 at the root: plain iteration diverges, damping converges.
        res = solve_fixed_point(lambda x: 2.5 - 1.5 * x, 0.0, tol=1e-12, max_iter=500)
        assert res.value == pytest.approx(1.0, abs=1e-10)

    def test_fallback_to_bracket(self):
        res = solve_fixed_point(lambda x: 2.5 - 1.5 * x, 0.0, max_iter=2, bracket=(-5, 5))
        assert res.used_fallback
        assert res.value == pytest.approx(1.0, abs=1e-9)

    def test_nonconvergence_reported(self):
        with pytest.raises(ConvergenceError):
            solve_fixed_point(lambda x: x + 1.0, 0.0, max_iter=5)
        with pytest.raises(ConvergenceError):
            solve_fixed_point(lambda x: x + 1.0, 0.0, max_iter=5, bracket=(-1, 1))

    @pytest.mark.parametrize("damping", [0.0, 1.5])
    def test_bad_damping(self, damping):
        with pytest.raises(DomainError):
            solve_fixed_point(math.cos, 1.0, damping=damping)

    def test_vectorised_roots(self):
        targets = np.array([-3.0, 0.0, 0.5, 10.0])

        def f(x, idx):
            return np.arctan(x) - np.arctan(targets[idx])

        # Brackets are deliberately wrong for some entries to exercise widening.
        roots = find_roots_vectorized(f, np.zeros(4) - 1.0, np.zeros(4) + 1.0, tol=1e-12)
        np.testing.assert_allclose(roots, targets, atol=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-20, 20), min_size=1, max_size=20))
    def test_vectorised_matches_brent(self, vals):
        targets = np.array(vals)

        def f(x, idx):
            return x ** 3 + x - targets[idx]

        roots = find_roots_vectorized(f, targets - 1.0, targets + 1.0, tol=1e-12)
        for t, r in zip(targets, roots):
            assert r == pytest.approx(find_root_bracketed(lambda x: x ** 3 + x - t, -30, 30),
                                      abs=1e-8)
