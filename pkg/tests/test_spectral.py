import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from chcook.spectral import (InvalidParameterError, NonInvertibleOperatorError, SpectralField,
                             check_regularity_bound, dot_norm, drift_eigenvalue, drift_eigenvalues,
                             eval_basis, exp_kernel_integral, gamma_factor, semigroup_apply,
                             solve_elliptic_spectral, validate_params)

PI = math.pi


@pytest.mark.parametrize("mu,kappa", [(0.0, 1), (12.0, 2), (4 * PI**2, 3), (PI**2, 2), (50.0, 3)])
def test_kappa_selection(mu, kappa):
    p = validate_params(mu, 1.0, 100)
    assert p.kappa == kappa
    assert (kappa - 1) ** 2 * PI**2 <= mu < kappa**2 * PI**2


def test_negative_mu_names_condition():
    with pytest.raises(InvalidParameterError, match=r"mu >= 0"):
        validate_params(-1.0, 1.0, 10)


@pytest.mark.parametrize("T,K", [(0.0, 10), (-1.0, 10), (1.0, 0)])
def test_bad_T_or_K(T, K):
    with pytest.raises(InvalidParameterError):
        validate_params(1.0, T, K)


def test_drift_eigenvalue_examples():
    assert drift_eigenvalue(1, 0.0) == pytest.approx(97.4091, rel=1e-6)
    assert drift_eigenvalue(1, 12.0) == pytest.approx(PI**2 * (PI**2 - 12.0), rel=1e-14)
    assert drift_eigenvalue(1, 12.0) == pytest.approx(-21.026, abs=1e-3)
    assert drift_eigenvalue(2, 4 * PI**2) == pytest.approx(0.0, abs=1e-10)


def test_eval_basis_examples():
    assert eval_basis(1, 0.5) == pytest.approx(math.sqrt(2))
    for k in (1, 3, 17):
        assert eval_basis(k, 0.0) == 0.0
    assert eval_basis(0, 0.7, "cosine") == 1.0


def test_basis_orthonormal_by_quadrature():
    for j in range(1, 5):
        for k in range(1, 5):
            val, _ = integrate.quad(lambda x: eval_basis(j, x) * eval_basis(k, x), 0, 1, limit=200)
            assert val == pytest.approx(float(j == k), abs=1e-12)


def test_exp_kernel_integral_examples():
    assert exp_kernel_integral(0.0, 0.1, 0.3, 1.0) == pytest.approx(0.2, rel=1e-15)
    assert exp_kernel_integral(1.0, 0.0, 1.0, 1.0) == pytest.approx(1 - math.exp(-1), rel=1e-14)
    assert exp_kernel_integral(1e-14, 0.0, 0.5, 0.5) == pytest.approx(0.5, rel=1e-12)


@given(a=st.floats(0, 0.9), w=st.floats(1e-3, 0.1))
def test_exp_kernel_continuity_at_zero(a, w):
    b = a + w
    v = exp_kernel_integral(1e-10, a, b, 1.0)
    assert abs(v - (b - a)) <= 1e-10 * (b - a)


@given(rate=st.floats(-30, 500), a=st.floats(0, 0.5), w=st.floats(0, 0.5))
@settings(max_examples=50)
def test_exp_kernel_matches_quadrature(rate, a, w):
    b, t = a + w, 1.0
    ref, _ = integrate.quad(lambda s: math.exp(-rate * (t - s)), a, b, epsabs=0, epsrel=1e-13)
    assert exp_kernel_integral(rate, a, b, t) == pytest.approx(ref, rel=1e-11, abs=1e-300)


def test_semigroup_examples():
    p0, p12 = validate_params(0.0, 1.0, 3), validate_params(12.0, 1.0, 3)
    v = SpectralField.mode(1, 3)
    assert semigroup_apply(v, 0.0, p0).coeffs == pytest.approx(v.coeffs)
    assert semigroup_apply(v, 0.01, p0).coeffs[0] == pytest.approx(math.exp(-0.974091), rel=1e-6)
    assert semigroup_apply(v, 0.1, p12).coeffs[0] == pytest.approx(8.188, rel=1e-3)


@given(mu=st.floats(0, 60), s=st.floats(0, 0.05), t=st.floats(0, 0.05),
       c=st.lists(st.floats(-1, 1), min_size=1, max_size=6))
def test_semigroup_composition(mu, s, t, c):
    p = validate_params(mu, 1.0, len(c))
    v = SpectralField(c)
    two = semigroup_apply(semigroup_apply(v, s, p), t, p).coeffs
    one = semigroup_apply(v, s + t, p).coeffs
    np.testing.assert_allclose(two, one, rtol=1e-12, atol=1e-300)


def test_elliptic_examples():
    f = SpectralField.mode(1, 1)
    assert solve_elliptic_spectral(f, validate_params(0.0, 1, 1), "plain").coeffs[0] == pytest.approx(0.0102660, rel=1e-5)
    assert solve_elliptic_spectral(f, validate_params(12.0, 1, 1), "shifted").coeffs[0] == pytest.approx(
        1 / (PI**2 * (PI**2 - 12) + 144), rel=1e-13)
    with pytest.raises(NonInvertibleOperatorError) as exc:
        solve_elliptic_spectral(f, validate_params(PI**2, 1, 1), "plain")
    assert exc.value.k == 1


@given(mu=st.floats(0, 200), c=st.lists(st.floats(-5, 5), min_size=1, max_size=8))
def test_shifted_solve_roundtrip(mu, c):
    p = validate_params(mu, 1.0, len(c))
    f = SpectralField(c)
    u = solve_elliptic_spectral(f, p, "shifted")
    back = u.coeffs * (drift_eigenvalues(len(c), mu) + mu**2)
    np.testing.assert_allclose(back, f.coeffs, rtol=1e-12, atol=1e-300)


@given(mu=st.floats(0, 400), k=st.integers(1, 50))
def test_positive_above_kappa(mu, k):
    p = validate_params(mu, 1.0, 1)
    if k >= p.kappa:
        assert drift_eigenvalue(k, mu) > 0


def test_dot_norm_examples():
    assert dot_norm(SpectralField.mode(1, 1), 0) == pytest.approx(1.0)
    assert dot_norm(SpectralField.mode(1, 1), 2) == pytest.approx(PI**2)
    assert dot_norm(SpectralField.mode(2, 2), -1) == pytest.approx(1 / (2 * PI))


@given(c=st.lists(st.floats(-3, 3), min_size=2, max_size=10), s=st.floats(-2, 2))
def test_dot_norm_monotone_in_truncation(c, s):
    v = SpectralField(c)
    norms = [dot_norm(v.truncated(K), s) for K in range(1, v.K + 1)]
    assert all(b >= a for a, b in zip(norms, norms[1:]))


def test_spectral_field_algebra_and_eval():
    a, b = SpectralField([1.0, 2.0]), SpectralField([0.5])
    assert (a + b).coeffs.tolist() == [1.5, 2.0]
    assert (a - b).coeffs.tolist() == [0.5, 2.0]
    assert (a * 2).coeffs.tolist() == [2.0, 4.0]
    x = np.linspace(0, 1, 7)
    np.testing.assert_allclose(a(x), eval_basis(1, x) + 2 * eval_basis(2, x), atol=1e-15)


def test_gamma_factor():
    assert gamma_factor(2) == 2.0
    assert gamma_factor(0.5) == pytest.approx(math.sqrt(PI) / 2, rel=1e-10)


def test_regularity_examples():
    p = validate_params(0.0, 1.0, 1)
    w0 = SpectralField.mode(1, 1)
    lhs, rhs = check_regularity_bound(w0, 0, 0, 0, 0.0, 1.0, p)
    assert lhs == pytest.approx((1 - math.exp(-2 * PI**4)) / (2 * PI**4), rel=1e-10)
    assert lhs <= rhs
    lhs, rhs = check_regularity_bound(w0, 1, 2, 0, 0.3, 0.3, p)
    assert lhs == 0.0 and rhs >= 0.0
    p2 = validate_params(0.0, 1.0, 2)
    lhs, rhs = check_regularity_bound(SpectralField([1.0, 1.0]), 1, 2, 0, 0.0, 1.0, p2)
    # termwise: mu_k^2 * int tau^2 e^{-2 mu_k tau} ~ 2 mu_k^2 / (2 mu_k)^3
    terms = sum(m**2 * 2 / (2 * m) ** 3 for m in drift_eigenvalues(2, 0.0))
    assert lhs == pytest.approx(terms, rel=1e-8)
    assert lhs <= rhs


@given(seed=st.integers(0, 2**32 - 1), ell=st.sampled_from([0, 1]), beta=st.sampled_from([0, 2]),
       p=st.sampled_from([0, 2]), mu=st.sampled_from([0.0, 12.0]))
@settings(max_examples=40, deadline=None)
def test_regularity_bound_random(seed, ell, beta, p, mu):
    rng = np.random.default_rng(seed)
    params = validate_params(mu, 0.1, 6)
    ta = rng.uniform(0, 0.05)
    tb = rng.uniform(ta, 0.1)
    lhs, rhs = check_regularity_bound(SpectralField(rng.standard_normal(6)), ell, beta, p, ta, tb, params)
    assert lhs <= rhs
