import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chcook.error_analysis import fem_vs_spectral_error, fit_rate
from chcook.femspace import (BandedMatrix, FemField, assemble, basis_function, build_space, cross_gram_sine,
                             derivative_hat_matrix, evaluate, generalized_modes, l2_norm, l2_project,
                             noise_load, solve_shifted_elliptic)
from chcook.noise import SpaceTimeGrid, build_gram, hat_values, sample_from_R
from chcook.spectral import SpectralField, dot_norm, eval_basis, solve_elliptic_spectral, validate_params


def cell_gauss(f, cells, npts=64):
    x, w = np.polynomial.legendre.leggauss(npts)
    total = 0.0
    for c in range(cells):
        a, b = c / cells, (c + 1) / cells
        xs = 0.5 * (b - a) * x + 0.5 * (a + b)
        total += 0.5 * (b - a) * np.sum(w * f(xs))
    return total


@pytest.mark.parametrize("r,cells,dim", [(3, 8, 16), (2, 8, 8), (3, 2, 4), (2, 3, 3)])
def test_dimensions(r, cells, dim):
    assert build_space(r, cells).dim == dim


def test_bad_space():
    with pytest.raises(ValueError):
        build_space(4, 8)
    with pytest.raises(ValueError):
        build_space(2, 1)


@pytest.mark.parametrize("r", [2, 3])
def test_basis_boundary_and_c1(r):
    spec = build_space(r, 6)
    eps = 1e-9
    for j in range(spec.dim):
        f = basis_function(spec, j)
        assert abs(f(0.0)) < 1e-13 and abs(f(1.0)) < 1e-13
        for node in np.arange(1, 6) / 6:
            assert f(node - eps) == pytest.approx(f(node + eps), abs=1e-7)
            assert f(node - eps, 1) == pytest.approx(f(node + eps, 1), abs=1e-6)


@pytest.mark.parametrize("r", [2, 3])
def test_assembly_against_quadrature(r):
    spec = build_space(r, 5)
    asm = assemble(spec, 3.0)
    M, A, G = asm.M.dense(), asm.A.dense(), asm.Gam.dense()
    for i in range(spec.dim):
        for j in range(spec.dim):
            fi, fj = basis_function(spec, i), basis_function(spec, j)
            assert M[i, j] == pytest.approx(cell_gauss(lambda x: fi(x) * fj(x), 5), abs=1e-14)
            assert G[i, j] == pytest.approx(cell_gauss(lambda x: fi(x, 1) * fj(x, 1), 5), rel=1e-12, abs=1e-12)
            assert A[i, j] == pytest.approx(cell_gauss(lambda x: fi(x, 2) * fj(x, 2), 5), rel=1e-12, abs=1e-9)


@pytest.mark.parametrize("r", [2, 3])
def test_integration_by_parts(r):
    # (chi'', chi) = -(chi', chi') since chi vanishes at both ends
    spec = build_space(r, 9)
    rng = np.random.default_rng(r)
    for _ in range(5):
        c = rng.standard_normal(spec.dim)
        f = FemField(c, spec)
        lhs = cell_gauss(lambda x: f(x, 2) * f(x), 9)
        gam = c @ assemble(spec).Gam.matvec(c)
        assert lhs == pytest.approx(-gam, rel=1e-12)
        assert abs(f(0.0) * f(0.0, 1)) + abs(f(1.0) * f(1.0, 1)) < 1e-12


@given(seed=st.integers(0, 2**32 - 1), mu=st.floats(0, 200), r=st.sampled_from([2, 3]), cells=st.integers(2, 20))
@settings(max_examples=40, deadline=None)
def test_coercivity(seed, mu, r, cells):
    spec = build_space(r, cells)
    asm = assemble(spec, mu)
    c = np.random.default_rng(seed).standard_normal(spec.dim)
    lhs = c @ asm.B_tilde.matvec(c)
    rhs = 0.5 * (c @ asm.A.matvec(c) + mu**2 * (c @ asm.M.matvec(c)))
    assert lhs >= rhs - 1e-10 * (1 + abs(rhs))


def test_banded_matrix_ops():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((7, 7))
    D = X @ X.T + 7 * np.eye(7)
    D[np.abs(np.subtract.outer(range(7), range(7))) > 2] = 0.0
    B = BandedMatrix.from_dense(D, 2)
    np.testing.assert_allclose(B.dense(), D)
    b = rng.standard_normal(7)
    np.testing.assert_allclose(B.matvec(b), D @ b, atol=1e-13)
    np.testing.assert_allclose(B.solve(b, refine=2), np.linalg.solve(D, b), rtol=1e-13)
    np.testing.assert_allclose((B + B * 2.0 - B).dense(), 2 * D)


@pytest.mark.parametrize("r", [2, 3])
def test_projection_reproduces_space_elements(r):
    spec = build_space(r, 7)
    c = np.random.default_rng(3).standard_normal(spec.dim)
    np.testing.assert_allclose(l2_project(FemField(c, spec), spec).coeffs, c, atol=1e-12)


def test_cubic_reproduces_quadratic():
    spec = build_space(3, 5)
    p = l2_project(lambda x: x * (1 - x), spec)
    x = np.linspace(0, 1, 41)
    np.testing.assert_allclose(p(x), x * (1 - x), atol=1e-13)


@pytest.mark.parametrize("r", [2, 3])
def test_cross_gram_sine_against_quadrature(r):
    spec = build_space(r, 4)
    E = cross_gram_sine(spec, np.array([1, 2, 7, 33]))
    for row, k in zip(E, [1, 2, 7, 33]):
        for j in range(spec.dim):
            fj = basis_function(spec, j)
            assert row[j] == pytest.approx(cell_gauss(lambda x: fj(x) * eval_basis(k, x), 4), abs=1e-13)


@pytest.mark.parametrize("r", [2, 3])
def test_sine_projection_consistency(r):
    errs = []
    for cells in (4, 8, 16, 32):
        spec = build_space(r, cells)
        asm = assemble(spec)
        errs.append(fem_vs_spectral_error(l2_project(SpectralField.mode(3, 3), spec, asm), SpectralField.mode(3, 3), asm))
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-2


@pytest.mark.parametrize("mu", [0.0, 12.0])
@pytest.mark.parametrize("r,min_slope", [(2, 1.9), (3, 3.7)])
def test_elliptic_rate(mu, r, min_slope):
    f = SpectralField.mode(1, 1)
    exact = solve_elliptic_spectral(f, validate_params(mu, 1.0, 1), "shifted")
    cells = [8, 16, 32, 64, 128]
    errs = [fem_vs_spectral_error(solve_shifted_elliptic(f, build_space(r, c), mu), exact) for c in cells]
    assert fit_rate([1 / c for c in cells], errs).slope >= min_slope


def test_elliptic_h3_negative_norm_bound():
    # r=3 middle estimate with the spectral H^{-1} norm of f: ratio stays bounded
    ratios = []
    for cells in (8, 16, 32, 64):
        h = 1 / cells
        f = SpectralField([1.0, 0.5, 0.25])
        exact = solve_elliptic_spectral(f, validate_params(0.0, 1, 3), "shifted")
        err = fem_vs_spectral_error(solve_shifted_elliptic(f, build_space(3, cells), 0.0), exact)
        ratios.append(err / (h**3 * dot_norm(f, -1)))
    assert max(ratios) < 10 * ratios[0] + 1.0


@pytest.mark.parametrize("r", [2, 3])
def test_elliptic_symmetry(r):
    # f = eps_1 is symmetric about 1/2, so the solution is too
    spec = build_space(r, 16)
    u = solve_shifted_elliptic(SpectralField.mode(1, 1), spec, 5.0)
    x = np.linspace(0, 1, 37)
    np.testing.assert_allclose(u(x), u(1 - x), atol=1e-12)


@pytest.mark.parametrize("r", [2, 3])
def test_galerkin_orthogonality(r):
    mu = 7.0
    spec = build_space(r, 12)
    asm = assemble(spec, mu)
    f = SpectralField([0.3, -1.0, 0.5, 2.0])
    u = solve_shifted_elliptic(f, spec, mu, asm)
    res = asm.B_tilde.matvec(u.coeffs) - f.coeffs @ cross_gram_sine(spec, np.arange(1, 5))
    assert np.max(np.abs(res)) <= 1e-10


@pytest.mark.parametrize("r", [2, 3])
def test_discrete_solution_operator_bound(r):
    # (T_h f, f) <= C ||f||_{-2}^2 with C stable under refinement
    rng = np.random.default_rng(4)
    fs = [SpectralField(rng.standard_normal(6)) for _ in range(5)]
    worst = []
    for cells in (8, 16, 32, 64, 128):
        spec = build_space(r, cells)
        asm = assemble(spec, 12.0)
        E = cross_gram_sine(spec, np.arange(1, 7))
        vals = []
        for f in fs:
            u = solve_shifted_elliptic(f, spec, 12.0, asm)
            vals.append((f.coeffs @ E @ u.coeffs) / dot_norm(f, -2) ** 2)
        worst.append(max(vals))
    assert max(worst) <= 1.05 * min(worst)
    assert max(worst) < 10.0


def test_noise_load_constant_what_is_zero():
    grid = SpaceTimeGrid(1.0, 2, 6)
    gram = build_gram(grid)
    for r in (2, 3):
        spec = build_space(r, 5)
        R = grid.dt * gram.matvec(np.ones((2, 7)).T).T  # W_hat = 1 on both slabs
        smp = sample_from_R(grid, gram, R)
        np.testing.assert_allclose(noise_load(spec, smp, 1), 0.0, atol=1e-13)


@pytest.mark.parametrize("r", [2, 3])
def test_derivative_hat_matrix_against_quadrature(r):
    grid = SpaceTimeGrid(1.0, 1, 6)
    spec = build_space(r, 4)  # non-nested meshes
    H = derivative_hat_matrix(spec, grid)
    L = math.lcm(4, 6)
    for j in range(spec.dim):
        fj = basis_function(spec, j)
        for l in range(7):
            ref = cell_gauss(lambda x: fj(x, 1) * hat_values(grid, x)[:, l], L)
            assert H[j, l] == pytest.approx(ref, abs=1e-14)


def test_generalized_modes_normalized():
    asm = assemble(build_space(3, 6), 12.0)
    sigma, V = generalized_modes(asm)
    np.testing.assert_allclose(V.T @ asm.M.dense() @ V, np.eye(V.shape[0]), atol=1e-10)
    np.testing.assert_allclose(asm.Lam.dense() @ V, asm.M.dense() @ V * sigma, atol=1e-7 * sigma.max())


def test_l2_norm_and_evaluate():
    spec = build_space(3, 4)
    c = np.arange(spec.dim, dtype=float)
    f = FemField(c, spec)
    assert l2_norm(f) == pytest.approx(math.sqrt(cell_gauss(lambda x: f(x) ** 2, 4)), rel=1e-12)
    np.testing.assert_allclose(evaluate(spec, c, [0.3, 0.7]), [f(0.3), f(0.7)])
    with pytest.raises(ValueError):
        f(1.5)
