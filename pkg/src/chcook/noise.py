"""Regularized space-time noise built on hat functions.

Time is split into ``N_star`` slabs of width ``dt`` and space into
``J_star`` cells of width ``dx``.  ``R[n, i]`` is the white-noise integral of
the hat function ``psi_i`` over slab ``n``; each slab vector is
``N(0, dt G)`` with ``G`` the hat Gram matrix, independent across slabs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded

from .spectral import SQRT2, InvalidParameterError


def derive_seed(base_seed: int, index: int) -> int:
    """Per-task 64-bit seed from ``(base_seed, index)`` via SeedSequence spawning."""
    ss = np.random.SeedSequence(int(base_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def make_rng(seed: int) -> np.random.Generator:
    # Philox is counter based, so streams from distinct seeds are independent
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass(frozen=True)
class SpaceTimeGrid:
    T: float
    N_star: int
    J_star: int

    def __post_init__(self):
        if self.N_star < 1 or self.J_star < 1:
            raise InvalidParameterError("N_star and J_star must be >= 1")
        if not self.T > 0:
            raise InvalidParameterError("T must be positive")

    @property
    def dt(self) -> float:
        return self.T / self.N_star

    @property
    def dx(self) -> float:
        return 1.0 / self.J_star

    @property
    def t_nodes(self) -> np.ndarray:
        return self.T * np.arange(self.N_star + 1) / self.N_star

    @property
    def x_nodes(self) -> np.ndarray:
        return np.arange(self.J_star + 1) / self.J_star

    def slab_of(self, t: float) -> int:
        """1-based slab index with slabs ``(t_{n-1}, t_n]`` and ``t = 0`` in slab 1."""
        if t < 0 or t > self.T * (1 + 1e-14):
            raise ValueError(f"t={t} outside [0, T]")
        s = t / self.dt
        n = math.ceil(s)
        if abs(s - round(s)) <= 1e-12 * max(1.0, s):
            n = int(round(s))
        return min(max(n, 1), self.N_star)


def hat_values(grid: SpaceTimeGrid, x) -> np.ndarray:
    """Matrix ``psi_i(x)`` with shape ``(len(x), J_star + 1)``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x < 0) or np.any(x > 1):
        raise ValueError("x must lie in [0, 1]")
    J = grid.J_star
    s = x * J
    j = np.minimum(np.floor(s).astype(int), J - 1)
    w = s - j
    out = np.zeros((x.size, J + 1))
    rows = np.arange(x.size)
    out[rows, j] = 1.0 - w
    out[rows, j + 1] += w
    return out


@dataclass(frozen=True)
class GramMatrix:
    """Tridiagonal hat Gram matrix with its banded Cholesky factor.

    ``upper`` holds ``G`` in LAPACK upper banded form (row 0 the
    super-diagonal, row 1 the diagonal); ``lower`` the factor ``L`` with
    ``L L^T = G`` in lower banded form.
    """

    upper: np.ndarray
    lower: np.ndarray
    dx: float

    @property
    def size(self) -> int:
        return self.upper.shape[1]

    @property
    def diagonal(self) -> np.ndarray:
        return self.upper[1]

    @property
    def off_diagonal(self) -> np.ndarray:
        return self.upper[0, 1:]

    def dense(self) -> np.ndarray:
        n = self.size
        G = np.diag(self.diagonal)
        G[np.arange(n - 1), np.arange(1, n)] = self.off_diagonal
        G[np.arange(1, n), np.arange(n - 1)] = self.off_diagonal
        return G

    def factor_dense(self) -> np.ndarray:
        n = self.size
        L = np.diag(self.lower[0])
        L[np.arange(1, n), np.arange(n - 1)] = self.lower[1, :-1]
        return L

    def matvec(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        d = self.diagonal.reshape((-1,) + (1,) * (v.ndim - 1))
        e = self.off_diagonal.reshape((-1,) + (1,) * (v.ndim - 1))
        out = d * v
        out[:-1] += e * v[1:]
        out[1:] += e * v[:-1]
        return out

    def solve(self, b: np.ndarray) -> np.ndarray:
        """``G^{-1} b`` along axis 0."""
        return cho_solve_banded((self.lower, True), np.asarray(b, dtype=float))

    def factor_matvec(self, v: np.ndarray) -> np.ndarray:
        """``L v`` along axis 0."""
        v = np.asarray(v, dtype=float)
        shape = (-1,) + (1,) * (v.ndim - 1)
        out = self.lower[0].reshape(shape) * v
        out[1:] += self.lower[1, :-1].reshape(shape) * v[:-1]
        return out


def build_gram(grid: SpaceTimeGrid) -> GramMatrix:
    n = grid.J_star + 1
    dx = grid.dx
    upper = np.zeros((2, n))
    upper[1, :] = 2.0 * dx / 3.0
    upper[1, 0] = upper[1, -1] = dx / 3.0
    upper[0, 1:] = dx / 6.0
    lower = cholesky_banded(upper, lower=False)
    # convert the upper factor U (G = U^T U) to lower banded storage of L = U^T
    low = np.zeros_like(upper)
    low[0] = lower[1]
    low[1, :-1] = lower[0, 1:]
    upper.setflags(write=False)
    low.setflags(write=False)
    return GramMatrix(upper=upper, lower=low, dx=dx)


@dataclass(frozen=True)
class NoiseSample:
    grid: SpaceTimeGrid
    R: np.ndarray
    a: np.ndarray
    seed: int | None = None

    @property
    def what_coeffs(self) -> np.ndarray:
        return self.a


def _sample_from_R(grid: SpaceTimeGrid, gram: GramMatrix, R: np.ndarray, seed=None) -> NoiseSample:
    R = np.array(R, dtype=float)
    if R.shape != (grid.N_star, grid.J_star + 1):
        raise ValueError(f"R must have shape {(grid.N_star, grid.J_star + 1)}")
    a = gram.solve(R.T).T / grid.dt
    R.setflags(write=False)
    a.setflags(write=False)
    return NoiseSample(grid=grid, R=R, a=a, seed=seed)


def sample_from_R(grid: SpaceTimeGrid, gram: GramMatrix, R: np.ndarray) -> NoiseSample:
    """Wrap a given ``R`` matrix (e.g. manufactured or imported) as a sample."""
    return _sample_from_R(grid, gram, R)


def sample_noise(grid: SpaceTimeGrid, gram: GramMatrix, seed: int) -> NoiseSample:
    rng = make_rng(seed)
    xi = rng.standard_normal((grid.J_star + 1, grid.N_star))
    R = math.sqrt(grid.dt) * gram.factor_matvec(xi)
    return _sample_from_R(grid, gram, R.T, seed=seed)


def sample_noise_batch(grid: SpaceTimeGrid, gram: GramMatrix, seed: int, n: int) -> np.ndarray:
    """``n`` independent ``R`` matrices from one stream; shape (n, N_star, J+1)."""
    rng = make_rng(seed)
    xi = rng.standard_normal((grid.J_star + 1, n * grid.N_star))
    R = math.sqrt(grid.dt) * gram.factor_matvec(xi)
    return R.T.reshape(n, grid.N_star, grid.J_star + 1)


def eval_what(sample: NoiseSample, t: float, x) -> np.ndarray | float:
    grid = sample.grid
    n = grid.slab_of(t)
    vals = hat_values(grid, x) @ sample.a[n - 1]
    return float(vals[0]) if np.ndim(x) == 0 else vals


def export_noise_csv(sample: NoiseSample, path) -> None:
    """Write ``R`` as CSV rows ``n, i, R`` (1-based indices, 17 significant digits)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "i", "R"])
        N, I = sample.R.shape
        for n in range(N):
            for i in range(I):
                w.writerow([n + 1, i + 1, f"{sample.R[n, i]:.17g}"])


def import_noise_csv(path, grid: SpaceTimeGrid, gram: GramMatrix) -> NoiseSample:
    R = np.full((grid.N_star, grid.J_star + 1), np.nan)
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            R[int(row["n"]) - 1, int(row["i"]) - 1] = float(row["R"])
    if np.isnan(R).any():
        raise ValueError("CSV does not cover every (n, i) entry")
    return _sample_from_R(grid, gram, R)


# -- inner products of hats against trigonometric modes ---------------------

def _hat_weights(grid: SpaceTimeGrid, lam: np.ndarray) -> np.ndarray:
    """``int psi_i(x) cos(lam (x - x_i)) dx`` per mode, shape ``(K, J+1)``.

    The hat is symmetric about its node so this equals ``dx sinc^2(lam dx/2)``
    for interior hats and half of it at the two ends.
    """
    dx = grid.dx
    half = 0.5 * lam * dx
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(half == 0.0, 1.0, np.sin(half) / np.where(half == 0.0, 1.0, half))
    w = np.repeat((dx * s**2)[:, None], grid.J_star + 1, axis=1)
    w[:, 0] *= 0.5
    w[:, -1] *= 0.5
    return w


def _node_phase(ks: np.ndarray, J: int) -> np.ndarray:
    """``k * i / J`` reduced modulo 2, as an exact integer reduction, shape (K, J+1)."""
    prod = np.multiply.outer(ks.astype(np.int64), np.arange(J + 1, dtype=np.int64))
    return (prod % (2 * J)) / J


def basis_spline_inners(grid: SpaceTimeGrid, k) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(c_k, d_k)`` with ``c_k[i] = (eps_k', psi_i)`` and ``d_k[i] = (phi_k, psi_i)``.

    ``k`` may be an int or an array of mode indices; for an array the
    results have shape ``(len(k), J+1)``.  ``c`` for ``k = 0`` is zero.
    """
    scalar = np.ndim(k) == 0
    ks = np.atleast_1d(np.asarray(k, dtype=np.int64))
    if np.any(ks < 0):
        raise ValueError("mode indices must be non-negative")
    J = grid.J_star
    lam = np.pi * ks.astype(float)
    w = _hat_weights(grid, lam)
    cos_nodes = np.cos(np.pi * _node_phase(ks, J))
    # cos is even about both ends, so the half-hat at an end picks up exactly
    # half of the symmetric integral
    d = np.where(ks[:, None] == 0, w, SQRT2 * cos_nodes * w)
    c = lam[:, None] * d
    if scalar:
        return c[0], d[0]
    return c, d


def sine_hat_inners(grid: SpaceTimeGrid, k) -> np.ndarray:
    """``(eps_k, psi_i)`` for sine modes ``k >= 1``; shape ``(len(k), J+1)``."""
    scalar = np.ndim(k) == 0
    ks = np.atleast_1d(np.asarray(k, dtype=np.int64))
    if np.any(ks < 1):
        raise ValueError("sine modes start at k = 1")
    J = grid.J_star
    lam = np.pi * ks.astype(float)
    dx = grid.dx
    w = _hat_weights(grid, lam)
    s = SQRT2 * np.sin(np.pi * _node_phase(ks, J)) * w
    a = lam * dx
    with np.errstate(invalid="ignore"):
        edge = SQRT2 * (1.0 - np.sinc(a / np.pi)) / lam
    sign = np.where(ks % 2 == 0, 1.0, -1.0)
    s[:, 0] = edge
    s[:, -1] = -sign * edge
    return s[0] if scalar else s


def spline_projection_efficiency(grid: SpaceTimeGrid, gram: GramMatrix, ks, chunk: int = 4096) -> np.ndarray:
    """``d_k^T G^{-1} d_k``: squared norm of the hat-space projection of ``phi_k``."""
    ks = np.atleast_1d(np.asarray(ks, dtype=np.int64))
    out = np.empty(ks.size)
    for start in range(0, ks.size, chunk):
        sl = slice(start, start + chunk)
        _, d = basis_spline_inners(grid, ks[sl])
        y = gram.solve(d.T)
        out[sl] = np.einsum("ki,ik->k", d, y)
    return out


# -- projection onto slab-constant hat fields ---------------------------------

def project_pi_hat(grid: SpaceTimeGrid, gram: GramMatrix, slab_loads: np.ndarray) -> np.ndarray:
    """Coefficients of the orthogonal projection onto ``span{X_{T_n} psi_i}``.

    ``slab_loads[n, l] = int_{T_n} int_D g psi_l`` (exact slab/cell
    integrals supplied by the caller).  On slab ``n`` the projection is
    ``sum_i coef[n, i] psi_i(x)``.
    """
    loads = np.asarray(slab_loads, dtype=float)
    return gram.solve(loads.T).T / grid.dt


def loads_from_hat_field(grid: SpaceTimeGrid, gram: GramMatrix, coef: np.ndarray) -> np.ndarray:
    """Slab loads of ``g = sum_i coef[n, i] psi_i`` on each slab."""
    return grid.dt * gram.matvec(np.asarray(coef, dtype=float).T).T


def loads_from_sine_field(grid: SpaceTimeGrid, sine_coef: np.ndarray) -> np.ndarray:
    """Slab loads of ``g = sum_k sine_coef[n, k-1] eps_k`` (constant on each slab)."""
    sine_coef = np.atleast_2d(np.asarray(sine_coef, dtype=float))
    s = sine_hat_inners(grid, np.arange(1, sine_coef.shape[1] + 1))
    return grid.dt * sine_coef @ s


def hat_field_norm(grid: SpaceTimeGrid, gram: GramMatrix, coef: np.ndarray) -> float:
    coef = np.asarray(coef, dtype=float)
    return float(np.sqrt(grid.dt * np.sum(coef.T * gram.matvec(coef.T))))


def sine_field_norm(grid: SpaceTimeGrid, sine_coef: np.ndarray) -> float:
    return float(np.sqrt(grid.dt * np.sum(np.asarray(sine_coef) ** 2)))


def ito_identity_check(grid: SpaceTimeGrid, gram: GramMatrix, slab_loads: np.ndarray,
                       sample: NoiseSample) -> tuple[float, float]:
    """Both sides of ``int int Pi g dW = int int W_hat g``, evaluated pathwise.

    The left side expands the stochastic integral of the projected field into
    the ``R`` entries; the right side integrates ``W_hat`` against ``g`` slab by
    slab.  They agree up to rounding once ``R`` is fixed.
    """
    coef = project_pi_hat(grid, gram, slab_loads)
    lhs = float(np.sum(coef * sample.R))
    rhs = float(np.sum(sample.a * np.asarray(slab_loads)))
    return lhs, rhs


# -- truncated-mode coupling to the underlying white noise --------------------

@dataclass(frozen=True)
class CoupledNoise:
    """White noise truncated to cosine modes ``0..K_couple`` on a refined time grid.

    ``dbeta_sub[n, s, k]`` is the Brownian increment of mode ``k`` over
    substep ``s`` of slab ``n``; ``R`` is induced through
    ``R[n, i] = sum_k d_k[i] dbeta[n, k]``.
    """

    grid: SpaceTimeGrid
    K_couple: int
    rho: int
    dbeta_sub: np.ndarray
    R: np.ndarray
    seed: int | None = None
    a: np.ndarray = field(default=None, repr=False)

    @property
    def dbeta(self) -> np.ndarray:
        return self.dbeta_sub.sum(axis=1)

    def as_sample(self) -> NoiseSample:
        return NoiseSample(grid=self.grid, R=self.R, a=self.a, seed=self.seed)


def coupling_matrix(grid: SpaceTimeGrid, K_couple: int) -> np.ndarray:
    """Rows ``d_k`` for ``k = 0..K_couple``; shape ``(K_couple+1, J+1)``."""
    _, d = basis_spline_inners(grid, np.arange(K_couple + 1))
    return d


def sample_coupled_noise(grid: SpaceTimeGrid, K_couple: int | None = None, rho: int = 16,
                         seed: int = 0, gram: GramMatrix | None = None) -> CoupledNoise:
    if K_couple is None:
        K_couple = 64 * grid.J_star
    if K_couple < 1 or rho < 1:
        raise InvalidParameterError("K_couple and rho must be >= 1")
    gram = gram or build_gram(grid)
    rng = make_rng(seed)
    sub = math.sqrt(grid.dt / rho) * rng.standard_normal((grid.N_star, rho, K_couple + 1))
    D = coupling_matrix(grid, K_couple)
    R = sub.sum(axis=1) @ D
    a = gram.solve(R.T).T / grid.dt
    return CoupledNoise(grid=grid, K_couple=K_couple, rho=rho, dbeta_sub=sub, R=R, seed=seed, a=a)


def parseval_gram(grid: SpaceTimeGrid, K_couple: int) -> np.ndarray:
    """``sum_{k<=K_couple} d_k d_k^T``: the Gram matrix seen by the truncated noise."""
    D = coupling_matrix(grid, K_couple)
    return D.T @ D
