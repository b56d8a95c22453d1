"""C1 spline spaces on a uniform mesh of (0, 1) with zero end values.

Each space stores, per cell, the monomial coefficients (in the local
variable ``t = (x - x_c)/h``) of the basis functions supported there and
their global indices.  Every integral in this module reduces to exact Gauss
rules over those polynomials or to closed-form trigonometric moments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline
from scipy.linalg import cho_solve_banded, cholesky_banded, eigh

from .noise import GramMatrix, NoiseSample, SpaceTimeGrid
from .spectral import SQRT2, InvalidParameterError, SpectralField

_MAXDEG = 4  # monomial slots per local function (degree <= 3)


@dataclass(frozen=True)
class SplineSpaceSpec:
    r: int
    cells: int
    coef: np.ndarray = field(repr=False)   # (cells, nloc, _MAXDEG) monomials in t
    glob: np.ndarray = field(repr=False)   # (cells, nloc) global index or -1

    @property
    def h(self) -> float:
        return 1.0 / self.cells

    @property
    def dim(self) -> int:
        return 2 * self.cells if self.r == 3 else self.cells

    @property
    def bandwidth(self) -> int:
        return 3 if self.r == 3 else 2

    @property
    def kind(self) -> str:
        return "hermite-cubic" if self.r == 3 else "quadratic-bspline"


def _hermite_local() -> np.ndarray:
    # H00, H10, H01, H11 on [0, 1] as monomial coefficients
    return np.array([
        [1.0, 0.0, -3.0, 2.0],
        [0.0, 1.0, -2.0, 1.0],
        [0.0, 0.0, 3.0, -2.0],
        [0.0, 0.0, -1.0, 1.0],
    ])


def _build_hermite(nc: int) -> SplineSpaceSpec:
    h = 1.0 / nc
    base = _hermite_local()
    coef = np.repeat(base[None], nc, axis=0)
    # slope shape functions carry d/dx = (1/h) d/dt
    coef[:, 1] *= h
    coef[:, 3] *= h

    def value_idx(i):
        return -1 if i in (0, nc) else 2 * i - 1

    def slope_idx(i):
        return 0 if i == 0 else (2 * nc - 1 if i == nc else 2 * i)

    glob = np.array([[value_idx(c), slope_idx(c), value_idx(c + 1), slope_idx(c + 1)]
                     for c in range(nc)], dtype=int)
    return SplineSpaceSpec(r=3, cells=nc, coef=coef, glob=glob)


def _build_bspline(nc: int) -> SplineSpaceSpec:
    knots = np.concatenate([[0.0, 0.0], np.arange(nc + 1) / nc, [1.0, 1.0]])
    nfull = nc + 2
    tt = np.array([0.0, 0.5, 1.0])
    vander = np.vander(tt, 3, increasing=True)
    coef = np.zeros((nc, 3, _MAXDEG))
    glob = np.full((nc, 3), -1, dtype=int)
    for c in range(nc):
        x = (c + tt) / nc
        for a in range(3):
            full = c + a
            w = np.zeros(nfull)
            w[full] = 1.0
            vals = BSpline(knots, w, 2, extrapolate=False)(x)
            vals = np.nan_to_num(vals)
            coef[c, a, :3] = np.linalg.solve(vander, vals)
            # drop the two end functions, which do not vanish at x = 0, 1
            glob[c, a] = full - 1 if 1 <= full <= nc else -1
    return SplineSpaceSpec(r=2, cells=nc, coef=coef, glob=glob)


def build_space(r: int, cells: int) -> SplineSpaceSpec:
    if r not in (2, 3):
        raise InvalidParameterError(f"r must be 2 or 3, got {r}")
    if cells < 2:
        raise InvalidParameterError("need at least 2 cells")
    spec = _build_hermite(cells) if r == 3 else _build_bspline(cells)
    spec.coef.setflags(write=False)
    spec.glob.setflags(write=False)
    return spec


def _poly_eval(coef: np.ndarray, t: np.ndarray, deriv: int, h: float) -> np.ndarray:
    """Evaluate monomials ``coef[..., d]`` at ``t`` (last axis), as x-derivatives."""
    c = coef
    for _ in range(deriv):
        c = c[..., 1:] * np.arange(1, c.shape[-1])
    powers = t[..., None] ** np.arange(c.shape[-1])
    return np.einsum("...d,qd->...q", c, powers) / h**deriv


def local_values(spec: SplineSpaceSpec, t: np.ndarray, deriv: int = 0) -> np.ndarray:
    """Values of every local function on every cell at local points ``t``: (cells, nloc, q)."""
    return _poly_eval(spec.coef, np.asarray(t, dtype=float), deriv, spec.h)


@dataclass
class BandedMatrix:
    """Symmetric banded matrix in LAPACK upper storage; caches its Cholesky factor."""

    ab: np.ndarray
    _chol: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.ab.shape[1]

    @property
    def bandwidth(self) -> int:
        return self.ab.shape[0] - 1

    @classmethod
    def from_dense(cls, A: np.ndarray, u: int) -> "BandedMatrix":
        n = A.shape[0]
        ab = np.zeros((u + 1, n))
        for d in range(u + 1):
            ab[u - d, d:] = np.diagonal(A, d)
        return cls(ab)

    def dense(self) -> np.ndarray:
        u, n = self.bandwidth, self.n
        A = np.zeros((n, n))
        for d in range(u + 1):
            diag = self.ab[u - d, d:]
            A[np.arange(n - d), np.arange(d, n)] = diag
            A[np.arange(d, n), np.arange(n - d)] = diag
        return A

    def __add__(self, other: "BandedMatrix") -> "BandedMatrix":
        return BandedMatrix(_pad_band(self.ab, other.bandwidth) + _pad_band(other.ab, self.bandwidth))

    def __mul__(self, s: float) -> "BandedMatrix":
        return BandedMatrix(float(s) * self.ab)

    __rmul__ = __mul__

    def __sub__(self, other: "BandedMatrix") -> "BandedMatrix":
        return self + (-1.0) * other

    def matvec(self, v: np.ndarray, dtype=float) -> np.ndarray:
        v = np.asarray(v, dtype=dtype)
        ab = self.ab.astype(dtype, copy=False)
        u, n = self.bandwidth, self.n
        shape = (-1,) + (1,) * (v.ndim - 1)
        out = ab[u].reshape(shape) * v
        for d in range(1, u + 1):
            band = ab[u - d, d:].reshape(shape)
            out[:n - d] += band * v[d:]
            out[d:] += band * v[:n - d]
        return out

    def cholesky(self) -> np.ndarray:
        if self._chol is None:
            self._chol = cholesky_banded(self.ab, lower=False)
        return self._chol

    def solve(self, b: np.ndarray, refine: int = 0) -> np.ndarray:
        """Solve ``A x = b``; ``refine`` rounds of iterative refinement use an
        extended-precision residual, which removes the ``cond(A) * eps`` floor
        seen on fine meshes."""
        b = np.asarray(b, dtype=float)
        x = cho_solve_banded((self.cholesky(), False), b)
        for _ in range(refine):
            res = b.astype(np.longdouble) - self.matvec(x, np.longdouble)
            x = x + cho_solve_banded((self.cholesky(), False), res.astype(float))
        return x


def _pad_band(ab: np.ndarray, u_other: int) -> np.ndarray:
    u = ab.shape[0] - 1
    if u >= u_other:
        return ab
    return np.vstack([np.zeros((u_other - u, ab.shape[1])), ab])


@dataclass(frozen=True)
class FemField:
    coeffs: np.ndarray
    spec: SplineSpaceSpec

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float).reshape(-1)
        if c.size != self.spec.dim:
            raise ValueError(f"expected {self.spec.dim} coefficients, got {c.size}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def __call__(self, x, deriv: int = 0):
        return evaluate(self.spec, self.coeffs, x, deriv)


def evaluate(spec: SplineSpaceSpec, coeffs: np.ndarray, x, deriv: int = 0):
    x = np.asarray(x, dtype=float)
    xs = np.atleast_1d(x)
    if np.any(xs < 0) or np.any(xs > 1):
        raise ValueError("x must lie in [0, 1]")
    s = xs * spec.cells
    c = np.minimum(np.floor(s).astype(int), spec.cells - 1)
    t = s - c
    coef = spec.coef[c]
    for _ in range(deriv):
        coef = coef[..., 1:] * np.arange(1, coef.shape[-1])
    vals = np.sum(coef * (t[:, None, None] ** np.arange(coef.shape[-1])), axis=-1) / spec.h**deriv
    g = spec.glob[c]
    padded = np.append(np.asarray(coeffs, dtype=float), 0.0)
    out = np.sum(vals * padded[g], axis=1)
    return float(out[0]) if x.ndim == 0 else out


def basis_function(spec: SplineSpaceSpec, j: int) -> FemField:
    e = np.zeros(spec.dim)
    e[j] = 1.0
    return FemField(e, spec)


# -- assembly -----------------------------------------------------------------

@dataclass(frozen=True)
class Assembled:
    """Mass ``M``, bending ``A`` and gradient ``Gam`` forms plus the two operators."""

    spec: SplineSpaceSpec
    mu: float
    M: BandedMatrix
    A: BandedMatrix
    Gam: BandedMatrix

    @property
    def Lam(self) -> BandedMatrix:
        return self.A - self.mu * self.Gam

    @property
    def B_tilde(self) -> BandedMatrix:
        return self.A - self.mu * self.Gam + self.mu**2 * self.M

    def __iter__(self):
        return iter((self.M, self.A, self.Gam, self.B_tilde))


def _gauss(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _scatter(spec: SplineSpaceSpec, local: np.ndarray) -> BandedMatrix:
    u = spec.bandwidth
    ab = np.zeros((u + 1, spec.dim))
    nloc = spec.glob.shape[1]
    for a in range(nloc):
        for b in range(nloc):
            ga, gb = spec.glob[:, a], spec.glob[:, b]
            ok = (ga >= 0) & (gb >= 0) & (gb >= ga)
            if not ok.any():
                continue
            np.add.at(ab, (u + ga[ok] - gb[ok], gb[ok]), local[ok, a, b])
    return BandedMatrix(ab)


def assemble(spec: SplineSpaceSpec, mu: float = 0.0, npts: int | None = None) -> Assembled:
    npts = npts or spec.r + 2
    t, w = _gauss(npts)
    h = spec.h
    forms = []
    for deriv in (0, 2, 1):
        V = local_values(spec, t, deriv)
        forms.append(_scatter(spec, h * np.einsum("caq,cbq,q->cab", V, V, w)))
    M, A, Gam = forms
    return Assembled(spec=spec, mu=float(mu), M=M, A=A, Gam=Gam)


# -- loads and projections ----------------------------------------------------

def _trig_moments(omega: np.ndarray, nmax: int = _MAXDEG) -> np.ndarray:
    """``m_j = int_0^1 t^j exp(i omega t) dt`` for ``j < nmax``; shape (len(omega), nmax)."""
    omega = np.asarray(omega, dtype=float)
    out = np.empty(omega.shape + (nmax,), dtype=complex)
    small = np.abs(omega) <= 2.0
    if small.any():
        z = 1j * omega[small]
        terms = np.ones_like(z)
        acc = np.zeros(z.shape + (nmax,), dtype=complex)
        for n in range(40):
            if n > 0:
                terms = terms * z / n
            acc += terms[..., None] / (n + np.arange(nmax) + 1.0)
        out[small] = acc
    big = ~small
    if big.any():
        z = 1j * omega[big]
        e = np.exp(z)
        m = (e - 1.0) / z
        out[big, 0] = m
        for j in range(1, nmax):
            m = (e - j * m) / z
            out[big, j] = m
    return out


def cross_gram_sine(spec: SplineSpaceSpec, k, chunk: int = 2048) -> np.ndarray:
    """``e_k[j] = (eps_k, chi_j)`` for one mode or an array of modes (rows)."""
    scalar = np.ndim(k) == 0
    ks = np.atleast_1d(np.asarray(k, dtype=np.int64))
    if np.any(ks < 1):
        raise ValueError("sine modes start at k = 1")
    nc, h = spec.cells, spec.h
    out = np.zeros((ks.size, spec.dim))
    cells = np.arange(nc, dtype=np.int64)
    for s in range(0, ks.size, chunk):
        kk = ks[s:s + chunk]
        mom = _trig_moments(np.pi * kk * h)                         # (k, d)
        phase = np.pi * ((np.multiply.outer(kk, cells) % (2 * nc)) / nc)
        ephase = np.exp(1j * phase)                                 # (k, c)
        loc = np.einsum("cad,kd->kca", spec.coef, mom)              # (k, c, a)
        vals = SQRT2 * h * np.imag(ephase[..., None] * loc)
        blk = np.zeros((kk.size, spec.dim + 1))
        g = np.where(spec.glob >= 0, spec.glob, spec.dim)
        for a in range(g.shape[1]):
            np.add.at(blk.T, g[:, a], vals[:, :, a].T)
        out[s:s + chunk] = blk[:, :-1]
    return out[0] if scalar else out


def spectral_load(f: SpectralField, spec: SplineSpaceSpec) -> np.ndarray:
    E = cross_gram_sine(spec, np.arange(1, f.K + 1))
    return f.coeffs @ E


def callable_load(f, spec: SplineSpaceSpec, npts: int = 16) -> np.ndarray:
    """Load vector of a callable by a per-cell Gauss rule (exact for polynomials up to degree 28)."""
    t, w = _gauss(npts)
    V = local_values(spec, t)
    x = (np.arange(spec.cells)[:, None] + t[None, :]) * spec.h
    fx = np.asarray(f(x.ravel()), dtype=float).reshape(x.shape)
    loc = spec.h * np.einsum("caq,cq,q->ca", V, fx, w)
    out = np.zeros(spec.dim + 1)
    g = np.where(spec.glob >= 0, spec.glob, spec.dim)
    np.add.at(out, g.ravel(), loc.ravel())
    return out[:-1]


def load_vector(f, spec: SplineSpaceSpec) -> np.ndarray:
    if isinstance(f, SpectralField):
        return spectral_load(f, spec)
    if isinstance(f, FemField):
        return assemble(f.spec).M.matvec(f.coeffs)
    if callable(f):
        return callable_load(f, spec)
    raise TypeError("f must be a SpectralField, FemField or callable")


def l2_project(f, spec: SplineSpaceSpec, asm: Assembled | None = None) -> FemField:
    asm = asm or assemble(spec)
    return FemField(asm.M.solve(load_vector(f, spec), refine=2), spec)


def solve_shifted_elliptic(f, spec: SplineSpaceSpec, mu: float, asm: Assembled | None = None) -> FemField:
    if asm is None or asm.mu != mu:
        asm = assemble(spec, mu)
    b = load_vector(f, spec)
    try:
        u = asm.B_tilde.solve(b, refine=2)
    except np.linalg.LinAlgError as exc:  # coercivity makes this unreachable
        raise RuntimeError("internal error: shifted elliptic system not positive definite") from exc
    return FemField(u, spec)


def l2_norm(field_: FemField, asm: Assembled | None = None) -> float:
    asm = asm or assemble(field_.spec)
    return float(math.sqrt(max(field_.coeffs @ asm.M.matvec(field_.coeffs), 0.0)))


# -- noise coupling -----------------------------------------------------------

def _union_breaks(cells: int, J: int) -> np.ndarray:
    L = math.lcm(cells, J)
    ticks = np.union1d(np.arange(cells + 1) * (L // cells), np.arange(J + 1) * (L // J))
    return ticks / L


def derivative_hat_matrix(spec: SplineSpaceSpec, grid: SpaceTimeGrid) -> np.ndarray:
    """``H[j, l] = (chi_j', psi_l)``, integrated exactly on the union of both meshes."""
    br = _union_breaks(spec.cells, grid.J_star)
    a, b = br[:-1], br[1:]
    t, w = _gauss(3)
    x = a[:, None] + (b - a)[:, None] * t[None, :]               # (s, q)
    mid = 0.5 * (a + b)
    c = np.minimum((mid * spec.cells).astype(int), spec.cells - 1)
    j = np.minimum((mid * grid.J_star).astype(int), grid.J_star - 1)
    tl = x * spec.cells - c[:, None]
    coef = spec.coef[c][..., 1:] * np.arange(1, _MAXDEG)          # (s, a, d-1)
    dchi = np.einsum("sad,sqd->saq", coef, tl[..., None] ** np.arange(_MAXDEG - 1)) / spec.h
    lam = x * grid.J_star - j[:, None]
    psi = np.stack([1.0 - lam, lam], axis=1)                      # (s, 2, q)
    loc = np.einsum("saq,sbq,q->sab", dchi, psi, w) * (b - a)[:, None, None]
    H = np.zeros((spec.dim + 1, grid.J_star + 1))
    g = np.where(spec.glob[c] >= 0, spec.glob[c], spec.dim)
    for aa in range(g.shape[1]):
        for bb in range(2):
            np.add.at(H, (g[:, aa], j + bb), loc[:, aa, bb])
    return H[:-1]


def noise_load(spec: SplineSpaceSpec, sample: NoiseSample, n: int, H: np.ndarray | None = None) -> np.ndarray:
    """``(d_x W_hat, chi_j) = -(W_hat, chi_j')`` on slab ``n`` (1-based)."""
    if not 1 <= n <= sample.grid.N_star:
        raise ValueError("slab index out of range")
    if H is None:
        H = derivative_hat_matrix(spec, sample.grid)
    return -H @ sample.a[n - 1]


def generalized_modes(asm: Assembled) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of ``(A - mu Gam) v = sigma M v`` with ``V^T M V = I``."""
    sigma, V = eigh(asm.Lam.dense(), asm.M.dense())
    return sigma, V


def gram_solve_rows(gram: GramMatrix, X: np.ndarray) -> np.ndarray:
    """``X G^{-1}`` for a row-major block ``X`` with ``J+1`` columns."""
    return gram.solve(np.asarray(X, dtype=float).T).T
