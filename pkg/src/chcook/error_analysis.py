"""Exact second moments of discretization errors, Monte Carlo counterparts and rate fits.

Every random quantity here is linear in the slab vectors ``R_n``, and for a
sine mode ``k`` the scalars ``z_{k,n} = c_k^T G^{-1} R_n`` are independent
over ``n`` with variance ``dt q_k``, ``q_k = c_k^T G^{-1} c_k``.  Mean square
errors therefore reduce to per-mode geometric sums, which are evaluated in
closed form so that millions of time steps cost nothing.

Tail bounds are reported in the units of the error itself: if the squared
error omitted beyond mode ``K`` is at most ``delta``, the reported bound is
``delta / error`` (an upper bound on the change of the root value).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .evolve import (EvolutionConfig, be_fullydiscrete, be_timediscrete_stoch, exact_u_truncated,
                     exact_uhat, overlap_matrix, slab_mode_loads)
from .femspace import (Assembled, FemField, SplineSpaceSpec, assemble, cross_gram_sine,
                       derivative_hat_matrix, evaluate, generalized_modes)
from .noise import (GramMatrix, SpaceTimeGrid, basis_spline_inners, build_gram, coupling_matrix,
                    derive_seed, loads_from_sine_field, project_pi_hat, sample_coupled_noise,
                    sample_noise, spline_projection_efficiency)
from .spectral import (SQRT2, InvalidParameterError, ModelParams, SpectralField, drift_eigenvalues,
                       geometric_sum, one_minus_exp_over)

DEFAULT_TAIL_TOL = 0.01
DEFAULT_K_CAP = 200_000


@dataclass
class ErrorReport:
    experiment: str
    params: dict
    error: float
    stderr: float = 0.0
    tail_bound: float = 0.0
    K: int = 0
    flagged: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def error2(self) -> float:
        return self.error**2

    @property
    def tail_ratio(self) -> float:
        return self.tail_bound / self.error if self.error > 0 else math.inf


@dataclass(frozen=True)
class RateFit:
    abscissas: np.ndarray
    errors: np.ndarray
    slope: float
    intercept: float
    r2: float


def fit_rate(abscissas, errors) -> RateFit:
    x = np.asarray(abscissas, dtype=float)
    y = np.asarray(errors, dtype=float)
    if x.size < 3 or x.size != y.size:
        raise ValueError("need at least 3 matching points")
    if np.any(x <= 0) or np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise ValueError("abscissas and errors must be strictly positive")
    if np.any(np.diff(x) >= 0):
        raise ValueError("abscissas must be strictly decreasing")
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss if ss > 0 else 1.0
    return RateFit(x, y, float(slope), float(intercept), float(r2))


def local_slopes(abscissas, errors) -> np.ndarray:
    return np.diff(np.log(errors)) / np.diff(np.log(abscissas))


# -- norms across representations --------------------------------------------

def _fem_spectral_sq(spec: SplineSpaceSpec, U: np.ndarray, V: np.ndarray, asm: Assembled,
                     E: np.ndarray) -> np.ndarray:
    """Row-wise ``||u_h - v||^2`` for coefficient blocks ``U (m, dim)`` and ``V (m, K)``.

    The Gram form ``u^T M u - 2 v^T E u + v^T v`` loses all digits once the
    error drops below about 1e-8 of the norms; those rows are redone by
    integrating the pointwise difference with a per-cell Gauss rule.
    """
    U, V = np.atleast_2d(U), np.atleast_2d(V)
    uu = np.einsum("mi,im->m", U, asm.M.matvec(U.T))
    vv = np.sum(V**2, axis=1)
    sq = uu - 2.0 * np.einsum("mk,km->m", V, E @ U.T) + vv
    redo = sq <= 1e-8 * (uu + vv)
    if redo.any():
        K = V.shape[1]
        npts = 16 + int(2 * K * spec.h)
        t, w = np.polynomial.legendre.leggauss(npts)
        t = 0.5 * (t + 1.0)
        x = ((np.arange(spec.cells)[:, None] + t[None, :]) * spec.h).ravel()
        wx = np.tile(0.5 * w * spec.h, spec.cells)
        basis = SQRT2 * np.sin(np.multiply.outer(x, np.pi * np.arange(1, K + 1)))
        for i in np.flatnonzero(redo):
            diff = evaluate(spec, U[i], x) - basis @ V[i]
            sq[i] = np.sum(wx * diff**2)
    return np.maximum(sq, 0.0)


def fem_vs_spectral_error(u_h: FemField, v: SpectralField, asm: Assembled | None = None,
                          E: np.ndarray | None = None) -> float:
    asm = asm or assemble(u_h.spec)
    if E is None:
        E = cross_gram_sine(u_h.spec, np.arange(1, v.K + 1))
    return float(math.sqrt(_fem_spectral_sq(u_h.spec, u_h.coeffs, v.coeffs, asm, E)[0]))


def _traj_coeffs(traj):
    return traj if isinstance(traj, np.ndarray) else traj.coeffs


def discrete_lt2_error(traj_a, traj_b, config: EvolutionConfig, asm: Assembled | None = None) -> float:
    """``(sum_{m>=1} dtau ||a^m - b^m||^2)^{1/2}`` for spectral/FEM trajectory pairs.

    Plain arrays are read as spectral coefficient histories ``(M+1, K)``.
    """
    A, B = _traj_coeffs(traj_a), _traj_coeffs(traj_b)
    if A.shape[0] != B.shape[0] or A.shape[0] != config.M + 1:
        raise ValueError("trajectories must both have M+1 entries")
    fem_a, fem_b = hasattr(traj_a, "spec"), hasattr(traj_b, "spec")
    if fem_a and fem_b:
        asm = asm or assemble(traj_a.spec)
        D = (A - B)[1:]
        sq = np.einsum("mi,im->m", D, asm.M.matvec(D.T))
    elif fem_a or fem_b:
        U, V = (A, B) if fem_a else (B, A)
        spec = (traj_a if fem_a else traj_b).spec
        asm = asm or assemble(spec)
        E = cross_gram_sine(spec, np.arange(1, V.shape[1] + 1))
        sq = _fem_spectral_sq(spec, U[1:], V[1:], asm, E)
    else:
        K = max(A.shape[1], B.shape[1])
        Ap = np.pad(A, ((0, 0), (0, K - A.shape[1])))
        Bp = np.pad(B, ((0, 0), (0, K - B.shape[1])))
        sq = np.sum((Ap - Bp)[1:] ** 2, axis=1)
    return float(math.sqrt(max(config.dtau * np.sum(sq), 0.0)))


# -- helpers for mode series ---------------------------------------------------

def _one_minus_tanhc(y: np.ndarray) -> np.ndarray:
    """``1 - tanh(y)/y`` without cancellation for small ``y``."""
    y = np.asarray(y, dtype=float)
    small = np.abs(y) < 1e-2
    y2 = y * y
    series = y2 / 3.0 - 2.0 * y2**2 / 15.0 + 17.0 * y2**3 / 315.0
    safe = np.where(small, 1.0, y)
    return np.where(small, series, 1.0 - np.tanh(safe) / safe)


def _slab_count(grid: SpaceTimeGrid, t: float) -> tuple[int, float]:
    """``(N_hat, delta)`` with ``t = (N_hat - 1) dt + delta`` and ``0 < delta <= dt``."""
    n = grid.slab_of(t)
    delta = t - (n - 1) * grid.dt
    if abs(delta - grid.dt) <= 1e-12 * grid.dt:
        delta = grid.dt
    return n, delta


def slab_square_sum(mu_k: np.ndarray, grid: SpaceTimeGrid, t: float) -> np.ndarray:
    """``S_k(t) = sum_n I_{k,n}(t)^2 / dt`` in closed form."""
    n, delta = _slab_count(grid, t)
    dt = grid.dt
    full = one_minus_exp_over(mu_k, dt) ** 2 * geometric_sum(-2.0 * mu_k * dt, n - 1)
    return (np.exp(-2.0 * mu_k * delta) * full + one_minus_exp_over(mu_k, delta) ** 2) / dt


def _mode_tail(K: int, mu: float) -> float:
    """``sum_{k>K} 1/(2(lam_k^2 - mu))`` bounded by its integral; needs ``K^2 pi^2 > mu``."""
    a = math.sqrt(mu) / math.pi
    if K <= a:
        return math.inf
    if a == 0.0:
        return 1.0 / (2.0 * math.pi**2 * K)
    return math.log((K + a) / (K - a)) / (4.0 * math.pi**2 * a)


def _hat_efficiency_bound(dx: float) -> float:
    """``B`` with ``P_k <= min(1, B k^{-4})`` from ``lambda_min(G) >= dx/6``."""
    return 12.0 * (1.0 + dx) * (2.0 / (math.pi * dx)) ** 4


def _hat_tail(K: int, mu: float, dx: float, factor: float) -> float:
    """``sum_{k>K} factor * min(1, B k^-4) / (lam_k^2 - mu)``, rigorous upper bound."""
    if K**2 * math.pi**2 <= mu:
        return math.inf
    B = _hat_efficiency_bound(dx)
    k1 = max(K, int(math.ceil(B**0.25)))
    total = 0.0
    if k1 > K:
        k = np.arange(K + 1, k1 + 1, dtype=float)
        total += np.sum(np.minimum(1.0, B / k**4) / ((np.pi * k) ** 2 - mu))
    # integral bound of the monotone remainder beyond k1
    total += B / ((math.pi**2 - mu / k1**2) * 5.0 * k1**5)
    return factor * total


class _EfficiencyCache:
    """Grows ``P_k = d_k^T G^{-1} d_k`` for ``k = 1..K`` on demand."""

    def __init__(self, grid: SpaceTimeGrid, gram: GramMatrix):
        self.grid, self.gram = grid, gram
        self.P = np.zeros(0)

    def upto(self, K: int) -> np.ndarray:
        have = self.P.size
        if K > have:
            new = spline_projection_efficiency(self.grid, self.gram, np.arange(have + 1, K + 1))
            self.P = np.concatenate([self.P, new])
        return self.P[:K]


def check_projection_orthogonality(grid: SpaceTimeGrid, gram: GramMatrix, trials: int = 4,
                                   seed: int = 12345, tol: float = 1e-10) -> bool:
    """Idempotence and self-adjointness of the slab/hat projection on random pairs."""
    rng = np.random.default_rng(seed)
    small = SpaceTimeGrid(grid.T, min(grid.N_star, 3), grid.J_star)
    for _ in range(trials):
        f = rng.standard_normal((small.N_star, 12))
        g = rng.standard_normal((small.N_star, 12))
        lf = loads_from_sine_field(small, f)
        lg = loads_from_sine_field(small, g)
        pf = project_pi_hat(small, gram, lf)
        pg = project_pi_hat(small, gram, lg)
        again = project_pi_hat(small, gram, small.dt * gram.matvec(pf.T).T)
        if np.max(np.abs(again - pf)) > tol * (1.0 + np.max(np.abs(pf))):
            return False
        # (Pf, g) = (f, Pg)
        lhs, rhs = np.sum(pf * lg), np.sum(lf * pg)
        if abs(lhs - rhs) > tol * (1.0 + abs(lhs)):
            return False
    return True


# -- modeling error ----------------------------------------------------------

def modeling_error_modes(ks: np.ndarray, P: np.ndarray, grid: SpaceTimeGrid, mu: float, t: float,
                         pythagorean: bool = True) -> np.ndarray:
    """Per-mode ``E|u_k(t) - u_hat_k(t)|^2``."""
    lam = np.pi * ks.astype(float)
    mu_k = lam**2 * (lam**2 - mu)
    E2 = one_minus_exp_over(2.0 * mu_k, t)
    n, delta = _slab_count(grid, t)
    if pythagorean and delta == grid.dt:
        # aligned: lam^2 E2 (1 - P tau) with tau = tanh(y)/y, y = mu_k dt / 2
        return lam**2 * E2 * ((1.0 - P) + P * _one_minus_tanhc(0.5 * mu_k * grid.dt))
    S = slab_square_sum(mu_k, grid, t)
    if pythagorean:
        return lam**2 * (E2 - P * S)
    # direct expansion: variance of u minus twice the covariance plus variance of u_hat
    return lam**2 * E2 - 2.0 * lam**2 * P * S + lam**2 * P * S


def exact_modeling_error(grid: SpaceTimeGrid, params: ModelParams, t: float | None = None,
                         tail_tol: float = DEFAULT_TAIL_TOL, K_cap: int = DEFAULT_K_CAP,
                         K_start: int | None = None, adaptive: bool = True,
                         gram: GramMatrix | None = None) -> ErrorReport:
    """``Theta(t) = (E||u(t) - u_hat(t)||^2)^{1/2}`` with a rigorous mode-tail bound."""
    t = grid.T if t is None else float(t)
    if not 0.0 <= t <= grid.T * (1 + 1e-14):
        raise ValueError("t must lie in [0, T]")
    info = dict(dt=grid.dt, dx=grid.dx, mu=params.mu, T=grid.T, t=t)
    if t == 0.0:
        return ErrorReport("modeling", info, 0.0, K=0)
    gram = gram or build_gram(grid)
    pyth = check_projection_orthogonality(grid, gram)
    cache = _EfficiencyCache(grid, gram)
    K = params.K if not adaptive else max(K_start or 4 * grid.J_star, params.kappa + 1, 16)
    total, done = 0.0, 0
    while True:
        ks = np.arange(done + 1, K + 1)
        total += float(np.sum(modeling_error_modes(ks, cache.upto(K)[done:], grid, params.mu, t, pyth)))
        done = K
        value = math.sqrt(max(total, 0.0))
        delta = _mode_tail(K, params.mu)
        tail = delta / value if value > 0 else math.inf
        if not adaptive or tail <= tail_tol * value or K >= K_cap:
            break
        K = min(2 * K, K_cap)
    flagged = adaptive and tail > tail_tol * value
    return ErrorReport("modeling", info, value, 0.0, tail, K, flagged,
                       extra=dict(pythagorean=pyth, error2=total, tail2=delta))


# -- time-discrete strong error -----------------------------------------------

def _aligned_ratio(config: EvolutionConfig, grid: SpaceTimeGrid) -> int | None:
    if grid.N_star % config.M == 0 and math.isclose(config.T, grid.T, rel_tol=1e-14):
        return grid.N_star // config.M
    return None


def td_error_modes(mu_k: np.ndarray, q: np.ndarray, grid: SpaceTimeGrid, config: EvolutionConfig,
                   m: int, p: int) -> np.ndarray:
    """Closed-form ``E|U_hat_k^m - u_hat_k(tau_m)|^2`` for ``dtau = p dt``."""
    dt, dtau = grid.dt, config.dtau
    lr = -np.log1p(dtau * mu_k)
    r = np.exp(lr)
    e1 = one_minus_exp_over(mu_k, dt) / dt
    S1 = geometric_sum(-mu_k * dt, p)
    S2 = geometric_sum(-2.0 * mu_k * dt, p)
    total = (p * r**2 * geometric_sum(2.0 * lr, m)
             - 2.0 * r * e1 * S1 * geometric_sum(lr - mu_k * dtau, m)
             + e1**2 * S2 * geometric_sum(-2.0 * mu_k * dtau, m))
    return dt * q * total


def td_error_modes_general(mu_k: np.ndarray, q: np.ndarray, grid: SpaceTimeGrid,
                           config: EvolutionConfig, m: int, max_entries: int = 50_000_000) -> np.ndarray:
    """Same quantity from explicit slab weights; works for non-aligned grids."""
    if mu_k.size * grid.N_star > max_entries:
        raise MemoryError("explicit weight matrix too large; use aligned grids")
    O = overlap_matrix(config, grid)[:m].toarray()               # (m, N)
    r = 1.0 / (1.0 + config.dtau * mu_k)
    pw = r[:, None] ** (m - np.arange(1, m + 1) + 1)[None, :]    # (K, m)
    alpha = pw @ O / grid.dt
    tm = config.tau(m)
    tn = grid.t_nodes
    a = np.minimum(tn[:-1], tm)
    b = np.minimum(tn[1:], tm)
    beta = np.exp(-mu_k[:, None] * (tm - b[None, :])) * one_minus_exp_over(mu_k[:, None], (b - a)[None, :]) / grid.dt
    return grid.dt * q * np.sum((alpha - beta) ** 2, axis=1)


def exact_strong_error_td(grid: SpaceTimeGrid, params: ModelParams, config: EvolutionConfig,
                          m: int | None = None, tail_tol: float = DEFAULT_TAIL_TOL,
                          K_cap: int = DEFAULT_K_CAP, adaptive: bool = True,
                          general: bool = False, gram: GramMatrix | None = None) -> ErrorReport:
    """``(E||U_hat^m - u_hat(tau_m)||^2)^{1/2}`` by exact covariance propagation."""
    config.gate(params.mu)
    m = config.M if m is None else int(m)
    info = dict(dt=grid.dt, dx=grid.dx, dtau=config.dtau, mu=params.mu, T=grid.T, m=m)
    if m == 0:
        return ErrorReport("time-strong", info, 0.0)
    p = _aligned_ratio(config, grid)
    if p is None:
        general = True
    gram = gram or build_gram(grid)
    cache = _EfficiencyCache(grid, gram)
    K = params.K if not adaptive else max(2 * grid.J_star, params.kappa + 1, 16)
    total, done = 0.0, 0
    while True:
        ks = np.arange(done + 1, K + 1)
        lam = np.pi * ks
        mu_k = drift_eigenvalues(ks.size, params.mu, start=done + 1)
        q = lam**2 * cache.upto(K)[done:]
        if general:
            vals = td_error_modes_general(mu_k, q, grid, config, m)
        else:
            vals = td_error_modes(mu_k, q, grid, config, m, p)
        total += float(np.sum(vals))
        done = K
        value = math.sqrt(max(total, 0.0))
        delta = _hat_tail(K, params.mu, grid.dx, 2.0)
        tail = delta / value if value > 0 else math.inf
        if not adaptive or tail <= tail_tol * value or K >= K_cap:
            break
        K = min(2 * K, K_cap)
    flagged = adaptive and tail > tail_tol * value
    return ErrorReport("time-strong", info, value, 0.0, tail, K, flagged,
                       extra=dict(error2=total, tail2=delta, aligned=not general))


# -- fully-discrete strong error ----------------------------------------------

def exact_strong_error_fd(grid: SpaceTimeGrid, params: ModelParams, config: EvolutionConfig,
                          spec: SplineSpaceSpec, m: int | None = None, reference: str = "timediscrete",
                          tail_tol: float = DEFAULT_TAIL_TOL, K_cap: int = DEFAULT_K_CAP,
                          adaptive: bool = True, gram: GramMatrix | None = None,
                          max_width: int = 20_000_000) -> ErrorReport:
    """``(E||U_h^m - U_hat^m||^2)^{1/2}`` (or against ``u_hat(tau_m)``) in closed form.

    The generalized eigenpairs of ``(A - mu Gam, M)`` diagonalize the FEM
    step, so each eigencomponent and each sine mode are scalar Backward
    Euler recursions driven by correlated slab sums.
    """
    config.gate(params.mu)
    if reference not in ("timediscrete", "exact"):
        raise ValueError("reference must be 'timediscrete' or 'exact'")
    p = _aligned_ratio(config, grid)
    if p is None:
        raise InvalidParameterError("fully-discrete closed form needs N_star to be a multiple of M")
    if spec.dim * (grid.J_star + 1) > max_width:
        raise MemoryError("propagation width dim*(J_star+1) exceeds the memory guard")
    m = config.M if m is None else int(m)
    info = dict(dt=grid.dt, dx=grid.dx, dtau=config.dtau, h=spec.h, r=spec.r, mu=params.mu,
                T=grid.T, m=m, reference=reference)
    if m == 0:
        return ErrorReport("space-strong", info, 0.0)
    gram = gram or build_gram(grid)
    dt, dtau = grid.dt, config.dtau
    asm = assemble(spec, params.mu)
    sigma, V = generalized_modes(asm)
    Hv = V.T @ derivative_hat_matrix(spec, grid)
    HvG = gram.solve(Hv.T).T
    D1 = np.einsum("pi,pi->p", HvG, Hv)
    lrho = -np.log1p(dtau * sigma)
    rho = np.exp(lrho)
    fem_part = float(np.sum(D1 * dtau * rho**2 * geometric_sum(2.0 * lrho, m)))

    cache = _EfficiencyCache(grid, gram)
    K = params.K if not adaptive else max(4 * grid.J_star, 4 * spec.dim, params.kappa + 1, 16)
    cross, spec_part, done = 0.0, 0.0, 0
    while True:
        ks = np.arange(done + 1, K + 1)
        for s in range(0, ks.size, 4096):
            kk = ks[s:s + 4096]
            lam = np.pi * kk
            mu_k = lam**2 * (lam**2 - params.mu)
            c, _ = basis_spline_inners(grid, kk)
            X = (cross_gram_sine(spec, kk) @ V) * (HvG @ c.T).T       # (k, p)
            if reference == "timediscrete":
                lr = -np.log1p(dtau * mu_k)
                Tm = dtau * np.exp(lr[:, None] + lrho[None, :]) * geometric_sum(lr[:, None] + lrho[None, :], m)
                q = lam**2 * cache.upto(kk[-1])[kk[0] - 1:]
                spec_part += float(np.sum(q * dtau * np.exp(2 * lr) * geometric_sum(2 * lr, m)))
            else:
                e = one_minus_exp_over(mu_k, dt)
                S1 = geometric_sum(-mu_k * dt, p)
                Tm = (e * S1)[:, None] * rho[None, :] * geometric_sum(lrho[None, :] - (mu_k * dtau)[:, None], m)
                q = lam**2 * cache.upto(kk[-1])[kk[0] - 1:]
                spec_part += float(np.sum(q * slab_square_sum(mu_k, grid, config.tau(m))))
            cross += float(np.sum(X * Tm))
        done = K
        total = fem_part - 2.0 * cross + spec_part
        value = math.sqrt(max(total, 0.0))
        tau = _hat_tail(K, params.mu, grid.dx, 0.5)
        delta = 2.0 * math.sqrt(fem_part * tau) + tau
        tail = delta / value if value > 0 else math.inf
        if not adaptive or tail <= tail_tol * value or K >= K_cap:
            break
        K = min(2 * K, K_cap)
    flagged = adaptive and tail > tail_tol * value
    return ErrorReport("space-strong", info, value, 0.0, tail, K, flagged,
                       extra=dict(error2=total, tail2=delta, fem_part=fem_part, cross=cross,
                                  spectral_part=spec_part))


# -- coupling oracle expectations ---------------------------------------------

def coupled_modeling_expectation(grid: SpaceTimeGrid, params: ModelParams, K_couple: int, rho: int,
                                 gram: GramMatrix | None = None) -> float:
    """Exact mean of ``sum_{k<=K_couple} (u_k(T) - u_hat_k(T))^2`` for the coupling oracle.

    Accounts for the midpoint rule on the sub-grid and for the truncated
    noise, whose slab covariance is ``dt D^T D`` instead of ``dt G``.
    """
    gram = gram or build_gram(grid)
    ks = np.arange(1, K_couple + 1)
    lam = np.pi * ks
    mu_k = lam**2 * (lam**2 - params.mu)
    dt, N = grid.dt, grid.N_star
    h = dt / rho
    c, d = basis_spline_inners(grid, ks)
    Gc = gram.solve(c.T)                                         # (J+1, k)
    P = np.einsum("ki,ik->k", d, Gc) / lam                      # d^T G^-1 d
    D = coupling_matrix(grid, K_couple)
    DG = D @ Gc                                                  # (K_couple+1, k)
    v_hat = np.sum(DG**2, axis=0)                                # c G^-1 D^T D G^-1 c
    var_u = lam**2 * h * np.exp(-mu_k * h) * geometric_sum(-2.0 * mu_k * h, N * rho)
    geo_slab = geometric_sum(-2.0 * mu_k * dt, N)
    e = one_minus_exp_over(mu_k, dt)
    mid = h * np.exp(-0.5 * mu_k * h) * geometric_sum(-mu_k * h, rho)
    cov = lam**2 * P * e * mid / dt * geo_slab
    var_hat = e**2 / dt * geo_slab * v_hat
    return float(np.sum(var_u - 2.0 * cov + var_hat))


def uhat_second_moment(grid: SpaceTimeGrid, params: ModelParams, t: float,
                       gram: GramMatrix | None = None) -> float:
    """``E||u_hat(t)||^2`` over modes ``1..params.K``."""
    gram = gram or build_gram(grid)
    ks = np.arange(1, params.K + 1)
    q = (np.pi * ks) ** 2 * spline_projection_efficiency(grid, gram, ks)
    return float(np.sum(q * slab_square_sum(drift_eigenvalues(params.K, params.mu), grid, t)))


# -- Monte Carlo ---------------------------------------------------------------

def _sample_seeds(base_seed: int, n_samples: int) -> list[int]:
    seeds = [derive_seed(base_seed, i) for i in range(n_samples)]
    if len(set(seeds)) != len(seeds):
        raise RuntimeError("derived seeds collide")
    return seeds


def mc_strong_error(kind: str, params: ModelParams, n_samples: int, base_seed: int,
                    grid: SpaceTimeGrid, config: EvolutionConfig | None = None,
                    spec: SplineSpaceSpec | None = None, K_couple: int | None = None,
                    rho: int = 16, target: str = "error") -> ErrorReport:
    """Mean of squared pathwise errors with its standard error (common random numbers).

    ``error`` holds the root of the sample mean; ``extra['mean2']`` and
    ``extra['stderr2']`` the mean square and its standard error.  With
    ``target='uhat'`` the sampled quantity is ``||u_hat(T)||^2`` instead.
    """
    if n_samples < 2:
        raise ValueError("need at least 2 samples")
    gram = build_gram(grid)
    seeds = _sample_seeds(base_seed, n_samples)
    vals = np.empty(n_samples)
    K = params.K
    if kind == "modeling":
        K_couple = K_couple or 64 * grid.J_star
        p = params.with_K(K_couple)
        for i, s in enumerate(seeds):
            cn = sample_coupled_noise(grid, K_couple, rho, s, gram)
            u = exact_u_truncated(cn, grid.T, p)
            uh = exact_uhat(cn.as_sample(), grid.T, p)
            vals[i] = np.sum((u.coeffs - uh.coeffs) ** 2)
    elif kind == "timediscrete":
        if config is None:
            raise ValueError("time-discrete MC needs an EvolutionConfig")
        for i, s in enumerate(seeds):
            smp = sample_noise(grid, gram, s)
            z = slab_mode_loads(smp, K)
            uh = exact_uhat(smp, grid.T, params, z)
            if target == "uhat":
                vals[i] = np.sum(uh.coeffs**2)
                continue
            U = be_timediscrete_stoch(smp, params, config, z)
            vals[i] = np.sum((U.coeffs[-1] - uh.coeffs) ** 2)
    elif kind == "fullydiscrete":
        if config is None or spec is None:
            raise ValueError("fully-discrete MC needs an EvolutionConfig and a spline space")
        asm = assemble(spec, params.mu)
        H = derivative_hat_matrix(spec, grid)
        E = cross_gram_sine(spec, np.arange(1, K + 1))
        for i, s in enumerate(seeds):
            smp = sample_noise(grid, gram, s)
            Uh = be_fullydiscrete(smp, spec, params, config, asm, H)
            U = be_timediscrete_stoch(smp, params, config)
            vals[i] = fem_vs_spectral_error(Uh[-1], U[-1], asm, E) ** 2
    else:
        raise ValueError(f"unknown kind {kind!r}")
    mean = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / math.sqrt(n_samples))
    info = dict(kind=kind, n_samples=n_samples, base_seed=base_seed, dt=grid.dt, dx=grid.dx, mu=params.mu)
    return ErrorReport(f"mc-{kind}", info, math.sqrt(mean), se / (2 * math.sqrt(mean)) if mean > 0 else 0.0,
                       K=K, extra=dict(mean2=mean, stderr2=se, samples=vals))
