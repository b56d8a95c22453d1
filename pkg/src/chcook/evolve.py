"""Backward Euler time stepping in the sine basis and in the C1 spline spaces.

Steps ``Delta_m = (tau_{m-1}, tau_m]`` and noise slabs ``T_n`` are coupled
only through the exact overlap lengths ``|Delta_m cap T_n|``, so the two
grids need not be aligned.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse

from .femspace import Assembled, FemField, SplineSpaceSpec, assemble, derivative_hat_matrix, l2_project
from .noise import CoupledNoise, NoiseSample, SpaceTimeGrid, basis_spline_inners
from .spectral import (InvalidParameterError, ModelParams, SpectralField, drift_eigenvalues,
                       exp_kernel_integral, mode_frequencies)


def check_gate(mu: float, dtau: float, strict: bool = True) -> None:
    """Stability gate: ``mu^2 dtau < 1/4`` (strict) or ``dtau mu^2 / 4 < 1`` (weak)."""
    if strict:
        if not mu**2 * dtau < 0.25:
            raise InvalidParameterError(
                f"stability gate mu^2*dtau < 1/4 violated: mu^2*dtau = {mu**2 * dtau:.6g}")
    elif not dtau * mu**2 / 4.0 < 1.0:
        raise InvalidParameterError(
            f"invertibility gate dtau*mu^2/4 < 1 violated: dtau*mu^2/4 = {dtau * mu**2 / 4:.6g}")


@dataclass(frozen=True)
class EvolutionConfig:
    T: float
    M: int
    strict: bool = True

    def __post_init__(self):
        if self.M < 1 or not self.T > 0:
            raise InvalidParameterError("need M >= 1 and T > 0")

    @property
    def dtau(self) -> float:
        return self.T / self.M

    @property
    def taus(self) -> np.ndarray:
        return self.T * np.arange(self.M + 1) / self.M

    def tau(self, m: int) -> float:
        return self.T * m / self.M

    def gate(self, mu: float) -> None:
        check_gate(mu, self.dtau, self.strict)


def overlap_weight(m: int, n: int, config: EvolutionConfig, grid: SpaceTimeGrid) -> float:
    """``|Delta_m cap T_n|`` from integer endpoint arithmetic (1-based indices)."""
    M, N = config.M, grid.N_star
    if not (1 <= m <= M and 1 <= n <= N):
        raise ValueError("step or slab index out of range")
    lo = max((m - 1) * N, (n - 1) * M)
    hi = min(m * N, n * M)
    return config.T * max(hi - lo, 0) / (M * N)


def overlap_matrix(config: EvolutionConfig, grid: SpaceTimeGrid) -> sparse.csr_matrix:
    """Sparse ``(M, N_star)`` matrix of overlap lengths."""
    M, N = config.M, grid.N_star
    if not math.isclose(config.T, grid.T, rel_tol=1e-14):
        raise InvalidParameterError("time step grid and noise grid must share T")
    L = math.lcm(M, N)
    ticks = np.union1d(np.arange(M + 1) * (L // M), np.arange(N + 1) * (L // N))
    a, b = ticks[:-1], ticks[1:]
    rows = a // (L // M)
    cols = a // (L // N)
    vals = config.T * (b - a) / L
    return sparse.csr_matrix((vals, (rows, cols)), shape=(M, N))


@dataclass(frozen=True)
class SpectralTrajectory:
    taus: np.ndarray
    coeffs: np.ndarray  # (M+1, K)

    def __getitem__(self, m: int) -> SpectralField:
        return SpectralField(self.coeffs[m])

    def __len__(self) -> int:
        return self.coeffs.shape[0]


@dataclass(frozen=True)
class FemTrajectory:
    taus: np.ndarray
    coeffs: np.ndarray  # (M+1, dim)
    spec: SplineSpaceSpec

    def __getitem__(self, m: int) -> FemField:
        return FemField(self.coeffs[m], self.spec)

    def __len__(self) -> int:
        return self.coeffs.shape[0]


def _be_factors(mu_k: np.ndarray, dtau: float) -> np.ndarray:
    denom = 1.0 + dtau * mu_k
    bad = np.flatnonzero(denom == 0.0)
    if bad.size:
        raise InvalidParameterError(f"1 + dtau*mu_k = 0 for k = {bad[0] + 1}")
    return 1.0 / denom


def be_det_spectral(w0: SpectralField, params: ModelParams, config: EvolutionConfig) -> SpectralTrajectory:
    config.gate(params.mu)
    r = _be_factors(drift_eigenvalues(w0.K, params.mu), config.dtau)
    powers = r[None, :] ** np.arange(config.M + 1)[:, None]
    return SpectralTrajectory(config.taus, powers * w0.coeffs[None, :])


def exact_det_spectral(w0: SpectralField, params: ModelParams, taus) -> np.ndarray:
    """Semigroup values ``exp(-mu_k tau) w0_k`` at each tau; shape (len(taus), K)."""
    mu_k = drift_eigenvalues(w0.K, params.mu)
    return np.exp(-np.multiply.outer(np.asarray(taus, dtype=float), mu_k)) * w0.coeffs


def step_matrix(asm: Assembled, dtau: float):
    return asm.M + dtau * asm.Lam


def be_det_fem(w0, spec: SplineSpaceSpec, params: ModelParams, config: EvolutionConfig,
               asm: Assembled | None = None) -> FemTrajectory:
    config.gate(params.mu)
    if asm is None or asm.mu != params.mu:
        asm = assemble(spec, params.mu)
    S = step_matrix(asm, config.dtau)
    out = np.empty((config.M + 1, spec.dim))
    out[0] = l2_project(w0, spec, asm).coeffs
    for m in range(1, config.M + 1):
        out[m] = S.solve(asm.M.matvec(out[m - 1]), refine=2)
    return FemTrajectory(config.taus, out, spec)


def slab_mode_loads(sample: NoiseSample, K: int) -> np.ndarray:
    """``z[n, k] = c_k^T G^{-1} R_n`` for modes 1..K; shape (N_star, K)."""
    c, _ = basis_spline_inners(sample.grid, np.arange(1, K + 1))
    return sample.grid.dt * sample.a @ c.T


def be_timediscrete_stoch(sample: NoiseSample, params: ModelParams, config: EvolutionConfig,
                          z: np.ndarray | None = None) -> SpectralTrajectory:
    config.gate(params.mu)
    grid = sample.grid
    r = _be_factors(drift_eigenvalues(params.K, params.mu), config.dtau)
    if z is None:
        z = slab_mode_loads(sample, params.K)
    F = -(overlap_matrix(config, grid) @ z) / grid.dt
    out = np.zeros((config.M + 1, params.K))
    for m in range(1, config.M + 1):
        out[m] = r * (out[m - 1] + F[m - 1])
    return SpectralTrajectory(config.taus, out)


def be_fullydiscrete(sample: NoiseSample, spec: SplineSpaceSpec, params: ModelParams,
                     config: EvolutionConfig, asm: Assembled | None = None,
                     H: np.ndarray | None = None) -> FemTrajectory:
    config.gate(params.mu)
    if asm is None or asm.mu != params.mu:
        asm = assemble(spec, params.mu)
    if H is None:
        H = derivative_hat_matrix(spec, sample.grid)
    S = step_matrix(asm, config.dtau)
    loads = -(sample.a @ H.T)                       # (N, dim)
    F = overlap_matrix(config, sample.grid) @ loads
    out = np.zeros((config.M + 1, spec.dim))
    for m in range(1, config.M + 1):
        out[m] = S.solve(asm.M.matvec(out[m - 1]) + F[m - 1])
    return FemTrajectory(config.taus, out, spec)


def slab_kernel_integrals(mu_k: np.ndarray, grid: SpaceTimeGrid, t: float) -> np.ndarray:
    """``I[n, k] = int_{T_n cap (0, t)} exp(-mu_k (t - s)) ds``; shape (N_star, K)."""
    tn = grid.t_nodes
    a = np.minimum(tn[:-1], t)
    b = np.minimum(tn[1:], t)
    return exp_kernel_integral(mu_k[None, :], a[:, None], b[:, None], t)


def exact_uhat(sample: NoiseSample, t: float, params: ModelParams, z: np.ndarray | None = None) -> SpectralField:
    grid = sample.grid
    if t < 0 or t > grid.T * (1 + 1e-14):
        raise ValueError("t must lie in [0, T]")
    if z is None:
        z = slab_mode_loads(sample, params.K)
    I = slab_kernel_integrals(drift_eigenvalues(params.K, params.mu), grid, min(t, grid.T))
    return SpectralField(-np.sum(I * z, axis=0) / grid.dt)


def exact_u_truncated(coupled: CoupledNoise, t: float, params: ModelParams) -> SpectralField:
    """Modes 1..K_couple of the white-noise solution by a midpoint exponential rule on the sub-grid."""
    grid = coupled.grid
    h = grid.dt / coupled.rho
    steps = t / h
    n_sub = int(round(steps))
    if t < 0 or abs(steps - n_sub) > 1e-9 * max(1.0, steps) or n_sub > grid.N_star * coupled.rho:
        raise ValueError("t must be a point of the noise sub-grid")
    K = coupled.K_couple
    if n_sub == 0:
        return SpectralField.zeros(K)
    mu_k = drift_eigenvalues(K, params.mu)
    lam = mode_frequencies(K)
    db = coupled.dbeta_sub.reshape(-1, K + 1)[:n_sub, 1:]   # (S, K)
    mids = (np.arange(n_sub) + 0.5) * h
    w = np.exp(-np.multiply.outer(t - mids, mu_k))
    return SpectralField(-lam * np.sum(w * db, axis=0))


def export_trajectory_csv(traj, path) -> None:
    """Rows ``m, tau_m, index, value`` with 1-based coefficient indices."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "tau", "index", "value"])
        for m, row in enumerate(traj.coeffs):
            for i, v in enumerate(row):
                w.writerow([m, f"{traj.taus[m]:.17g}", i + 1, f"{v:.17g}"])
