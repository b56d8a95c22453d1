"""Sine eigenbasis of the fourth-order operator on (0, 1).

Fields are stored as coefficient vectors against
``eps_k(x) = sqrt(2) sin(k pi x)``, ``k = 1..K``.  The drift operator
``d^4 + mu d^2`` acts diagonally with eigenvalues
``mu_k = lambda_k^2 (lambda_k^2 - mu)``, ``lambda_k = k pi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

SQRT2 = math.sqrt(2.0)


class InvalidParameterError(ValueError):
    """Raised when model or discretization parameters violate a gate."""


class NonInvertibleOperatorError(ArithmeticError):
    """Raised when a spectral solve hits a zero eigenvalue."""

    def __init__(self, k: int):
        super().__init__(f"operator is not invertible: mu_k = 0 for k = {k}")
        self.k = k


@dataclass(frozen=True)
class ModelParams:
    mu: float
    kappa: int
    T: float
    K: int

    def with_K(self, K: int) -> "ModelParams":
        return ModelParams(self.mu, self.kappa, self.T, int(K))

    @property
    def lam(self) -> np.ndarray:
        return mode_frequencies(self.K)

    @property
    def mu_k(self) -> np.ndarray:
        return drift_eigenvalues(self.K, self.mu)


def validate_params(mu: float, T: float, K: int) -> ModelParams:
    """Return ModelParams with the unique kappa such that
    ``(kappa-1)^2 pi^2 <= mu < kappa^2 pi^2``."""
    mu = float(mu)
    if not T > 0:
        raise InvalidParameterError(f"T must be positive, got {T}")
    if int(K) != K or K < 1:
        raise InvalidParameterError(f"K must be a positive integer, got {K}")
    if not np.isfinite(mu) or mu < 0:
        raise InvalidParameterError(
            f"no kappa >= 1 satisfies (kappa-1)^2 pi^2 <= mu < kappa^2 pi^2 for mu={mu}: "
            "requires mu >= 0"
        )
    kappa = int(math.floor(math.sqrt(mu) / math.pi)) + 1
    # guard the floor against rounding at mu = j^2 pi^2
    while (kappa - 1) ** 2 * math.pi**2 > mu:
        kappa -= 1
    while mu >= kappa**2 * math.pi**2:
        kappa += 1
    return ModelParams(mu=mu, kappa=kappa, T=float(T), K=int(K))


def mode_frequencies(K: int, start: int = 1) -> np.ndarray:
    return np.pi * np.arange(start, start + K, dtype=float)


def drift_eigenvalue(k: int, mu: float) -> float:
    if k < 1:
        raise ValueError("mode index starts at 1")
    lam2 = (k * math.pi) ** 2
    return lam2 * (lam2 - mu)


def drift_eigenvalues(K: int, mu: float, start: int = 1) -> np.ndarray:
    lam2 = mode_frequencies(K, start) ** 2
    return lam2 * (lam2 - mu)


def eval_basis(k: int, x, kind: str = "sine"):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise ValueError("x must lie in [0, 1]")
    if kind == "sine":
        if k < 1:
            raise ValueError("sine modes start at k = 1")
        out = SQRT2 * np.sin(k * np.pi * x)
    elif kind == "cosine":
        if k < 0:
            raise ValueError("cosine modes start at k = 0")
        out = np.ones_like(x) if k == 0 else SQRT2 * np.cos(k * np.pi * x)
    else:
        raise ValueError(f"unknown basis kind {kind!r}")
    return float(out) if out.ndim == 0 else out


def one_minus_exp_over(rate, length):
    """``(1 - exp(-rate*length)) / rate`` with the ``rate -> 0`` limit ``length``."""
    rate = np.asarray(rate, dtype=float)
    length = np.asarray(length, dtype=float)
    z = rate * length
    tiny = np.abs(z) < 1e-8   # includes rate == 0 and underflowing products
    safe = np.where(tiny, 1.0, rate)
    out = np.where(tiny, length * (1.0 - 0.5 * z + z * z / 6.0), -np.expm1(-z) / safe)
    return out if out.ndim else float(out)


def exp_kernel_integral(mu_k, a, b, t):
    """Exact ``int_a^b exp(-mu_k (t - s)) ds`` for ``a <= b <= t``."""
    a_arr, b_arr, t_arr = (np.asarray(v, dtype=float) for v in (a, b, t))
    if np.any(a_arr > b_arr) or np.any(b_arr > t_arr):
        raise ValueError("exp_kernel_integral requires a <= b <= t")
    mu_k = np.asarray(mu_k, dtype=float)
    out = np.exp(-mu_k * (t_arr - b_arr)) * one_minus_exp_over(mu_k, b_arr - a_arr)
    out = np.asarray(out)
    return out if out.ndim else float(out)


def geometric_sum(log_ratio, count):
    """``sum_{l=0}^{count-1} exp(l * log_ratio)``, stable near ``log_ratio = 0``."""
    log_ratio = np.asarray(log_ratio, dtype=float)
    count = np.asarray(count, dtype=float)
    x = count * log_ratio
    tiny = np.abs(x) < 1e-8
    safe = np.where(tiny, 1.0, log_ratio)
    out = np.where(tiny, count * (1.0 + 0.5 * (count - 1.0) * log_ratio),
                   np.expm1(np.where(tiny, 1.0, x)) / np.expm1(safe))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SpectralField:
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float).reshape(-1)
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def mode(cls, k: int, K: int, amplitude: float = 1.0) -> "SpectralField":
        c = np.zeros(K)
        c[k - 1] = amplitude
        return cls(c)

    @classmethod
    def zeros(cls, K: int) -> "SpectralField":
        return cls(np.zeros(K))

    @property
    def K(self) -> int:
        return self.coeffs.size

    def __add__(self, other: "SpectralField") -> "SpectralField":
        K = max(self.K, other.K)
        return SpectralField(_padded(self.coeffs, K) + _padded(other.coeffs, K))

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        return self + (-1.0) * other

    def __mul__(self, scalar: float) -> "SpectralField":
        return SpectralField(float(scalar) * self.coeffs)

    __rmul__ = __mul__

    def truncated(self, K: int) -> "SpectralField":
        return SpectralField(_padded(self.coeffs, K))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        lam = mode_frequencies(self.K)
        return SQRT2 * np.sin(np.multiply.outer(x, lam)) @ self.coeffs


def _padded(c: np.ndarray, K: int) -> np.ndarray:
    out = np.zeros(K)
    n = min(K, c.size)
    out[:n] = c[:n]
    return out


def semigroup_apply(v: SpectralField, t: float, params: ModelParams) -> SpectralField:
    if t < 0:
        raise ValueError("semigroup time must be non-negative")
    mu_k = drift_eigenvalues(v.K, params.mu)
    return SpectralField(np.exp(-mu_k * t) * v.coeffs)


def solve_elliptic_spectral(f: SpectralField, params: ModelParams, variant: str = "shifted") -> SpectralField:
    """Apply ``T_B`` (plain) or ``T~_B`` (shifted by ``mu^2``) in the sine basis."""
    mu_k = drift_eigenvalues(f.K, params.mu)
    if variant == "plain":
        zero = np.flatnonzero(mu_k == 0.0)
        if zero.size:
            raise NonInvertibleOperatorError(int(zero[0]) + 1)
        return SpectralField(f.coeffs / mu_k)
    if variant == "shifted":
        return SpectralField(f.coeffs / (mu_k + params.mu**2))
    raise ValueError(f"unknown variant {variant!r}")


def dot_norm(v: SpectralField, s: float) -> float:
    lam = mode_frequencies(v.K)
    # fsum is correctly rounded, so appending modes can never lower the result
    return math.sqrt(math.fsum(lam ** (2.0 * s) * v.coeffs**2))


def gamma_factor(beta: float) -> float:
    """``int_0^inf x^beta exp(-x) dx``; quadrature unless beta is an integer."""
    if float(beta).is_integer():
        return float(math.factorial(int(beta)))
    val, _ = integrate.quad(lambda x: x**beta * math.exp(-x), 0.0, np.inf, limit=200)
    return val


def regularity_constant(ell: int, beta: float, params: ModelParams) -> float:
    mu = params.mu
    c_mu = (1.0 + mu / math.pi**2 + mu**2 / math.pi**4) ** (2 * ell)
    return c_mu * gamma_factor(beta) * math.exp(2.0 * mu**2 * params.T) * max(ell, 1)


def check_regularity_bound(w0: SpectralField, ell: int, beta: float, p: float,
                           t_a: float, t_b: float, params: ModelParams) -> tuple[float, float]:
    """Return ``(lhs, rhs)`` of the weighted semigroup regularity bound.

    ``lhs = int_{t_a}^{t_b} (tau - t_a)^beta ||d_t^ell S(tau) w0||_{p}^2 dtau``,
    integrated mode by mode with adaptive quadrature.
    """
    if not (0.0 <= t_a <= t_b <= params.T * (1 + 1e-14)):
        raise ValueError("need 0 <= t_a <= t_b <= T")
    if beta < 0 or p < 0 or ell < 0:
        raise ValueError("beta, p and ell must be non-negative")
    lam = mode_frequencies(w0.K)
    mu_k = drift_eigenvalues(w0.K, params.mu)
    lhs = 0.0
    if t_b > t_a:
        for k in np.flatnonzero(w0.coeffs):
            m = mu_k[k]
            weight = lam[k] ** (2 * p) * m ** (2 * ell) * w0.coeffs[k] ** 2
            if weight == 0.0:
                continue

            def integrand(tau, m=m):
                return (tau - t_a) ** beta * math.exp(-2.0 * m * tau)

            pts = None
            if m > 0:
                scale = t_a + 1.0 / m
                if t_a < scale < t_b:
                    pts = [scale]
            val, _ = integrate.quad(integrand, t_a, t_b, points=pts, limit=200,
                                    epsabs=0.0, epsrel=1e-12)
            lhs += weight * val
    rhs = regularity_constant(ell, beta, params) * dot_norm(w0, p + 4 * ell - 2 * beta - 2) ** 2
    return lhs, rhs
