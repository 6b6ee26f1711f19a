"""Aggregation weights that minimise the estimation risk ``E||sum_k W_k b_k - beta_K||^2``.

Index conventions: studies are columns ``0 .. K-1`` and the target is the
last one.  ``alpha`` and ``sigma`` are standard deviations (``alpha**2`` is
the signal-to-noise ratio, ``sigma**2`` the noise variance).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import SingularSystemError
from .ridge import EigenStudy
from .spectral import (CrossTermMode, SpectralSummary, cross_term_E,
                       mp_identity_stieltjes, select_mode)

log = logging.getLogger(__name__)

#: relative eigenvalue floor (against mean diagonal) that triggers regularization
REG_FLOOR = 1e-10


def _vec(x, K=None, name="value"):
    arr = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
    if K is not None and arr.shape[0] == 1 and K > 1:
        arr = np.full(K, arr[0])
    if K is not None and arr.shape[0] != K:
        raise ValueError(f"{name} has length {arr.shape[0]}, expected {K}")
    return arr


def common_rho(rho: float, K: int) -> np.ndarray:
    R = np.full((K, K), float(rho))
    np.fill_diagonal(R, 1.0)
    return R


@dataclass(frozen=True)
class HyperParams:
    """Model parameters for ``K`` studies.

    Build with :meth:`from_snr` when you have variances rather than
    standard deviations; ``lam`` then defaults to ``gamma / alpha**2``.
    """

    alpha: np.ndarray
    sigma: np.ndarray
    rho: np.ndarray
    gamma: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        rho = np.atleast_2d(np.asarray(self.rho, dtype=float))
        K = rho.shape[0]
        if rho.shape != (K, K):
            raise ValueError(f"rho must be square, got shape {rho.shape}")
        if not np.allclose(rho, rho.T, atol=1e-12):
            raise ValueError("rho must be symmetric")
        if not np.allclose(np.diag(rho), 1.0, atol=1e-12):
            raise ValueError("rho must have a unit diagonal")
        if np.any(np.abs(rho) > 1 + 1e-12):
            raise ValueError("rho entries must lie in [-1, 1]")
        if np.linalg.eigvalsh(rho)[0] < -1e-10:
            raise ValueError("rho must be positive semidefinite")
        object.__setattr__(self, "rho", 0.5 * (rho + rho.T))
        for name in ("alpha", "sigma", "gamma", "lam"):
            arr = _vec(getattr(self, name), K, name)
            if name != "alpha" and np.any(arr <= 0):
                raise ValueError(f"{name} must be positive")
            if name == "alpha" and np.any(arr < 0):
                raise ValueError("alpha must be nonnegative")
            object.__setattr__(self, name, arr)

    @classmethod
    def from_snr(cls, alpha2, sigma2, rho, gamma, lam=None) -> "HyperParams":
        rho = np.atleast_2d(np.asarray(rho, dtype=float))
        K = rho.shape[0]
        alpha2 = _vec(alpha2, K, "alpha2")
        gamma = _vec(gamma, K, "gamma")
        if lam is None:
            lam = default_lambda(gamma, alpha2)
        return cls(alpha=np.sqrt(alpha2), sigma=np.sqrt(_vec(sigma2, K, "sigma2")),
                   rho=rho, gamma=gamma, lam=lam)

    @property
    def K(self) -> int:
        return self.rho.shape[0]

    @property
    def alpha2(self) -> np.ndarray:
        return self.alpha**2

    @property
    def sigma2(self) -> np.ndarray:
        return self.sigma**2

    def signal_cov(self) -> np.ndarray:
        """Covariance of ``sqrt(p) beta`` across studies, per coordinate."""
        s = self.alpha * self.sigma
        return self.rho * np.outer(s, s)


def default_lambda(gamma, alpha2) -> np.ndarray:
    """Per-study penalty ``gamma / alpha^2`` that is optimal for a lone ridge fit."""
    return np.asarray(gamma, dtype=float) / np.asarray(alpha2, dtype=float)


@dataclass(frozen=True)
class QuadraticRiskSystem:
    """A risk of the form ``base - 2 linvec.W + W.matrix.W``."""

    matrix: np.ndarray
    linvec: np.ndarray
    base: float

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        v = np.atleast_1d(np.asarray(self.linvec, dtype=float))
        if M.shape != (v.shape[0], v.shape[0]):
            raise ValueError(f"matrix shape {M.shape} does not match linvec length {v.shape[0]}")
        if not np.allclose(M, M.T, rtol=1e-10, atol=1e-14 * max(1.0, np.abs(M).max())):
            raise ValueError("system matrix must be symmetric")
        object.__setattr__(self, "matrix", 0.5 * (M + M.T))
        object.__setattr__(self, "linvec", v)
        object.__setattr__(self, "base", float(self.base))

    @property
    def K(self) -> int:
        return self.linvec.shape[0]

    @property
    def floor(self) -> float:
        """Smallest achievable risk in principle."""
        return 0.0

    def risk(self, W) -> float:
        W = np.asarray(W, dtype=float)
        if W.shape[-1] != self.K:
            raise ValueError(f"weight vector has length {W.shape[-1]}, expected {self.K}")
        return self.base - 2.0 * W @ self.linvec + np.einsum("...i,ij,...j->...", W, self.matrix, W)


@dataclass(frozen=True)
class WeightSolution:
    W: np.ndarray
    risk: float
    regularized: bool = field(default=False)


def solve_optimal_weights(system: QuadraticRiskSystem) -> WeightSolution:
    """Minimise the quadratic risk; returns ``W = matrix^{-1} linvec``."""
    M, v = system.matrix, system.linvec
    K = system.K
    if not np.any(v):
        return WeightSolution(W=np.zeros(K), risk=system.base)
    scale = np.trace(M) / K
    if not scale > 0 or not np.isfinite(scale):
        raise SingularSystemError(f"weight system has non-positive trace {np.trace(M)!r}")
    floor = REG_FLOOR * scale
    regularized = False
    if np.linalg.eigvalsh(M)[0] < floor:
        log.warning("weight system near singular; adding %.3g to the diagonal", floor)
        M = M + floor * np.eye(K)
        regularized = True
    try:
        W = linalg.cho_solve(linalg.cho_factor(M, lower=True), v)
    except linalg.LinAlgError as exc:
        raise SingularSystemError("weight system is not positive definite") from exc
    return WeightSolution(W=W, risk=float(system.base - v @ W), regularized=regularized)


def equal_weights(K: int) -> np.ndarray:
    """Baseline with weight one on the target and ``1/K`` on every source."""
    W = np.full(K, 1.0 / K)
    W[-1] = 1.0
    return W


def _as_eigen(studies) -> list[EigenStudy]:
    return [s if isinstance(s, EigenStudy) else EigenStudy.from_study(s) for s in studies]


def signal_columns(studies, true_betas, lam) -> np.ndarray:
    """Columns ``(S_k + lam_k I)^{-1} S_k beta_k`` (the noise-free ridge fits)."""
    betas = np.atleast_2d(np.asarray(true_betas, dtype=float))
    K = betas.shape[1]
    if len(studies) != K:
        raise ValueError(f"{len(studies)} studies but {K} coefficient columns")
    lam = _vec(lam, K, "lam")
    if np.any(lam <= 0):
        raise ValueError("lam must be positive")
    if any(s.p != betas.shape[0] for s in studies):
        raise ValueError("studies and coefficients disagree on p")
    return np.column_stack([s.shrink(betas[:, k], lam[k]) for k, s in enumerate(studies)])


def finite_sample_estimation_system(studies, true_betas, sigma, lam) -> QuadraticRiskSystem:
    """Exact conditional estimation risk given the designs and true coefficients.

    ``studies`` may be :class:`StudyData` or pre-decomposed :class:`EigenStudy`.
    ``sigma`` holds noise standard deviations.
    """
    eig = _as_eigen(studies)
    betas = np.atleast_2d(np.asarray(true_betas, dtype=float))
    K = betas.shape[1]
    lam = _vec(lam, K, "lam")
    sigma2 = _vec(sigma, K, "sigma") ** 2
    B = signal_columns(eig, betas, lam)
    beta_t = betas[:, -1]
    noise = np.array([sigma2[k] * s.noise_trace(lam[k]) for k, s in enumerate(eig)])
    return QuadraticRiskSystem(matrix=B.T @ B + np.diag(noise), linvec=B.T @ beta_t,
                               base=float(beta_t @ beta_t))


def _check_summaries(hyper: HyperParams, summaries) -> None:
    if len(summaries) != hyper.K:
        raise ValueError(f"{len(summaries)} spectral summaries for K={hyper.K}")
    for k, s in enumerate(summaries):
        if not np.isclose(s.lam, hyper.lam[k], rtol=1e-9, atol=0):
            raise ValueError(f"summary {k} has lam={s.lam}, hyper has {hyper.lam[k]}")
        if not np.isclose(s.gamma, hyper.gamma[k], rtol=1e-9, atol=0):
            raise ValueError(f"summary {k} has gamma={s.gamma}, hyper has {hyper.gamma[k]}")


def asymptotic_estimation_system(hyper: HyperParams, summaries: list[SpectralSummary], *,
                                 identity_cov: bool = False, mode: CrossTermMode | None = None,
                                 printed_cross_term: bool = False) -> QuadraticRiskSystem:
    """Limit of the estimation system as ``p, n_k -> inf`` with ``p/n_k -> gamma_k``."""
    _check_summaries(hyper, summaries)
    if mode is None:
        mode = select_mode(summaries, identity_cov)
    K = hyper.K
    lam = hyper.lam
    m = np.array([s.m for s in summaries])
    mp = np.array([s.m_prime for s in summaries])
    gamma = np.array([s.gamma for s in summaries])
    scov = hyper.signal_cov()
    lm = lam * m

    V = scov[:, -1] * (1.0 - lm)
    A = np.empty((K, K))
    for k in range(K):
        A[k, k] = scov[k, k] * (1.0 - 2.0 * lm[k] + lam[k] ** 2 * mp[k])
        for j in range(k):
            if scov[k, j] == 0.0:
                A[k, j] = A[j, k] = 0.0
                continue
            E = cross_term_E(summaries[k], summaries[j], mode, printed=printed_cross_term)
            A[k, j] = A[j, k] = scov[k, j] * (1.0 - lm[k] - lm[j] + lam[k] * lam[j] * E)
    R = hyper.sigma2 * gamma * (m - lam * mp)
    return QuadraticRiskSystem(matrix=A + np.diag(R), linvec=V,
                               base=float(scov[-1, -1]))


def _identity_shrinkage(gamma: float, alpha2: float) -> float:
    """``1 - lam m(-lam)`` at the single-study optimal ``lam = gamma/alpha2``."""
    lam = gamma / alpha2
    m, _ = mp_identity_stieltjes(gamma, lam)
    return 1.0 - lam * m


def _check_identity_regime(rho, K, gamma, alpha2):
    if K < 1 or int(K) != K:
        raise ValueError(f"K must be a positive integer, got {K}")
    if not 0 <= rho <= 1:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    if not gamma > 0 or not alpha2 > 0:
        raise ValueError("gamma and alpha2 must be positive")


def closed_form_identity_weights(rho: float, K: int, gamma: float, alpha2: float, *,
                                 printed: bool = False) -> tuple[float, float, float]:
    """Target weight, source weight and ``d(W_K/W_k)/d rho`` in the exchangeable regime.

    Regime: identity covariance, common ``rho``, ``alpha``, ``sigma``,
    ``gamma`` and ``lam = gamma/alpha2``.  The system matrix is then
    ``alpha2 t [(1 - rho t) I + rho t J]`` with ``t = 1 - lam m(-lam)``, and
    Sherman-Morrison gives the weights in closed form.

    ``printed=True`` returns the uncorrected alternative expressions instead.
    Their ratio agrees with the exact one but both weights carry a common
    spurious factor, and the derivative expression is not the derivative of
    that ratio; they are kept for comparison only.
    """
    _check_identity_regime(rho, K, gamma, alpha2)
    if rho == 0:
        raise ValueError("weight ratio undefined at rho = 0 (weights collapse onto the target)")
    t = _identity_shrinkage(gamma, alpha2)
    lm = 1.0 - t
    N = K - 1
    if printed:
        den = (1 - rho * t) + K * t
        w_t = (1 / rho + (1 - rho) * N * t / (1 - rho * t)) / den
        w_s = (1 + (rho - 1) * t / (1 - rho * t)) / den
        deriv = (-((t * rho - 1) ** 2) - lm) / (rho**2 * (t * rho * t - 2) ** 2)
        return float(w_t), float(w_s), float(deriv)
    den = (1 - rho * t) * (1 + N * rho * t)
    w_t = (1 - rho * t + N * rho * t * (1 - rho)) / den
    w_s = rho * lm / den
    deriv = -(1 / rho**2 + N * t) / lm
    return float(w_t), float(w_s), float(deriv)


def closed_form_identity_risk(rho: float, K: int, gamma: float, alpha2: float, *,
                              printed: bool = False) -> float:
    """Optimal limiting estimation risk in the exchangeable identity regime (``sigma = 1``)."""
    _check_identity_regime(rho, K, gamma, alpha2)
    t = _identity_shrinkage(gamma, alpha2)
    N = K - 1
    if printed:
        first = alpha2 * (1 - rho * t) / (1 / rho + N * t)
        num = alpha2 * (1 - rho) * N * t * (1 - t - 1 / (rho * N) + t / N)
        second = num / ((1 / (rho * t) + N) * (1 / t + rho))
        return float(first + second)
    den = (1 - rho * t) * (1 + N * rho * t)
    # V.W with V = alpha2 t (rho, ..., rho, 1)
    explained = (1 - rho * t + N * rho * t + N * rho**2 - 2 * N * rho**2 * t) / den
    return float(alpha2 * (1.0 - t * explained))


def estimation_risk_upper_bound(hyper: HyperParams, summary: SpectralSummary) -> float:
    """Upper bound on the optimal limiting risk from replacing the coefficient
    covariance by its largest-eigenvalue envelope.

    Requires common ``alpha``, ``gamma``, ``lam`` and unit noise variance.
    """
    a2, g, lam = hyper.alpha2, hyper.gamma, hyper.lam
    if not (np.allclose(a2, a2[0]) and np.allclose(g, g[0]) and np.allclose(lam, lam[0])
            and np.allclose(hyper.sigma2, 1.0)):
        raise ValueError("upper bound needs common alpha, gamma, lam and sigma = 1")
    a2, g, lam = a2[0], g[0], lam[0]
    m, mp = summary.m, summary.m_prime
    c1 = a2 * (1 - 2 * lam * m + lam**2 * m**2)
    c2 = lam**2 * a2 * (mp - m**2) + g * (m - lam * mp)
    off = np.abs(hyper.rho) - np.eye(hyper.K)
    a_star = off.sum(axis=1).max()
    signal = np.sum(hyper.rho[:-1, -1] ** 2) + 1.0
    return float(a2 - (a2**2 / c1) * signal * (1 - lam * m) ** 2 / (1 + a_star + c2 / c1))


def snr_from_heritability(h2) -> np.ndarray | float:
    """``alpha^2 = h^2 / (1 - h^2)``."""
    h2 = np.asarray(h2, dtype=float)
    if np.any(h2 < 0) or np.any(h2 >= 1):
        raise ValueError("heritability must lie in [0, 1)")
    out = h2 / (1.0 - h2)
    return float(out) if out.ndim == 0 else out


def heritability_from_snr(alpha2) -> np.ndarray | float:
    alpha2 = np.asarray(alpha2, dtype=float)
    if np.any(alpha2 < 0):
        raise ValueError("alpha2 must be nonnegative")
    out = alpha2 / (1.0 + alpha2)
    return float(out) if out.ndim == 0 else out
