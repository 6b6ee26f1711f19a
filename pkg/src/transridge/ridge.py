"""Per-study ridge fits and weighted aggregation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .spectral import SpectralSummary, spectral_summary


@dataclass(frozen=True)
class StudyData:
    """Design matrix ``X`` (n x p) and response ``Y`` (n,) of one study."""

    X: np.ndarray
    Y: np.ndarray
    study_id: int = 0

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        Y = np.asarray(self.Y, dtype=float).ravel()
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ValueError(f"X must be a non-empty 2-d array, got shape {X.shape}")
        if Y.shape[0] != X.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValueError("study data contains missing or non-finite values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def gamma(self) -> float:
        return self.p / self.n


@dataclass(frozen=True)
class CoefficientSet:
    betas: np.ndarray  # p x K
    lam: np.ndarray

    def __post_init__(self):
        betas = np.atleast_2d(np.asarray(self.betas, dtype=float))
        lam = np.atleast_1d(np.asarray(self.lam, dtype=float))
        if betas.shape[1] != lam.shape[0]:
            raise ValueError(f"{betas.shape[1]} coefficient columns but {lam.shape[0]} penalties")
        if not np.all(np.isfinite(betas)):
            raise ValueError("non-finite coefficients")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "lam", lam)

    @property
    def K(self) -> int:
        return self.betas.shape[1]


def sample_covariance(X) -> np.ndarray:
    """Uncentred second-moment matrix ``X^T X / n``."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.size == 0:
        raise ValueError("sample_covariance needs a non-empty 2-d array")
    S = X.T @ X / X.shape[0]
    return 0.5 * (S + S.T)


def ridge_estimate(data: StudyData, lam: float) -> np.ndarray:
    """Solve ``(S + lam I) b = X^T Y / n`` by Cholesky."""
    if not lam > 0 or not np.isfinite(lam):
        raise ValueError(f"lam must be a positive finite number, got {lam}")
    S = sample_covariance(data.X)
    rhs = data.X.T @ data.Y / data.n
    S[np.diag_indices_from(S)] += lam
    return linalg.cho_solve(linalg.cho_factor(S, lower=True), rhs)


def aggregate(coeffs: CoefficientSet, W) -> np.ndarray:
    W = np.asarray(W, dtype=float).ravel()
    if W.shape[0] != coeffs.K:
        raise ValueError(f"weight vector has length {W.shape[0]}, expected {coeffs.K}")
    return coeffs.betas @ W


@dataclass
class EigenStudy:
    """A study with its sample covariance diagonalised once.

    Every ridge quantity at a new penalty is then a diagonal rescaling in the
    eigenbasis, which is what makes penalty sweeps cheap.
    """

    eigvals: np.ndarray
    eigvecs: np.ndarray
    n: int
    xty: np.ndarray | None = None  # X^T Y / n
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_design(cls, X, Y=None) -> "EigenStudy":
        X = np.asarray(X, dtype=float)
        ell, U = linalg.eigh(sample_covariance(X))
        np.clip(ell, 0.0, None, out=ell)
        xty = None if Y is None else X.T @ np.asarray(Y, dtype=float) / X.shape[0]
        return cls(eigvals=ell, eigvecs=U, n=X.shape[0], xty=xty)

    @classmethod
    def from_study(cls, data: StudyData) -> "EigenStudy":
        return cls.from_design(data.X, data.Y)

    @property
    def p(self) -> int:
        return self.eigvals.shape[0]

    @property
    def gamma(self) -> float:
        return self.p / self.n

    def rotate(self, vec) -> np.ndarray:
        return self.eigvecs.T @ vec

    def shrink(self, vec, lam: float, rotated: np.ndarray | None = None) -> np.ndarray:
        """``(S + lam I)^{-1} S vec``; pass ``rotated = U^T vec`` to skip a product."""
        z = self.rotate(vec) if rotated is None else rotated
        ell = self.eigvals
        return self.eigvecs @ (ell / (ell + lam) * z)

    def ridge(self, lam: float) -> np.ndarray:
        if self.xty is None:
            raise ValueError("study was built without a response")
        if "uxty" not in self._cache:
            self._cache["uxty"] = self.rotate(self.xty)
        return self.eigvecs @ (self._cache["uxty"] / (self.eigvals + lam))

    def noise_trace(self, lam: float, weights=None) -> float:
        """``tr{(S + lam I)^{-1} S (S + lam I)^{-1} M} / n`` with ``diag(U^T M U) = weights``.

        ``weights=None`` means ``M = I``.
        """
        ell = self.eigvals
        g = ell / (ell + lam) ** 2
        if weights is not None:
            g = g * weights
        return float(g.sum() / self.n)

    def summary(self, lam: float) -> SpectralSummary:
        return spectral_summary(self.eigvals, lam, self.gamma)
