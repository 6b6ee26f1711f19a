"""Aggregation weights that minimise out-of-sample prediction risk on the target."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimation import (HyperParams, QuadraticRiskSystem, _as_eigen, _check_summaries,
                         _vec, signal_columns)
from .spectral import CrossTermMode, SpectralSummary, cross_term_P, select_mode


@dataclass(frozen=True)
class PredictionSystem(QuadraticRiskSystem):
    """Prediction risk ``noise + E(x0.(beta_K - sum W_k b_k))^2``; ``noise`` is irreducible."""

    noise: float = 0.0

    @property
    def floor(self) -> float:
        return self.noise


def finite_sample_prediction_system(studies, true_betas, Sigma, sigma, lam) -> PredictionSystem:
    """Exact conditional prediction risk given designs, coefficients and population covariance."""
    eig = _as_eigen(studies)
    betas = np.atleast_2d(np.asarray(true_betas, dtype=float))
    K = betas.shape[1]
    Sigma = np.asarray(Sigma, dtype=float)
    p = betas.shape[0]
    if Sigma.shape != (p, p):
        raise ValueError(f"Sigma has shape {Sigma.shape}, expected ({p}, {p})")
    lam = _vec(lam, K, "lam")
    sigma2 = _vec(sigma, K, "sigma") ** 2
    B = signal_columns(eig, betas, lam)
    SB = Sigma @ B
    beta_t = betas[:, -1]
    noise = np.empty(K)
    for k, s in enumerate(eig):
        diag = np.einsum("ij,ij->j", s.eigvecs, Sigma @ s.eigvecs)
        noise[k] = sigma2[k] * s.noise_trace(lam[k], diag)
    return PredictionSystem(matrix=B.T @ SB + np.diag(noise), linvec=SB.T @ beta_t,
                            base=float(sigma2[-1] + beta_t @ Sigma @ beta_t),
                            noise=float(sigma2[-1]))


def resolvent_sigma_traces(s: SpectralSummary, *, printed: bool = False) -> tuple[float, float]:
    """Limits of ``lam tr{R Sigma}/p`` and ``lam^2 tr{R Sigma R}/p`` with ``R = (S + lam I)^{-1}``.

    Both follow from ``R ~ (I + v Sigma)^{-1}/lam`` and need ``tr(Sigma)/p = 1``.
    ``printed=True`` drops the ``-1`` in the first trace.
    """
    lv = s.lam * s.v
    first = (s.lam / s.gamma) * (1.0 / lv if printed else 1.0 / lv - 1.0)
    second = (s.lam**2 / s.gamma) * (s.v - s.lam * s.v_prime) / lv**2
    return first, second


def asymptotic_prediction_system(hyper: HyperParams, summaries: list[SpectralSummary], *,
                                 identity_cov: bool = False, mode: CrossTermMode | None = None,
                                 printed: bool = False, printed_cross_term: bool = False,
                                 unit_diagonal: bool = True) -> PredictionSystem:
    """Limit of the prediction system; predictors must be scaled to unit variance.

    ``printed`` switches the signal and cross terms to the uncorrected form
    lacking the ``-1`` (which is badly biased, see :func:`resolvent_sigma_traces`).
    """
    if not unit_diagonal:
        raise ValueError("the limiting prediction risk assumes standardised predictors (Sigma_ii = 1)")
    _check_summaries(hyper, summaries)
    if mode is None:
        mode = select_mode(summaries, identity_cov)
    K = hyper.K
    lam = hyper.lam
    scov = hyper.signal_cov()
    traces = [resolvent_sigma_traces(s, printed=printed) for s in summaries]
    tau = np.array([t[0] for t in traces])
    kappa = np.array([t[1] for t in traces])

    D = scov[:, -1] * (1.0 - tau)
    C = np.empty((K, K))
    for k in range(K):
        C[k, k] = scov[k, k] * (1.0 - 2.0 * tau[k] + kappa[k])
        for j in range(k):
            if scov[k, j] == 0.0:
                C[k, j] = C[j, k] = 0.0
                continue
            P = cross_term_P(summaries[k], summaries[j], mode, printed=printed_cross_term)
            C[k, j] = C[j, k] = scov[k, j] * (1.0 - tau[k] - tau[j] + lam[k] * lam[j] * P)
    # F = sigma^2 gamma [tr(R Sigma)/p - lam tr(R Sigma R)/p], same in both forms
    F = np.empty(K)
    for k, s in enumerate(summaries):
        lv = s.lam * s.v
        F[k] = hyper.sigma2[k] * ((1.0 / lv - 1.0) - s.lam * (s.v - s.lam * s.v_prime) / lv**2)
    noise = float(hyper.sigma2[-1])
    return PredictionSystem(matrix=C + np.diag(F), linvec=D, base=noise + float(scov[-1, -1]),
                            noise=noise)
