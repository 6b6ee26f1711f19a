"""Synthetic multi-study data and Monte Carlo checks of the limiting risks."""
from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg
from scipy.optimize import brentq

from .errors import ConfigError
from .estimation import (HyperParams, asymptotic_estimation_system, common_rho,
                         equal_weights, finite_sample_estimation_system,
                         solve_optimal_weights)
from .prediction import asymptotic_prediction_system, finite_sample_prediction_system
from .ridge import EigenStudy, StudyData
from .spectral import CrossTermMode, SpectralSummary, mp_identity_summary

OBJECTIVES = ("estimation", "prediction")
#: eigenvalues of the coefficient covariance below this (relative) are clipped to zero
CLIP_FLOOR = 1e-12


@dataclass(frozen=True)
class CovSpec:
    """Population covariance of the predictors: identity, Toeplitz ``r^|i-j|`` or custom."""

    kind: str = "identity"
    r: float = 0.0
    custom: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("identity", "toeplitz", "custom"):
            raise ValueError(f"unknown covariance kind {self.kind!r}")
        if self.kind == "toeplitz" and not -1 < self.r < 1:
            raise ValueError(f"Toeplitz r must lie in (-1, 1), got {self.r}")
        if self.kind == "custom":
            S = np.asarray(self.custom, dtype=float)
            if S.ndim != 2 or S.shape[0] != S.shape[1] or not np.allclose(S, S.T):
                raise ValueError("custom covariance must be a symmetric square matrix")
            ev = np.linalg.eigvalsh(S)
            if ev[0] <= 0 or ev[-1] / ev[0] > 1e12:
                raise ValueError("custom covariance must be positive definite with condition number <= 1e12")
            object.__setattr__(self, "custom", S)

    @classmethod
    def toeplitz(cls, r: float) -> "CovSpec":
        return cls("toeplitz", r=r)

    @property
    def is_identity(self) -> bool:
        return self.kind == "identity"

    def matrix(self, p: int) -> np.ndarray:
        if self.kind == "identity":
            return np.eye(p)
        if self.kind == "toeplitz":
            return linalg.toeplitz(self.r ** np.arange(p))
        if self.custom.shape[0] != p:
            raise ValueError(f"custom covariance is {self.custom.shape[0]}-dimensional, expected {p}")
        return self.custom

    def eigenvalues(self, p: int) -> np.ndarray:
        if self.kind == "identity":
            return np.ones(p)
        return linalg.eigvalsh(self.matrix(p))

    def sqrt(self, p: int) -> np.ndarray:
        """Symmetric square root."""
        if self.kind == "identity":
            return np.eye(p)
        ev, U = linalg.eigh(self.matrix(p))
        return (U * np.sqrt(np.clip(ev, 0, None))) @ U.T


@dataclass(frozen=True)
class SimConfig:
    hyper: HyperParams
    p: int
    n: tuple
    cov: CovSpec = CovSpec()
    replicates: int = 50
    master_seed: int = 0
    noise_dist: str = "gaussian"

    def __post_init__(self):
        n = tuple(int(x) for x in np.atleast_1d(self.n))
        object.__setattr__(self, "n", n)
        if len(n) != self.hyper.K:
            raise ConfigError(f"{len(n)} sample sizes for K={self.hyper.K}")
        if self.p < 1 or min(n) < 1:
            raise ConfigError("p and every n_k must be at least 1")
        if self.replicates < 1:
            raise ConfigError("replicates must be at least 1")
        if self.noise_dist != "gaussian":
            raise ConfigError(f"unsupported noise distribution {self.noise_dist!r}")
        gamma = self.p / np.array(n, dtype=float)
        if not np.allclose(self.hyper.gamma, gamma, rtol=1e-9, atol=0):
            raise ConfigError(f"hyper.gamma {self.hyper.gamma} inconsistent with p/n = {gamma}")

    @classmethod
    def build(cls, p, n, *, alpha2=1.0, sigma2=1.0, rho=0.5, cov=None, lam=None,
              replicates=50, master_seed=0) -> "SimConfig":
        """Convenience constructor; ``rho`` may be a scalar (common correlation) or a matrix."""
        n = tuple(int(x) for x in np.atleast_1d(n))
        K = len(n)
        rho = common_rho(rho, K) if np.ndim(rho) == 0 else np.asarray(rho, dtype=float)
        gamma = p / np.array(n, dtype=float)
        hyper = HyperParams.from_snr(alpha2, sigma2, rho, gamma, lam)
        return cls(hyper=hyper, p=int(p), n=n, cov=cov or CovSpec(), replicates=replicates,
                   master_seed=master_seed)

    @property
    def K(self) -> int:
        return self.hyper.K

    def rng(self, replicate_index: int) -> np.random.Generator:
        # keyed on (seed, index) so replicates can be produced in any order
        return np.random.default_rng([int(self.master_seed) & (2**64 - 1), int(replicate_index)])


@dataclass(frozen=True)
class SyntheticDataset:
    betas: np.ndarray  # p x K
    studies: list


def coefficient_factor(hyper: HyperParams) -> np.ndarray:
    """``L`` with ``L L^T`` equal to the cross-study coefficient covariance (times ``p``)."""
    C = hyper.signal_cov()
    ev, U = linalg.eigh(C)
    scale = max(ev[-1], 0.0)
    if ev[0] < -1e-10 * max(scale, 1.0):
        raise ValueError("coefficient covariance is not positive semidefinite")
    ev = np.where(ev < CLIP_FLOOR * scale, 0.0, ev)
    return U * np.sqrt(ev)


def generate_multistudy(config: SimConfig, replicate_index: int,
                        _sqrt_cov: np.ndarray | None = None) -> SyntheticDataset:
    """Draw coefficients, designs and responses for one replicate."""
    rng = config.rng(replicate_index)
    p, K = config.p, config.K
    L = coefficient_factor(config.hyper)
    betas = rng.standard_normal((p, K)) @ L.T / np.sqrt(p)
    root = config.cov.sqrt(p) if _sqrt_cov is None else _sqrt_cov
    studies = []
    for k, n in enumerate(config.n):
        Z = rng.standard_normal((n, p))
        X = Z if config.cov.is_identity else Z @ root
        eps = config.hyper.sigma[k] * rng.standard_normal(n)
        studies.append(StudyData(X=X, Y=X @ betas[:, k] + eps, study_id=k + 1))
    return SyntheticDataset(betas=betas, studies=studies)


def conditional_estimation_risk(W, system) -> float:
    """Exact noise-averaged estimation risk of weights ``W`` (designs and coefficients fixed)."""
    return float(system.risk(W))


def conditional_prediction_risk(W, system) -> float:
    """Exact prediction risk of ``W``, averaged over noise and a fresh target test point."""
    return float(system.risk(W))


class RiskTable:
    """Long-format experiment output: a list of rows sharing the same columns."""

    def __init__(self, columns, rows=()):
        self.columns = list(columns)
        self.rows = [dict(r) for r in rows]

    def append(self, **row):
        missing = set(self.columns) - set(row)
        if missing:
            raise KeyError(f"row is missing columns {sorted(missing)}")
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def column(self, name) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def where(self, **match) -> "RiskTable":
        keep = [r for r in self.rows if all(r[k] == v for k, v in match.items())]
        return RiskTable(self.columns, keep)

    def to_csv(self, path, columns=None):
        cols = list(columns or self.columns)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.rows:
                w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in cols])


def population_summary(sigma_eigenvalues, gamma: float, lam: float) -> SpectralSummary:
    """Limiting ``m``, ``m'`` for a known population spectrum (oracle mode only).

    Solves the fixed point ``1/v = lam + gamma * mean(t / (1 + t v))`` for the
    companion transform; ``v * (lam + gamma * mean(t/(1+tv)))`` rises from 0 so
    the root in ``(0, 1/lam]`` is bracketed.  Derivatives follow implicitly.
    """
    t = np.asarray(sigma_eigenvalues, dtype=float).ravel()
    if t.size == 0 or np.any(t < 0):
        raise ValueError("population eigenvalues must be a non-empty nonnegative array")
    if not gamma > 0 or not lam > 0:
        raise ValueError(f"gamma and lam must be positive, got gamma={gamma}, lam={lam}")

    def g(v):
        return v * (lam + gamma * np.mean(t / (1.0 + t * v))) - 1.0

    v = brentq(g, 0.0, 1.0 / lam, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    v_prime = 1.0 / (1.0 / v**2 - gamma * np.mean(t * t / (1.0 + t * v) ** 2))
    m = (v - 1.0 / lam) / gamma + 1.0 / lam
    m_prime = (v_prime - (1.0 - gamma) / lam**2) / gamma
    return SpectralSummary(lam=float(lam), gamma=float(gamma), m=float(m), m_prime=float(m_prime))


def limiting_summaries(config: SimConfig, hyper: HyperParams):
    """Population-level spectral summaries: Marchenko-Pastur for identity, fixed point otherwise."""
    if config.cov.is_identity:
        return [mp_identity_summary(g, l) for g, l in zip(hyper.gamma, hyper.lam)]
    t = config.cov.eigenvalues(config.p)
    return [population_summary(t, g, l) for g, l in zip(hyper.gamma, hyper.lam)]


def limiting_system(config: SimConfig, hyper: HyperParams, objective: str, *, printed=False):
    summaries = limiting_summaries(config, hyper)
    if objective == "estimation":
        return asymptotic_estimation_system(hyper, summaries, identity_cov=config.cov.is_identity)
    return asymptotic_prediction_system(hyper, summaries, identity_cov=config.cov.is_identity,
                                        printed=printed)


def _finite_system(objective, eig, betas, Sigma, hyper):
    if objective == "estimation":
        return finite_sample_estimation_system(eig, betas, hyper.sigma, hyper.lam)
    return finite_sample_prediction_system(eig, betas, Sigma, hyper.sigma, hyper.lam)


def _grid_hypers(config, lambda_grid):
    return [replace(config.hyper, lam=np.full(config.K, float(lam))) for lam in lambda_grid]


def risk_curve_replicate(config: SimConfig, replicate_index: int, lambda_grid, objective: str,
                         *, limits=None, printed: bool = False, _sqrt_cov=None) -> dict:
    """Per-penalty conditional risks for one replicate.

    Returns arrays over the grid: ``optimal`` (risk at the finite-sample
    optimal weights), ``asymptotic`` (risk at the limiting weights) and
    ``baseline`` (risk at the equal-weight vector).  ``limits`` holds the
    limiting weight solutions per penalty and is computed when omitted.
    """
    if objective not in OBJECTIVES:
        raise ValueError(f"objective must be one of {OBJECTIVES}")
    hypers = _grid_hypers(config, lambda_grid)
    if limits is None:
        limits = [solve_optimal_weights(limiting_system(config, h, objective, printed=printed))
                  for h in hypers]
    ds = generate_multistudy(config, replicate_index, _sqrt_cov)
    eig = [EigenStudy.from_design(s.X) for s in ds.studies]
    Sigma = config.cov.matrix(config.p)
    WA = equal_weights(config.K)
    out = {k: np.empty(len(hypers)) for k in ("optimal", "asymptotic", "baseline")}
    for i, (hyper, lim) in enumerate(zip(hypers, limits)):
        fin = _finite_system(objective, eig, ds.betas, Sigma, hyper)
        out["optimal"][i] = solve_optimal_weights(fin).risk
        out["asymptotic"][i] = fin.risk(lim.W)
        out["baseline"][i] = fin.risk(WA)
    return out


def _map_replicates(fn, n, threads):
    workers = os.cpu_count() if threads == 0 else max(1, int(threads))
    if workers == 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n)))


def run_risk_curve_experiment(config: SimConfig, lambda_grid, objective: str = "estimation", *,
                              threads: int = 1, printed: bool = False) -> RiskTable:
    """Limiting vs Monte Carlo risk over a grid of common penalties."""
    lambda_grid = [float(x) for x in lambda_grid]
    if not lambda_grid:
        raise ValueError("lambda grid is empty")
    root = config.cov.sqrt(config.p)
    limits = [solve_optimal_weights(limiting_system(config, h, objective, printed=printed))
              for h in _grid_hypers(config, lambda_grid)]
    reps = _map_replicates(
        lambda i: risk_curve_replicate(config, i, lambda_grid, objective, limits=limits,
                                       printed=printed, _sqrt_cov=root),
        config.replicates, threads)
    stacked = {k: np.vstack([r[k] for r in reps]) for k in reps[0]}
    R = config.replicates
    se = lambda a: a.std(axis=0, ddof=1) / np.sqrt(R) if R > 1 else np.zeros(a.shape[1])
    table = RiskTable(["lambda", "theory_risk", "emp_risk_mean", "emp_risk_se",
                       "baseline_risk_mean", "baseline_risk_se", "asymptotic_weight_risk_mean",
                       "objective"])
    means = {k: v.mean(axis=0) for k, v in stacked.items()}
    emp_se, base_se = se(stacked["optimal"]), se(stacked["baseline"])
    for i, lam in enumerate(lambda_grid):
        table.rows.append({
            "lambda": lam,
            "theory_risk": limits[i].risk,
            "emp_risk_mean": float(means["optimal"][i]),
            "emp_risk_se": float(emp_se[i]),
            "baseline_risk_mean": float(means["baseline"][i]),
            "baseline_risk_se": float(base_se[i]),
            "asymptotic_weight_risk_mean": float(means["asymptotic"][i]),
            "objective": objective,
        })
    return table


def tuned_baseline(table: RiskTable) -> float:
    """Equal-weight risk at its best penalty on the grid."""
    return float(table.column("baseline_risk_mean").min())


def factor_rho(source_rhos) -> np.ndarray:
    """Correlation matrix with given source-target entries and source-source
    entries ``rho_iK * rho_jK`` (one common factor, always PSD)."""
    r = np.append(np.asarray(source_rhos, dtype=float), 1.0)
    R = np.outer(r, r)
    np.fill_diagonal(R, 1.0)
    return R


def run_weight_adaptivity_experiment(config: SimConfig, rho_grid=None, source_rhos=None, *,
                                     objective: str = "estimation") -> RiskTable:
    """Limiting optimal weights as the study correlations vary.

    ``rho_grid`` sweeps a common correlation; ``source_rhos`` fixes one
    correlation per source (see :func:`factor_rho`).  With neither given,
    both panels run with their defaults.
    """
    K = config.K
    if rho_grid is None and source_rhos is None:
        rho_grid = np.round(np.arange(0, 101) / 100, 2)
        source_rhos = np.linspace(0.1, 0.8, K - 1)
    table = RiskTable(["panel", "rho", "study_id", "rho_to_target", "weight", "risk"])
    summaries = limiting_summaries(config, config.hyper)
    system_fn = asymptotic_estimation_system if objective == "estimation" else asymptotic_prediction_system

    def solve(rho):
        hyper = replace(config.hyper, rho=rho)
        return hyper, solve_optimal_weights(system_fn(hyper, summaries,
                                                      identity_cov=config.cov.is_identity))

    for rho in ([] if rho_grid is None else rho_grid):
        hyper, sol = solve(common_rho(rho, K))
        for k in range(K):
            table.rows.append({"panel": "common", "rho": float(rho), "study_id": k + 1,
                               "rho_to_target": float(hyper.rho[k, -1]),
                               "weight": float(sol.W[k]), "risk": sol.risk})
    if source_rhos is not None:
        if len(source_rhos) != K - 1:
            raise ValueError(f"need {K - 1} source correlations, got {len(source_rhos)}")
        hyper, sol = solve(factor_rho(source_rhos))
        for k in range(K):
            table.rows.append({"panel": "heterogeneous", "rho": float("nan"), "study_id": k + 1,
                               "rho_to_target": float(hyper.rho[k, -1]),
                               "weight": float(sol.W[k]), "risk": sol.risk})
    return table


def run_risk_ratio_experiment(gamma_grid=None, rho_grid=None, alpha2_grid=None,
                              objective: str = "estimation", K: int = 6) -> RiskTable:
    """Single-study over transfer limiting risk, identity covariance, ``lam = gamma/alpha2``."""
    if objective not in OBJECTIVES:
        raise ValueError(f"objective must be one of {OBJECTIVES}")
    gamma_grid = np.arange(1, 9) / 4 if gamma_grid is None else gamma_grid
    rho_grid = np.arange(10) / 10 if rho_grid is None else rho_grid
    alpha2_grid = (0.5, 1.0, 2.0) if alpha2_grid is None else alpha2_grid
    system_fn = asymptotic_estimation_system if objective == "estimation" else asymptotic_prediction_system
    table = RiskTable(["gamma", "alpha2", "rho", "single_risk", "transfer_risk", "ratio", "objective"])
    for a2 in alpha2_grid:
        for g in gamma_grid:
            lam = g / a2
            s = mp_identity_summary(g, lam)
            one = HyperParams.from_snr(a2, 1.0, np.eye(1), g, lam)
            single = solve_optimal_weights(system_fn(one, [s], identity_cov=True)).risk
            for rho in rho_grid:
                hyper = HyperParams.from_snr(a2, 1.0, common_rho(rho, K), g, lam)
                sys_ = system_fn(hyper, [s] * K, identity_cov=True, mode=CrossTermMode.IDENTITY_COV)
                risk = solve_optimal_weights(sys_).risk
                table.rows.append({"gamma": float(g), "alpha2": float(a2), "rho": float(rho),
                                   "single_risk": single, "transfer_risk": risk,
                                   "ratio": single / risk, "objective": objective})
    return table


def default_lambda_grid(num: int = 20, lo: float = 0.1, hi: float = 10.0) -> np.ndarray:
    return np.geomspace(lo, hi, num)

