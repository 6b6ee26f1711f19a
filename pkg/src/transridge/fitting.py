"""Transfer ridge on observed data: screening, standardization, penalty tuning, fitting."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .estimation import HyperParams, asymptotic_estimation_system, solve_optimal_weights, _vec
from .prediction import asymptotic_prediction_system
from .ridge import EigenStudy, StudyData

MODES = ("estimation", "prediction")
DEFAULT_MULTIPLIERS = (0.25, 0.5, 1.0, 2.0, 4.0)
#: tolerance on column means and variances when data claim to be standardized already
STANDARDIZED_ATOL = 1e-6


def _check_mode(mode):
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    return mode


def screen_predictors(target: StudyData, m: int) -> list[int]:
    """Columns with the ``m`` largest absolute marginal correlations with ``Y``.

    Ties go to the lower index; a constant column has correlation zero.
    """
    if m < 1:
        raise ValueError(f"m must be at least 1, got {m}")
    Xc = target.X - target.X.mean(axis=0)
    yc = target.Y - target.Y.mean()
    sx = np.sqrt(np.einsum("ij,ij->j", Xc, Xc))
    sy = np.sqrt(yc @ yc)
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = np.where(sx > 0, (Xc.T @ yc) / (sx * sy), 0.0) if sy > 0 else np.zeros(target.p)
    # round away last-bit noise so identical columns tie exactly
    key = np.round(np.abs(np.nan_to_num(corr)), 12)
    order = np.argsort(-key, kind="stable")
    return [int(j) for j in order[:min(m, target.p)]]


@dataclass(frozen=True)
class Standardization:
    """Column centring and scaling of one study, plus the response mean."""

    mean: np.ndarray
    scale: np.ndarray
    y_mean: float = 0.0

    @classmethod
    def of(cls, data: StudyData) -> "Standardization":
        mean = data.X.mean(axis=0)
        scale = data.X.std(axis=0)
        # constant columns centre to zero; leave them unscaled
        scale = np.where(scale > 0, scale, 1.0)
        return cls(mean=mean, scale=scale, y_mean=float(data.Y.mean()))

    @classmethod
    def identity(cls, p: int) -> "Standardization":
        return cls(mean=np.zeros(p), scale=np.ones(p), y_mean=0.0)

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.scale

    def apply(self, data: StudyData) -> StudyData:
        return StudyData(X=self.transform(data.X), Y=data.Y - self.y_mean, study_id=data.study_id)


def is_standardized(data: StudyData, atol: float = STANDARDIZED_ATOL) -> bool:
    sd = data.X.std(axis=0)
    return bool(np.allclose(data.X.mean(axis=0), 0.0, atol=atol)
                and np.allclose(sd[sd > 0], 1.0, atol=atol))


@dataclass(frozen=True)
class FitResult:
    weights: np.ndarray
    combined_beta: np.ndarray
    per_study_beta: np.ndarray
    lambda_used: np.ndarray
    mode: str
    standardization: Standardization
    risk: float

    def predict(self, X) -> np.ndarray:
        """Predictions for raw target-scale features."""
        return self.standardization.transform(X) @ self.combined_beta + self.standardization.y_mean

    def predict_naive(self, X) -> np.ndarray:
        """Target-only ridge predictions, the usual comparison."""
        return self.standardization.transform(X) @ self.per_study_beta[:, -1] + self.standardization.y_mean


def _fit_hyper(studies, hyper, lam):
    K = len(studies)
    if K != hyper.K:
        raise ValueError(f"{K} studies but hyperparameters describe K={hyper.K}")
    p = studies[0].p
    if any(s.p != p for s in studies):
        raise ValueError("all studies must have the same number of predictors")
    gamma = np.array([p / s.n for s in studies])
    return replace(hyper, gamma=gamma, lam=_vec(lam, K, "lambda"))


def transfer_ridge_fit(studies, hyper: HyperParams, mode: str, lam, *,
                       standardize: bool = True) -> FitResult:
    """Ridge fit per study, then aggregation with the limiting optimal weights.

    With ``standardize`` each study is centred and scaled by its own column
    statistics and the target's are kept for prediction.  Otherwise the data
    are used as given, which the prediction objective only accepts when the
    columns already have mean zero and unit variance.
    """
    _check_mode(mode)
    hyper = _fit_hyper(studies, hyper, lam)
    if standardize:
        stds = [Standardization.of(s) for s in studies]
        studies = [t.apply(s) for t, s in zip(stds, studies)]
        target_std = stds[-1]
    else:
        if mode == "prediction" and not all(is_standardized(s) for s in studies):
            raise ValueError("prediction weights need standardized predictors; "
                             "pass standardize=True or scale the columns first")
        target_std = Standardization.identity(studies[0].p)

    eig = [EigenStudy.from_study(s) for s in studies]
    betas = np.column_stack([e.ridge(l) for e, l in zip(eig, hyper.lam)])
    summaries = [e.summary(l) for e, l in zip(eig, hyper.lam)]
    if mode == "estimation":
        system = asymptotic_estimation_system(hyper, summaries)
    else:
        system = asymptotic_prediction_system(hyper, summaries)
    sol = solve_optimal_weights(system)
    return FitResult(weights=sol.W, combined_beta=betas @ sol.W, per_study_beta=betas,
                     lambda_used=hyper.lam.copy(), mode=mode, standardization=target_std,
                     risk=sol.risk)


def candidate_lambdas(studies, hyper: HyperParams, multiplier: float) -> np.ndarray:
    """``multiplier * gamma_k / alpha_k^2`` with ``gamma_k`` from the data."""
    p = studies[0].p
    gamma = np.array([p / s.n for s in studies])
    return multiplier * gamma / hyper.alpha2


def cross_validate_lambda(studies, hyper: HyperParams, mode: str, folds: int = 5,
                          multipliers=DEFAULT_MULTIPLIERS, seed: int = 0,
                          return_scores: bool = False):
    """Pick one common penalty multiplier by K-fold CV on the target rows.

    Each fold refits the whole pipeline with the held-out target rows removed
    (sources untouched) and scores squared prediction error on those rows.
    """
    _check_mode(mode)
    multipliers = [float(c) for c in multipliers]
    if not multipliers:
        raise ValueError("need at least one penalty multiplier")
    if any(not c > 0 for c in multipliers):
        raise ValueError("penalty multipliers must be positive")
    if folds < 2:
        raise ValueError(f"folds must be at least 2, got {folds}")
    target = studies[-1]
    if target.n < folds:
        raise ValueError(f"target study has {target.n} rows, fewer than {folds} folds")
    lams = [candidate_lambdas(studies, hyper, c) for c in multipliers]
    if len(multipliers) == 1:
        return (lams[0], np.full(1, np.nan)) if return_scores else lams[0]

    perm = np.random.default_rng(seed).permutation(target.n)
    parts = np.array_split(perm, folds)
    sse = np.zeros(len(multipliers))
    for held in parts:
        keep = np.setdiff1d(perm, held)
        train = StudyData(X=target.X[keep], Y=target.Y[keep], study_id=target.study_id)
        Xh, Yh = target.X[held], target.Y[held]
        for i, lam in enumerate(lams):
            fit = transfer_ridge_fit([*studies[:-1], train], hyper, mode, lam)
            r = Yh - fit.predict(Xh)
            sse[i] += r @ r
    scores = sse / target.n
    best = int(np.argmin(scores))
    return (lams[best], scores) if return_scores else lams[best]
