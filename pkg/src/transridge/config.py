"""Flat ``key = value`` run configuration.

One setting per line, ``#`` starts a comment.  Per-study values are comma
separated and listed source studies first, target last.  A correlation
matrix is given either as a scalar ``rho`` (common off-diagonal value) or
as ``K`` lines of ``rho_row = ...``.  Relative paths resolve against the
directory holding the config file.

Recognised keys::

    mode          estimation | prediction
    K, p          integers (K may be implied by n_k or study_files)
    n_k           sample sizes (simulation)
    alpha2_k      per-study signal-to-noise ratios (scalar broadcasts)
    sigma2_k      per-study noise variances (scalar broadcasts, default 1)
    rho, rho_row  correlations, see above
    cov, cov_r    identity | toeplitz, and the Toeplitz decay
    lambda        penalties (scalar broadcasts)
    multipliers   candidate multiples of gamma_k/alpha2_k tried by cross-validation
    folds         cross-validation folds (default 5)
    seed          master seed (default 0)
    out_dir       output directory (default ".")
    replicates    Monte Carlo replicates (default 50)
    lambda_grid   explicit penalty grid for risk curves
    n_test        held-out target rows written by ``generate`` (default 0)
    study_files   CSV paths, target last
    screen        keep only the top predictors by marginal correlation
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .estimation import HyperParams, common_rho
from .simulation import CovSpec, SimConfig, default_lambda_grid

_INT_KEYS = {"K", "p", "folds", "seed", "replicates", "n_test", "screen"}
_LIST_KEYS = {"n_k", "alpha2_k", "sigma2_k", "lambda", "multipliers", "lambda_grid"}
_KNOWN = _INT_KEYS | _LIST_KEYS | {"mode", "rho", "rho_row", "cov", "cov_r", "out_dir",
                                   "study_files"}


def _floats(key, text):
    try:
        return [float(x) for x in text.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"{key}: expected numbers, got {text!r}") from exc


@dataclass
class RunConfig:
    mode: str = "estimation"
    K: int | None = None
    p: int | None = None
    n_k: list | None = None
    alpha2_k: list | None = None
    sigma2_k: list | None = None
    rho: float | None = None
    rho_rows: list = field(default_factory=list)
    cov: str = "identity"
    cov_r: float = 0.5
    lam: list | None = None
    multipliers: list | None = None
    folds: int = 5
    seed: int = 0
    out_dir: Path = Path(".")
    replicates: int = 50
    lambda_grid: list | None = None
    n_test: int = 0
    study_files: list = field(default_factory=list)
    screen: int | None = None

    # ----------------------------------------------------------------- parsing
    @classmethod
    def parse(cls, text: str, base_dir=".") -> "RunConfig":
        base = Path(base_dir)
        cfg = cls()
        seen = set()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value, got {raw.strip()!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in _KNOWN:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            if key in seen and key != "rho_row":
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            seen.add(key)
            cfg._set(key, value, base, lineno)
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        return cls.parse(text, path.parent)

    def _set(self, key, value, base, lineno):
        if key in _INT_KEYS:
            try:
                setattr(self, key, int(value))
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: {key} must be an integer") from exc
        elif key == "mode":
            if value not in ("estimation", "prediction"):
                raise ConfigError(f"line {lineno}: mode must be estimation or prediction")
            self.mode = value
        elif key == "lambda":
            self.lam = _floats(key, value)
        elif key in _LIST_KEYS:
            setattr(self, key, _floats(key, value))
        elif key == "rho":
            (self.rho,) = _floats(key, value) or [None]
        elif key == "rho_row":
            self.rho_rows.append(_floats(key, value))
        elif key == "cov":
            if value not in ("identity", "toeplitz"):
                raise ConfigError(f"line {lineno}: cov must be identity or toeplitz")
            self.cov = value
        elif key == "cov_r":
            (self.cov_r,) = _floats(key, value)
        elif key == "out_dir":
            self.out_dir = base / value
        elif key == "study_files":
            self.study_files = [base / v.strip() for v in value.split(",") if v.strip()]

    # --------------------------------------------------------------- accessors
    def n_studies(self) -> int:
        for K in (self.K, len(self.study_files) or None, self.n_k and len(self.n_k),
                  self.rho_rows and len(self.rho_rows)):
            if K:
                if self.K is not None and K != self.K:
                    raise ConfigError(f"K = {self.K} disagrees with another setting implying {K}")
                return int(K)
        raise ConfigError("cannot infer the number of studies; set K")

    def _per_study(self, name, values, K, default=None):
        if values is None:
            if default is None:
                raise ConfigError(f"missing required key {name}")
            values = [default]
        if len(values) == 1:
            values = values * K
        if len(values) != K:
            raise ConfigError(f"{name} has {len(values)} entries, expected {K}")
        return np.array(values, dtype=float)

    def rho_matrix(self, K) -> np.ndarray:
        if self.rho_rows:
            if self.rho is not None:
                raise ConfigError("give either rho or rho_row lines, not both")
            R = np.array(self.rho_rows, dtype=float)
            if R.shape != (K, K):
                raise ConfigError(f"rho_row lines form a {R.shape} matrix, expected ({K}, {K})")
            return R
        if self.rho is None:
            raise ConfigError("missing correlation: set rho or rho_row")
        return common_rho(self.rho, K)

    def hyper(self, gamma) -> HyperParams:
        K = self.n_studies()
        alpha2 = self._per_study("alpha2_k", self.alpha2_k, K)
        sigma2 = self._per_study("sigma2_k", self.sigma2_k, K, default=1.0)
        lam = None if self.lam is None else self._per_study("lambda", self.lam, K)
        try:
            return HyperParams.from_snr(alpha2, sigma2, self.rho_matrix(K), gamma, lam)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def cov_spec(self) -> CovSpec:
        try:
            return CovSpec.toeplitz(self.cov_r) if self.cov == "toeplitz" else CovSpec()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def sim_config(self) -> SimConfig:
        K = self.n_studies()
        if self.p is None:
            raise ConfigError("missing required key p")
        n = self._per_study("n_k", self.n_k, K).astype(int)
        hyper = self.hyper(self.p / n)
        return SimConfig(hyper=hyper, p=self.p, n=tuple(n), cov=self.cov_spec(),
                         replicates=self.replicates, master_seed=self.seed)

    def grid(self) -> np.ndarray:
        if self.lambda_grid is None:
            return default_lambda_grid()
        g = np.array(self.lambda_grid, dtype=float)
        if g.size == 0 or np.any(g <= 0):
            raise ConfigError("lambda_grid must list positive penalties")
        return g
