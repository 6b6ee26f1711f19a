"""Command-line entry point.

    transridge generate --config run.cfg      synthetic study CSVs
    transridge simulate --config run.cfg      limiting vs Monte Carlo risk curve
    transridge theory   --config run.cfg      limiting weights at the configured penalties
    transridge fit      --config run.cfg      transfer ridge on study CSVs
    transridge predict  --config run.cfg --data test.csv

Exit status is 0 on success, 2 for bad configuration or input, 3 for a
numerical failure; errors are a single JSON line on stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import ConfigError, NumericalFailure
from .estimation import solve_optimal_weights
from .fitting import (DEFAULT_MULTIPLIERS, FitResult, Standardization, cross_validate_lambda,
                      screen_predictors, transfer_ridge_fit)
from .ridge import StudyData
from .simulation import generate_multistudy, limiting_system, run_risk_curve_experiment


RISK_CURVE_COLUMNS = ["lambda", "theory_risk", "emp_risk_mean", "emp_risk_se",
                      "baseline_risk_mean", "objective"]


# ------------------------------------------------------------------- CSV helpers
def _fmt(x):
    # repr round-trips doubles exactly
    return repr(float(x)) if isinstance(x, (float, np.floating)) else x


def write_rows(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def read_rows(path: Path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    if not rows:
        raise ConfigError(f"{path} is empty")
    return rows[0], rows[1:]


def read_study(path: Path, study_id: int = 0):
    """Study CSV: header row, first column ``y``, remaining columns predictors."""
    header, rows = read_rows(path)
    if not header or header[0].strip() != "y":
        raise ConfigError(f"{path}: first column must be named 'y'")
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    try:
        data = np.array(rows, dtype=float)
    except ValueError as exc:
        raise ConfigError(f"{path}: non-numeric or missing entries") from exc
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ConfigError(f"{path}: ragged rows")
    names = [h.strip() for h in header[1:]]
    return names, StudyData(X=data[:, 1:], Y=data[:, 0], study_id=study_id)


def write_study(path: Path, X, Y):
    header = ["y"] + [f"x{j + 1}" for j in range(X.shape[1])]
    write_rows(path, header, np.column_stack([Y, X]).tolist())


# ---------------------------------------------------------------------- commands
def cmd_generate(cfg: RunConfig, args) -> dict:
    sim = cfg.sim_config()
    n_test = cfg.n_test
    if n_test < 0:
        raise ConfigError("n_test must be nonnegative")
    n = list(sim.n)
    n[-1] += n_test
    ds = generate_multistudy(replace(sim, n=tuple(n), hyper=replace(
        sim.hyper, gamma=sim.p / np.array(n, dtype=float))), 0)
    out = cfg.out_dir
    files = []
    for k, s in enumerate(ds.studies):
        X, Y = s.X, s.Y
        if k == sim.K - 1 and n_test:
            write_study(out / "test.csv", X[sim.n[-1]:], Y[sim.n[-1]:])
            X, Y = X[:sim.n[-1]], Y[:sim.n[-1]]
        path = out / f"study_{k + 1}.csv"
        write_study(path, X, Y)
        files.append(str(path))
    write_rows(out / "true_beta.csv", ["coef_index"] + [f"beta_study_{k + 1}" for k in range(sim.K)],
               [[j, *row] for j, row in enumerate(ds.betas.tolist())])
    return {"study_files": files}


def cmd_simulate(cfg: RunConfig, args) -> dict:
    sim = cfg.sim_config()
    table = run_risk_curve_experiment(sim, cfg.grid(), cfg.mode, threads=args.threads)
    path = cfg.out_dir / "risk_curve.csv"
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, RISK_CURVE_COLUMNS)
    return {"risk_curve": str(path), "rows": len(table)}


def cmd_theory(cfg: RunConfig, args) -> dict:
    sim = cfg.sim_config()
    sol = solve_optimal_weights(limiting_system(sim, sim.hyper, cfg.mode))
    path = cfg.out_dir / "weights.csv"
    write_rows(path, ["study_id", "weight"], [[k + 1, w] for k, w in enumerate(sol.W)])
    return {"weights": str(path), "risk": sol.risk, "lambda": sim.hyper.lam.tolist()}


def load_studies(cfg: RunConfig):
    if not cfg.study_files:
        raise ConfigError("missing required key study_files")
    names, studies = None, []
    for k, path in enumerate(cfg.study_files):
        cols, s = read_study(path, k + 1)
        if names is not None and cols != names:
            raise ConfigError(f"{path}: predictor columns differ from {cfg.study_files[0]}")
        names = cols
        studies.append(s)
    return names, studies


def fit_from_config(cfg: RunConfig):
    names, studies = load_studies(cfg)
    cols = list(range(len(names)))
    if cfg.screen is not None:
        cols = sorted(screen_predictors(studies[-1], cfg.screen))
        studies = [StudyData(X=s.X[:, cols], Y=s.Y, study_id=s.study_id) for s in studies]
    p = studies[0].p
    hyper = cfg.hyper([p / s.n for s in studies])
    if cfg.lam is not None and cfg.multipliers is not None:
        raise ConfigError("give either lambda or multipliers, not both")
    if cfg.lam is not None:
        lam = hyper.lam
    else:
        mult = cfg.multipliers or DEFAULT_MULTIPLIERS
        lam = cross_validate_lambda(studies, hyper, cfg.mode, cfg.folds, mult, cfg.seed)
    return names, cols, transfer_ridge_fit(studies, hyper, cfg.mode, lam)


def cmd_fit(cfg: RunConfig, args) -> dict:
    names, cols, fit = fit_from_config(cfg)
    out = cfg.out_dir
    K = fit.weights.shape[0]
    write_rows(out / "weights.csv", ["study_id", "weight"],
               [[k + 1, w] for k, w in enumerate(fit.weights)])
    write_rows(out / "fit.csv", ["coef_index", "combined_beta"] + [f"beta_study_{k + 1}" for k in range(K)],
               [[j, b, *row] for j, b, row in zip(cols, fit.combined_beta, fit.per_study_beta.tolist())])
    st = fit.standardization
    write_rows(out / "standardization.csv", ["coef_index", "name", "mean", "scale"],
               [[-1, "y", st.y_mean, 1.0]]
               + [[j, names[j], m, s] for j, m, s in zip(cols, st.mean, st.scale)])
    write_rows(out / "fit_info.csv", ["key", "value"],
               [["mode", fit.mode], ["risk", fit.risk]]
               + [[f"lambda_{k + 1}", l] for k, l in enumerate(fit.lambda_used)])
    return {"weights": fit.weights.tolist(), "risk": fit.risk, "lambda": fit.lambda_used.tolist()}


def load_fit(out: Path):
    """Rebuild a :class:`FitResult` from the CSVs written by ``fit``."""
    header, rows = read_rows(out / "fit.csv")
    fit = np.array(rows, dtype=float)
    cols = fit[:, 0].astype(int)
    _, srows = read_rows(out / "standardization.csv")
    y_row = [r for r in srows if int(r[0]) == -1]
    xs = [r for r in srows if int(r[0]) != -1]
    if len(y_row) != 1 or [int(r[0]) for r in xs] != cols.tolist():
        raise ConfigError(f"{out}: standardization.csv does not match fit.csv")
    st = Standardization(mean=np.array([float(r[2]) for r in xs]),
                         scale=np.array([float(r[3]) for r in xs]), y_mean=float(y_row[0][2]))
    _, wrows = read_rows(out / "weights.csv")
    info = dict(read_rows(out / "fit_info.csv")[1])
    K = fit.shape[1] - 2
    lam = np.array([float(info[f"lambda_{k + 1}"]) for k in range(K)])
    result = FitResult(weights=np.array([float(r[1]) for r in wrows]), combined_beta=fit[:, 1],
                       per_study_beta=fit[:, 2:], lambda_used=lam, mode=info["mode"],
                       standardization=st, risk=float(info["risk"]))
    return [r[1] for r in xs], cols, result


def cmd_predict(cfg: RunConfig, args) -> dict:
    if args.data is None:
        raise ConfigError("predict needs --data")
    names, cols, fit = load_fit(cfg.out_dir)
    data_names, data = read_study(Path(args.data))
    if [data_names[j] if j < len(data_names) else None for j in cols] != names:
        raise ConfigError(f"{args.data}: predictor columns do not match the fitted model")
    X = data.X[:, cols]
    yhat, naive = fit.predict(X), fit.predict_naive(X)
    write_rows(cfg.out_dir / "predictions.csv", ["row", "y", "trans_ridge", "naive_target"],
               [[i, y, a, b] for i, (y, a, b) in enumerate(zip(data.Y, yhat, naive))])
    mse = float(np.mean((data.Y - yhat) ** 2))
    mse_naive = float(np.mean((data.Y - naive) ** 2))
    write_rows(cfg.out_dir / "prediction_mse.csv", ["method", "mse"],
               [["trans_ridge", mse], ["naive_target", mse_naive]])
    return {"mse_trans_ridge": mse, "mse_naive_target": mse_naive, "n": data.n}


COMMANDS = {"generate": cmd_generate, "simulate": cmd_simulate, "theory": cmd_theory,
            "fit": cmd_fit, "predict": cmd_predict}


class _ArgError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Raise instead of exiting so usage errors get the JSON treatment."""

    def error(self, message):
        raise _ArgError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="transridge", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--seed", type=int)
        p.add_argument("--out-dir", type=Path)
        p.add_argument("--mode", choices=("estimation", "prediction"))
        p.add_argument("--threads", type=int, default=1, help="replicate workers, 0 = all cores")
        if name == "predict":
            p.add_argument("--data", type=Path, help="CSV in study format to score")
    return parser


def _fail(code, kind, message):
    print(json.dumps({"error": kind, "message": message, "exit_code": code}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except _ArgError as exc:
        return _fail(2, "usage", str(exc))
    try:
        cfg = RunConfig.load(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out_dir is not None:
            cfg.out_dir = args.out_dir
        if args.mode is not None:
            cfg.mode = args.mode
        if args.threads < 0:
            raise ConfigError("--threads must be nonnegative")
        result = COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        return _fail(2, "config", str(exc))
    except NumericalFailure as exc:
        return _fail(3, "numerical", str(exc))
    except (ValueError, OSError) as exc:
        return _fail(2, "input", str(exc))
    print(json.dumps(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
