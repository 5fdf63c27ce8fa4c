"""Lasso surrogates of quantile-forecast paths for variable importance.

The forecast path ``Q`` is regressed on standardized predictors by minimizing

    sum_t (Q_t - a - x_t' b)^2 + lam * sum_j |b_j|

with an unpenalized intercept ``a``.  Larger ``|b_j|`` means predictor ``j``
moves the forecast more.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import lasso_path

__all__ = [
    "SurrogateFit",
    "lasso_cd",
    "lambda_grid",
    "fit_surrogate",
    "top_predictors",
    "count_selected",
    "kkt_residual",
]

ZERO_TOL = 1e-10


def _polish(G, c, beta, lam):
    """Exact solution on the active set with signs held fixed; None if inconsistent."""
    active = np.flatnonzero(beta != 0)
    if active.size == 0:
        return beta
    s = np.sign(beta[active])
    try:
        b = np.linalg.solve(G[np.ix_(active, active)], c[active] - 0.5 * lam * s)
    except np.linalg.LinAlgError:
        return None
    if np.any(np.sign(b) != s):
        return None
    out = np.zeros_like(beta)
    out[active] = b
    return out


def _kkt_gram(G, c, beta, lam):
    grad = 2.0 * (c - G @ beta)
    act = beta != 0
    res = np.zeros_like(beta)
    res[act] = np.abs(grad[act] - lam * np.sign(beta[act]))
    res[~act] = np.maximum(np.abs(grad[~act]) - lam, 0.0)
    return float(res.max()) if res.size else 0.0


def _solve_path(Xc, yc, lams):
    """Solutions along a descending penalty grid for centered data.

    Coordinate descent (scikit-learn, warm-started along the grid) locates the
    active set; each solution is then polished by solving the stationarity
    equations on that set exactly.
    """
    n, p = Xc.shape
    G, c = Xc.T @ Xc, Xc.T @ yc
    out = np.zeros((len(lams), p))
    positive = lams > 0
    if positive.any():
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            _, coefs, _ = lasso_path(
                Xc, yc, alphas=lams[positive] / (2.0 * n), precompute=G, Xy=c, tol=1e-9, max_iter=100000
            )
        out[positive] = coefs.T
    for i in np.flatnonzero(~positive):
        out[i] = np.linalg.lstsq(Xc, yc, rcond=None)[0]
    for i, lam in enumerate(lams):
        polished = _polish(G, c, out[i], lam)
        if polished is not None and _kkt_gram(G, c, polished, lam) <= _kkt_gram(G, c, out[i], lam):
            out[i] = polished
    return out


def _center(X, y):
    xm, ym = X.mean(axis=0), y.mean()
    return X - xm, y - ym, xm, ym


def lasso_cd(X, y, lam: float) -> tuple[float, np.ndarray]:
    """Coordinate descent for the penalized least-squares problem; returns (intercept, b)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    Xc, yc, xm, ym = _center(X, y)
    beta = _solve_path(Xc, yc, np.array([float(lam)]))[0]
    return float(ym - xm @ beta), beta


def kkt_residual(X, y, intercept, beta, lam) -> float:
    """Largest violation of the Lasso subgradient conditions."""
    X = np.asarray(X, dtype=float)
    r = np.asarray(y, dtype=float) - intercept - X @ beta
    grad = 2.0 * X.T @ r
    act = np.abs(beta) > 0
    viol = np.where(act, np.abs(grad - lam * np.sign(beta)), np.maximum(np.abs(grad) - lam, 0.0))
    return float(max(viol.max(initial=0.0), abs(2.0 * r.sum())))


def lambda_grid(X, y, n: int = 100, ratio: float = 1e-4) -> np.ndarray:
    """Descending log-spaced grid from the smallest all-zero penalty."""
    Xc, yc, _, _ = _center(np.asarray(X, dtype=float), np.asarray(y, dtype=float))
    lam_max = float(np.max(np.abs(2.0 * Xc.T @ yc), initial=0.0))
    if lam_max <= 0:
        return np.zeros(1)
    return np.geomspace(lam_max, ratio * lam_max, n)


@dataclass(frozen=True)
class SurrogateFit:
    beta_star: np.ndarray
    intercept: float
    lambda_: float
    column_names: tuple[str, ...]
    provenance: tuple[str, ...]
    lambda_path: np.ndarray
    path_nonzero: np.ndarray
    cv_error: np.ndarray
    constant_path: bool = False

    @property
    def nonzero_count(self) -> int:
        return int(np.sum(np.abs(self.beta_star) > ZERO_TOL))

    @property
    def top_k(self) -> list[tuple[str, float]]:
        return [(name, mag) for name, mag, _ in top_predictors(self, k=len(self.beta_star))]


def _standardize(X):
    sd = X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (X - X.mean(axis=0)) / sd


def _blocks(n, folds):
    edges = np.linspace(0, n, folds + 1).round().astype(int)
    return [np.arange(edges[i], edges[i + 1]) for i in range(folds)]


def fit_surrogate(
    forecast_path,
    X,
    column_names: Sequence[str] | None = None,
    provenance: Sequence[str] | None = None,
    lambdas=None,
    cv_folds: int = 5,
) -> SurrogateFit:
    """Lasso surrogate at the penalty minimizing blocked cross-validated error.

    Columns are standardized (population sd) before fitting.  Folds are
    contiguous blocks; on a training block of ``m`` of ``n`` rows the penalty
    is scaled by ``m / n`` so it stays comparable to the full-sample objective.
    """
    Q = np.asarray(forecast_path, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, p = X.shape
    if len(Q) != n:
        raise ValueError(f"forecast path has {len(Q)} rows, X has {n}")
    if not (np.all(np.isfinite(Q)) and np.all(np.isfinite(X))):
        raise ValueError("forecast path and predictors must be finite")
    names = tuple(column_names) if column_names is not None else tuple(f"x{j}" for j in range(p))
    prov = tuple(provenance) if provenance is not None else ("macro",) * p
    if len(names) != p or len(prov) != p:
        raise ValueError("column_names and provenance must match the number of columns")
    Xs = _standardize(X)

    if np.ptp(Q) == 0:
        return SurrogateFit(
            beta_star=np.zeros(p), intercept=float(Q[0]) if n else 0.0, lambda_=0.0, column_names=names,
            provenance=prov, lambda_path=np.zeros(0), path_nonzero=np.zeros(0, dtype=int),
            cv_error=np.zeros(0), constant_path=True,
        )

    grid = lambda_grid(Xs, Q) if lambdas is None else np.sort(np.asarray(lambdas, dtype=float))[::-1]
    if np.any(grid < 0):
        raise ValueError("penalties must be nonnegative")

    cv_err = np.zeros(len(grid))
    folds = _blocks(n, cv_folds) if cv_folds >= 2 and n >= 2 * cv_folds else []
    for test in folds:
        train = np.setdiff1d(np.arange(n), test)
        Xc, yc, xm, ym = _center(Xs[train], Q[train])
        betas = _solve_path(Xc, yc, grid * len(train) / n)
        pred = ym + (Xs[test] - xm) @ betas.T
        cv_err += np.sum((Q[test, None] - pred) ** 2, axis=0)
    if folds:
        cv_err /= n

    Xc, yc, xm, ym = _center(Xs, Q)
    path = _solve_path(Xc, yc, grid)
    path_nz = np.array([int(np.sum(np.abs(b) > ZERO_TOL)) for b in path])
    # first minimum along a descending grid is the sparsest among ties
    best = int(np.argmin(cv_err)) if folds else len(grid) - 1
    b = path[best]
    return SurrogateFit(
        beta_star=b,
        intercept=float(ym - xm @ b),
        lambda_=float(grid[best]),
        column_names=names,
        provenance=prov,
        lambda_path=grid,
        path_nonzero=path_nz,
        cv_error=cv_err,
    )


def _label(provenance: str) -> str:
    return "TEXT" if provenance == "text" else "FRED"


def top_predictors(fit: SurrogateFit, k: int = 5) -> list[tuple[str, float, str]]:
    """Top ``k`` nonzero coefficients as ``(name, |b|, FRED|TEXT)``, ties by name."""
    if k < 1:
        raise ValueError("k must be at least 1")
    mags = np.abs(fit.beta_star)
    idx = [j for j in range(len(mags)) if mags[j] > ZERO_TOL]
    idx.sort(key=lambda j: (-mags[j], fit.column_names[j]))
    return [(fit.column_names[j], float(mags[j]), _label(fit.provenance[j])) for j in idx[:k]]


def count_selected(fit: SurrogateFit) -> dict[str, int]:
    nz = np.abs(fit.beta_star) > ZERO_TOL
    text = sum(1 for j in np.flatnonzero(nz) if _label(fit.provenance[j]) == "TEXT")
    return {"fred": int(nz.sum()) - text, "text": text}
