"""Quantile scores, the quantile AR(1) benchmark, Diebold-Mariano tests and rearrangement."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize, sparse, stats

__all__ = [
    "QUANTILE_GRID",
    "quantile_score",
    "quantreg_lp",
    "Ar1Model",
    "fit_ar1",
    "fit_ar1_benchmark",
    "DMResult",
    "dm_test",
    "rearrange_quantiles",
]

QUANTILE_GRID = (0.05, 0.10, 0.25, 0.50, 0.75, 0.90, 0.95)


def _check_tau(tau):
    tau = np.asarray(tau, dtype=float)
    if np.any((tau <= 0) | (tau >= 1)):
        raise ValueError("tau must lie strictly between 0 and 1")
    return tau


def quantile_score(y, q, tau):
    """Pinball loss ``(y - q) * (tau - 1{y <= q})``; broadcasts over arrays."""
    tau = _check_tau(tau)
    y = np.asarray(y, dtype=float)
    q = np.asarray(q, dtype=float)
    out = (y - q) * (tau - (y <= q))
    return float(out) if out.ndim == 0 else out


def quantreg_lp(X, y, tau: float) -> np.ndarray:
    """Check-loss minimizing coefficients, solved as a linear program (HiGHS).

    ``min tau * 1'u+ + (1 - tau) * 1'u-  s.t.  X b + u+ - u- = y``.
    """
    _check_tau(tau)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    c = np.concatenate([np.zeros(k), np.full(n, tau), np.full(n, 1.0 - tau)])
    eye = sparse.identity(n, format="csr")
    A = sparse.hstack([sparse.csr_matrix(X), eye, -eye], format="csr")
    bounds = [(None, None)] * k + [(0, None)] * (2 * n)
    res = optimize.linprog(c, A_eq=A, b_eq=y, bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"quantile regression LP failed: {res.message}")
    return res.x[:k]


@dataclass(frozen=True)
class Ar1Model:
    """Linear quantile autoregression ``q = intercept + slope * y_lag``."""

    tau: float
    intercept: float
    slope: float

    def predict(self, y_lag) -> float:
        return self.intercept + self.slope * float(y_lag)


def fit_ar1(y_next, y_lag, tau: float) -> Ar1Model:
    y_next = np.asarray(y_next, dtype=float)
    y_lag = np.asarray(y_lag, dtype=float)
    if y_next.shape != y_lag.shape or y_next.ndim != 1:
        raise ValueError("y_next and y_lag must be equal-length vectors")
    if np.ptp(y_lag) == 0:
        raise ValueError("degenerate series: the lagged regressor is constant")
    X = np.column_stack([np.ones_like(y_lag), y_lag])
    b = quantreg_lp(X, y_next, tau)
    return Ar1Model(tau=float(tau), intercept=float(b[0]), slope=float(b[1]))


def fit_ar1_benchmark(series, tau: float, gap: int = 1) -> Ar1Model:
    """Quantile regression of ``y[t + gap]`` on an intercept and ``y[t]``."""
    y = np.asarray(series, dtype=float)
    y = y[np.isfinite(y)]
    if len(y) < 30:
        raise ValueError(f"AR(1) benchmark needs at least 30 observations, got {len(y)}")
    return fit_ar1(y[gap:], y[:-gap], tau)


@dataclass(frozen=True)
class DMResult:
    stat: float
    p_value: float
    degenerate: bool = False


def dm_test(loss_a, loss_b, h: int = 0) -> DMResult:
    """One-sided Diebold-Mariano test of "a is more accurate than b".

    The long-run variance of ``d = loss_a - loss_b`` uses a rectangular kernel
    truncated at ``h`` lags; when that estimate is not positive the lag-0
    variance is used and the result flagged.  Small p-values favour ``a``.
    """
    a = np.asarray(loss_a, dtype=float)
    b = np.asarray(loss_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("loss series must be equal-length vectors")
    T = len(a)
    if T < 10:
        raise ValueError("dm_test needs at least 10 observations")
    d = a - b
    dbar = d.mean()
    dc = d - dbar
    gamma0 = dc @ dc / T
    lrv = gamma0 + 2.0 * sum(dc[l:] @ dc[:-l] / T for l in range(1, h + 1))
    degenerate = False
    if lrv <= 0:
        degenerate = True
        lrv = gamma0
    if lrv <= 0:
        if dbar == 0:
            return DMResult(0.0, 0.5, True)
        stat = np.copysign(np.inf, dbar)
    else:
        stat = dbar / np.sqrt(lrv / T)
    return DMResult(float(stat), float(stats.norm.cdf(stat)), degenerate)


def rearrange_quantiles(forecasts) -> np.ndarray:
    """Sort forecasts indexed by ascending tau to remove quantile crossing."""
    return np.sort(np.asarray(forecasts, dtype=float), axis=-1)
