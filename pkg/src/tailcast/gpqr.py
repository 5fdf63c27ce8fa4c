"""Gaussian-process quantile regression in the weight-space (Cholesky) representation.

With ``K = Z Z'`` the squared-exponential kernel matrix of the training inputs,
the latent function values are ``g = Z gamma`` with ``gamma ~ N(0, I)``.  The
quantile regression of ``y`` on the columns of ``Z`` (plus a flat-prior
intercept) reuses the asymmetric-Laplace variational machinery of
:mod:`tailcast.bqr` with a fixed standard-normal prior.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist, pdist

from .bqr import BqrPosterior, make_prior, vb_quantile_regression
from .errors import NumericalError

__all__ = [
    "KernelParams",
    "GpModel",
    "build_kernel",
    "default_hyperparams",
    "fit_gpqr",
    "predict_gpqr",
]

log = logging.getLogger(__name__)

JITTER_SCHEDULE = (1e-8, 1e-7, 1e-6, 1e-5, 1e-4)
W1_FLOOR = 1e-6
W2_CAP = 1e6


@dataclass(frozen=True)
class KernelParams:
    w1: float
    w2: float

    def __post_init__(self):
        if not (self.w1 > 0 and self.w2 > 0):
            raise ValueError(f"kernel parameters must be positive, got w1={self.w1}, w2={self.w2}")


def _sq_exp(sqdist, params: KernelParams):
    return params.w1 * np.exp(-0.5 * params.w2 * sqdist)


def build_kernel(X, params: KernelParams, jitter: float = 1e-8) -> np.ndarray:
    """``w1 * exp(-w2/2 * ||x_t - x_s||^2)`` plus ``jitter`` on the diagonal."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if not np.all(np.isfinite(X)):
        raise ValueError("X must be finite")
    sq = cdist(X, X, "sqeuclidean")
    Kmat = _sq_exp(sq, params)
    Kmat[np.diag_indices_from(Kmat)] = params.w1 + jitter
    return Kmat


def default_hyperparams(X, y, seed: int = 0, max_pairs: int = 1000) -> KernelParams:
    """Signal variance from ``y``; inverse squared length-scale from the median heuristic.

    ``w2 = 1 / median ||x_t - x_s||^2`` over all pairs, or over ``max_pairs``
    pairs drawn without replacement when there are more.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    T = len(X)
    if T < 2:
        raise ValueError("need at least two observations")
    w1 = max(float(np.var(y, ddof=1)), W1_FLOOR)
    n_pairs = T * (T - 1) // 2
    if n_pairs <= max_pairs:
        sq = pdist(X, "sqeuclidean")
    else:
        rng = np.random.default_rng(seed)
        pick = rng.choice(n_pairs, size=max_pairs, replace=False)
        i, j = np.triu_indices(T, k=1)
        sq = np.sum((X[i[pick]] - X[j[pick]]) ** 2, axis=1)
    med = float(np.median(sq))
    w2 = W2_CAP if med <= 1.0 / W2_CAP else 1.0 / med
    return KernelParams(w1=w1, w2=w2)


def _cholesky_with_jitter(X, params: KernelParams):
    base = build_kernel(X, params, jitter=0.0)
    for jitter in JITTER_SCHEDULE:
        Kmat = base.copy()
        Kmat[np.diag_indices_from(Kmat)] += jitter
        try:
            return linalg.cholesky(Kmat, lower=True), jitter
        except linalg.LinAlgError:
            log.info("kernel Cholesky failed with jitter %.0e; escalating", jitter)
    raise NumericalError(f"kernel Cholesky failed at the largest jitter {JITTER_SCHEDULE[-1]:.0e}")


@dataclass(frozen=True)
class GpModel:
    kernel: KernelParams
    X_train: np.ndarray
    Z: np.ndarray
    gamma_mean: np.ndarray
    intercept: float
    jitter: float
    posterior: BqrPosterior

    @property
    def tau(self) -> float:
        return self.posterior.tau

    @property
    def g_hat(self) -> np.ndarray:
        return self.Z @ self.gamma_mean

    def predict(self, x_new) -> float:
        return predict_gpqr(self, x_new)


def fit_gpqr(
    design,
    tau: float,
    tol: float = 1e-6,
    max_iter: int = 500,
    seed: int = 0,
    kernel: KernelParams | None = None,
) -> GpModel:
    if isinstance(design, tuple):
        X, y = design
    else:
        X, y = design.X, design.y
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    if len(X) == 1:
        params = kernel or KernelParams(w1=W1_FLOOR, w2=1.0)
    else:
        params = kernel or default_hyperparams(X, y, seed=seed)
    Z, jitter = _cholesky_with_jitter(X, params)
    post = vb_quantile_regression(Z, y, tau, make_prior("fixed"), tol=tol, max_iter=max_iter, seed=seed)
    return GpModel(
        kernel=params,
        X_train=X.copy(),
        Z=Z,
        gamma_mean=post.beta_mean.copy(),
        intercept=post.intercept,
        jitter=jitter,
        posterior=post,
    )


def predict_gpqr(model: GpModel, x_new) -> float:
    """Cross-kernel projection ``k(x, X)' K^{-1} g_hat`` plus the intercept.

    Since ``g_hat = Z gamma`` and ``K = Z Z'``, ``K^{-1} g_hat = Z'^{-1} gamma``,
    so one forward solve ``Z v = k`` gives the projection as ``v' gamma``.
    """
    x = np.asarray(x_new, dtype=float).ravel()
    if x.shape[0] != model.X_train.shape[1]:
        raise ValueError(f"x_new has {x.shape[0]} features, expected {model.X_train.shape[1]}")
    k = _sq_exp(np.sum((model.X_train - x) ** 2, axis=1), model.kernel)
    v = linalg.solve_triangular(model.Z, k, lower=True)
    return float(model.intercept + v @ model.gamma_mean)
