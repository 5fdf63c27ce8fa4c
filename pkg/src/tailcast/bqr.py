"""Bayesian quantile regression with global-local shrinkage, fit by mean-field variational Bayes.

The error term uses the exponential-normal mixture of the asymmetric Laplace
distribution::

    y_t = a_t' b + theta * z_t + kappa * sqrt(sigma * z_t) * u_t,   z_t ~ Exp(mean sigma)

so that, given the latent ``z``, the likelihood is Gaussian.  The variational
family is ``q(b) q(sigma) prod_t q(z_t) q(shrinkage scales)`` with
``q(b)`` Gaussian, ``q(z_t)`` generalized inverse Gaussian with index 1/2,
``q(sigma)`` inverse-Gamma, and conjugate forms for the prior scales.  The
first regressor is an intercept with a flat prior.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import linalg
from scipy.special import digamma, gammaln

from .errors import NumericalError

__all__ = [
    "QuantileSpec",
    "ShrinkagePrior",
    "BqrPosterior",
    "make_prior",
    "fit_bqr",
    "predict_quantile",
    "vb_quantile_regression",
]

PRIOR_KINDS = ("ridge", "horseshoe", "lasso", "fixed")
_LOG2PI = np.log(2.0 * np.pi)
_LGAMMA_HALF = gammaln(0.5)


@dataclass(frozen=True)
class QuantileSpec:
    """Asymmetric-Laplace mixture constants for quantile level ``tau``."""

    tau: float
    theta: float
    kappa: float

    @classmethod
    def from_tau(cls, tau: float) -> "QuantileSpec":
        if not 0.0 < tau < 1.0:
            raise ValueError(f"tau must be in (0, 1), got {tau}")
        v = tau * (1.0 - tau)
        return cls(tau=float(tau), theta=(1.0 - 2.0 * tau) / v, kappa=float(np.sqrt(2.0 / v)))

    @property
    def kappa2(self) -> float:
        return self.kappa**2


@dataclass(frozen=True)
class ShrinkagePrior:
    kind: str
    hyper: Mapping[str, float] = field(default_factory=dict)


_DEFAULT_HYPER = {
    "ridge": {"e0": 0.0, "e1": 0.0},
    "lasso": {"c0": 0.0, "d0": 0.0},
    "horseshoe": {},
    "fixed": {},
}


def make_prior(kind: str, **hyper: float) -> ShrinkagePrior:
    """Validate and build a shrinkage prior.

    ``ridge``: unit local scales, global variance ~ IG(e0, e1).
    ``horseshoe``: half-Cauchy local and global scales; takes no hyperparameters.
    ``lasso``: exponential local variances with rate lambda/2, lambda ~ G(c0, d0).
    ``fixed``: standard normal coefficients, nothing learned.
    Zero hyperparameters give the improper limiting priors.
    """
    kind = kind.lower()
    if kind not in PRIOR_KINDS:
        raise ValueError(f"unknown prior kind {kind!r}; expected one of {PRIOR_KINDS}")
    allowed = _DEFAULT_HYPER[kind]
    unknown = set(hyper) - set(allowed)
    if unknown:
        raise ValueError(f"{kind} prior does not accept hyperparameters {sorted(unknown)}")
    merged = {**allowed, **{k: float(v) for k, v in hyper.items()}}
    neg = [k for k, v in merged.items() if v < 0]
    if neg:
        raise ValueError(f"hyperparameters must be nonnegative: {neg}")
    return ShrinkagePrior(kind=kind, hyper=merged)


# --------------------------------------------------------------------------- helpers


SIGMA_FLOOR = 1e-10


def _ig_stats(a, b):
    """E[1/x] and E[log x] under IG(a, b)."""
    return a / b, np.log(b) - digamma(a)


def _ig_entropy(a, b):
    return a + np.log(b) + gammaln(a) - (1.0 + a) * digamma(a)


def _gig_half_moments(a, b):
    """E[x], E[1/x] for GIG(p=1/2, a, b), density ~ x^{-1/2} exp(-(a x + b / x) / 2)."""
    return np.sqrt(b / a) + 1.0 / a, np.sqrt(a / b)


def _gig_half_entropy_nolog(a, b, ex, einv):
    """Entropy of GIG(1/2, a, b) without its ``+E[log x] / 2`` term.

    The omitted term cancels against the ``-E[log x] / 2`` contributed by the
    Gaussian density the latent variance enters.
    """
    w = np.sqrt(a * b)
    log_2k = np.log(2.0) + 0.5 * np.log(np.pi / (2.0 * w)) - w
    return -0.25 * np.log(a / b) + log_2k + 0.5 * (a * ex + b * einv)


# --------------------------------------------------------------------------- priors


class _Fixed:
    def __init__(self, k):
        self.k = k

    def precision(self):
        return np.ones(self.k)

    def update(self, eb2):
        pass

    def elbo(self, eb2):
        return float(np.sum(-0.5 * _LOG2PI - 0.5 * eb2))

    def summary(self):
        return np.ones(self.k), 1.0


class _Ridge:
    def __init__(self, k, e0, e1):
        self.k, self.e0, self.e1 = k, e0, e1
        self.a = e0 + 0.5 * k
        self.b = None
        self.inv_lam = 1.0

    def precision(self):
        return np.full(self.k, self.inv_lam)

    def update(self, eb2):
        self.b = self.e1 + 0.5 * eb2.sum()
        self.inv_lam, self.log_lam = _ig_stats(self.a, self.b)

    def elbo(self, eb2):
        out = np.sum(-0.5 * _LOG2PI - 0.5 * self.log_lam - 0.5 * self.inv_lam * eb2)
        if self.e0 > 0 and self.e1 > 0:
            out += self.e0 * np.log(self.e1) - gammaln(self.e0)
        out += -(self.e0 + 1.0) * self.log_lam - self.e1 * self.inv_lam
        return float(out + _ig_entropy(self.a, self.b))

    def summary(self):
        return np.ones(self.k), self.b / (self.a - 1.0) if self.a > 1 else np.inf


class _Horseshoe:
    """Half-Cauchy scales through inverse-Gamma auxiliaries.

    psi_j | nu_j ~ IG(1/2, 1/nu_j), nu_j ~ IG(1/2, 1); same for lambda with xi.
    """

    def __init__(self, k):
        self.k = k
        self.inv_psi = np.ones(k)
        self.inv_nu = np.ones(k)
        self.inv_lam = 1.0
        self.inv_xi = 1.0

    def precision(self):
        return self.inv_psi * self.inv_lam

    def update(self, eb2):
        self.b_psi = self.inv_nu + 0.5 * self.inv_lam * eb2
        self.inv_psi, self.log_psi = _ig_stats(1.0, self.b_psi)
        self.b_nu = 1.0 + self.inv_psi
        self.inv_nu, self.log_nu = _ig_stats(1.0, self.b_nu)
        self.a_lam = 0.5 * (self.k + 1)
        self.b_lam = self.inv_xi + 0.5 * np.sum(self.inv_psi * eb2)
        self.inv_lam, self.log_lam = _ig_stats(self.a_lam, self.b_lam)
        self.b_xi = 1.0 + self.inv_lam
        self.inv_xi, self.log_xi = _ig_stats(1.0, self.b_xi)

    def elbo(self, eb2):
        out = np.sum(
            -0.5 * _LOG2PI - 0.5 * self.log_psi - 0.5 * self.log_lam - 0.5 * self.inv_psi * self.inv_lam * eb2
        )
        out += np.sum(-0.5 * self.log_nu - _LGAMMA_HALF - 1.5 * self.log_psi - self.inv_nu * self.inv_psi)
        out += np.sum(-_LGAMMA_HALF - 1.5 * self.log_nu - self.inv_nu)
        out += -0.5 * self.log_xi - _LGAMMA_HALF - 1.5 * self.log_lam - self.inv_xi * self.inv_lam
        out += -_LGAMMA_HALF - 1.5 * self.log_xi - self.inv_xi
        out += np.sum(_ig_entropy(1.0, self.b_psi)) + np.sum(_ig_entropy(1.0, self.b_nu))
        out += _ig_entropy(self.a_lam, self.b_lam) + _ig_entropy(1.0, self.b_xi)
        return float(out)

    def summary(self):
        # IG(1, b) has no finite mean; report the harmonic (1 / E[1/psi]) scales
        return 1.0 / self.inv_psi, 1.0 / self.inv_lam


class _Lasso:
    """beta_j ~ N(0, psi_j), psi_j ~ G(1, rate lambda/2), lambda ~ G(c0, d0)."""

    def __init__(self, k, c0, d0):
        self.k, self.c0, self.d0 = k, c0, d0
        self.inv_psi = np.ones(k)
        self.e_lam = 1.0

    def precision(self):
        return self.inv_psi

    def update(self, eb2):
        self.ga = self.e_lam
        self.gb = np.maximum(eb2, 1e-300)
        self.e_psi, self.inv_psi = _gig_half_moments(self.ga, self.gb)
        self.shape = self.c0 + self.k
        self.rate = self.d0 + 0.5 * self.e_psi.sum()
        self.e_lam = self.shape / self.rate
        self.log_lam = digamma(self.shape) - np.log(self.rate)

    def elbo(self, eb2):
        out = np.sum(-0.5 * _LOG2PI - 0.5 * self.inv_psi * eb2)
        out += np.sum(self.log_lam - np.log(2.0) - 0.5 * self.e_lam * self.e_psi)
        if self.c0 > 0 and self.d0 > 0:
            out += self.c0 * np.log(self.d0) - gammaln(self.c0)
        out += (self.c0 - 1.0) * self.log_lam - self.d0 * self.e_lam
        out += self.shape - np.log(self.rate) + gammaln(self.shape) + (1.0 - self.shape) * digamma(self.shape)
        out += np.sum(_gig_half_entropy_nolog(self.ga, self.gb, self.e_psi, self.inv_psi))
        return float(out)

    def summary(self):
        return self.e_psi, self.e_lam


def _prior_state(prior: ShrinkagePrior, k: int):
    h = prior.hyper
    if prior.kind == "ridge":
        return _Ridge(k, h["e0"], h["e1"])
    if prior.kind == "horseshoe":
        return _Horseshoe(k)
    if prior.kind == "lasso":
        return _Lasso(k, h["c0"], h["d0"])
    return _Fixed(k)


# --------------------------------------------------------------------------- posterior


@dataclass(frozen=True)
class BqrPosterior:
    """Variational posterior; coefficients exclude the intercept."""

    spec: QuantileSpec
    prior: ShrinkagePrior
    intercept: float
    beta_mean: np.ndarray
    beta_cov: np.ndarray
    z_params: tuple[float, np.ndarray]
    sigma_params: tuple[float, float]
    psi_means: np.ndarray
    lambda_mean: float
    elbo_trace: tuple[float, ...]
    converged: bool
    column_names: tuple[str, ...] = ()
    seed: int = 0

    @property
    def tau(self) -> float:
        return self.spec.tau

    def predict(self, x_new) -> float:
        return predict_quantile(self, x_new)


def predict_quantile(post: BqrPosterior, x_new) -> float:
    """Conditional tau-quantile at a standardized predictor vector."""
    x = np.asarray(x_new, dtype=float)
    if x.shape != post.beta_mean.shape:
        raise ValueError(f"x_new has shape {x.shape}, expected {post.beta_mean.shape}")
    return float(post.intercept + x @ post.beta_mean)


def _chol_precision(P):
    scale = max(float(np.mean(np.diag(P))), 1e-300)
    for eps in (0.0, 1e-10, 1e-8, 1e-6, 1e-4):
        try:
            return linalg.cho_factor(P + eps * scale * np.eye(len(P)), lower=True)
        except linalg.LinAlgError:
            continue
    raise NumericalError("posterior precision matrix is singular after jitter escalation")


def vb_quantile_regression(
    X,
    y,
    tau: float,
    prior: ShrinkagePrior,
    tol: float = 1e-6,
    max_iter: int = 500,
    cov: str = "auto",
    sigma_prior: tuple[float, float] = (0.0, 0.0),
    column_names=(),
    seed: int = 0,
) -> BqrPosterior:
    """Coordinate-ascent VB for the quantile regression of ``y`` on ``[1, X]``.

    Each cycle updates q(b), then every q(z_t), then q(sigma), then the prior
    scales, and appends the evidence lower bound.  Stops when the relative
    change of the bound falls below ``tol``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError("X must be T x K and y length T")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("design contains missing or non-finite values")
    spec = QuantileSpec.from_tau(tau)
    T, K = X.shape
    A = np.column_stack([np.ones(T), X])
    d = K + 1
    if cov == "auto":
        cov = "full" if K <= 2000 else "diag"
    if cov not in ("full", "diag"):
        raise ValueError("cov must be 'full', 'diag' or 'auto'")
    th, k2 = spec.theta, spec.kappa2
    a0, b0 = sigma_prior
    state = _prior_state(prior, K)

    # ridge warm start
    pen = np.ones(d)
    pen[0] = 0.0
    m = linalg.solve(A.T @ A + np.diag(pen), A.T @ y, assume_a="pos")
    resid = y - A @ m
    sig0 = max(float(np.mean(resid * (tau - (resid < 0)))), 1e-8)
    inv_sig, log_sig = 1.0 / sig0, np.log(sig0)
    # z_t / sigma = 1 at the start
    ez = np.full(T, sig0)
    einvz = np.full(T, 1.0 / sig0)
    vdiag = np.zeros(d)

    a_sig = a0 + 1.5 * T
    # an exact fit would send sigma to zero and the bound to +inf
    b_floor = SIGMA_FLOOR * a_sig * max(float(np.std(y)), 1.0)
    trace: list[float] = []
    converged = False
    for it in range(1, max_iter + 1):
        # q(b)
        prec = np.concatenate([[0.0], state.precision()])
        w = inv_sig * einvz / k2
        rhs = A.T @ (w * y - th * inv_sig / k2)
        if cov == "full":
            P = (A * w[:, None]).T @ A + np.diag(prec)
            cf = _chol_precision(P)
            m = linalg.cho_solve(cf, rhs)
            V = linalg.cho_solve(cf, np.eye(d))
            V = 0.5 * (V + V.T)
            vdiag = np.diag(V).copy()
            quad = np.sum((A @ V) * A, axis=1)
            logdet_V = -2.0 * np.sum(np.log(np.diag(cf[0])))
        else:
            G = (A * w[:, None]).T @ A
            pdiag = np.diag(G) + prec
            if np.any(pdiag <= 0):
                raise NumericalError(f"iteration {it}: nonpositive precision on the diagonal")
            for j in range(d):
                m[j] = (rhs[j] - G[j] @ m + G[j, j] * m[j]) / pdiag[j]
            vdiag = 1.0 / pdiag
            V = np.diag(vdiag)
            quad = (A**2) @ vdiag
            logdet_V = float(np.sum(np.log(vdiag)))
        fit = y - A @ m
        er2 = fit**2 + quad

        # q(z_t): GIG(1/2, az, bz_t)
        az = inv_sig * (th**2 / k2 + 2.0)
        bz = np.maximum(inv_sig * er2 / k2, 1e-300)
        ez, einvz = _gig_half_moments(az, bz)

        # q(sigma): IG(a_sig, b_sig)
        quad_lik = (er2 * einvz - 2.0 * th * fit + th**2 * ez) / (2.0 * k2)
        b_sig = max(b0 + np.sum(quad_lik + ez), b_floor)
        inv_sig, log_sig = _ig_stats(a_sig, b_sig)

        eb2 = m[1:] ** 2 + vdiag[1:]
        state.update(eb2)

        elbo = np.sum(-0.5 * np.log(2.0 * np.pi * k2) - 0.5 * log_sig - inv_sig * quad_lik)
        elbo += np.sum(-log_sig - ez * inv_sig)
        elbo += np.sum(_gig_half_entropy_nolog(az, bz, ez, einvz))
        if a0 > 0 and b0 > 0:
            elbo += a0 * np.log(b0) - gammaln(a0)
        elbo += -(a0 + 1.0) * log_sig - b0 * inv_sig + _ig_entropy(a_sig, b_sig)
        elbo += 0.5 * logdet_V + 0.5 * d * (1.0 + _LOG2PI)
        elbo += state.elbo(eb2)
        elbo = float(elbo)
        if not np.isfinite(elbo):
            raise NumericalError(f"non-finite evidence lower bound at iteration {it}")
        trace.append(elbo)
        if it > 1 and abs(elbo - trace[-2]) <= tol * max(abs(trace[-2]), 1e-300):
            converged = True
            break

    psi, lam = state.summary()
    return BqrPosterior(
        spec=spec,
        prior=prior,
        intercept=float(m[0]),
        beta_mean=m[1:].copy(),
        beta_cov=V[1:, 1:].copy(),
        z_params=(float(az), bz.copy()),
        sigma_params=(float(a_sig), float(b_sig)),
        psi_means=np.asarray(psi, dtype=float),
        lambda_mean=float(lam),
        elbo_trace=tuple(trace),
        converged=converged,
        column_names=tuple(column_names),
        seed=seed,
    )


def fit_bqr(design, tau: float, prior: ShrinkagePrior, tol: float = 1e-6, max_iter: int = 500, seed: int = 0, cov: str = "auto") -> BqrPosterior:
    """Fit on a :class:`~tailcast.ingest.DesignMatrix` (or an ``(X, y)`` pair)."""
    if isinstance(design, tuple):
        X, y = design
        names = ()
    else:
        X, y, names = design.X, design.y, design.column_names
    return vb_quantile_regression(X, y, tau, prior, tol=tol, max_iter=max_iter, cov=cov, column_names=names, seed=seed)
