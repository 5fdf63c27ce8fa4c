"""Correlated topic model fit by variational EM.

Per document ``d`` the variational family is a diagonal Gaussian over the
``K - 1`` free logistic-normal coordinates ``eta_d`` (the last coordinate is
pinned at 0).  The expected log normalizer is bounded with the auxiliary
``zeta_d``, whose optimum ``sum_k exp(eta_k + var_k / 2)`` is substituted in
closed form, and the token-level topic assignments are maximized out
analytically, leaving for each document

    sum_v n_dv log sum_k exp(eta_k) beta_kv  -  N_d log sum_k exp(eta_k + var_k / 2)
    + E_q[log N(eta | mu, Sigma)] + entropy(q(eta)).

The E-step maximizes this bound per document with a batched L-BFGS
(warm-started from the previous iteration); the
M-step updates ``beta`` from expected word-topic counts and ``mu, Sigma`` in
closed form.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.special import softmax

from .errors import NumericalError

__all__ = [
    "CtmModel",
    "DocPosterior",
    "TopicSeries",
    "fit_ctm",
    "infer_theta",
    "infer_corpus",
    "aggregate_monthly",
    "save_model",
    "load_model",
    "align_topics",
]

log = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
ELBO_SLACK = 1e-6
SIGMA_JITTER = 1e-8
INIT_UNIGRAM_WEIGHT = 0.5
BETA_FLOOR = 1e-300


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class CtmModel:
    beta: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    vocab: tuple[str, ...]
    seed: int = 0
    gamma: float = 0.1
    elbo_trace: tuple[float, ...] = ()
    converged: bool = False
    train_eta_mean: np.ndarray | None = field(default=None, repr=False)
    train_eta_var: np.ndarray | None = field(default=None, repr=False)

    @property
    def K(self) -> int:
        return self.beta.shape[0]

    @property
    def V(self) -> int:
        return self.beta.shape[1]

    def prior_theta(self) -> np.ndarray:
        return softmax(np.append(self.mu, 0.0))


@dataclass(frozen=True)
class DocPosterior:
    eta_mean: np.ndarray
    eta_var: np.ndarray
    zeta: float
    theta: np.ndarray
    prior_fallback: bool = False


@dataclass(frozen=True)
class TopicSeries:
    """Monthly mean topic proportions (rows ``YYYY-MM``) and months without documents."""

    frame: pd.DataFrame
    missing_months: tuple[pd.Period, ...] = ()

    def to_csv(self, path) -> None:
        out = self.frame.copy()
        out.index = out.index.astype(str)
        out.index.name = "month"
        out.to_csv(path, float_format="%.17g")

    @classmethod
    def read_csv(cls, path) -> "TopicSeries":
        frame = pd.read_csv(path, index_col=0, dtype={0: str})
        frame.index = pd.PeriodIndex(frame.index, freq="M")
        return cls(frame=frame)


# --------------------------------------------------------------------------- per-document bound


class _CorpusBound:
    """Per-document bounds and gradients for a whole corpus at once.

    Parameters are rows ``[eta (K-1), log var (K-1)]``; sums over a document's
    words run over the nonzero entries of the count matrix.
    """

    def __init__(self, C: sparse.csr_matrix, beta, mu, sigma_inv):
        coo = C.tocoo()
        self.D, self.V = C.shape
        self.rows, self.cols, self.cnt = coo.row, coo.col, coo.data
        nnz = len(self.rows)
        self.R = sparse.csr_matrix((np.ones(nnz), (self.rows, np.arange(nnz))), shape=(self.D, nnz))
        self.W = sparse.csr_matrix((np.ones(nnz), (self.cols, np.arange(nnz))), shape=(self.V, nnz))
        self.N = np.asarray(C.sum(axis=1)).ravel()
        self.betaT = np.asarray(beta).T
        self.mu = mu
        self.Si = sigma_inv
        self.Si_diag = np.diag(sigma_inv)
        self.k1 = len(mu)

    def _weights(self, eta):
        eta_full = np.column_stack([eta, np.zeros(len(eta))])
        m = eta_full.max(axis=1)
        ew = np.exp(eta_full - m[:, None])
        prod = ew[self.rows] * self.betaT[self.cols]
        return m, prod, prod.sum(axis=1)

    def value_and_grad(self, P):
        """Bound (length D) and its gradient (D x 2(K-1))."""
        k1 = self.k1
        eta, u = P[:, :k1], P[:, k1:]
        var = np.exp(u)
        m, prod, s = self._weights(eta)
        t1 = np.bincount(self.rows, self.cnt * (np.log(s) + m[self.rows]), minlength=self.D)
        g1 = self.R @ (prod * (self.cnt / s)[:, None])

        a = np.column_stack([eta + 0.5 * var, np.zeros(len(eta))])
        amax = a.max(axis=1)
        ea = np.exp(a - amax[:, None])
        z = ea.sum(axis=1)
        lse = np.log(z) + amax
        omega = ea[:, :k1] / z[:, None]

        diff = eta - self.mu
        Sd = diff @ self.Si
        f = t1 - self.N * lse - 0.5 * np.sum(diff * Sd, axis=1) - 0.5 * var @ self.Si_diag + 0.5 * u.sum(axis=1)
        g_eta = g1[:, :k1] - self.N[:, None] * omega - Sd
        g_u = (-0.5 * self.N[:, None] * omega - 0.5 * self.Si_diag) * var + 0.5
        return f, np.hstack([g_eta, g_u])

    def word_topic_counts(self, P):
        """Expected topic-word counts, K x V."""
        _, prod, s = self._weights(P[:, : self.k1])
        return (self.W @ (prod * (self.cnt / s)[:, None])).T


def _maximize_batched(fg, X0, max_iter=200, gtol=1e-6, memory=8):
    """Row-wise L-BFGS ascent of a separable objective.

    ``fg(X)`` returns per-row values and gradients.  A row only moves on a
    step satisfying the Armijo condition, so no row ever gets worse.
    """
    X = np.array(X0, dtype=float)
    D, n = X.shape
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        f, g = fg(X)
    F, G = -f, -g
    S = np.zeros((memory, D, n))
    Y = np.zeros((memory, D, n))
    rho = np.zeros((memory, D))
    active = np.ones(D, dtype=bool)
    step0 = 1.0 / np.maximum(1.0, np.abs(G).max(axis=1))
    for it in range(max_iter):
        active &= np.abs(G).max(axis=1) > gtol
        if not active.any():
            break
        # two-loop recursion, newest pair first
        q = G.copy()
        alphas = []
        for j in range(memory):
            slot = (it - 1 - j) % memory
            a = rho[slot] * np.sum(S[slot] * q, axis=1)
            q -= a[:, None] * Y[slot]
            alphas.append((slot, a))
        last = (it - 1) % memory
        yy = np.sum(Y[last] ** 2, axis=1)
        gamma = np.where((rho[last] > 0) & (yy > 0), 1.0 / np.maximum(rho[last] * yy, 1e-300), step0)
        r = gamma[:, None] * q
        for slot, a in reversed(alphas):
            b = rho[slot] * np.sum(Y[slot] * r, axis=1)
            r += (a - b)[:, None] * S[slot]
        p = -r
        slope = np.sum(G * p, axis=1)
        bad = slope >= 0
        if bad.any():
            p[bad] = -step0[bad, None] * G[bad]
            slope[bad] = np.sum(G[bad] * p[bad], axis=1)
            rho[:, bad] = 0.0

        t = np.ones(D)
        accepted = ~active
        Xn, Fn, Gn = X.copy(), F.copy(), G.copy()
        for _ in range(40):
            trial = ~accepted
            if not trial.any():
                break
            cand = X.copy()
            cand[trial] = X[trial] + t[trial, None] * p[trial]
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                fc, gc = fg(cand)
            Fc = -fc
            ok = trial & np.isfinite(Fc) & (Fc <= F + 1e-4 * t * slope) & np.all(np.isfinite(gc), axis=1)
            Xn[ok], Fn[ok], Gn[ok] = cand[ok], Fc[ok], -gc[ok]
            accepted |= ok
            t[trial & ~ok] *= 0.5
        stuck = ~accepted
        active &= ~stuck

        slot = it % memory
        s_new, y_new = Xn - X, Gn - G
        sy = np.sum(s_new * y_new, axis=1)
        good = sy > 1e-12
        S[slot], Y[slot] = s_new, y_new
        rho[slot] = np.where(good, 1.0 / np.where(good, sy, 1.0), 0.0)
        small = np.abs(F - Fn) <= 1e-12 * np.maximum(1.0, np.abs(F))
        X, F, G = Xn, Fn, Gn
        active &= ~small
    return X, -F


def _posterior(params, k1, fallback=False) -> DocPosterior:
    eta, var = params[:k1], np.exp(params[k1:])
    zeta = float(np.sum(np.exp(eta + 0.5 * var)) + 1.0)
    return DocPosterior(
        eta_mean=eta.copy(),
        eta_var=var.copy(),
        zeta=zeta,
        theta=softmax(np.append(eta, 0.0)),
        prior_fallback=fallback,
    )


# --------------------------------------------------------------------------- fitting


def _as_csr(dtm):
    counts = getattr(dtm, "counts", dtm)
    return sparse.csr_matrix(counts, dtype=float)


@dataclass
class _EmState:
    beta: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    params: np.ndarray
    trace: list = field(default_factory=list)
    converged: bool = False


def _initial_state(C, K, gamma, rng) -> _EmState:
    D, V = C.shape
    beta = rng.dirichlet(np.full(V, gamma), size=K)
    # blend with the corpus unigram so no observed word starts at zero mass
    unigram = np.asarray(C.sum(axis=0)).ravel()
    beta = (1.0 - INIT_UNIGRAM_WEIGHT) * beta + INIT_UNIGRAM_WEIGHT * unigram / unigram.sum()
    beta = np.maximum(beta, BETA_FLOOR)
    beta /= beta.sum(axis=1, keepdims=True)
    return _EmState(beta=beta, mu=np.zeros(K - 1), sigma=np.eye(K - 1), params=np.zeros((D, 2 * (K - 1))))


def _run_em(C, st: _EmState, n_iter: int, tol: float) -> _EmState:
    D = C.shape[0]
    k1 = len(st.mu)
    for _ in range(n_iter):
        it = len(st.trace) + 1
        sigma_inv = np.linalg.inv(st.sigma)
        _, logdet = np.linalg.slogdet(st.sigma)
        bound = _CorpusBound(C, st.beta, st.mu, sigma_inv)
        st.params, per_doc = _maximize_batched(bound.value_and_grad, st.params)
        total = float(per_doc.sum() + D * (-0.5 * logdet + 0.5 * k1))
        if not np.isfinite(total):
            raise NumericalError(f"non-finite evidence lower bound at EM iteration {it}")
        if st.trace and total < st.trace[-1] - ELBO_SLACK * max(1.0, abs(st.trace[-1])):
            raise NumericalError(f"evidence lower bound decreased at EM iteration {it}: {st.trace[-1]} -> {total}")
        st.trace.append(total)
        log.debug("ctm iteration %d elbo %.6f", it, total)

        word_topic = bound.word_topic_counts(st.params)
        beta = np.maximum(word_topic / word_topic.sum(axis=1, keepdims=True), BETA_FLOOR)
        st.beta = beta / beta.sum(axis=1, keepdims=True)
        eta, var = st.params[:, :k1], np.exp(st.params[:, k1:])
        st.mu = eta.mean(axis=0)
        dev = eta - st.mu
        sigma = (dev.T @ dev + np.diag(var.sum(axis=0))) / D
        sigma = 0.5 * (sigma + sigma.T)
        if np.linalg.eigvalsh(sigma)[0] < SIGMA_JITTER:
            sigma = sigma + SIGMA_JITTER * np.eye(k1)
        st.sigma = sigma

        if len(st.trace) > 1 and abs(st.trace[-1] - st.trace[-2]) <= tol * abs(st.trace[-2]):
            st.converged = True
            break
    return st


def fit_ctm(
    dtm,
    K: int = 80,
    seed: int = 0,
    tol: float = 1e-5,
    max_iter: int = 200,
    gamma: float = 0.1,
    vocab: Sequence[str] | None = None,
    n_starts: int = 4,
    screen_iter: int = 10,
) -> CtmModel:
    """Variational EM for the correlated topic model.

    Each of ``n_starts`` candidates draws ``beta`` from per-topic
    Dirichlet(gamma) rows (seeded from ``seed``), with ``mu = 0`` and
    ``Sigma = I``, and runs ``screen_iter`` EM iterations.  The candidate with
    the highest bound is run on until the relative change of the bound drops
    below ``tol`` or ``max_iter`` total iterations.
    """
    if K < 2:
        raise ValueError(f"K must be at least 2, got {K}")
    if n_starts < 1:
        raise ValueError("n_starts must be positive")
    C = _as_csr(dtm)
    D, V = C.shape
    if D == 0:
        raise ValueError("document-term matrix has no documents")
    if K - 1 > D:
        raise ValueError(f"K - 1 = {K - 1} exceeds the number of documents {D}")
    lengths = np.asarray(C.sum(axis=1)).ravel()
    if np.any(lengths <= 0):
        raise ValueError("document-term matrix contains empty documents")
    if vocab is None:
        vocab = getattr(dtm, "vocab", tuple(f"w{j}" for j in range(V)))
    k1 = K - 1

    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_starts)]
    if n_starts == 1:
        best = _run_em(C, _initial_state(C, K, gamma, rngs[0]), max_iter, tol)
    else:
        candidates = [_run_em(C, _initial_state(C, K, gamma, r), min(screen_iter, max_iter), tol) for r in rngs]
        best = max(candidates, key=lambda st: st.trace[-1])
        if not best.converged:
            best = _run_em(C, best, max_iter - len(best.trace), tol)

    return CtmModel(
        beta=_frozen(best.beta),
        mu=_frozen(best.mu),
        sigma=_frozen(best.sigma),
        vocab=tuple(vocab),
        seed=seed,
        gamma=gamma,
        elbo_trace=tuple(best.trace),
        converged=best.converged,
        train_eta_mean=_frozen(best.params[:, :k1]),
        train_eta_var=_frozen(np.exp(best.params[:, k1:])),
    )


def train_posteriors(model: CtmModel) -> list[DocPosterior]:
    k1 = model.K - 1
    return [
        _posterior(np.concatenate([e, np.log(v)]), k1)
        for e, v in zip(model.train_eta_mean, model.train_eta_var)
    ]


def infer_theta(model: CtmModel, doc) -> DocPosterior:
    """Topic proportions of a held-out document with the model parameters frozen."""
    if sparse.issparse(doc):
        doc = np.asarray(doc.todense()).ravel()
    doc = np.asarray(doc, dtype=float).ravel()
    if doc.shape[0] != model.V:
        raise ValueError(f"document has length {doc.shape[0]}, vocabulary has {model.V} terms")
    k1 = model.K - 1
    start = np.concatenate([model.mu, np.log(np.diag(model.sigma))])
    words = np.flatnonzero(doc > 0)
    if words.size == 0:
        return _posterior(start, k1, fallback=True)
    bound = _CorpusBound(sparse.csr_matrix(doc[None, :]), model.beta, model.mu, np.linalg.inv(model.sigma))
    x, _ = _maximize_batched(bound.value_and_grad, start[None, :])
    return _posterior(x[0], k1)


def infer_corpus(model: CtmModel, dtm) -> list[DocPosterior]:
    """Held-out inference for every row of ``dtm``; empty rows fall back to the prior."""
    C = _as_csr(dtm)
    k1 = model.K - 1
    start = np.concatenate([model.mu, np.log(np.diag(model.sigma))])
    lengths = np.asarray(C.sum(axis=1)).ravel()
    out = [_posterior(start, k1, fallback=True) for _ in range(C.shape[0])]
    rows = np.flatnonzero(lengths > 0)
    if rows.size:
        bound = _CorpusBound(C[rows], model.beta, model.mu, np.linalg.inv(model.sigma))
        X, _ = _maximize_batched(bound.value_and_grad, np.tile(start, (rows.size, 1)))
        for r, x in zip(rows, X):
            out[r] = _posterior(x, k1)
    return out


def aggregate_monthly(posteriors: Sequence[DocPosterior], dates, months=None) -> TopicSeries:
    """Unweighted monthly mean of document topic proportions.

    ``months``, when given, is the calendar to report against; months in it
    without any document are listed in ``missing_months``.
    """
    if len(posteriors) != len(dates):
        raise ValueError("need one date per posterior")
    if not posteriors:
        raise ValueError("no documents to aggregate")
    theta = np.vstack([p.theta for p in posteriors])
    K = theta.shape[1]
    period = pd.PeriodIndex([pd.Period(d, freq="M") for d in dates], freq="M")
    frame = pd.DataFrame(theta, columns=[f"topic_{k + 1}" for k in range(K)])
    monthly = frame.groupby(period).mean().sort_index()
    monthly.index = pd.PeriodIndex(monthly.index, freq="M")
    if months is None:
        months = pd.period_range(monthly.index[0], monthly.index[-1], freq="M")
    missing = tuple(m for m in months if m not in monthly.index)
    return TopicSeries(frame=monthly, missing_months=missing)


def align_topics(fitted_beta, reference_beta) -> list[int]:
    """Greedy one-to-one matching of fitted topics to reference topics by
    total-variation distance; returns, per reference topic, the fitted index."""
    tv = 0.5 * np.abs(np.asarray(reference_beta)[:, None, :] - np.asarray(fitted_beta)[None, :, :]).sum(axis=2)
    match = [-1] * tv.shape[0]
    used_ref, used_fit = set(), set()
    for flat in np.argsort(tv, axis=None, kind="stable"):
        r, f = divmod(int(flat), tv.shape[1])
        if r in used_ref or f in used_fit:
            continue
        match[r] = f
        used_ref.add(r)
        used_fit.add(f)
    return match


# --------------------------------------------------------------------------- persistence


def save_model(model: CtmModel, path) -> None:
    payload = {
        "format_version": MODEL_FORMAT_VERSION,
        "K": model.K,
        "seed": model.seed,
        "gamma": model.gamma,
        "vocab": list(model.vocab),
        "beta": model.beta.tolist(),
        "mu": model.mu.tolist(),
        "sigma": model.sigma.tolist(),
        "elbo_trace": list(model.elbo_trace),
        "converged": model.converged,
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_model(path) -> CtmModel:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {payload.get('format_version')!r}")
    return CtmModel(
        beta=_frozen(payload["beta"]),
        mu=_frozen(payload["mu"]),
        sigma=_frozen(payload["sigma"]),
        vocab=tuple(payload["vocab"]),
        seed=payload["seed"],
        gamma=payload["gamma"],
        elbo_trace=tuple(payload["elbo_trace"]),
        converged=payload["converged"],
    )
