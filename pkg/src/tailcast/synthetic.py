"""Synthetic data: a macro panel with a tail-nonlinear target and a dated news corpus.

The target's conditional quantiles are linear in the driver at the median
and curve outward in the tails:

    y_t = 0.5 x_{t-1} + 0.3 f_{t-1} + (0.4 + 0.6 x_{t-1}^2) e_t,   e_t ~ N(0, 1)

where ``x`` is a published-with-lag macro series and ``f`` a financial one.
The corpus tilts its topic mix toward topic 0 when ``x`` is high, so the
monthly topic shares carry information about the driver.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd
import yaml
from scipy.special import softmax
from scipy.stats import norm

__all__ = [
    "TARGET_ID",
    "tail_dgp",
    "tail_quantile",
    "make_panel",
    "make_corpus",
    "planted_topic_corpus",
    "write_panel_csv",
    "write_synthetic_dataset",
]

TARGET_ID = "TARGET"
_SYLLABLES = ("ba", "ko", "ri", "mu", "te", "sa", "lo", "ni", "pe", "du", "ga", "vi")


def tail_dgp(x, f, e):
    return 0.5 * x + 0.3 * f + (0.4 + 0.6 * x**2) * e


def tail_quantile(x, f, tau):
    """True conditional quantile of the target given the lagged drivers."""
    return 0.5 * x + 0.3 * f + (0.4 + 0.6 * np.asarray(x) ** 2) * norm.ppf(tau)


def _ar1(rng, n, phi, burn=50):
    e = rng.normal(size=n + burn) * np.sqrt(1 - phi**2)
    out = np.zeros(n + burn)
    for t in range(1, n + burn):
        out[t] = phi * out[t - 1] + e[t]
    return out[burn:]


def make_panel(n_months: int = 240, start: str = "1985-01", n_noise: int = 4, seed: int = 0):
    """Final-vintage levels and their specs.

    Returns ``(frame, specs)`` where specs maps id -> (transform code, financial flag).
    """
    rng = np.random.default_rng(seed)
    idx = pd.period_range(start, periods=n_months, freq="M")
    x = _ar1(rng, n_months, 0.7)
    f = _ar1(rng, n_months, 0.3)
    e = rng.normal(size=n_months)
    y = np.zeros(n_months)
    y[1:] = tail_dgp(x[:-1], f[:-1], e[1:])
    cols = {TARGET_ID: y, "DRIVER": x, "FIN1": f}
    specs = {TARGET_ID: (1, False), "DRIVER": (1, False), "FIN1": (1, True)}
    for j in range(n_noise):
        # growth-rate series stored as positive levels
        growth = 0.002 + 0.01 * _ar1(rng, n_months, 0.5)
        cols[f"MACRO{j + 1}"] = 100.0 * np.exp(np.cumsum(growth))
        specs[f"MACRO{j + 1}"] = (5, False)
    cols["FIN2"] = np.cumsum(rng.normal(size=n_months))
    specs["FIN2"] = (2, True)
    return pd.DataFrame(cols, index=idx), specs


def _vocabulary(V: int) -> list[str]:
    words = []
    n = len(_SYLLABLES)
    for i in range(V):
        a, b, c = i // (n * n), (i // n) % n, i % n
        words.append(_SYLLABLES[a] + _SYLLABLES[b] + _SYLLABLES[c])
    return words


def planted_topic_corpus(D: int = 500, V: int = 200, K: int = 3, doc_len: int = 100, seed: int = 0,
                         concentration: float = 0.05):
    """Documents drawn from the logistic-normal topic model with known parameters.

    Returns ``(counts, beta, mu, sigma)`` with ``counts`` a dense D x V array.
    """
    rng = np.random.default_rng(seed)
    beta = rng.dirichlet(np.full(V, concentration), size=K)
    mu = np.zeros(K - 1)
    sigma = 0.5 * np.eye(K - 1) + 0.5
    counts = np.zeros((D, V), dtype=np.int64)
    for d in range(D):
        eta = rng.multivariate_normal(mu, sigma)
        theta = softmax(np.append(eta, 0.0))
        words = rng.choice(V, size=doc_len, p=theta @ beta)
        counts[d] = np.bincount(words, minlength=V)
    return counts, beta, mu, sigma


def make_corpus(driver: pd.Series, docs_per_month: int = 8, doc_len: int = 30, K: int = 4, V: int = 120,
                seed: int = 0) -> list[dict]:
    """Corpus records whose topic-0 share rises with the driver in the same month."""
    rng = np.random.default_rng(seed)
    vocab = _vocabulary(V)
    block = V // K
    beta = np.full((K, V), 0.05 / V)
    for k in range(K):
        beta[k, k * block : (k + 1) * block] += rng.dirichlet(np.ones(block))
    beta /= beta.sum(axis=1, keepdims=True)
    fillers = ["the", "and", "of", "percent", "2019"]
    records = []
    for month, xv in driver.items():
        for j in range(docs_per_month):
            eta = rng.normal(0.0, 0.5, size=K)
            eta[0] += 1.0 * xv
            theta = softmax(eta)
            words = rng.choice(V, size=doc_len, p=theta @ beta)
            toks = [vocab[w] for w in words]
            toks.insert(int(rng.integers(0, len(toks))), fillers[int(rng.integers(0, len(fillers)))])
            day = 1 + int(rng.integers(0, 28))
            records.append({
                "id": f"{month}-{j:03d}",
                "date": f"{month}-{day:02d}",
                "source": "synthetic",
                "text": " ".join(toks).capitalize() + ".",
            })
    return records


def write_panel_csv(frame: pd.DataFrame, specs: dict, path) -> None:
    ids = list(frame.columns)
    lines = [",".join(["date", *ids])]
    lines.append(",".join(["transform", *(str(specs[c][0]) for c in ids)]))
    lines.append(",".join(["financial", *("1" if specs[c][1] else "0" for c in ids)]))
    for p, row in zip(frame.index, frame.to_numpy()):
        lines.append(",".join([str(p), *(f"{v:.12g}" for v in row)]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_synthetic_dataset(directory, seed: int = 0, n_months: int = 240) -> dict:
    """Write panel.csv, corpus.jsonl and config.yaml; returns the config mapping."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    frame, specs = make_panel(n_months=n_months, seed=seed)
    write_panel_csv(frame, specs, out / "panel.csv")
    records = make_corpus(frame["DRIVER"], seed=seed + 1)
    with open(out / "corpus.jsonl", "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    last = frame.index[-1]
    eval_end = last - 1
    eval_start = eval_end - 11
    config = {
        "paths": {
            "panel": "panel.csv",
            "corpus": "corpus.jsonl",
            "output_dir": "out",
        },
        "backtest": {
            "targets": [TARGET_ID],
            "estimation_start": str(frame.index[0] + 14),
            "eval_start": str(eval_start),
            "eval_end": str(eval_end),
            "horizons": [0, 1],
            "predictor_modes": ["fred", "both"],
            "models": ["bqr_ridge", "bqr_horseshoe", "bqr_lasso", "gpqr", "qrf", "ar1"],
        },
        "text": {"v_max": 100, "cutoff": str(eval_start - 1)},
        "ctm": {"K": 4, "tol": 1e-4, "max_iter": 100},
        "models": {"qrf": {"B": 100}},
        "seed": seed,
    }
    (out / "config.yaml").write_text(yaml.safe_dump(config, sort_keys=True), encoding="utf-8")
    return config
