"""Recursive expanding-window backtest.

For every origin month in the evaluation window, every target, predictor mode
and horizon, the design matrix is re-assembled from the origin vintage, each
model is refit, its quantile forecasts over the grid are (optionally) sorted,
and scored against the realized value.
"""
from __future__ import annotations

import logging
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import pandas as pd

from .bqr import fit_bqr, make_prior, predict_quantile
from .evaluation import QUANTILE_GRID, dm_test, fit_ar1, quantile_score, rearrange_quantiles
from .gpqr import fit_gpqr, predict_gpqr
from .ingest import PREDICTOR_MODES, VintagePanel, assemble_design, realized_value
from .qrf import estimate_quantiles, grow_forest

__all__ = [
    "MODELS",
    "BENCHMARK",
    "BacktestConfig",
    "BacktestReport",
    "forecast_quantiles",
    "run_backtest",
    "aggregate_scores",
    "model_seed",
]

log = logging.getLogger(__name__)

BENCHMARK = "ar1"
MODELS = ("bqr_ridge", "bqr_horseshoe", "bqr_lasso", "gpqr", "qrf", BENCHMARK)
DM_LEVEL = 0.10

RECORD_COLUMNS = [
    "model", "variable", "mode", "h", "tau", "origin", "date", "forecast", "realized", "score", "error",
]


@dataclass(frozen=True)
class BacktestConfig:
    targets: tuple[str, ...]
    eval_start: str
    eval_end: str
    estimation_start: str | None = None
    quantile_grid: tuple[float, ...] = QUANTILE_GRID
    horizons: tuple[int, ...] = (0, 1)
    models: tuple[str, ...] = MODELS
    predictor_modes: tuple[str, ...] = ("fred",)
    n_lags: int = 12
    rearrange: bool = True
    realization: str = "final"
    seed: int = 0
    model_params: Mapping[str, Mapping] = field(default_factory=dict)

    def __post_init__(self):
        start, end = pd.Period(self.eval_start, freq="M"), pd.Period(self.eval_end, freq="M")
        if start > end:
            raise ValueError(f"eval_start {self.eval_start} is after eval_end {self.eval_end}")
        if self.estimation_start is not None and pd.Period(self.estimation_start, freq="M") >= start:
            raise ValueError("estimation_start must precede eval_start")
        grid = tuple(float(t) for t in self.quantile_grid)
        if any(not 0 < t < 1 for t in grid) or list(grid) != sorted(set(grid)):
            raise ValueError("quantile_grid must be strictly increasing inside (0, 1)")
        if set(self.horizons) - {0, 1}:
            raise ValueError("horizons must be drawn from {0, 1}")
        unknown = set(self.models) - set(MODELS)
        if unknown:
            raise ValueError(f"unknown models {sorted(unknown)}")
        if set(self.predictor_modes) - set(PREDICTOR_MODES):
            raise ValueError(f"predictor modes must be drawn from {PREDICTOR_MODES}")
        if self.realization not in ("final", "first_release"):
            raise ValueError("realization must be 'final' or 'first_release'")

    @property
    def origins(self) -> pd.PeriodIndex:
        return pd.period_range(self.eval_start, self.eval_end, freq="M")


@dataclass(frozen=True)
class BacktestReport:
    records: pd.DataFrame
    aggregate: pd.DataFrame

    @property
    def failures(self) -> pd.DataFrame:
        return self.records[self.records["error"] != ""]


def model_seed(base: int, *key) -> int:
    """Deterministic per-fit seed from the run seed and a descriptive key."""
    tag = zlib.crc32("|".join(str(k) for k in key).encode())
    return int(np.random.SeedSequence([base, tag]).generate_state(1)[0])


def _lag1_column(design) -> int:
    for j, name in enumerate(design.column_names):
        if name.endswith("_lag1"):
            return j
    raise ValueError("design has no first-lag column for the AR(1) benchmark")


def forecast_quantiles(model: str, design, taus: Sequence[float], seed: int = 0, params: Mapping | None = None) -> np.ndarray:
    """Quantile forecasts at ``design.x_new`` for each level in ``taus``."""
    params = dict(params or {})
    taus = [float(t) for t in taus]
    if model.startswith("bqr_"):
        kind = model[4:]
        prior = make_prior(kind, **params.pop("hyper", {}))
        return np.array([predict_quantile(fit_bqr(design, t, prior, seed=seed, **params), design.x_new) for t in taus])
    if model == "gpqr":
        return np.array([predict_gpqr(fit_gpqr(design, t, seed=seed, **params), design.x_new) for t in taus])
    if model == "qrf":
        forest = grow_forest(design, seed=seed, **params)
        return estimate_quantiles(forest, design.x_new, taus)
    if model == BENCHMARK:
        j = _lag1_column(design)
        lag = design.X_raw[:, j]
        return np.array([fit_ar1(design.y, lag, t).predict(design.x_new_raw[j]) for t in taus])
    raise ValueError(f"unknown model {model!r}")


@dataclass(frozen=True)
class _Task:
    variable: str
    mode: str
    h: int
    origin: pd.Period


def _run_task(task: _Task, panel: VintagePanel, text, config: BacktestConfig) -> list[dict]:
    taus = config.quantile_grid
    date = task.origin + task.h
    realized = realized_value(panel, task.variable, date, config.realization)
    base = dict(variable=task.variable, mode=task.mode, h=task.h, origin=str(task.origin), date=str(date), realized=realized)
    try:
        design = assemble_design(
            panel, text if task.mode != "fred" else None, task.variable, task.origin, task.h,
            task.mode, n_lags=config.n_lags, estimation_start=config.estimation_start,
        )
    except (ValueError, LookupError) as exc:
        log.warning("design failed for %s: %s", task, exc)
        return [dict(base, model=m, tau=t, forecast=np.nan, score=np.nan, error=f"design: {exc}")
                for m in config.models for t in taus]
    rows = []
    for m in config.models:
        seed = model_seed(config.seed, m, task.variable, task.mode, task.h, task.origin)
        error = ""
        try:
            q = forecast_quantiles(m, design, taus, seed=seed, params=config.model_params.get(m))
            if not np.all(np.isfinite(q)):
                raise FloatingPointError("non-finite forecast")
            if config.rearrange:
                q = rearrange_quantiles(q)
        except Exception as exc:  # one failed fit must not stop the run
            log.warning("%s failed at %s: %s", m, task, exc)
            q = np.full(len(taus), np.nan)
            error = f"{type(exc).__name__}: {exc}"
        for t, f in zip(taus, q):
            score = quantile_score(realized, f, t) if np.isfinite(f) and np.isfinite(realized) else np.nan
            rows.append(dict(base, model=m, tau=t, forecast=float(f), score=score, error=error))
    return rows


def _run_chunk(args):
    tasks, panel, text, config = args
    out = []
    for t in tasks:
        out.extend(_run_task(t, panel, text, config))
    return out


def run_backtest(
    config: BacktestConfig,
    panel: VintagePanel,
    text: pd.DataFrame | None = None,
    threads: int = 1,
    progress: Callable[[str], None] | None = None,
) -> BacktestReport:
    if any(m != "fred" for m in config.predictor_modes) and text is None:
        raise ValueError("text predictors are required for predictor modes 'text' and 'both'")
    tasks = [
        _Task(v, mode, h, o)
        for v in config.targets
        for mode in config.predictor_modes
        for h in config.horizons
        for o in config.origins
    ]
    rows: list[dict] = []
    if threads > 1 and len(tasks) > 1:
        chunks = [tasks[i::threads] for i in range(threads)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for part in pool.map(_run_chunk, [(c, panel, text, config) for c in chunks]):
                rows.extend(part)
    else:
        for i, t in enumerate(tasks, 1):
            rows.extend(_run_task(t, panel, text, config))
            if progress:
                progress(f"{i}/{len(tasks)} {t.variable} {t.mode} h={t.h} {t.origin}")
    records = pd.DataFrame(rows, columns=RECORD_COLUMNS)
    records = records.sort_values(["model", "variable", "mode", "h", "tau", "origin"], kind="stable").reset_index(drop=True)
    return BacktestReport(records=records, aggregate=aggregate_scores(records))


def aggregate_scores(records: pd.DataFrame, benchmark: str = BENCHMARK) -> pd.DataFrame:
    """Mean scores, ratios to the benchmark and one-sided DM tests per cell.

    Ratios and tests use the dates where both the model and the benchmark
    produced a score.
    """
    keys = ["variable", "mode", "h", "tau"]
    out = []
    for cell, grp in records.groupby(keys, sort=True):
        bench = grp[grp["model"] == benchmark].set_index("date")["score"]
        for model, g in grp.groupby("model", sort=True):
            s = g.set_index("date")["score"]
            row = dict(zip(keys, cell), model=model, n=int(s.notna().sum()), mean_qs=float(s.mean()) if s.notna().any() else np.nan)
            rel = dm_stat = dm_p = np.nan
            if len(bench):
                both = pd.concat([s, bench], axis=1, keys=["m", "b"]).dropna()
                if len(both) and both["b"].mean() > 0:
                    rel = float(both["m"].mean() / both["b"].mean())
                if len(both) >= 10:
                    res = dm_test(both["m"].to_numpy(), both["b"].to_numpy(), h=int(cell[2]))
                    dm_stat, dm_p = res.stat, res.p_value
            row.update(rel_qs=rel, dm_stat=dm_stat, dm_p=dm_p, significant=bool(np.isfinite(dm_p) and dm_p < DM_LEVEL))
            out.append(row)
    cols = ["model", *keys, "n", "mean_qs", "rel_qs", "dm_stat", "dm_p", "significant"]
    return pd.DataFrame(out, columns=cols)
