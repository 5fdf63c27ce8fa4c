import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

import tailcast.backtest as bt
from conftest import TARGET_ID
from tailcast.evaluation import dm_test, fit_ar1, fit_ar1_benchmark, quantile_score, quantreg_lp, rearrange_quantiles
from tailcast.ingest import realized_value

finite = st.floats(-1e6, 1e6)
taus = st.floats(0.001, 0.999)


def test_quantile_score_examples():
    assert quantile_score(1.3, 1.3, 0.3) == 0
    assert quantile_score(2.0, 1.0, 0.9) == pytest.approx(0.9)
    assert quantile_score(0.0, 1.0, 0.9) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        quantile_score(0.0, 1.0, 1.0)


@given(finite, finite, taus)
def test_quantile_score_nonnegative(y, q, tau):
    s = quantile_score(y, q, tau)
    assert s >= 0
    assert s == (y - q) * (tau - (1.0 if y <= q else 0.0))


def test_pinball_minimizer_is_empirical_quantile():
    y = np.random.default_rng(0).standard_t(5, size=10_000)
    grid = np.linspace(-3, 3, 1201)
    for tau in (0.05, 0.5, 0.9):
        losses = [quantile_score(y, c, tau).mean() for c in grid]
        assert abs(grid[int(np.argmin(losses))] - np.quantile(y, tau)) < 0.02


def test_ar1_iid_series():
    y = np.random.default_rng(1).normal(size=2001)
    for tau in (0.1, 0.5, 0.9):
        m = fit_ar1_benchmark(y, tau)
        assert abs(m.slope) < 0.05
        assert abs(m.intercept - np.quantile(y, tau)) < 0.05


def test_ar1_deterministic_and_guards():
    x = np.random.default_rng(2).normal(size=40)
    m = fit_ar1(x, x, 0.3)
    assert m.slope == pytest.approx(1.0, abs=1e-9) and m.intercept == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(ValueError):
        fit_ar1_benchmark(np.ones(50), 0.5)
    with pytest.raises(ValueError):
        fit_ar1_benchmark(np.arange(10.0), 0.5)


def test_median_regression_matches_statsmodels():
    from helpers import lp_oracle

    rng = np.random.default_rng(3)
    x = rng.normal(size=300)
    y = 0.4 * x + rng.laplace(size=300)
    ours = quantreg_lp(np.column_stack([np.ones(300), x]), y, 0.5)
    np.testing.assert_allclose(ours, lp_oracle(x[:, None], y, 0.5), atol=1e-4)


def test_dm_identical_and_antisymmetric():
    rng = np.random.default_rng(4)
    a, b = rng.exponential(size=50), rng.exponential(size=50)
    r = dm_test(a, a.copy())
    assert r.stat == 0 and r.p_value == 0.5
    for h in (0, 1):
        assert dm_test(a, b, h).stat == pytest.approx(-dm_test(b, a, h).stat)


def test_dm_strong_signal():
    d = np.random.default_rng(5).normal(-1.0, 0.1, size=200)
    r = dm_test(d, np.zeros(200))
    assert r.p_value < 1e-6


def test_dm_rectangular_hac_by_hand():
    rng = np.random.default_rng(6)
    d = rng.normal(size=30)
    dc = d - d.mean()
    lrv = dc @ dc / 30 + 2 * (dc[1:] @ dc[:-1]) / 30
    r = dm_test(d, np.zeros(30), h=1)
    if lrv > 0:
        assert r.stat == pytest.approx(d.mean() / np.sqrt(lrv / 30))
    with pytest.raises(ValueError):
        dm_test(d[:5], d[:5])


def test_rearrange_examples():
    np.testing.assert_array_equal(rearrange_quantiles([1.0, 0.9]), [0.9, 1.0])
    np.testing.assert_array_equal(rearrange_quantiles([0.1, 0.2, 0.3]), [0.1, 0.2, 0.3])


@given(hnp.arrays(float, 7, elements=finite))
def test_rearrange_is_sort_and_idempotent(v):
    out = rearrange_quantiles(v)
    np.testing.assert_array_equal(out, sorted(v))
    np.testing.assert_array_equal(rearrange_quantiles(out), out)


# --------------------------------------------------------------------------- backtest


def small_config(**kw):
    base = dict(targets=(TARGET_ID,), eval_start="1998-01", eval_end="1998-06", estimation_start="1986-06",
                horizons=(0,), models=("bqr_ridge", "ar1"), n_lags=3, seed=11)
    base.update(kw)
    return bt.BacktestConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError):
        small_config(eval_start="1999-01", eval_end="1998-01")
    with pytest.raises(ValueError):
        small_config(models=("nope",))
    with pytest.raises(ValueError):
        small_config(quantile_grid=(0.5, 0.1))
    with pytest.raises(ValueError):
        small_config(horizons=(2,))


def test_benchmark_ratio_is_one(synth_panel):
    rep = bt.run_backtest(small_config(models=("ar1",)), synth_panel)
    assert rep.failures.empty
    np.testing.assert_allclose(rep.aggregate["rel_qs"], 1.0)
    assert (rep.records["score"] >= 0).all()


def test_oracle_double_scores_zero(synth_panel, monkeypatch):
    real = bt.forecast_quantiles

    def double(model, design, taus, seed=0, params=None):
        if model == "qrf":
            return np.full(len(taus), realized_value(synth_panel, TARGET_ID, design.target_date))
        return real(model, design, taus, seed=seed, params=params)

    monkeypatch.setattr(bt, "forecast_quantiles", double)
    rep = bt.run_backtest(small_config(models=("qrf", "ar1")), synth_panel)
    q = rep.aggregate[rep.aggregate["model"] == "qrf"]
    assert (q["mean_qs"] == 0).all() and (q["rel_qs"] == 0).all()


@pytest.fixture(scope="module")
def two_year_report(synth_panel):
    cfg = small_config(eval_start="1997-01", eval_end="1998-12", horizons=(0, 1))
    return cfg, bt.run_backtest(cfg, synth_panel)


def test_reaggregation_oracle(two_year_report):
    _, rep = two_year_report
    r = rep.records
    assert len(r) == 2 * 2 * 24 * 7
    for _, row in rep.aggregate.iterrows():
        sel = r[(r.model == row.model) & (r.h == row.h) & (r.tau == row.tau)]
        bench = r[(r.model == "ar1") & (r.h == row.h) & (r.tau == row.tau)]
        assert row.mean_qs == pytest.approx(np.mean([quantile_score(y, f, t) for y, f, t in
                                                     zip(sel.realized, sel.forecast, sel.tau)]), rel=1e-12)
        assert row.rel_qs == pytest.approx(sel.score.mean() / bench.score.mean(), rel=1e-12)
        d = dm_test(sel.sort_values("date").score.to_numpy(), bench.sort_values("date").score.to_numpy(), int(row.h))
        assert row.dm_p == pytest.approx(d.p_value, rel=1e-9, abs=1e-15)
        assert row.significant == (d.p_value < 0.10)


def test_forecasts_rearranged(two_year_report):
    _, rep = two_year_report
    for _, g in rep.records.groupby(["model", "h", "origin"]):
        assert np.all(np.diff(g.sort_values("tau").forecast) >= 0)


def test_reproducible(two_year_report, synth_panel):
    cfg, rep = two_year_report
    again = bt.run_backtest(cfg, synth_panel)
    pd.testing.assert_frame_equal(rep.records, again.records, check_exact=True)
    pd.testing.assert_frame_equal(rep.aggregate, again.aggregate, check_exact=True)


def test_failure_is_recorded_and_run_continues(synth_panel, monkeypatch):
    real = bt.forecast_quantiles

    def flaky(model, design, taus, seed=0, params=None):
        if model == "bqr_ridge" and str(design.origin) == "1998-03":
            raise FloatingPointError("boom")
        return real(model, design, taus, seed=seed, params=params)

    monkeypatch.setattr(bt, "forecast_quantiles", flaky)
    rep = bt.run_backtest(small_config(), synth_panel)
    f = rep.failures
    assert set(f["origin"]) == {"1998-03"} and set(f["model"]) == {"bqr_ridge"}
    assert f["forecast"].isna().all() and f["error"].str.contains("boom").all()
    assert rep.records[rep.records.error == ""]["forecast"].notna().all()


def test_model_seed_is_stable():
    assert bt.model_seed(1, "qrf", "X", 0) == bt.model_seed(1, "qrf", "X", 0)
    assert bt.model_seed(1, "qrf", "X", 0) != bt.model_seed(2, "qrf", "X", 0)


def test_text_modes_need_topics(synth_panel):
    with pytest.raises(ValueError):
        bt.run_backtest(small_config(predictor_modes=("both",)), synth_panel)
