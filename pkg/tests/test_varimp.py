import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tailcast.varimp import (
    SurrogateFit,
    count_selected,
    fit_surrogate,
    kkt_residual,
    lambda_grid,
    lasso_cd,
    top_predictors,
)


def problem(seed, T=100, K=5):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(T, K))
    y = X @ (rng.normal(size=K) * (rng.uniform(size=K) > 0.3)) + 0.5 * rng.normal(size=T)
    return X, y


def fake_fit(beta, names=None, prov=None):
    beta = np.asarray(beta, dtype=float)
    p = len(beta)
    return SurrogateFit(beta_star=beta, intercept=0.0, lambda_=1.0,
                        column_names=tuple(names or [f"col{j + 1}" for j in range(p)]),
                        provenance=tuple(prov or ["macro"] * p), lambda_path=np.zeros(0),
                        path_nonzero=np.zeros(0, dtype=int), cv_error=np.zeros(0))


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.floats(0.0, 1.0))
def test_kkt_along_grid(seed, frac):
    X, y = problem(seed)
    lam = frac * lambda_grid(X, y)[0]
    a, b = lasso_cd(X, y, lam)
    assert kkt_residual(X, y, a, b, lam) < 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_zero_penalty_is_least_squares(seed):
    X, y = problem(seed)
    a, b = lasso_cd(X, y, 0.0)
    ols = np.linalg.lstsq(np.column_stack([np.ones(len(y)), X]), y, rcond=None)[0]
    np.testing.assert_allclose(np.r_[a, b], ols, atol=1e-8)


def test_path_sparsity_monotone():
    X, y = problem(7, T=120, K=30)
    fit = fit_surrogate(X @ np.r_[np.ones(5), np.zeros(25)] + np.random.default_rng(0).normal(size=120), X)
    nz = fit.path_nonzero
    assert np.all(fit.lambda_path[:-1] > fit.lambda_path[1:])
    # lambda increases toward the start of the grid
    assert np.all(np.diff(nz[::-1]) <= 0)


def test_exact_column_recovered():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(100, 5))
    Xs = (X - X.mean(0)) / X.std(0)
    fit = fit_surrogate(Xs[:, 2], X, lambdas=[1e-8])
    np.testing.assert_allclose(fit.beta_star, [0, 0, 1, 0, 0], atol=1e-6)


def test_huge_penalty_and_constant_path():
    X, y = problem(9)
    fit = fit_surrogate(y, X, lambdas=[1e12])
    assert fit.nonzero_count == 0 and not fit.constant_path
    const = fit_surrogate(np.full(100, 3.0), X)
    assert const.constant_path and const.nonzero_count == 0 and const.intercept == 3.0


def test_lambda_max_is_smallest_all_zero_penalty():
    X, y = problem(10)
    lam_max = lambda_grid(X, y)[0]
    assert np.all(lasso_cd(X, y, lam_max)[1] == 0)
    assert np.any(lasso_cd(X, y, 0.99 * lam_max)[1] != 0)


def test_cv_picks_from_grid_and_is_deterministic():
    X, y = problem(11)
    a, b = fit_surrogate(y, X), fit_surrogate(y, X)
    assert a.lambda_ in a.lambda_path and a.lambda_ == b.lambda_
    np.testing.assert_array_equal(a.beta_star, b.beta_star)
    assert len(a.cv_error) == 100


def test_top_predictors_examples():
    fit = fake_fit([0.5, -0.9, 0.0])
    assert [n for n, *_ in top_predictors(fit, 2)] == ["col2", "col1"]
    assert top_predictors(fake_fit([0.0, 0.0]), 3) == []
    with pytest.raises(ValueError):
        top_predictors(fit, 0)


def test_ties_broken_by_name_and_labels():
    fit = fake_fit([0.3, -0.3, 0.1], names=["b", "a", "t1"], prov=["macro", "lag", "text"])
    assert top_predictors(fit, 3) == [("a", 0.3, "FRED"), ("b", 0.3, "FRED"), ("t1", 0.1, "TEXT")]


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=12), st.integers(1, 12))
def test_ranking_matches_sort_oracle(beta, k):
    fit = fake_fit(beta)
    want = sorted([(f"col{j + 1}", abs(b)) for j, b in enumerate(beta) if abs(b) > 1e-10], key=lambda t: (-t[1], t[0]))
    assert [(n, m) for n, m, _ in top_predictors(fit, k)] == want[:k]


def test_count_selected_examples():
    assert count_selected(fake_fit([0.0, 0.0, 0.0])) == {"fred": 0, "text": 0}
    fit = fake_fit([1.0, 0.0, 2.0, -1.0], prov=["financial", "macro", "text", "text"])
    assert count_selected(fit) == {"fred": 1, "text": 2}


@given(st.lists(st.tuples(st.sampled_from([0.0, 1.0, -2.0]), st.sampled_from(["macro", "lag", "financial", "text"])),
                min_size=1, max_size=10))
def test_count_selected_scan_oracle(entries):
    fit = fake_fit([b for b, _ in entries], prov=[p for _, p in entries])
    text = sum(1 for b, p in entries if b != 0 and p == "text")
    fred = sum(1 for b, p in entries if b != 0 and p != "text")
    assert count_selected(fit) == {"fred": fred, "text": text}


def test_rescaling_a_column_keeps_the_ranking():
    X, y = problem(12, K=6)
    a = fit_surrogate(y, X)
    X2 = X.copy()
    X2[:, 1] *= 1000.0
    X2[:, 4] *= 0.001
    b = fit_surrogate(y, X2)
    assert [n for n, _ in a.top_k] == [n for n, _ in b.top_k]


def test_shape_checks():
    X, y = problem(13)
    with pytest.raises(ValueError):
        fit_surrogate(y[:-1], X)
    with pytest.raises(ValueError):
        fit_surrogate(y, X, column_names=["a"])
    with pytest.raises(ValueError):
        lasso_cd(X, y, -1.0)
