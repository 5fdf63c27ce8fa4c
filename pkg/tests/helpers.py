"""Shared data generators and oracles for the test suite."""
import numpy as np
from statsmodels.regression.quantile_regression import QuantReg

BETA_SPARSE = np.array([1.5, -1.0, 0.8, 0.0, 0.0])


def sparse_dgp(seed, T=500):
    """K=5 predictors, three active; noise scale rises linearly with x0.

    The tau-quantile is linear, ``q(x) = b'x + (0.5 + 0.25 x0) F^-1(tau)``, so
    only the intercept and the x0 slope move with tau; the inactive
    coefficients are exactly zero at every level.
    """
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(T, 5))
    X[:, 0] = rng.uniform(0, 2, size=T)
    y = X @ BETA_SPARSE + (0.5 + 0.25 * X[:, 0]) * rng.normal(size=T)
    return X, y


def lp_oracle(X, y, tau):
    """Check-loss quantile regression (intercept first) from statsmodels."""
    A = np.column_stack([np.ones(len(y)), X])
    return np.asarray(QuantReg(y, A).fit(q=tau, max_iter=5000, p_tol=1e-10).params)


def sinusoid(seed, T=300):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-3, 3, size=T)
    y = np.sin(2 * x) + 0.3 * rng.normal(size=T)
    return x[:, None], y


def pinball(y, q, tau):
    u = y - q
    return float(np.mean(u * (tau - (u < 0))))


def trace_weights(forest, x):
    """Walk every tree node by node and average leaf multiplicities."""
    n = len(forest.y_train)
    total = [0.0] * n
    for tree in forest.trees:
        node = tree.nodes[0]
        while node.split_feature is not None:
            left, right = node.children
            node = tree.nodes[left] if x[node.split_feature] <= node.split_threshold else tree.nodes[right]
        members = list(node.member_indices)
        for i in range(n):
            total[i] += members.count(i) / len(members)
    return [t / len(forest.trees) for t in total]


def brute_cdf(y_train, w, y):
    return sum(wi for yi, wi in zip(y_train, w) if yi <= y)


def brute_quantile(y_train, w, alpha):
    for y in sorted(set(y_train)):
        if brute_cdf(y_train, w, y) >= alpha - 1e-12:
            return y
    return max(y_train)
