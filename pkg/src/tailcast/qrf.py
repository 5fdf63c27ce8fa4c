"""Quantile regression forests.

Regression trees are grown on bootstrap samples with a random subset of
``mtry`` candidate features per node.  Leaves keep every bootstrap draw that
reached them, so a query gets observation weights
``w_i(x) = mean over trees of (copies of i in the leaf) / (leaf size)``,
which define a weighted empirical CDF and its quantiles.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "TreeNode",
    "Tree",
    "Forest",
    "grow_tree",
    "grow_forest",
    "compute_weights",
    "estimate_cdf",
    "estimate_quantile",
    "estimate_quantiles",
    "predict_mean",
]

# cumulative weights within this distance of alpha count as reaching it
_ECDF_TOL = 1e-12


@dataclass(frozen=True)
class TreeNode:
    split_feature: int | None = None
    split_threshold: float = np.nan
    children: tuple[int, int] | None = None
    member_indices: np.ndarray | None = None

    @property
    def is_leaf(self) -> bool:
        return self.split_feature is None


@dataclass(frozen=True)
class Tree:
    nodes: tuple[TreeNode, ...]
    sample: np.ndarray

    def leaf(self, x) -> TreeNode:
        node = self.nodes[0]
        while not node.is_leaf:
            left, right = node.children
            node = self.nodes[left if x[node.split_feature] <= node.split_threshold else right]
        return node


@dataclass(frozen=True)
class Forest:
    trees: tuple[Tree, ...]
    mtry: int
    min_leaf: int
    bootstrap_seeds: tuple[int, ...]
    X_train: np.ndarray
    y_train: np.ndarray

    @property
    def n(self) -> int:
        return len(self.y_train)

    def weights(self, x) -> np.ndarray:
        return compute_weights(self, x)

    def quantile(self, x, alpha: float) -> float:
        return estimate_quantile(self, x, alpha)


def _best_split(X, y, idx, features, min_leaf):
    n = len(idx)
    yy = y[idx]
    parent = float(np.sum((yy - yy.mean()) ** 2))
    # a split must beat the parent by more than rounding noise
    bound = parent * (1.0 - 1e-12) - 1e-14
    xs = X[np.ix_(idx, features)]
    order = np.argsort(xs, axis=0, kind="stable")
    xs = np.take_along_axis(xs, order, axis=0)
    ys = yy[order]
    cs, cs2 = np.cumsum(ys, axis=0), np.cumsum(ys**2, axis=0)
    nl = np.arange(1, n)[:, None]
    sl, sl2 = cs[:-1], cs2[:-1]
    sr, sr2 = cs[-1] - sl, cs2[-1] - sl2
    sse = (sl2 - sl**2 / nl) + (sr2 - sr**2 / (n - nl))
    valid = (xs[1:] > xs[:-1]) & (nl >= min_leaf) & (n - nl >= min_leaf)
    sse = np.where(valid, sse, np.inf)
    # column-major argmin: first feature in draw order wins ties
    k = int(np.argmin(sse.T))
    col, row = divmod(k, n - 1)
    if not sse[row, col] < bound:
        return None, None
    return int(features[col]), 0.5 * (xs[row, col] + xs[row + 1, col])


def grow_tree(X, y, sample, mtry: int, min_leaf: int, rng) -> Tree:
    """Variance-reduction regression tree on the bootstrap rows ``sample``."""
    p = X.shape[1]
    nodes: list[TreeNode | None] = [None]
    stack = [(0, np.sort(sample))]
    while stack:
        slot, idx = stack.pop()
        f = thr = None
        if len(idx) >= 2 * min_leaf:
            features = rng.choice(p, size=mtry, replace=False)
            f, thr = _best_split(X, y, idx, features, min_leaf)
        if f is None:
            nodes[slot] = TreeNode(member_indices=idx)
            continue
        go_left = X[idx, f] <= thr
        left, right = len(nodes), len(nodes) + 1
        nodes.extend([None, None])
        nodes[slot] = TreeNode(split_feature=int(f), split_threshold=float(thr), children=(left, right))
        stack.append((right, idx[~go_left]))
        stack.append((left, idx[go_left]))
    return Tree(nodes=tuple(nodes), sample=np.sort(sample))


def grow_forest(design, B: int = 500, mtry: int | None = None, min_leaf: int = 5, seed: int = 0) -> Forest:
    """Grow ``B`` trees; each tree draws its bootstrap sample and feature subsets
    from its own seed, spawned deterministically from ``seed``."""
    if isinstance(design, tuple):
        X, y = design
    else:
        X, y = design.X, design.y
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, p = X.shape
    if mtry is None:
        mtry = max(1, int(np.floor(np.sqrt(p))))
    if not 1 <= mtry <= p:
        raise ValueError(f"mtry must be between 1 and p={p}, got {mtry}")
    if B < 1:
        raise ValueError("B must be positive")
    if min_leaf < 1:
        raise ValueError("min_leaf must be at least 1")
    if n < 1:
        raise ValueError("need at least one observation")
    seeds = tuple(int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(B))
    trees = []
    for s in seeds:
        rng = np.random.default_rng(s)
        sample = rng.integers(0, n, size=n)
        trees.append(grow_tree(X, y, sample, mtry, min_leaf, rng))
    return Forest(
        trees=tuple(trees),
        mtry=mtry,
        min_leaf=min_leaf,
        bootstrap_seeds=seeds,
        X_train=X,
        y_train=y,
    )


def compute_weights(forest: Forest, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    w = np.zeros(forest.n)
    for tree in forest.trees:
        members = tree.leaf(x).member_indices
        w += np.bincount(members, minlength=forest.n) / len(members)
    return w / len(forest.trees)


def predict_mean(forest: Forest, x) -> float:
    """Random-forest conditional mean: average of per-tree leaf means."""
    x = np.asarray(x, dtype=float).ravel()
    return float(np.mean([forest.y_train[t.leaf(x).member_indices].mean() for t in forest.trees]))


def estimate_cdf(forest: Forest, x, y_grid) -> np.ndarray:
    """Weighted empirical CDF ``sum_i w_i(x) 1{Y_i <= y}`` at each grid point."""
    y_grid = np.asarray(y_grid, dtype=float)
    if np.any(np.diff(y_grid) < 0):
        raise ValueError("y_grid must be sorted")
    w = compute_weights(forest, x)
    order = np.argsort(forest.y_train, kind="stable")
    ys, cw = forest.y_train[order], np.cumsum(w[order])
    pos = np.searchsorted(ys, y_grid, side="right")
    return np.where(pos > 0, cw[np.maximum(pos - 1, 0)], 0.0)


def _invert(ys, cw, alpha):
    k = int(np.searchsorted(cw, alpha - _ECDF_TOL, side="left"))
    return float(ys[min(k, len(ys) - 1)])


def estimate_quantiles(forest: Forest, x, alphas) -> np.ndarray:
    alphas = np.asarray(alphas, dtype=float)
    if np.any((alphas <= 0) | (alphas >= 1)):
        raise ValueError("alpha must lie strictly between 0 and 1")
    w = compute_weights(forest, x)
    order = np.argsort(forest.y_train, kind="stable")
    ys, cw = forest.y_train[order], np.cumsum(w[order])
    return np.array([_invert(ys, cw, a) for a in alphas.ravel()]).reshape(alphas.shape)


def estimate_quantile(forest: Forest, x, alpha: float) -> float:
    """``inf{y : F(y | x) >= alpha}``: the smallest training response reaching alpha."""
    return float(estimate_quantiles(forest, x, [alpha])[0])
