"""CART regression trees, random forests and residual-fitting gradient boosting."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Union

import numpy as np

from .base import Regressor, check_training_data, n_workers
from .errors import EmptyData

# Relative slack when comparing split gains, so mathematically equal gains
# that differ only by rounding resolve through the index tie-break.
_GAIN_RTOL = 1e-12


@dataclass
class RegressionTree:
    """Flat array representation; node 0 is the root, ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    max_depth: Optional[int] = None

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[i] + 1
                depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        active = self.feature[node] >= 0
        while active.any():
            r = rows[active]
            nd = node[r]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
            active[r] = self.feature[node[r]] >= 0
        return node

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": [float(v) for v in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": [float(v) for v in self.value],
            "n_samples": self.n_samples.tolist(),
            "max_depth": self.max_depth,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=float),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=float),
            np.asarray(d["n_samples"], dtype=np.int64),
            d.get("max_depth"),
        )


def best_split(X, y, features, min_child_weight=1):
    """Best squared-error split of ``(X, y)`` restricted to ``features``.

    Candidates are midpoints between consecutive distinct sorted values; a
    candidate needs at least ``min_child_weight`` samples on each side.
    Returns ``(gain, feature, threshold)`` or ``None`` when no candidate is
    legal. Ties go to the lowest feature index, then the lowest threshold.
    """
    n = y.shape[0]
    if n < 2:
        return None
    features = np.asarray(features, dtype=np.int64)
    Xf = X[:, features]
    order = np.argsort(Xf, axis=0, kind="stable")
    xs = np.take_along_axis(Xf, order, axis=0)
    yc = y - y.mean()
    ys = yc[order]
    total = yc.sum()
    left_sum = np.cumsum(ys, axis=0)[:-1]
    n_left = np.arange(1, n, dtype=float)[:, None]
    n_right = n - n_left
    # SSE reduction written with sums only: S_l^2/n_l + S_r^2/n_r - S^2/n
    gain = left_sum**2 / n_left + (total - left_sum) ** 2 / n_right - total**2 / n
    valid = xs[1:] > xs[:-1]
    if min_child_weight > 1:
        valid &= (n_left >= min_child_weight) & (n_right >= min_child_weight)
    if not valid.any():
        return None
    gain = np.where(valid, gain, -np.inf)
    flat = gain.T.ravel()  # feature-major, thresholds ascending within a feature
    best = flat.max()
    pick = int(np.flatnonzero(flat >= best - _GAIN_RTOL * max(abs(best), 1e-300))[0])
    f_pos, row = divmod(pick, n - 1)
    lo, hi = xs[row, f_pos], xs[row + 1, f_pos]
    thr = lo + (hi - lo) / 2.0
    if not lo <= thr < hi:
        thr = lo
    return float(flat[pick]), int(features[f_pos]), float(thr)


def fit_tree(
    X,
    y,
    max_depth: Optional[int] = None,
    min_child_weight: float = 1,
    gamma: float = 0.0,
    feature_subset: Union[None, int, Sequence[int]] = None,
    seed=None,
) -> RegressionTree:
    """Greedy CART regression tree.

    ``feature_subset`` is either a fixed list of feature indices, or an int
    ``m`` meaning "draw ``m`` features at random for every split" (random
    forest style, driven by ``seed``), or ``None`` for all features. A split
    is kept only if its gain is strictly greater than ``gamma``.
    """
    X, y = check_training_data(X, y)
    n, k = X.shape
    rng = np.random.default_rng(seed)
    per_split = isinstance(feature_subset, (int, np.integer)) and not isinstance(feature_subset, bool)
    if feature_subset is None:
        fixed = np.arange(k)
    elif per_split:
        m = int(feature_subset)
        if not 1 <= m <= k:
            raise ValueError(f"feature_subset size must be in 1..{k}")
    else:
        fixed = np.sort(np.asarray(feature_subset, dtype=np.int64))

    feature, threshold, left, right, value, counts = [], [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[idx].mean()))
        counts.append(int(idx.shape[0]))
        return len(feature) - 1

    root = new_node(np.arange(n))
    stack = [(root, np.arange(n), 0)]
    while stack:
        node, idx, depth = stack.pop()
        if max_depth is not None and depth >= max_depth:
            continue
        yn = y[idx]
        if idx.shape[0] < 2 or yn.max() == yn.min():
            continue
        if per_split:
            feats = np.sort(rng.choice(k, size=m, replace=False))
        else:
            feats = fixed
        found = best_split(X[idx], yn, feats, min_child_weight)
        if found is None or not found[0] > gamma:
            continue
        _, f, thr = found
        mask = X[idx, f] <= thr
        li, ri = idx[mask], idx[~mask]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        # right pushed first so the left subtree is expanded first
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))

    return RegressionTree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=float),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(value, dtype=float),
        np.asarray(counts, dtype=np.int64),
        max_depth,
    )


def _tree_seeds(seed, n):
    return np.random.SeedSequence(seed).spawn(n)


# -- random forest ------------------------------------------------------------------


@dataclass
class ForestParams:
    n_trees: int = 1000
    max_depth: Optional[int] = None
    # "third" -> ceil(k/3) per split; an int -> that many; None -> all features
    max_features: Union[str, int, None] = "third"
    bootstrap: bool = True
    min_child_weight: int = 1
    n_jobs: int = -1


def _forest_member(X, y, params: ForestParams, seq, m):
    rng = np.random.default_rng(seq)
    n = X.shape[0]
    if params.bootstrap:
        rows = rng.integers(0, n, size=n)
        Xb, yb = X[rows], y[rows]
    else:
        Xb, yb = X, y
    subset = None if m == X.shape[1] else m
    return fit_tree(Xb, yb, params.max_depth, params.min_child_weight, 0.0, subset, rng)


class RandomForest(Regressor):
    """Bagged CART ensemble; prediction is the mean over trees."""

    kind = "rf"

    def __init__(self, params: Optional[ForestParams] = None, seed: int = 0, **overrides):
        self.params = params or ForestParams(**overrides)
        self.seed = seed
        self.trees: List[RegressionTree] = []

    def _subset_size(self, k):
        mf = self.params.max_features
        if mf is None or mf == "all":
            return k
        if mf == "third":
            return max(1, math.ceil(k / 3))
        return int(mf)

    def fit(self, X, y, X_val=None, y_val=None):
        X, y = check_training_data(X, y)
        k = X.shape[1]
        m = self._subset_size(k)
        seeds = _tree_seeds(self.seed, self.params.n_trees)
        jobs = n_workers() if self.params.n_jobs in (-1, None) else max(1, self.params.n_jobs)
        if jobs > 1 and self.params.n_trees > 1:
            from joblib import Parallel, delayed

            # joblib returns results in submission order, i.e. tree-index order
            self.trees = Parallel(n_jobs=jobs)(
                delayed(_forest_member)(X, y, self.params, s, m) for s in seeds
            )
        else:
            self.trees = [_forest_member(X, y, self.params, s, m) for s in seeds]
        self.n_features_ = k
        return self

    def _predict(self, X):
        total = np.zeros(X.shape[0])
        for tree in self.trees:
            total += tree.predict(X)
        return total / len(self.trees)

    def to_dict(self):
        return {
            "kind": self.kind,
            "params": asdict(self.params),
            "seed": self.seed,
            "n_features": self.n_features_,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d):
        model = cls(ForestParams(**d["params"]), d["seed"])
        model.trees = [RegressionTree.from_dict(t) for t in d["trees"]]
        model.n_features_ = d["n_features"]
        return model


def fit_forest(X, y, params: Optional[ForestParams] = None, seed: int = 0) -> RandomForest:
    return RandomForest(params, seed).fit(X, y)


# -- gradient boosting --------------------------------------------------------------


@dataclass
class BoostParams:
    learning_rate: float = 0.1
    max_depth: int = 6
    min_child_weight: int = 1
    subsample: float = 0.8
    colsample_bytree: float = 0.8
    gamma: float = 0.0
    n_rounds: int = 500
    early_stopping: Optional[int] = 50
    n_jobs: int = -1


class GradientBoosting(Regressor):
    """Squared-error gradient boosting: each tree fits the current residuals.

    Prediction is ``base_score + learning_rate * sum(tree outputs)``.
    """

    kind = "gbt"

    def __init__(self, params: Optional[BoostParams] = None, seed: int = 0, **overrides):
        self.params = params or BoostParams(**overrides)
        self.seed = seed
        self.base_score = 0.0
        self.trees: List[RegressionTree] = []
        self.train_history: List[float] = []
        self.val_history: List[float] = []
        self.best_round: Optional[int] = None

    def fit(self, X, y, X_val=None, y_val=None):
        p = self.params
        if p.n_rounds < 1:
            raise ValueError("n_rounds must be >= 1")
        if not (0 < p.subsample <= 1 and 0 < p.colsample_bytree <= 1 and p.learning_rate > 0):
            raise ValueError("subsample/colsample_bytree must be in (0, 1], learning_rate > 0")
        X, y = check_training_data(X, y)
        n, k = X.shape
        self.n_features_ = k
        self.base_score = float(y.mean())
        self.trees = []
        pred = np.full(n, self.base_score)
        use_val = X_val is not None and y_val is not None and p.early_stopping
        if use_val:
            X_val = np.asarray(X_val, dtype=float)
            y_val = np.asarray(y_val, dtype=float)
            val_pred = np.full(y_val.shape[0], self.base_score)
            best_val, best_round, stale = np.inf, 0, 0
        self.train_history = [float(np.mean((y - pred) ** 2))]
        self.val_history = []
        n_rows = max(1, int(round(p.subsample * n)))
        n_cols = max(1, int(round(p.colsample_bytree * k)))

        for seq in _tree_seeds(self.seed, p.n_rounds):
            rng = np.random.default_rng(seq)
            rows = np.sort(rng.choice(n, size=n_rows, replace=False)) if n_rows < n else np.arange(n)
            cols = np.sort(rng.choice(k, size=n_cols, replace=False)) if n_cols < k else np.arange(k)
            residual = y - pred
            tree = fit_tree(X[rows], residual[rows], p.max_depth, p.min_child_weight, p.gamma, cols)
            self.trees.append(tree)
            pred = pred + p.learning_rate * tree.predict(X)
            self.train_history.append(float(np.mean((y - pred) ** 2)))
            if use_val:
                val_pred = val_pred + p.learning_rate * tree.predict(X_val)
                val_mse = float(np.mean((y_val - val_pred) ** 2))
                self.val_history.append(val_mse)
                if val_mse < best_val:
                    best_val, best_round, stale = val_mse, len(self.trees), 0
                else:
                    stale += 1
                    if stale >= p.early_stopping:
                        break
        if use_val:
            self.best_round = best_round
            self.trees = self.trees[:best_round]
            self.train_history = self.train_history[: best_round + 1]
        else:
            self.best_round = len(self.trees)
        return self

    def _predict(self, X):
        out = np.full(X.shape[0], self.base_score)
        for tree in self.trees:
            out += self.params.learning_rate * tree.predict(X)
        return out

    def to_dict(self):
        return {
            "kind": self.kind,
            "params": asdict(self.params),
            "seed": self.seed,
            "n_features": self.n_features_,
            "base_score": self.base_score,
            "best_round": self.best_round,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d):
        model = cls(BoostParams(**d["params"]), d["seed"])
        model.base_score = d["base_score"]
        model.best_round = d.get("best_round")
        model.trees = [RegressionTree.from_dict(t) for t in d["trees"]]
        model.n_features_ = d["n_features"]
        return model


def fit_boosted(X, y, params: Optional[BoostParams] = None, rounds: Optional[int] = None, seed: int = 0, X_val=None, y_val=None):
    params = params or BoostParams()
    if rounds is not None:
        if rounds < 1:
            raise ValueError("rounds must be >= 1")
        params = BoostParams(**{**asdict(params), "n_rounds": rounds})
    return GradientBoosting(params, seed).fit(X, y, X_val, y_val)
