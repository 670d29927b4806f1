"""Shapley-value attributions with interventional (background-averaged) value function.

``shapley_exact`` enumerates all coalitions and is the reference for small
feature counts; ``shapley_sampled`` is the permutation estimator used for the
full lagged feature space.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from math import factorial
from typing import Callable, List, Optional, Sequence

import numpy as np

from .errors import EmptyBackground, Inconsistent, TooManyFeatures

MAX_EXACT_FEATURES = 20
DEFAULT_BACKGROUND = 100
_ROWS_PER_CALL = 200_000


@dataclass
class Attribution:
    sample_id: int
    base_value: float
    phi: np.ndarray
    prediction: float
    feature_names: Optional[Sequence[str]] = None
    std_error: Optional[np.ndarray] = None

    @property
    def residual(self) -> float:
        """Local-accuracy gap: prediction - base - sum(phi)."""
        return float(self.prediction - self.base_value - self.phi.sum())


def _predict_fn(model) -> Callable[[np.ndarray], np.ndarray]:
    return model.predict if hasattr(model, "predict") else model


def _check_inputs(x, background):
    x = np.asarray(x, dtype=float).ravel()
    bg = np.asarray(background, dtype=float)
    if bg.ndim == 1:
        bg = bg[None, :]
    if bg.shape[0] == 0:
        raise EmptyBackground("background set is empty")
    if bg.shape[1] != x.shape[0]:
        raise Inconsistent(f"background has {bg.shape[1]} features, sample has {x.shape[0]}")
    return x, bg


def coalition_values(predict, x, background, masks: np.ndarray) -> np.ndarray:
    """v(S) = mean over background rows b of f(x on S, b elsewhere), one per mask row."""
    n_bg = background.shape[0]
    per_call = max(1, _ROWS_PER_CALL // n_bg)
    out = np.empty(masks.shape[0])
    for start in range(0, masks.shape[0], per_call):
        m = masks[start : start + per_call]
        rows = np.where(m[:, None, :], x[None, None, :], background[None, :, :])
        preds = np.asarray(predict(rows.reshape(-1, x.shape[0])), dtype=float)
        out[start : start + per_call] = preds.reshape(m.shape[0], n_bg).mean(axis=1)
    return out


def shapley_exact(model, x, background, feature_names=None, sample_id: int = 0) -> Attribution:
    """Classic Shapley formula over all 2^k coalitions."""
    predict = _predict_fn(model)
    x, bg = _check_inputs(x, background)
    k = x.shape[0]
    if k > MAX_EXACT_FEATURES:
        raise TooManyFeatures(f"exact enumeration limited to {MAX_EXACT_FEATURES} features, got {k}")
    codes = np.arange(1 << k)
    bits = ((codes[:, None] >> np.arange(k)[None, :]) & 1).astype(bool)
    v = coalition_values(predict, x, bg, bits)
    sizes = bits.sum(axis=1)
    weight = np.array([factorial(s) * factorial(k - s - 1) / factorial(k) for s in range(k)])
    phi = np.empty(k)
    for i in range(k):
        without = codes[~bits[:, i]]
        phi[i] = np.sum(weight[sizes[without]] * (v[without | (1 << i)] - v[without]))
    return Attribution(sample_id, float(v[0]), phi, float(v[-1]), feature_names)


def shapley_sampled(
    model,
    x,
    background,
    n_permutations: int = 100,
    seed=0,
    feature_names=None,
    sample_id: int = 0,
) -> Attribution:
    """Permutation-sampling estimate with per-feature standard errors.

    Each permutation walks coalitions from empty to full; a feature's
    marginal contribution is the change in the background-averaged value
    when it joins. Any rounding residual against local accuracy is spread
    over features in proportion to ``|phi|``.
    """
    if n_permutations < 10:
        raise ValueError("n_permutations must be >= 10")
    predict = _predict_fn(model)
    x, bg = _check_inputs(x, background)
    k = x.shape[0]
    rng = np.random.default_rng(seed)
    perms = np.array([rng.permutation(k) for _ in range(n_permutations)])
    # masks[p, j] = first j features of permutation p switched on
    masks = np.zeros((n_permutations, k + 1, k), dtype=bool)
    for j in range(1, k + 1):
        masks[:, j] = masks[:, j - 1]
        masks[np.arange(n_permutations), j, perms[:, j - 1]] = True
    v = coalition_values(predict, x, bg, masks.reshape(-1, k)).reshape(n_permutations, k + 1)
    contrib = np.empty((n_permutations, k))
    contrib[np.arange(n_permutations)[:, None], perms] = np.diff(v, axis=1)
    phi = contrib.mean(axis=0)
    se = contrib.std(axis=0, ddof=1) / np.sqrt(n_permutations)

    base = float(v[:, 0].mean())
    pred = float(v[:, -1].mean())
    gap = pred - base - phi.sum()
    weights = np.abs(phi)
    if weights.sum() > 0:
        phi = phi + gap * weights / weights.sum()
    else:
        phi = phi + gap / k
    return Attribution(sample_id, base, phi, pred, feature_names, se)


def select_background(X, size: int = DEFAULT_BACKGROUND, seed=0) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[0] == 0:
        raise EmptyBackground("no rows to draw a background from")
    if X.shape[0] <= size:
        return X.copy()
    idx = np.sort(np.random.default_rng(seed).choice(X.shape[0], size=size, replace=False))
    return X[idx]


def explain_samples(
    model, X, background, n_permutations=100, seed=0, feature_names=None, sample_ids=None, exact=False
) -> List[Attribution]:
    """Attributions for every row of ``X``; each row gets its own generator
    derived from ``(seed, sample_id)`` so results do not depend on order."""
    X = np.asarray(X, dtype=float)
    ids = list(range(X.shape[0])) if sample_ids is None else list(sample_ids)
    out = []
    for sid, row in zip(ids, X):
        if exact:
            out.append(shapley_exact(model, row, background, feature_names, sid))
        else:
            rs = np.random.SeedSequence([int(seed), int(sid)])
            out.append(shapley_sampled(model, row, background, n_permutations, rs, feature_names, sid))
    return out


@dataclass
class GlobalImportance:
    feature_names: Sequence[str]
    importance: np.ndarray  # in the original feature order
    order: np.ndarray  # feature indices, most important first

    def ranked(self):
        return [(self.feature_names[i], float(self.importance[i])) for i in self.order]

    def rank_of(self, name: str) -> int:
        """1-based rank of ``name``."""
        idx = list(self.feature_names).index(name)
        return int(np.flatnonzero(self.order == idx)[0]) + 1

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rank", "feature", "mean_abs_phi"])
            for r, (name, value) in enumerate(self.ranked(), start=1):
                w.writerow([r, name, repr(value)])


def global_importance(attributions: Sequence[Attribution], feature_names=None) -> GlobalImportance:
    if not attributions:
        raise Inconsistent("no attributions to aggregate")
    k = attributions[0].phi.shape[0]
    names = feature_names or attributions[0].feature_names
    for a in attributions:
        if a.phi.shape[0] != k:
            raise Inconsistent("attributions have different feature counts")
        if a.feature_names is not None and names is not None and list(a.feature_names) != list(names):
            raise Inconsistent("attributions have different feature names")
    names = list(names) if names is not None else [f"x{i}" for i in range(k)]
    imp = np.mean(np.abs(np.vstack([a.phi for a in attributions])), axis=0)
    order = np.argsort(-imp, kind="stable")
    return GlobalImportance(names, imp, order)


def waterfall_data(attribution: Attribution, top_k: int = 10) -> dict:
    """Largest-|phi| contributions, the rest folded into an ``other`` bucket
    so that base + sum(contributions) equals the prediction."""
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    phi = attribution.phi
    names = attribution.feature_names or [f"x{i}" for i in range(phi.shape[0])]
    order = np.argsort(-np.abs(phi), kind="stable")
    top = order[:top_k]
    items = [{"feature": names[i], "phi": float(phi[i])} for i in top]
    if len(order) > top_k:
        rest = attribution.prediction - attribution.base_value - float(np.sum(phi[top]))
        items.append({"feature": f"other ({len(order) - top_k} features)", "phi": float(rest)})
    return {
        "sample": int(attribution.sample_id),
        "base_value": float(attribution.base_value),
        "prediction": float(attribution.prediction),
        "contributions": items,
    }


def write_attributions_csv(attributions: Sequence[Attribution], path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample", "feature", "phi", "base", "prediction"])
        for a in attributions:
            names = a.feature_names or [f"x{i}" for i in range(a.phi.shape[0])]
            for name, p in zip(names, a.phi):
                w.writerow([a.sample_id, name, repr(float(p)), repr(float(a.base_value)), repr(float(a.prediction))])


def write_summary_dots_csv(attributions: Sequence[Attribution], X, path):
    """Data behind the summary dot plot: one (feature value, phi) point per sample and feature."""
    X = np.asarray(X, dtype=float)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample", "feature", "value", "phi"])
        for a, row in zip(attributions, X):
            names = a.feature_names or [f"x{i}" for i in range(a.phi.shape[0])]
            for name, value, p in zip(names, row, a.phi):
                w.writerow([a.sample_id, name, repr(float(value)), repr(float(p))])


def write_waterfall_json(data: dict, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")
