"""Z-score scaling, Pearson correlation and correlation-based pruning."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DimensionMismatch, ZeroVariance

DEFAULT_PRUNE_THRESHOLD = 0.9


@dataclass(frozen=True)
class ZScaler:
    means: np.ndarray
    stds: np.ndarray
    feature_names: Optional[Tuple[str, ...]] = None

    @property
    def n_features(self) -> int:
        return self.means.shape[0]

    def apply(self, features) -> np.ndarray:
        return apply_zscore(self, features)

    def invert(self, normalized) -> np.ndarray:
        Z = _as_matrix(normalized)
        self._check_width(Z)
        return Z * self.stds + self.means

    def _check_width(self, X):
        if X.shape[1] != self.n_features:
            raise DimensionMismatch(f"scaler expects {self.n_features} features, got {X.shape[1]}")

    def to_dict(self) -> dict:
        return {
            "means": [float(v) for v in self.means],
            "stds": [float(v) for v in self.stds],
            "feature_names": list(self.feature_names) if self.feature_names else [],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ZScaler":
        names = payload.get("feature_names") or None
        return cls(
            np.asarray(payload["means"], dtype=float),
            np.asarray(payload["stds"], dtype=float),
            tuple(names) if names else None,
        )

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "ZScaler":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    return X


def fit_zscore(features, feature_names: Optional[Sequence[str]] = None) -> ZScaler:
    """Per-column mean and population standard deviation."""
    X = np.asarray(features, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("fit_zscore needs a 2-D matrix with at least 2 rows")
    mu = X.mean(axis=0)
    sigma = X.std(axis=0)
    bad = np.flatnonzero(~(sigma > 0))
    if bad.size:
        label = [feature_names[i] for i in bad] if feature_names else bad.tolist()
        raise ZeroVariance(f"constant feature(s): {label}")
    return ZScaler(mu, sigma, tuple(feature_names) if feature_names else None)


def apply_zscore(scaler: ZScaler, features) -> np.ndarray:
    X = _as_matrix(features)
    scaler._check_width(X)
    return (X - scaler.means) / scaler.stds


@dataclass(frozen=True)
class CorrelationMatrix:
    feature_names: Tuple[str, ...]
    values: np.ndarray

    def __getitem__(self, pair):
        i, j = (self.feature_names.index(p) if isinstance(p, str) else p for p in pair)
        return self.values[i, j]

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([""] + list(self.feature_names))
            for name, row in zip(self.feature_names, self.values):
                w.writerow([name] + [repr(float(v)) for v in row])


def correlation_matrix(features, feature_names: Optional[Sequence[str]] = None) -> CorrelationMatrix:
    X = np.asarray(features, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("correlation_matrix needs at least 2 samples")
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{i}" for i in range(X.shape[1]))
    if len(names) != X.shape[1]:
        raise DimensionMismatch("feature_names length does not match matrix width")
    centered = X - X.mean(axis=0)
    norms = np.sqrt((centered**2).sum(axis=0))
    bad = np.flatnonzero(~(norms > 0))
    if bad.size:
        raise ZeroVariance(f"constant column(s): {[names[i] for i in bad]}")
    unit = centered / norms
    r = unit.T @ unit
    r = np.clip((r + r.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(r, 1.0)
    return CorrelationMatrix(names, r)


def prune_by_correlation(
    corr: CorrelationMatrix,
    threshold: float = DEFAULT_PRUNE_THRESHOLD,
    protected: Iterable[str] = (),
) -> List[str]:
    """Greedy declared-order pruning of highly correlated features.

    Protected features are always retained. Every other feature is scanned in
    declared order and dropped when ``|r| >= threshold`` against any feature
    already retained, so of an unprotected pair the later one goes.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    names = corr.feature_names
    protected = set(protected)
    absr = np.abs(corr.values)
    kept = [i for i, n in enumerate(names) if n in protected]
    for j, name in enumerate(names):
        if name in protected:
            continue
        if any(absr[i, j] >= threshold for i in kept):
            continue
        kept.append(j)
    return [names[i] for i in sorted(kept)]


def variable_correlation(series, variables: Sequence[str], time_positions=None) -> CorrelationMatrix:
    """Correlation between whole variables, pooling every (time, lat, lon) cell."""
    cols = []
    for name in variables:
        arr = series.data[name]
        if time_positions is not None:
            arr = arr[list(time_positions)]
        cols.append(arr.ravel())
    return correlation_matrix(np.column_stack(cols), variables)

