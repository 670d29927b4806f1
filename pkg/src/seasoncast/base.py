"""Common train/predict contract for every model family."""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, EmptyData


class Regressor:
    """Scalar regressor over a flat feature matrix.

    Subclasses implement ``fit``, ``_predict``, ``to_dict`` and ``from_dict``.
    """

    kind = "regressor"
    n_features_ = None

    def fit(self, X, y, X_val=None, y_val=None):
        raise NotImplementedError

    def _predict(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if self.n_features_ is None:
            raise RuntimeError(f"{type(self).__name__} is not fitted")
        if X.shape[1] != self.n_features_:
            raise DimensionMismatch(f"model expects {self.n_features_} features, got {X.shape[1]}")
        return self._predict(X)

    def to_dict(self) -> dict:
        raise NotImplementedError

    def save(self, path):
        path = Path(path)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, separators=(",", ":"))
            fh.write("\n")
        return path


def n_workers() -> int:
    """Parallelism cap from ``SEASONCAST_THREADS`` (defaults to the CPU count)."""
    cap = os.environ.get("SEASONCAST_THREADS")
    cpus = os.cpu_count() or 1
    if cap:
        try:
            return max(1, min(int(cap), cpus))
        except ValueError:
            pass
    return cpus


def check_training_data(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] == 0 or y.shape[0] == 0:
        raise EmptyData("no training samples")
    if X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"{X.shape[0]} rows vs {y.shape[0]} targets")
    if not np.all(np.isfinite(y)):
        raise ValueError("targets must be finite")
    return X, y
