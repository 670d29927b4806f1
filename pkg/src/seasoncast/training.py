"""Mini-batch AdamW training with validation early stopping."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .base import Regressor, check_training_data
from .errors import DivergenceDetected, EmptySet
from .nets import TABLE2_SCHEDULE, Architecture, forward, init_params, predict_array
from .optim import AdamW, AdamWConfig


@dataclass
class TrainConfig:
    epochs: int = 1000
    batch: int = 96
    patience: int = 100
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    seed: int = 0
    hidden: Tuple[int, ...] = TABLE2_SCHEDULE
    rnn_hidden: int = 64
    conv_channels: Tuple[int, ...] = (32, 64)
    kernel: int = 2
    strict_schedule: bool = True

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        self.conv_channels = tuple(self.conv_channels)
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if not 0 < self.patience < self.epochs:
            raise ValueError("patience must be positive and smaller than epochs")

    def adamw(self) -> AdamWConfig:
        return AdamWConfig(self.lr, self.beta1, self.beta2, self.eps, self.weight_decay)

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["conv_channels"] = list(self.conv_channels)
        return d


@dataclass
class History:
    train_mse: List[float] = field(default_factory=list)
    val_mse: List[float] = field(default_factory=list)
    best_epoch: int = 0  # 1-based
    stopped_early: bool = False

    @property
    def epochs_run(self) -> int:
        return len(self.val_mse)

    @property
    def best_val_mse(self) -> float:
        return self.val_mse[self.best_epoch - 1]

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_mse", "val_mse"])
            for i, (tr, va) in enumerate(zip(self.train_mse, self.val_mse), start=1):
                w.writerow([i, repr(tr), repr(va)])


class NeuralRegressor(Regressor):
    def __init__(self, kind: str = "lstm", config: Optional[TrainConfig] = None, **overrides):
        self.kind = kind
        self.config = config or TrainConfig(**overrides)
        self.arch: Optional[Architecture] = None
        self.params = {}
        self.history: Optional[History] = None

    def _build(self, n_features):
        c = self.config
        self.arch = Architecture(
            self.kind, n_features, c.hidden, c.rnn_hidden, c.conv_channels, c.kernel, c.strict_schedule
        )
        self.params = init_params(self.arch, np.random.SeedSequence([c.seed, 1]))
        self.n_features_ = n_features

    def fit(self, X, y, X_val=None, y_val=None):
        X, y = check_training_data(X, y)
        if X_val is None or y_val is None or len(y_val) == 0:
            raise EmptySet("neural training needs a non-empty validation set")
        X_val = np.asarray(X_val, dtype=float)
        y_val = np.asarray(y_val, dtype=float).ravel()
        self._build(X.shape[1])
        c = self.config
        plist = list(self.params.values())
        opt = AdamW(plist, c.adamw())
        rng = np.random.default_rng(np.random.SeedSequence([c.seed, 2]))
        hist = History()
        best_val, best_weights, stale = np.inf, None, 0
        n = X.shape[0]

        for epoch in range(1, c.epochs + 1):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, c.batch):
                idx = order[start : start + c.batch]
                loss = ad.mse_loss(forward(self.arch, self.params, X[idx]), y[idx])
                value = float(loss.value)
                if not np.isfinite(value):
                    raise DivergenceDetected(f"{self.kind}: non-finite training loss at epoch {epoch}", model=self.kind)
                grads = ad.backward(loss, plist)
                opt.step(grads)
                total += value * idx.shape[0]
            val = float(np.mean((predict_array(self.arch, self.params, X_val) - y_val) ** 2))
            if not np.isfinite(val):
                raise DivergenceDetected(f"{self.kind}: non-finite validation loss at epoch {epoch}", model=self.kind)
            hist.train_mse.append(total / n)
            hist.val_mse.append(val)
            if val < best_val:
                best_val, stale = val, 0
                hist.best_epoch = epoch
                best_weights = {k: p.value.copy() for k, p in self.params.items()}
            else:
                stale += 1
                if stale >= c.patience:
                    hist.stopped_early = True
                    break

        for k, v in best_weights.items():
            self.params[k].value[...] = v
        self.history = hist
        return self

    def _predict(self, X):
        return predict_array(self.arch, self.params, X)

    def to_dict(self):
        return {
            "kind": self.kind,
            "architecture": {
                "kind": self.arch.kind,
                "n_features": self.arch.n_features,
                "hidden": list(self.arch.hidden),
                "rnn_hidden": self.arch.rnn_hidden,
                "conv_channels": list(self.arch.conv_channels),
                "kernel": self.arch.kernel,
                "strict_schedule": self.arch.strict_schedule,
            },
            "config": self.config.to_dict(),
            "seed": self.config.seed,
            "weights": {
                k: {"shape": list(p.value.shape), "data": [float(v) for v in p.value.ravel()]}
                for k, p in self.params.items()
            },
            "best_epoch": self.history.best_epoch if self.history else None,
        }

    @classmethod
    def from_dict(cls, d):
        model = cls(d["kind"], TrainConfig(**d["config"]))
        model.arch = Architecture(**d["architecture"])
        model.params = {
            k: ad.parameter(np.asarray(w["data"], dtype=float).reshape(w["shape"]), name=k)
            for k, w in d["weights"].items()
        }
        model.n_features_ = model.arch.n_features
        return model


def train(model_kind, train_set, val_set, config: Optional[TrainConfig] = None):
    """Fit a neural regressor on (already scaled) supervised sets; returns ``(model, history)``."""
    if len(train_set) == 0 or len(val_set) == 0:
        raise EmptySet("train and validation sets must be non-empty")
    model = NeuralRegressor(model_kind, config or TrainConfig())
    model.fit(train_set.features, train_set.targets, val_set.features, val_set.targets)
    return model, model.history
