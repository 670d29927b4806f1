"""Name -> model family registry and checkpoint loading."""

from __future__ import annotations

import json
from pathlib import Path

from .base import Regressor
from .training import NeuralRegressor, TrainConfig
from .trees import BoostParams, ForestParams, GradientBoosting, RandomForest

ALIASES = {"xgboost": "gbt", "random_forest": "rf", "cnn": "cnn1d", "cnn_1d": "cnn1d"}
TREE_MODELS = ("rf", "gbt")
NEURAL_MODELS = ("mlp", "cnn1d", "lstm", "gru")
MODEL_NAMES = TREE_MODELS + NEURAL_MODELS
# the five families compared in the benchmark tables
DEFAULT_MODELS = ("cnn1d", "lstm", "gru", "rf", "gbt")
DISPLAY_NAMES = {
    "rf": "Random Forest",
    "gbt": "XGBoost",
    "mlp": "MLP",
    "cnn1d": "CNN 1D",
    "lstm": "LSTM",
    "gru": "GRU",
}


def canonical(name: str) -> str:
    key = name.strip().lower()
    key = ALIASES.get(key, key)
    if key not in MODEL_NAMES:
        raise KeyError(f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES)}")
    return key


def make_model(name: str, params: dict = None, seed: int = 0) -> Regressor:
    name = canonical(name)
    params = dict(params or {})
    if name == "rf":
        return RandomForest(ForestParams(**params), seed)
    if name == "gbt":
        return GradientBoosting(BoostParams(**params), seed)
    params["seed"] = seed
    return NeuralRegressor(name, TrainConfig(**params))


def model_from_dict(d: dict) -> Regressor:
    kind = d["kind"]
    if kind == "rf":
        return RandomForest.from_dict(d)
    if kind == "gbt":
        return GradientBoosting.from_dict(d)
    return NeuralRegressor.from_dict(d)


def load_checkpoint(path) -> Regressor:
    with open(Path(path), encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
