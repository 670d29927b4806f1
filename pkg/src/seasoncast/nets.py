"""Neural regressors built on the autodiff tape: MLP, CNN 1D, LSTM and GRU.

All four consume the flat lagged feature matrix
``[v1_t0, v1_t1, v1_t2, v2_t0, ..., lat, lon]``. Sequence models rebuild
three timesteps from it, each step holding every variable at that lag
with lat/lon appended.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeMismatch

TABLE2_SCHEDULE = (256, 128, 64, 32, 64, 128, 256)
SEQ_LEN = 3
KINDS = ("mlp", "cnn1d", "lstm", "gru")


@dataclass
class Architecture:
    kind: str
    n_features: int
    hidden: Tuple[int, ...] = TABLE2_SCHEDULE
    rnn_hidden: int = 64
    conv_channels: Tuple[int, ...] = (32, 64)
    kernel: int = 2
    strict_schedule: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown network kind {self.kind!r}")
        self.hidden = tuple(int(h) for h in self.hidden)
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        if self.strict_schedule and self.hidden != TABLE2_SCHEDULE:
            raise ValueError(f"dense schedule must be {list(TABLE2_SCHEDULE)} in strict mode, got {list(self.hidden)}")
        if self.kind != "mlp":
            if (self.n_features - 2) % SEQ_LEN or self.n_features < 2 + SEQ_LEN:
                raise ShapeMismatch(f"{self.n_features} features cannot be read as 3 lags per variable + lat/lon")
            if self.kind == "cnn1d" and SEQ_LEN - len(self.conv_channels) * (self.kernel - 1) < 1:
                raise ValueError("convolution stack is longer than the sequence")

    @property
    def n_vars(self) -> int:
        return (self.n_features - 2) // SEQ_LEN

    @property
    def step_width(self) -> int:
        return self.n_vars + 2


def to_sequence(X: np.ndarray) -> List[np.ndarray]:
    """Split flat lagged features into ``SEQ_LEN`` step matrices of shape (n, n_vars + 2)."""
    n_vars = (X.shape[1] - 2) // SEQ_LEN
    pos = X[:, -2:]
    steps = []
    for t in range(SEQ_LEN):
        cols = [SEQ_LEN * v + t for v in range(n_vars)]
        steps.append(np.concatenate([X[:, cols], pos], axis=1))
    return steps


# -- parameters ---------------------------------------------------------------------


def _uniform(rng, limit, shape, name):
    return ad.parameter(rng.uniform(-limit, limit, size=shape), name=name)


def init_dense(rng, fan_in: int, widths: Sequence[int], prefix: str) -> Dict[str, Tensor]:
    """Weights and biases uniform in +-1/sqrt(fan_in)."""
    params = {}
    for i, width in enumerate(widths):
        limit = 1.0 / np.sqrt(fan_in)
        params[f"{prefix}{i}.W"] = _uniform(rng, limit, (fan_in, width), f"{prefix}{i}.W")
        params[f"{prefix}{i}.b"] = _uniform(rng, limit, (1, width), f"{prefix}{i}.b")
        fan_in = width
    return params


def dense_forward(params, prefix, x, n_layers, final_linear=True):
    for i in range(n_layers):
        x = ad.matmul(x, params[f"{prefix}{i}.W"]) + params[f"{prefix}{i}.b"]
        if not (final_linear and i == n_layers - 1):
            x = ad.relu(x)
    return x


def init_params(arch: Architecture, seed) -> Dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    params: Dict[str, Tensor] = {}
    head_in = arch.n_features
    if arch.kind == "cnn1d":
        c_in, length = arch.step_width, SEQ_LEN
        for i, c_out in enumerate(arch.conv_channels):
            fan_in = arch.kernel * c_in
            limit = 1.0 / np.sqrt(fan_in)
            params[f"conv{i}.W"] = _uniform(rng, limit, (fan_in, c_out), f"conv{i}.W")
            params[f"conv{i}.b"] = _uniform(rng, limit, (1, c_out), f"conv{i}.b")
            c_in, length = c_out, length - arch.kernel + 1
        head_in = c_in * length
    elif arch.kind in ("lstm", "gru"):
        H, D = arch.rnn_hidden, arch.step_width
        gates = 4 if arch.kind == "lstm" else 3
        limit = 1.0 / np.sqrt(H)
        params["rnn.W"] = _uniform(rng, limit, (D, gates * H), "rnn.W")
        if arch.kind == "lstm":
            params["rnn.U"] = _uniform(rng, limit, (H, 4 * H), "rnn.U")
        else:
            params["rnn.U"] = _uniform(rng, limit, (H, 2 * H), "rnn.U")
            params["rnn.Un"] = _uniform(rng, limit, (H, H), "rnn.Un")
        params["rnn.b"] = _uniform(rng, limit, (1, gates * H), "rnn.b")
        head_in = H
    params.update(init_dense(rng, head_in, list(arch.hidden) + [1], "dense"))
    return params


# -- cells --------------------------------------------------------------------------


def _check(x, h, W, U, n_gates):
    H = h.shape[1]
    if W.shape != (x.shape[1], n_gates * H) or x.shape[0] != h.shape[0]:
        raise ShapeMismatch(f"input {x.shape} / hidden {h.shape} incompatible with W {W.shape}")
    return H


def lstm_cell(x, h_prev, c_prev, weights) -> Tuple[Tensor, Tensor]:
    """One LSTM step. ``weights`` holds ``W`` (D, 4H), ``U`` (H, 4H), ``b`` (1, 4H)
    with gate blocks ordered input, forget, candidate, output."""
    x, h_prev, c_prev = ad._lift(x), ad._lift(h_prev), ad._lift(c_prev)
    W, U, b = weights["W"], weights["U"], weights["b"]
    H = _check(x.value, h_prev.value, W.value, U.value, 4)
    if U.shape != (H, 4 * H) or c_prev.shape != h_prev.shape:
        raise ShapeMismatch("recurrent weight or cell state has the wrong shape")
    z = ad.matmul(x, W) + ad.matmul(h_prev, U) + b
    i = ad.sigmoid(z[:, 0:H])
    f = ad.sigmoid(z[:, H : 2 * H])
    g = ad.tanh(z[:, 2 * H : 3 * H])
    o = ad.sigmoid(z[:, 3 * H : 4 * H])
    c = f * c_prev + i * g
    h = o * ad.tanh(c)
    return h, c


def gru_cell(x, h_prev, weights) -> Tensor:
    """One GRU step. ``weights`` holds ``W`` (D, 3H) for reset/update/candidate,
    ``U`` (H, 2H) for reset/update, ``Un`` (H, H) and ``b`` (1, 3H).
    The candidate sees the reset-gated previous state."""
    x, h_prev = ad._lift(x), ad._lift(h_prev)
    W, U, Un, b = weights["W"], weights["U"], weights["Un"], weights["b"]
    H = _check(x.value, h_prev.value, W.value, U.value, 3)
    if U.shape != (H, 2 * H) or Un.shape != (H, H):
        raise ShapeMismatch("recurrent weights have the wrong shape")
    xw = ad.matmul(x, W) + b
    hu = ad.matmul(h_prev, U)
    r = ad.sigmoid(xw[:, 0:H] + hu[:, 0:H])
    z = ad.sigmoid(xw[:, H : 2 * H] + hu[:, H : 2 * H])
    n = ad.tanh(xw[:, 2 * H :] + ad.matmul(r * h_prev, Un))
    return (1.0 - z) * n + z * h_prev


def conv1d(steps: Sequence[Tensor], W: Tensor, b: Tensor, kernel: int) -> List[Tensor]:
    """Valid (unpadded, stride 1) 1-D convolution with ReLU over a list of steps."""
    out = []
    for j in range(len(steps) - kernel + 1):
        window = ad.concat(steps[j : j + kernel], axis=1)
        out.append(ad.relu(ad.matmul(window, W) + b))
    return out


# -- forward ------------------------------------------------------------------------


def forward(arch: Architecture, params: Dict[str, Tensor], X: np.ndarray) -> Tensor:
    """Network output of shape (n, 1) for the flat feature matrix ``X``."""
    n_dense = len(arch.hidden) + 1
    if arch.kind == "mlp":
        return dense_forward(params, "dense", ad.constant(X), n_dense)
    steps = [ad.constant(s) for s in to_sequence(X)]
    if arch.kind == "cnn1d":
        for i in range(len(arch.conv_channels)):
            steps = conv1d(steps, params[f"conv{i}.W"], params[f"conv{i}.b"], arch.kernel)
        features = ad.concat(steps, axis=1) if len(steps) > 1 else steps[0]
    else:
        h = ad.constant(np.zeros((X.shape[0], arch.rnn_hidden)))
        weights = {k.split(".", 1)[1]: v for k, v in params.items() if k.startswith("rnn.")}
        if arch.kind == "lstm":
            c = h
            for s in steps:
                h, c = lstm_cell(s, h, c, weights)
        else:
            for s in steps:
                h = gru_cell(s, h, weights)
        features = h
    return dense_forward(params, "dense", features, n_dense)


def predict_array(arch, params, X: np.ndarray, chunk: int = 8192) -> np.ndarray:
    out = np.empty(X.shape[0])
    with ad.no_grad():
        for start in range(0, X.shape[0], chunk):
            out[start : start + chunk] = forward(arch, params, X[start : start + chunk]).value[:, 0]
    return out
