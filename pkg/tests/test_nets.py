import json

import numpy as np
import pytest

from seasoncast import autodiff as ad
from seasoncast import nets
from seasoncast.errors import DivergenceDetected, EmptySet, ShapeMismatch
from seasoncast.grid import SupervisedSet
from seasoncast.optim import AdamW, AdamWConfig, AdamWState, adamw_step
from seasoncast.training import NeuralRegressor, TrainConfig, train


def adamw_oracle(theta, g, lr, wd, b1=0.9, b2=0.999, eps=1e-8, step=1):
    m = (1 - b1) * g
    v = (1 - b2) * g * g
    m_hat = m / (1 - b1**step)
    v_hat = v / (1 - b2**step)
    return theta - lr * m_hat / (np.sqrt(v_hat) + eps) - lr * wd * theta


# -- optimizer ----------------------------------------------------------------------


def test_adamw_single_step_hand_case():
    theta = [np.array([1.0])]
    adamw_step(theta, [np.array([1.0])], AdamWState.zeros_like(theta), AdamWConfig(lr=1e-3, weight_decay=0.01))
    assert theta[0][0] == pytest.approx(0.998990, abs=1e-9)
    assert theta[0][0] == pytest.approx(adamw_oracle(1.0, 1.0, 1e-3, 0.01), abs=1e-15)


def test_adamw_zero_gradient_cases():
    theta = [np.array([2.0, -3.0])]
    state = AdamWState.zeros_like(theta)
    adamw_step(theta, [np.zeros(2)], state, AdamWConfig(weight_decay=0.0))
    np.testing.assert_array_equal(theta[0], [2.0, -3.0])
    adamw_step(theta, [np.zeros(2)], state, AdamWConfig(lr=0.01, weight_decay=0.5))
    np.testing.assert_allclose(theta[0], np.array([2.0, -3.0]) * (1 - 0.01 * 0.5), rtol=1e-15)


def test_adamw_shape_mismatch():
    theta = [np.zeros(3)]
    with pytest.raises(ShapeMismatch):
        adamw_step(theta, [np.zeros(2)], AdamWState.zeros_like(theta), AdamWConfig())


def test_adamw_wrapper_minimises_quadratic():
    w = ad.parameter(np.array([5.0, -4.0]))
    opt = AdamW([w], AdamWConfig(lr=0.1, weight_decay=0.0))
    for _ in range(500):
        opt.step(ad.backward(ad.tsum(ad.square(w))))
    assert np.all(np.abs(w.value) < 1e-2)


# -- cells --------------------------------------------------------------------------


def _zeros(D, H, gates):
    return {"W": ad.constant(np.zeros((D, gates * H))), "U": ad.constant(np.zeros((H, gates * H))),
            "b": ad.constant(np.zeros((1, gates * H)))}


def test_lstm_all_zero():
    h, c = nets.lstm_cell(np.zeros((2, 3)), np.zeros((2, 4)), np.zeros((2, 4)), _zeros(3, 4, 4))
    assert np.all(h.value == 0) and np.all(c.value == 0)


def test_lstm_memory_carry():
    H = 4
    w = _zeros(3, H, 4)
    b = np.zeros((1, 4 * H))
    b[0, :H] = -20.0  # input gate closed
    b[0, H : 2 * H] = 20.0  # forget gate open
    w["b"] = ad.constant(b)
    rng = np.random.default_rng(0)
    c_prev = rng.normal(size=(2, H))
    _, c = nets.lstm_cell(rng.normal(size=(2, 3)), rng.normal(size=(2, H)), c_prev, w)
    np.testing.assert_allclose(c.value, c_prev, atol=1e-8)


def test_gru_cases():
    h = nets.gru_cell(np.zeros((2, 3)), np.zeros((2, 4)), {**_zeros(3, 4, 3), "U": ad.constant(np.zeros((4, 8))),
                                                            "Un": ad.constant(np.zeros((4, 4)))})
    assert np.all(h.value == 0)
    H = 4
    b = np.zeros((1, 3 * H))
    b[0, H : 2 * H] = 40.0  # update gate saturated at 1
    rng = np.random.default_rng(1)
    h_prev = rng.normal(size=(2, H))
    w = {"W": ad.constant(rng.normal(size=(3, 3 * H))), "U": ad.constant(rng.normal(size=(H, 2 * H))),
         "Un": ad.constant(rng.normal(size=(H, H))), "b": ad.constant(b)}
    h = nets.gru_cell(rng.normal(size=(2, 3)) * 0.1, h_prev, w)
    np.testing.assert_allclose(h.value, h_prev, atol=1e-12)


def test_cell_shape_errors():
    with pytest.raises(ShapeMismatch):
        nets.lstm_cell(np.zeros((2, 5)), np.zeros((2, 4)), np.zeros((2, 4)), _zeros(3, 4, 4))
    with pytest.raises(ShapeMismatch):
        nets.gru_cell(np.zeros((2, 3)), np.zeros((2, 4)), {**_zeros(3, 4, 3), "U": ad.constant(np.zeros((4, 8))),
                                                          "Un": ad.constant(np.zeros((3, 3)))})


def test_conv_output_length():
    steps = [ad.constant(np.ones((2, 3))) for _ in range(5)]
    out = nets.conv1d(steps, ad.constant(np.ones((9, 4))), ad.constant(np.zeros((1, 4))), 3)
    assert len(out) == 5 - 3 + 1


# -- architectures ------------------------------------------------------------------


def test_mlp_schedule():
    arch = nets.Architecture("mlp", 14)
    p = nets.init_params(arch, 0)
    widths = [p[f"dense{i}.W"].shape for i in range(8)]
    assert widths == [(14, 256), (256, 128), (128, 64), (64, 32), (32, 64), (64, 128), (128, 256), (256, 1)]
    with pytest.raises(ValueError):
        nets.Architecture("mlp", 14, hidden=(128, 64))
    nets.Architecture("mlp", 14, hidden=(8,), strict_schedule=False)


def test_sequence_layout():
    X = np.arange(11.0)[None, :]  # 3 vars x 3 lags + lat + lon
    steps = nets.to_sequence(X)
    assert len(steps) == 3
    np.testing.assert_array_equal(steps[0], [[0, 3, 6, 9, 10]])
    np.testing.assert_array_equal(steps[2], [[2, 5, 8, 9, 10]])
    with pytest.raises(ShapeMismatch):
        nets.Architecture("lstm", 10)


@pytest.mark.parametrize("kind", nets.KINDS)
def test_batch_order_invariance(kind):
    rng = np.random.default_rng(2)
    arch = nets.Architecture(kind, 11)
    params = nets.init_params(arch, 3)
    X = rng.normal(size=(9, 11))
    perm = rng.permutation(9)
    a = nets.predict_array(arch, params, X)
    b = nets.predict_array(arch, params, X[perm])
    np.testing.assert_allclose(a[perm], b, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("kind", ["cnn1d", "lstm", "gru"])
def test_timestep_order_matters(kind):
    rng = np.random.default_rng(4)
    arch = nets.Architecture(kind, 11)
    params = nets.init_params(arch, 5)
    X = rng.normal(size=(6, 11))
    reversed_lags = X.copy()
    for v in range(3):
        reversed_lags[:, 3 * v : 3 * v + 3] = X[:, 3 * v : 3 * v + 3][:, ::-1]
    assert not np.allclose(nets.predict_array(arch, params, X), nets.predict_array(arch, params, reversed_lags))


# -- training -----------------------------------------------------------------------


def _linear_sets(seed=0, n=300):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, size=(n, 1))
    X = np.hstack([x, np.zeros((n, 1))])
    y = 2 * x[:, 0]
    return X[:240], y[:240], X[240:], y[240:]


def test_learns_linear_toy():
    X, y, Xv, yv = _linear_sets()
    m = NeuralRegressor("mlp", TrainConfig(epochs=300, patience=50, seed=0)).fit(X, y, Xv, yv)
    assert m.history.best_val_mse < 1e-3


def test_patience_one_frozen_lr_stops_after_two_epochs():
    X, y, Xv, yv = _linear_sets()
    m = NeuralRegressor("mlp", TrainConfig(epochs=50, patience=1, lr=0.0)).fit(X, y, Xv, yv)
    assert m.history.epochs_run == 2 and m.history.stopped_early and m.history.best_epoch == 1


def test_history_is_deterministic_and_best_weights_restored(tmp_path):
    rng = np.random.default_rng(1)
    X, y = rng.normal(size=(120, 8)), rng.normal(size=120)
    Xv, yv = rng.normal(size=(40, 8)), rng.normal(size=40)
    cfg = TrainConfig(epochs=40, patience=5, seed=3)
    a = NeuralRegressor("gru", cfg).fit(X, y, Xv, yv)
    b = NeuralRegressor("gru", cfg).fit(X, y, Xv, yv)
    assert a.history.train_mse == b.history.train_mse and a.history.val_mse == b.history.val_mse
    h = a.history
    assert h.best_val_mse == min(h.val_mse)
    assert float(np.mean((a.predict(Xv) - yv) ** 2)) == h.best_val_mse
    a.save(tmp_path / "ck.json")
    back = NeuralRegressor.from_dict(json.loads((tmp_path / "ck.json").read_text()))
    assert back.predict(Xv).tobytes() == a.predict(Xv).tobytes()
    h.to_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_mse,val_mse" and len(lines) == h.epochs_run + 1


def test_final_partial_batch_kept():
    X, y, Xv, yv = _linear_sets(n=300)
    X, y = X[:100], y[:100]  # 96 + 4
    seen = []
    orig = nets.forward

    def spy(arch, params, X_):
        seen.append(X_.shape[0])
        return orig(arch, params, X_)

    import seasoncast.training as tr

    tr.forward = spy
    try:
        NeuralRegressor("mlp", TrainConfig(epochs=2, patience=1, lr=0.0)).fit(X, y, Xv, yv)
    finally:
        tr.forward = orig
    assert seen[:2] == [96, 4]


def test_training_errors():
    X, y, Xv, yv = _linear_sets()
    with pytest.raises(EmptySet):
        NeuralRegressor("mlp", TrainConfig(epochs=5, patience=2)).fit(X, y, Xv[:0], yv[:0])
    with pytest.raises(ValueError):
        NeuralRegressor("mlp", TrainConfig(epochs=5, patience=2)).fit(X, y * np.inf, Xv, yv)
    with pytest.raises(ValueError):
        TrainConfig(epochs=10, patience=10)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_on_overflowing_loss():
    rng = np.random.default_rng(0)
    X, y = rng.normal(size=(50, 2)), np.full(50, 1e200)
    with pytest.raises(DivergenceDetected) as info:
        NeuralRegressor("mlp", TrainConfig(epochs=20, patience=5)).fit(X, y, X, y)
    assert info.value.model == "mlp"


def test_train_wrapper():
    X, y, Xv, yv = _linear_sets()
    names = ("a", "b")
    tr = SupervisedSet(names, X, y, tuple((i, "DJF", 2000) for i in range(len(y))))
    va = SupervisedSet(names, Xv, yv, tuple((i, "DJF", 2000) for i in range(len(yv))))
    model, hist = train("mlp", tr, va, TrainConfig(epochs=3, patience=2))
    assert hist.epochs_run == 3 and model.predict(Xv).shape == (len(yv),)
