import numpy as np
import pytest

from gradcheck import OPS, RTOL, check_op
from seasoncast import autodiff as ad
from seasoncast import nets
from seasoncast.errors import NonScalarLoss


@pytest.mark.parametrize("op", OPS)
def test_finite_difference(op):
    assert check_op(op, seed=11) < RTOL


def test_square_hand_case():
    w = ad.parameter(3.0)
    grads = ad.backward(w * w)
    assert grads[w] == 6.0
    assert w.grad == 6.0


def test_detached_constant_gets_zero():
    w = ad.parameter(np.array([1.0, 2.0]))
    c = w.detach()
    z = ad.parameter(np.array([0.5, 0.5]))
    grads = ad.backward((c * z).sum(), wrt=[w, z])
    np.testing.assert_array_equal(grads[w], 0.0)
    np.testing.assert_array_equal(grads[z], [1.0, 2.0])


def test_non_scalar_loss():
    w = ad.parameter(np.ones(3))
    with pytest.raises(NonScalarLoss):
        ad.backward(w * 2.0)


def test_shared_subexpression_accumulates():
    x = ad.parameter(2.0)
    y = x * x
    loss = y + y * x  # x^2 + x^3, derivative 2x + 3x^2
    assert ad.backward(loss)[x] == pytest.approx(4 + 12)


def test_two_layer_relu_net_against_differences():
    rng = np.random.default_rng(3)
    W1 = ad.parameter(rng.normal(size=(4, 6)))
    b1 = ad.parameter(rng.normal(size=(1, 6)))
    W2 = ad.parameter(rng.normal(size=(6, 1)))
    X = rng.normal(size=(8, 4))
    y = rng.normal(size=8)

    def loss():
        return ad.mse_loss(ad.matmul(ad.relu(ad.matmul(X, W1) + b1), W2), y)

    grads = ad.backward(loss())
    for p in (W1, b1, W2):
        num = ad.numeric_gradient(lambda: float(loss().value), p)
        np.testing.assert_allclose(grads[p], num, rtol=1e-4, atol=1e-7)


def test_backward_is_deterministic():
    rng = np.random.default_rng(0)
    arch = nets.Architecture("gru", 8)
    params = nets.init_params(arch, 1)
    X, y = rng.normal(size=(10, 8)), rng.normal(size=10)
    g1 = ad.backward(ad.mse_loss(nets.forward(arch, params, X), y))
    g2 = ad.backward(ad.mse_loss(nets.forward(arch, params, X), y))
    for p in params.values():
        assert g1[p].tobytes() == g2[p].tobytes()


def test_no_grad_records_nothing():
    w = ad.parameter(np.ones(2))
    with ad.no_grad():
        out = w * 3.0
    assert not out.requires_grad and out.parents == ()


def test_tape_order_and_leaves():
    a, b = ad.parameter(1.0, "a"), ad.parameter(2.0, "b")
    out = ad.tanh(a * b + a)
    tape = ad.Tape(out)
    assert tape.nodes[-1] is out
    assert {t.name for t in tape.leaves()} == {"a", "b"}
    pos = {id(n): i for i, n in enumerate(tape.nodes)}
    for node in tape.nodes:
        for p in node.parents:
            if p.requires_grad:
                assert pos[id(p)] < pos[id(node)]
