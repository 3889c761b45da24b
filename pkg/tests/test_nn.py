import numpy as np
import pytest

from dagsched.errors import DimMismatch, TapeMismatch
from dagsched.nn import Adam, DenseNet, leaky_relu, load_checkpoint, save_checkpoint, sgd_step


def finite_diff_check(net, x, w, eps=1e-5):
    """Max relative error between reverse-mode and central differences of sum(w * net(x))."""
    y, tape = net.forward(x)
    grads, gx = net.backward(tape, w)
    worst = 0.0
    for p, g in zip(net.params, grads):
        flat = p.reshape(-1)
        num = np.empty_like(flat)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = np.sum(w * net(x))
            flat[i] = old - eps
            down = np.sum(w * net(x))
            flat[i] = old
            num[i] = (up - down) / (2 * eps)
        g = g.reshape(-1)
        worst = max(worst, float(np.max(np.abs(g - num) / np.maximum(1e-6, np.abs(g) + np.abs(num)))))
    return worst


def test_zero_net_outputs_zero():
    net = DenseNet([4, 3, 2]).zero_()
    assert np.all(net(np.ones(4)) == 0.0)


def test_identity_layer_echoes_input():
    net = DenseNet([3, 3])
    net.params[0][...] = np.eye(3)
    net.params[1][...] = 0.0
    x = np.array([1.0, -2.0, 3.5])
    assert np.array_equal(net(x), x)


def test_seeded_init_is_bit_identical():
    a = DenseNet([5, 8, 1], np.random.default_rng(3))
    b = DenseNet([5, 8, 1], np.random.default_rng(3))
    x = np.linspace(-1, 1, 5)
    assert a(x).tobytes() == b(x).tobytes()


def test_dim_mismatch():
    net = DenseNet([3, 2])
    with pytest.raises(DimMismatch):
        net(np.ones(4))
    y, tape = net.forward(np.ones(3))
    with pytest.raises(DimMismatch):
        net.backward(tape, np.ones(3))


def test_tape_rules():
    a, b = DenseNet([2, 2]), DenseNet([2, 2])
    _, tape = a.forward(np.ones(2))
    with pytest.raises(TapeMismatch):
        b.backward(tape, np.ones(2))
    a.backward(tape, np.ones(2))
    with pytest.raises(TapeMismatch):
        a.backward(tape, np.ones(2))


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("out_act", ["linear", "leaky"])
def test_gradients_match_finite_differences(seed, out_act):
    rng = np.random.default_rng(seed)
    net = DenseNet([4, 6, 5, 3], rng, out_activation=out_act)
    x = rng.normal(size=(7, 4))
    w = rng.normal(size=(7, 3))
    assert finite_diff_check(net, x, w) < 1e-4


def test_input_gradient():
    rng = np.random.default_rng(1)
    net = DenseNet([3, 4, 2], rng)
    x = rng.normal(size=3)
    w = rng.normal(size=2)
    _, tape = net.forward(x)
    _, gx = net.backward(tape, w)
    eps = 1e-6
    for i in range(3):
        d = np.zeros(3)
        d[i] = eps
        num = (np.dot(w, net(x + d)) - np.dot(w, net(x - d))) / (2 * eps)
        assert gx[i] == pytest.approx(num, rel=1e-6, abs=1e-9)


def test_zero_and_linear_output_grad():
    rng = np.random.default_rng(2)
    net = DenseNet([3, 4, 2], rng)
    x = rng.normal(size=(5, 3))
    _, tape = net.forward(x)
    grads, _ = net.backward(tape, np.zeros((5, 2)))
    assert all(np.all(g == 0) for g in grads)
    w = rng.normal(size=(5, 2))
    _, t1 = net.forward(x)
    _, t2 = net.forward(x)
    g1, _ = net.backward(t1, w)
    g2, _ = net.backward(t2, 3.0 * w)
    for a, b in zip(g1, g2):
        np.testing.assert_allclose(b, 3.0 * a, rtol=1e-12)


def test_sgd_zero_lr_and_zero_grad():
    net = DenseNet([2, 2], np.random.default_rng(0))
    before = [p.copy() for p in net.params]
    sgd_step(net.params, [np.ones_like(p) for p in net.params], 0.0)
    sgd_step(net.params, [np.zeros_like(p) for p in net.params], 0.1)
    assert all(np.array_equal(a, b) for a, b in zip(before, net.params))
    with pytest.raises(DimMismatch):
        sgd_step(net.params, [np.ones(7)] + [np.zeros_like(p) for p in net.params[1:]], 0.1)


def test_sgd_quadratic_descends_monotonically():
    p = [np.array([3.0])]
    losses = []
    for _ in range(50):
        losses.append(float(p[0][0] ** 2))
        sgd_step(p, [2 * p[0]], 0.1)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_adam_descends_quadratic_and_ascends():
    p = [np.array([3.0, -2.0])]
    opt = Adam(p, 0.1)
    for _ in range(200):
        opt.step([2 * p[0]])
    assert np.all(np.abs(p[0]) < 0.1)
    q = [np.array([0.0])]
    Adam(q, 0.1).step([np.array([1.0])], ascent=True)
    assert q[0][0] > 0


def test_leaky_relu():
    np.testing.assert_array_equal(leaky_relu(np.array([-2.0, 0.0, 3.0])), [-0.02, 0.0, 3.0])


def test_checkpoint_roundtrip(tmp_path):
    a = DenseNet([3, 4, 1], np.random.default_rng(0), name="a")
    b = DenseNet([3, 4, 1], np.random.default_rng(1), name="a")
    save_checkpoint(tmp_path / "ck.json", {"a": a}, {"note": 1})
    extra = load_checkpoint(tmp_path / "ck.json", {"a": b})
    assert extra == {"note": 1}
    assert all(np.array_equal(x, y) for x, y in zip(a.params, b.params))
    with pytest.raises(DimMismatch):
        load_checkpoint(tmp_path / "ck.json", {"a": DenseNet([3, 5, 1])})
