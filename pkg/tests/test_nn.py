import numpy as np
import pytest

from tabadv import autodiff as ad
from tabadv.autodiff import Tensor
from tabadv.nn import Adam, AdamState, DenseNet, adam_step, sgd_step, weight_clip


def test_weight_clip_example():
    p = np.array([0.5, -0.02])
    weight_clip([p], 0.01)
    np.testing.assert_array_equal(p, [0.01, -0.01])


def test_adam_zero_gradient_keeps_params():
    p = np.array([1.0, -2.0])
    adam_step([p], [np.zeros(2)], AdamState(), lr=0.1)
    np.testing.assert_array_equal(p, [1.0, -2.0])


@pytest.mark.parametrize("g", [1e-6, 0.3, -7.0, 250.0])
def test_adam_first_step_magnitude_is_lr(g):
    # m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
    lr = 0.01
    p = np.array([0.0])
    adam_step([p], [np.array([g])], AdamState(), lr=lr)
    expected = lr * abs(g) / (abs(g) + 1e-8)
    assert abs(p[0]) == pytest.approx(expected, rel=1e-12)
    assert np.sign(p[0]) == -np.sign(g)


def test_adam_rejects_non_positive_lr():
    with pytest.raises(ValueError):
        adam_step([np.zeros(1)], [np.zeros(1)], AdamState(), lr=0.0)
    with pytest.raises(ValueError):
        sgd_step([np.zeros(1)], [np.zeros(1)], lr=-1.0)
    with pytest.raises(ValueError):
        Adam([], lr=0)


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        adam_step([np.zeros(2)], [np.zeros(3)], AdamState(), lr=0.1)
    with pytest.raises(ValueError):
        sgd_step([np.zeros(2)], [np.zeros(3)], lr=0.1)


def test_sgd_step():
    p = np.array([1.0, 2.0])
    sgd_step([p], [np.array([0.5, -1.0])], lr=0.1)
    np.testing.assert_allclose(p, [0.95, 2.1])


def test_densenet_validation(rng):
    with pytest.raises(ValueError):
        DenseNet((3,), (), rng)
    with pytest.raises(ValueError):
        DenseNet((3, 2), ("relu", "relu"), rng)
    with pytest.raises(ValueError):
        DenseNet((3, 2), ("swish",), rng)
    net = DenseNet((3, 2), ("linear",), rng)
    with pytest.raises(ValueError):
        net(Tensor(np.ones((1, 4))))


def test_xavier_limits(rng):
    net = DenseNet((10, 30), ("linear",), rng)
    limit = np.sqrt(6 / 40)
    assert np.abs(net.weights[0].data).max() <= limit
    assert np.all(net.biases[0].data == 0)


def test_state_dict_round_trip(rng):
    net = DenseNet((3, 4, 2), ("relu", "softmax"), rng)
    clone = DenseNet.from_state_dict(net.state_dict())
    x = Tensor(rng.normal(size=(5, 3)))
    np.testing.assert_array_equal(net(x).data, clone(x).data)


def test_seeded_training_is_bit_identical():
    def run():
        rng = np.random.default_rng(3)
        net = DenseNet((2, 8, 2), ("tanh", "linear"), rng)
        opt = Adam(net.parameters(), 0.05)
        x = rng.normal(size=(32, 2))
        y = (x[:, 0] > x[:, 1]).astype(int)
        losses = []
        for _ in range(20):
            loss = ad.cross_entropy(net(Tensor(x)), y)
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
            losses.append(loss.item())
        return losses, [p.data.copy() for p in net.parameters()]

    a, b = run(), run()
    assert a[0] == b[0]
    assert all(p.tobytes() == q.tobytes() for p, q in zip(a[1], b[1]))
    assert a[0][-1] < a[0][0]
