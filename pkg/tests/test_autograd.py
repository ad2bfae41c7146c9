import threading

import numpy as np
import pytest

from kdsr.autograd import (
    Parameter,
    Tensor,
    concat,
    cross_entropy,
    grad_enabled,
    no_grad,
    sigmoid,
    softmax,
    stack,
    take_rows,
    tanh,
)
from kdsr.layers import LayerNorm, Linear
from kdsr.numerics import finite_diff_check

TOL = 1e-4


@pytest.fixture
def rng():
    return np.random.default_rng(11)


def check(loss, params):
    report = finite_diff_check(loss, params, tol=TOL, fraction=1.0)
    assert report.passed, str(report)


def test_broadcast_add_sums_gradient_back(rng):
    a = Parameter(rng.normal(size=(3, 4)), "a")
    b = Parameter(rng.normal(size=(4,)), "b")
    out = (a + b).sum()
    out.backward()
    np.testing.assert_allclose(b.grad, np.full(4, 3.0))
    np.testing.assert_allclose(a.grad, np.ones((3, 4)))


def test_elementwise_gradients(rng):
    a = Parameter(rng.normal(size=(3, 4)), "a")
    b = Parameter(rng.uniform(0.5, 2.0, size=(3, 4)), "b")
    check(lambda: (sigmoid(a) * tanh(b) / b - a).mean(), [a, b])


def test_matmul_and_transpose_gradients(rng):
    a = Parameter(rng.normal(size=(2, 3, 4)), "a")
    b = Parameter(rng.normal(size=(4, 5)), "b")
    check(lambda: ((a @ b).transpose(0, 2, 1) * 0.5).sum(), [a, b])


def test_softmax_and_cross_entropy_gradients(rng):
    logits = Parameter(rng.normal(size=(5, 6)), "logits")
    targets = np.array([0, 5, 2, 2, 1])
    weights = rng.normal(size=(5, 6))
    check(lambda: (softmax(logits, axis=-1) * weights).sum(), [logits])
    check(lambda: cross_entropy(logits, targets), [logits])


def test_cross_entropy_value():
    logits = Tensor(np.zeros((2, 4)))
    assert cross_entropy(logits, np.array([0, 3])).item() == pytest.approx(np.log(4.0))


def test_shape_op_gradients(rng):
    table = Parameter(rng.normal(size=(6, 3)), "table")
    other = Parameter(rng.normal(size=(2, 3)), "other")
    rows = np.array([[0, 5], [5, 5]])

    def loss():
        picked = take_rows(table, rows).reshape(4, 3)
        joined = concat([picked, other], axis=0)
        stacked = stack([joined[:, 0], joined[:, 2]], axis=1)
        return (stacked * stacked).sum()

    check(loss, [table, other])


def test_layers_gradients(rng):
    linear = Linear("lin", 4, 3, rng)
    norm = LayerNorm("norm", 3)
    norm.gain.data[...] = rng.uniform(0.5, 1.5, size=3)
    x = Tensor(rng.normal(size=(5, 4)))
    target = rng.normal(size=(5, 3))

    def loss():
        diff = norm(linear(x)) - target
        return (diff * diff).mean()

    check(loss, linear.parameters() + norm.parameters())


def test_shared_node_accumulates(rng):
    a = Parameter(rng.normal(size=(3,)), "a")
    b = a * 2.0
    (b * b + b).sum().backward()
    np.testing.assert_allclose(a.grad, 8.0 * a.data + 2.0)


def test_no_grad_skips_tape():
    p = Parameter(np.ones(2), "p")
    with no_grad():
        out = p * 3.0
        assert not grad_enabled()
    assert grad_enabled()
    assert not out.requires_grad


def test_no_grad_is_per_thread():
    seen = []
    inside = threading.Event()
    release = threading.Event()

    def worker():
        with no_grad():
            inside.set()
            release.wait(timeout=5)

    thread = threading.Thread(target=worker)
    thread.start()
    inside.wait(timeout=5)
    seen.append(grad_enabled())
    release.set()
    thread.join()
    assert seen == [True]


def test_backward_needs_scalar_or_seed():
    p = Parameter(np.ones(3), "p")
    with pytest.raises(ValueError):
        (p * 2.0).backward()
    (p * 2.0).backward(np.ones(3))
    np.testing.assert_allclose(p.grad, np.full(3, 2.0))
