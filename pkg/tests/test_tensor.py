import numpy as np
import pytest

from cavlab.errors import NonFiniteValue, ShapeMismatch
from cavlab.tensor import Tensor, backward_with_report, concat, masked_softmax, no_grad


def fd_grad(fn, x, h=1e-6):
    """Central finite differences of a scalar fn w.r.t. array x."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        xp = x.copy(); xp[idx] += h
        xm = x.copy(); xm[idx] -= h
        g[idx] = (fn(xp) - fn(xm)) / (2 * h)
        it.iternext()
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / (np.linalg.norm(a) + np.linalg.norm(b) + 1e-12)


def test_sum_of_params_grad_is_one():
    p = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    loss = p.sum()
    loss.backward()
    assert np.array_equal(p.grad, np.ones((2, 3)))


def test_norm_squared_matches_closed_form():
    rng = np.random.default_rng(0)
    W = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    x = Tensor(rng.standard_normal((3, 1)))
    loss = ((W @ x) ** 2).sum()
    loss.backward()
    expected = 2.0 * (W.data @ x.data) @ x.data.T
    assert np.allclose(W.grad, expected, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_random_network_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    W1 = rng.standard_normal((5, 4))
    W2 = rng.standard_normal((4, 1))
    x = rng.standard_normal((3, 5))

    def loss_np(w1):
        h = np.tanh(x @ w1)
        return float((np.maximum(h @ W2, 0.0) ** 2).sum())

    w1 = Tensor(W1, requires_grad=True)
    h = (Tensor(x) @ w1).tanh()
    loss = ((h @ Tensor(W2)).relu() ** 2).sum()
    loss.backward()
    assert rel_err(w1.grad, fd_grad(loss_np, W1)) < 1e-6


def test_broadcast_add_and_mul_grads():
    a = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Tensor(np.arange(3.0), requires_grad=True)
    loss = (a * b + b).sum()
    loss.backward()
    assert np.allclose(a.grad, np.tile(np.arange(3.0), (2, 1)))
    assert np.allclose(b.grad, np.array([2.0, 2.0, 2.0]) + 2.0)  # sum over rows + 2 bias


def test_batched_matmul_grad_matches_fd():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((4, 3, 2))
    W = rng.standard_normal((2, 5))

    def loss_np(w):
        return float(((A @ w) ** 2).sum())

    w = Tensor(W, requires_grad=True)
    loss = ((Tensor(A) @ w) ** 2).sum()
    loss.backward()
    assert rel_err(w.grad, fd_grad(loss_np, W)) < 1e-6


def test_min_max_clip_gating():
    x = Tensor(np.array([-2.0, 0.5, 3.0]), requires_grad=True)
    y = x.clip(-1.0, 1.0).sum()
    y.backward()
    assert np.array_equal(x.grad, np.array([0.0, 1.0, 0.0]))

    a = Tensor(np.array([1.0, 5.0]), requires_grad=True)
    b = Tensor(np.array([2.0, 2.0]), requires_grad=True)
    (a.minimum(b)).sum().backward()
    assert np.array_equal(a.grad, np.array([1.0, 0.0]))
    assert np.array_equal(b.grad, np.array([0.0, 1.0]))


def test_concat_splits_gradient():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    b = Tensor(np.ones((2, 3)), requires_grad=True)
    out = concat([a, b], axis=-1)
    (out * Tensor(np.arange(10.0).reshape(2, 5))).sum().backward()
    assert np.array_equal(a.grad, np.array([[0.0, 1.0], [5.0, 6.0]]))
    assert np.array_equal(b.grad, np.array([[2.0, 3.0, 4.0], [7.0, 8.0, 9.0]]))


def test_masked_softmax_rows_sum_to_one_and_mask_exact_zero():
    rng = np.random.default_rng(1)
    scores = Tensor(rng.standard_normal((2, 4, 4)), requires_grad=True)
    mask = rng.random((2, 4, 4)) > 0.4
    mask[:, np.arange(4), np.arange(4)] = True
    phi = masked_softmax(scores, mask.astype(float), axis=-1)
    assert np.all(phi.data[~mask] == 0.0)
    assert np.allclose(phi.data.sum(axis=-1), 1.0, atol=1e-12)


def test_non_finite_forward_raises():
    x = Tensor(np.array([1.0, 0.0]))
    with pytest.raises(NonFiniteValue):
        _ = x.log()  # log(0) = -inf
    with pytest.raises(NonFiniteValue):
        Tensor(np.array([np.nan]))


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeMismatch):
        (x * 2).backward()


def test_disconnected_parameter_reported_with_zero_grad():
    used = Tensor(np.ones(2), requires_grad=True, name="used")
    unused = Tensor(np.ones(2), requires_grad=True, name="unused")
    loss = used.sum()
    missing = backward_with_report(loss, {"used": used, "unused": unused})
    assert missing == ["unused"]
    assert np.array_equal(unused.grad, np.zeros(2))
    assert np.array_equal(used.grad, np.ones(2))


def test_no_grad_suppresses_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = (x * 2.0).sum()
    assert y._parents == ()


def test_determinism_bit_identical():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((6, 6))
    w = rng.standard_normal((6, 6))
    r1 = ((Tensor(x) @ Tensor(w)).tanh()).data
    r2 = ((Tensor(x) @ Tensor(w)).tanh()).data
    assert np.array_equal(r1, r2)


def test_second_use_of_node_accumulates():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = x * x  # both parents are the same node
    y.sum().backward()
    assert np.allclose(x.grad, np.array([6.0]))
