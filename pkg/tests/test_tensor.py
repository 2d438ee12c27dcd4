import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spikegpt import tensor as tn
from spikegpt.neurons import atan_surrogate, heaviside
from spikegpt.tensor import AdamState, NonFiniteGradient, Tensor, adam_step

from oracles import atan_surrogate_reference, check_op_grad, fd_grad, rel_err


def test_matmul_identity():
    out = tn.matmul(Tensor([[1.0, 0.0], [0.0, 1.0]]), Tensor([[3.0], [4.0]]))
    np.testing.assert_array_equal(out.data, [[3.0], [4.0]])


def test_matmul_hand_arithmetic():
    out = Tensor([[1.0, 2.0]]) @ Tensor([[3.0], [4.0]])
    np.testing.assert_array_equal(out.data, [[11.0]])


def test_matmul_shape_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


def test_matmul_grad_matches_fd():
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal((4, 5)), rng.standard_normal((5, 3))
    assert check_op_grad(lambda x, y: x @ y, [a, b]) <= 1e-6


def test_batched_matmul_grad():
    rng = np.random.default_rng(2)
    a, b = rng.standard_normal((2, 3, 4)), rng.standard_normal((4, 5))
    assert check_op_grad(lambda x, y: x @ y, [a, b]) <= 1e-4
    c = rng.standard_normal((2, 4, 2))
    assert check_op_grad(lambda x, y: x @ y, [a, c]) <= 1e-4


def _rand(*shape, seed=0, positive=False):
    x = np.random.default_rng(seed).standard_normal(shape)
    return np.abs(x) + 0.5 if positive else x


ELEMENTWISE = {
    "add": (lambda a, b: a + b, [_rand(3, 4), _rand(4, seed=1)]),
    "sub": (lambda a, b: a - b, [_rand(3, 4), _rand(3, 1, seed=1)]),
    "mul": (lambda a, b: a * b, [_rand(2, 3, 4), _rand(3, 4, seed=1)]),
    "div": (lambda a, b: a / b, [_rand(3, 4), _rand(3, 4, seed=1, positive=True)]),
    "exp": (tn.exp, [_rand(3, 4)]),
    "log": (tn.log, [_rand(3, 4, positive=True)]),
    "sigmoid": (tn.sigmoid, [_rand(3, 4) * 3]),
    "relu2": (tn.relu_squared, [_rand(5, 4)]),
    "transpose": (tn.transpose, [_rand(2, 3, 4)]),
    "reshape": (lambda a: a.reshape(4, 6), [_rand(2, 3, 4)]),
    "getitem": (lambda a: a[1:, ::2], [_rand(3, 4)]),
    "concat": (lambda a, b: tn.concat([a, b], axis=1), [_rand(3, 2), _rand(3, 4, seed=1)]),
    "shift_rows": (lambda a: tn.shift_rows(a), [_rand(2, 5, 3)]),
    "sum_axis": (lambda a: a.sum(axis=1), [_rand(3, 4, 2)]),
    "mean_all": (lambda a: a.mean(), [_rand(3, 4)]),
    "mean_axis": (lambda a: tn.mean(a, axis=-2), [_rand(2, 5, 3)]),
    "layer_norm": (tn.layer_norm, [_rand(2, 3, 6), _rand(6, seed=1), _rand(6, seed=2)]),
    "clamp_max": (lambda a: tn.clamp_max(a, 0.3), [_rand(4, 4)]),
}


@pytest.mark.parametrize("name", sorted(ELEMENTWISE))
def test_op_grad_matches_fd(name):
    build, arrays = ELEMENTWISE[name]
    assert check_op_grad(build, arrays) <= 1e-4


def test_embedding_grad():
    ids = np.array([[0, 2, 2], [1, 0, 3]])
    W = _rand(5, 4)
    assert check_op_grad(lambda w: tn.embedding(w, ids), [W]) <= 1e-4


def test_softmax_cross_entropy_grad():
    targets = np.array([0, 3, 1, 2])
    assert check_op_grad(lambda z: tn.softmax_cross_entropy(z, targets), [_rand(4, 5)]) <= 1e-4


def test_dropout_grad_with_fixed_mask():
    x = _rand(3, 6)
    build = lambda a: tn.dropout(a, 0.3, np.random.default_rng(7), training=True)
    assert check_op_grad(build, [x]) <= 1e-4


def test_dropout_is_inverted_and_eval_is_identity():
    x = Tensor(np.ones((200, 200)))
    y = tn.dropout(x, 0.25, np.random.default_rng(0))
    kept = y.data[y.data != 0]
    np.testing.assert_allclose(kept, 1 / 0.75)
    assert tn.dropout(x, 0.25, np.random.default_rng(0), training=False) is x


def test_relu_squared_backward_at_zero_is_zero():
    x = Tensor(np.zeros(3), requires_grad=True)
    tn.relu_squared(x).sum().backward()
    np.testing.assert_array_equal(x.grad, 0.0)


def test_softmax_rows_sum_to_one():
    z = np.random.default_rng(3).standard_normal((50, 17)) * 20
    np.testing.assert_allclose(tn.softmax(z).sum(axis=-1), 1.0, atol=1e-9)


@pytest.mark.parametrize("V", [2, 17, 256])
def test_cross_entropy_uniform_is_log_vocab(V):
    loss = tn.softmax_cross_entropy(Tensor(np.zeros((3, V))), [0, V - 1, 1])
    assert abs(loss.item() - math.log(V)) < 1e-12


def test_custom_grad_node_heaviside_surrogate():
    x = Tensor(np.array([0.5]), requires_grad=True)
    y = tn.custom_grad_node(heaviside, lambda v: atan_surrogate(v, 2.0), x)
    assert y.data[0] == 1.0
    y.backward(np.ones(1))
    # alpha / (2 (1 + (pi/2 * alpha * x)^2)) with alpha=2, x=0.5
    assert x.grad[0] == pytest.approx(2.0 / (2.0 * (1.0 + (math.pi / 2.0) ** 2)), rel=1e-12)


def test_custom_grad_node_negative_input():
    x = Tensor(np.array([-3.0]), requires_grad=True)
    y = tn.custom_grad_node(heaviside, lambda v: atan_surrogate(v, 2.0), x)
    assert y.data[0] == 0.0
    y.backward(np.ones(1))
    expected = atan_surrogate_reference(-3.0, 2.0)
    assert x.grad[0] == pytest.approx(expected, rel=1e-12)
    assert x.grad[0] == pytest.approx(0.011133, abs=1e-6)


def test_custom_grad_node_identity_passthrough():
    x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    y = tn.custom_grad_node(lambda v: v, np.ones_like, x)
    np.testing.assert_array_equal(y.data, x.data)
    y.backward(np.array([3.0, 4.0]))
    np.testing.assert_array_equal(x.grad, [3.0, 4.0])


def test_grad_accumulates_across_paths():
    x = Tensor(np.array([2.0]), requires_grad=True)
    (x * x + x * 3.0).sum().backward()
    assert x.grad[0] == pytest.approx(2 * 2.0 + 3.0)


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with tn.no_grad():
        y = x * 2.0
    assert not y.requires_grad


# -- Adam -------------------------------------------------------------------

def test_adam_zero_grads_leave_params():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    p.grad = np.zeros(2)
    st_ = AdamState(lr=6e-4)
    adam_step({"p": p}, st_)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    assert st_.step == 1


def test_adam_first_step_moves_by_lr():
    p = Tensor(np.array([0.0]), requires_grad=True)
    p.grad = np.array([1.0])
    adam_step({"p": p}, AdamState(lr=6e-4, beta1=0.9, beta2=0.999))
    # m_hat = 1, v_hat = 1 after bias correction
    assert p.data[0] == pytest.approx(-6e-4 / (1.0 + 1e-8), rel=1e-12)


def test_adam_identical_params_identical_updates():
    rng = np.random.default_rng(0)
    g = rng.standard_normal(4)
    a = Tensor(np.ones(4), requires_grad=True)
    b = Tensor(np.ones(4), requires_grad=True)
    st_ = AdamState()
    for _ in range(3):
        a.grad, b.grad = g.copy(), g.copy()
        adam_step({"a": a, "b": b}, st_)
    np.testing.assert_array_equal(a.data, b.data)


def test_adam_step_counter_increases():
    p = Tensor(np.zeros(2), requires_grad=True)
    st_ = AdamState()
    steps = []
    for _ in range(3):
        p.grad = np.ones(2)
        adam_step({"p": p}, st_)
        steps.append(st_.step)
    assert steps == [1, 2, 3]


def test_adam_nan_names_parameter():
    p = Tensor(np.zeros(2), requires_grad=True)
    p.grad = np.array([0.0, np.nan])
    with pytest.raises(NonFiniteGradient, match="blocks.0.att.M_R"):
        adam_step({"blocks.0.att.M_R": p}, AdamState())
    np.testing.assert_array_equal(p.data, 0.0)


def test_adam_rejects_nonpositive_lr():
    with pytest.raises(ValueError):
        adam_step({}, AdamState(), lr=0.0)


# -- properties --------------------------------------------------------------

def test_seeded_rng_reproducible():
    a = tn.uniform_param(tn.make_rng(5), (4, 4), 4)
    b = tn.uniform_param(tn.make_rng(5), (4, 4), 4)
    np.testing.assert_array_equal(a.data, b.data)
    x = Tensor(np.ones((10, 10)))
    m1 = tn.dropout(x, 0.5, tn.make_rng(9)).data
    m2 = tn.dropout(x, 0.5, tn.make_rng(9)).data
    np.testing.assert_array_equal(m1, m2)


def test_uniform_init_bound():
    w = tn.uniform_param(tn.make_rng(0), (64, 64), 16)
    assert np.abs(w.data).max() <= 0.25
    assert w.data.dtype == np.float32


@settings(max_examples=25, deadline=None)
@given(rows=st.integers(1, 4), cols=st.integers(1, 4), seed=st.integers(0, 10_000))
def test_broadcast_mul_grad_property(rows, cols, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, rows, cols)), rng.standard_normal((1, cols))
    assert check_op_grad(lambda x, y: tn.sigmoid(x * y + y), [a, b]) <= 1e-4


def test_backward_grads_are_finite():
    rng = np.random.default_rng(0)
    W = Tensor(rng.standard_normal((6, 6)), requires_grad=True)
    x = Tensor(rng.standard_normal((3, 6)))
    loss = tn.softmax_cross_entropy(tn.layer_norm(x @ W, Tensor(np.ones(6)), Tensor(np.zeros(6))), [0, 1, 2])
    loss.backward()
    assert W.grad.shape == W.shape and np.all(np.isfinite(W.grad))


def test_fd_oracle_self_check():
    # the oracle itself recovers d/dx sin(x) = cos(x)
    x = np.array([0.3, 1.2])
    (g,) = fd_grad(lambda a: float(np.sin(a).sum()), [x])
    assert rel_err(g, np.cos(x)) < 1e-9
