import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wavesr import tensor as T
from wavesr.tensor import Rng, Tensor, counter, grad_check, no_grad, record_ops


def test_matmul_identity():
    a = Tensor(np.eye(2))
    b = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal((a @ b).data, b.data)


def test_matmul_hand_value():
    assert (Tensor([[1.0, 2.0]]) @ Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]


def test_matmul_counter():
    counter.reset()
    Tensor(np.ones((2, 3))) @ Tensor(np.ones((3, 4)))
    assert counter.mult_adds == 24


def test_matmul_batched_counter():
    counter.reset()
    Tensor(np.ones((5, 2, 3))) @ Tensor(np.ones((3, 4)))
    assert counter.mult_adds == 5 * 24


def test_matmul_shape_error():
    with pytest.raises(ValueError, match="inner dimensions"):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


def test_conv2d_identity_kernel():
    x = Tensor(np.random.default_rng(0).normal(size=(2, 5, 6)))
    w = Tensor(np.eye(2).reshape(2, 2, 1, 1))
    np.testing.assert_array_equal(T.conv2d(x, w).data, x.data)


def test_conv2d_ones_kernel_constant_image():
    c = 0.7
    x = Tensor(np.full((1, 5, 5), c))
    y = T.conv2d(x, Tensor(np.ones((1, 1, 3, 3)))).data[0]
    # neighbour counts under zero padding
    expected = np.array([[4, 6, 6, 6, 4], [6, 9, 9, 9, 6], [6, 9, 9, 9, 6], [6, 9, 9, 9, 6], [4, 6, 6, 6, 4]]) * c
    np.testing.assert_allclose(y, expected, rtol=0, atol=1e-14)


def test_conv2d_counter():
    counter.reset()
    T.conv2d(Tensor(np.zeros((3, 7, 5))), Tensor(np.zeros((4, 3, 3, 3))))
    assert counter.mult_adds == 4 * 3 * 9 * 7 * 5


def test_conv2d_channel_mismatch():
    with pytest.raises(ValueError, match="channels"):
        T.conv2d(Tensor(np.zeros((2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))


def test_layer_norm_cases():
    one, zero = Tensor(np.ones(2)), Tensor(np.zeros(2))
    np.testing.assert_array_equal(T.layer_norm(Tensor([3.0, 3.0]), one, zero).data, [0.0, 0.0])
    np.testing.assert_allclose(T.layer_norm(Tensor([1.0, 3.0]), one, zero).data, [-1.0, 1.0], atol=1e-4)
    np.testing.assert_array_equal(T.layer_norm(Tensor([2.0, 2.0]), one, Tensor([5.0, 5.0])).data, [5.0, 5.0])
    with pytest.raises(ValueError):
        T.layer_norm(Tensor(np.ones((2, 3))), one, zero)


def test_gelu_values():
    assert T.gelu(Tensor([0.0])).data[0] == 0.0
    assert abs(T.gelu(Tensor([10.0])).data[0] - 10.0) / 10.0 < 1e-3
    # 0.5 * (1 + tanh(sqrt(2/pi) * 1.044715))
    assert T.gelu(Tensor([1.0])).data[0] == pytest.approx(0.8411919906, abs=1e-9)


def test_pixel_shuffle_cases():
    x = Tensor(np.random.default_rng(0).normal(size=(3, 4, 5)))
    np.testing.assert_array_equal(T.pixel_shuffle(x, 1).data, x.data)
    abcd = Tensor(np.array([1.0, 2.0, 3.0, 4.0]).reshape(4, 1, 1))
    assert T.pixel_shuffle(abcd, 2).data.tolist() == [[[1.0, 2.0], [3.0, 4.0]]]
    y = Tensor(np.random.default_rng(1).normal(size=(2, 12, 3, 4)))
    np.testing.assert_array_equal(T.pixel_unshuffle(T.pixel_shuffle(y, 2), 2).data, y.data)
    with pytest.raises(ValueError, match="divisible"):
        T.pixel_shuffle(Tensor(np.zeros((5, 2, 2))), 2)


def test_backward_sum_and_square():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, [1.0, 1.0, 1.0])
    x.grad = None
    (x * x).sum().backward()
    np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])


def test_backward_twice_is_an_error():
    x = Tensor([1.0, 2.0], requires_grad=True)
    loss = (x * x).sum()
    loss.backward()
    with pytest.raises(RuntimeError, match="twice"):
        loss.backward()


def test_backward_needs_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        (x * 2.0).backward()


def test_backward_accumulates_over_shared_subgraph():
    x = Tensor([1.5], requires_grad=True)
    y = x * x
    (y + y * 3.0).sum().backward()
    assert x.grad[0] == pytest.approx(4 * 2 * 1.5)


def test_non_finite_raises_naming_op():
    with pytest.raises(FloatingPointError, match="exp"):
        T.exp(Tensor([1000.0]))


def test_record_ops_and_no_grad():
    x = Tensor([1.0], requires_grad=True)
    with record_ops() as ops, no_grad():
        y = T.gelu(x * 2.0)
    assert ops == ["mul", "gelu"]
    assert not y.requires_grad


def test_grad_check_square():
    x = Tensor(np.random.default_rng(0).normal(size=(4, 3)))
    assert grad_check(lambda t: (t * t).sum(), x, 1e-6) < 1e-7


def test_grad_check_l1_away_from_ties():
    rng = np.random.default_rng(1)
    x = Tensor(rng.uniform(0, 1, 20))
    target = Tensor(x.data + np.where(rng.uniform(size=20) > 0.5, 0.3, -0.3))
    assert grad_check(lambda t: T.tabs(t - target).mean(), x, 1e-6) < 1e-6


def test_grad_check_non_finite():
    with pytest.raises(FloatingPointError):
        grad_check(lambda t: T.exp(t * 1000.0).sum(), Tensor([1.0]), 1e-6)


def test_rng_determinism():
    a, b = Rng(7).uniform((5,)), Rng(7).uniform((5,))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, Rng(8).uniform((5,)))


def test_init_uniform_bounds_and_float32_exact():
    t = T.init_uniform(Rng(0), (64, 16), 16)
    assert np.abs(t.data).max() <= 0.25
    np.testing.assert_array_equal(t.data.astype(np.float32).astype(np.float64), t.data)


@settings(max_examples=25, deadline=None)
@given(m=st.integers(1, 5), k=st.integers(1, 5), n=st.integers(1, 5))
def test_matmul_counter_law(m, k, n):
    counter.reset()
    Tensor(np.ones((m, k))) @ Tensor(np.ones((k, n)))
    assert counter.mult_adds == m * k * n


@settings(max_examples=10, deadline=None)
@given(rows=st.integers(2, 8), cols=st.integers(3, 8), seed=st.integers(0, 1000))
def test_gelu_layer_norm_grad_random_shapes(rows, cols, seed):
    # two features normalize to +-1 whatever the input, leaving only round-off to check
    shape = (rows, cols)
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=shape))
    g, b = Tensor(rng.normal(size=shape[-1])), Tensor(rng.normal(size=shape[-1]))
    w = Tensor(rng.uniform(-1, 1, shape))
    assert grad_check(lambda t: (T.gelu(T.layer_norm(t, g, b)) * w).sum(), x, 1e-6) <= 1e-5


def test_determinism_bitwise():
    def run():
        x = Tensor(Rng(3).normal((2, 4, 6, 6)), requires_grad=True)
        w = T.init_uniform(Rng(4), (3, 4, 3, 3), 36)
        y = T.gelu(T.conv2d(x, w)).mean()
        y.backward()
        return y.data.copy(), x.grad.copy(), w.grad.copy()

    for a, b in zip(run(), run()):
        assert a.tobytes() == b.tobytes()
