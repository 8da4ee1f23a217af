"""
自动微分张量测试
"""

import threading

import numpy as np
import pytest

from contextformer.core.exceptions import DimensionError
from contextformer.numeric import functional as fn
from contextformer.numeric.gradcheck import analytic_grad, check_gradient, numeric_grad
from contextformer.numeric.tensor import Tape, Tensor, active_tape, backward

TOL = 1e-6


def leaf(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def weighted(out: Tensor, weights: np.ndarray) -> Tensor:
    """sum(out * W)，随机权重避免梯度恰好对称"""
    return fn.sum(fn.mul(out, fn.constant(weights)))


class TestForward:
    def test_matmul_identity(self):
        m = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = fn.matmul(Tensor(np.eye(2)), m)
        np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])

    def test_matmul_row_by_column(self):
        out = fn.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        np.testing.assert_array_equal(out.data, [[11.0]])

    def test_matmul_shape_error_names_both_shapes(self):
        with pytest.raises(DimensionError) as info:
            fn.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
        assert "(2, 3)" in str(info.value)

    def test_elementwise(self):
        np.testing.assert_array_equal(fn.add(Tensor([1.0, 2.0]), Tensor([0.0, 0.0])).data, [1, 2])
        np.testing.assert_array_equal(fn.mul(Tensor([2.0, 3.0]), Tensor([4.0, 5.0])).data, [8, 15])
        np.testing.assert_array_equal(fn.sub(Tensor([2.0, 3.0]), Tensor([1.0, 1.0])).data, [1, 2])
        np.testing.assert_array_equal((Tensor([1.0, -2.0]) * 3).data, [3, -6])

    def test_elementwise_shape_mismatch(self):
        with pytest.raises(DimensionError):
            fn.add(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))

    def test_softmax_symmetry_and_stability(self):
        np.testing.assert_allclose(fn.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
        np.testing.assert_allclose(fn.softmax(Tensor([1000.0, 1000.0])).data, [0.5, 0.5])

    def test_softmax_rows_sum_to_one_and_shift_invariant(self, rng):
        x = rng.uniform(-5, 5, size=(7, 9))
        y = fn.softmax(Tensor(x), axis=-1).data
        np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12)
        shifted = fn.softmax(Tensor(x + 123.0), axis=-1).data
        np.testing.assert_allclose(shifted, y, atol=1e-12)

    def test_softmax_invalid_axis(self):
        with pytest.raises(DimensionError):
            fn.softmax(Tensor([1.0, 2.0]), axis=3)

    def test_gelu_zero(self):
        assert fn.gelu(Tensor([0.0])).data[0] == 0.0

    def test_layer_norm_hand_computation(self):
        out = fn.layer_norm(Tensor([1.0, 2.0, 3.0]), Tensor(np.ones(3)), Tensor(np.zeros(3)), eps=0.0)
        np.testing.assert_allclose(out.data, [-np.sqrt(1.5), 0.0, np.sqrt(1.5)], atol=1e-12)

    def test_layer_norm_rejects_negative_eps(self):
        with pytest.raises(ValueError):
            fn.layer_norm(Tensor([1.0, 2.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=-1e-5)

    def test_dropout_eval_identity(self, rng):
        x = Tensor(rng.normal(size=(4, 5)))
        assert fn.dropout(x, 0.1, training=False) is x

    def test_dropout_invalid_probability(self, rng):
        with pytest.raises(ValueError):
            fn.dropout(Tensor([1.0]), 1.0, training=True, rng=rng)
        with pytest.raises(ValueError):
            fn.dropout(Tensor([1.0]), -0.1, training=False)

    def test_dropout_preserves_expectation(self, rng):
        out = fn.dropout(Tensor(np.ones(100_000)), 0.1, training=True, rng=rng)
        assert abs(out.data.mean() - 1.0) < 0.01
        kept = out.data[out.data != 0.0]
        np.testing.assert_allclose(kept, 1.0 / 0.9)

    def test_repeat_batch(self):
        x = Tensor(np.arange(6.0).reshape(2, 3))
        np.testing.assert_array_equal(fn.repeat_batch(x, 2).data, [[0, 1, 2], [0, 1, 2], [3, 4, 5], [3, 4, 5]])

    def test_bias_add_requires_trailing_shape(self):
        with pytest.raises(DimensionError):
            fn.bias_add(Tensor(np.zeros((2, 3))), Tensor(np.zeros(2)))


class TestBackward:
    def test_sum_gradient(self):
        x = leaf([1.0, 2.0, 3.0])
        with Tape() as tape:
            tape.backward(fn.sum(x))
        np.testing.assert_array_equal(x.grad, [1, 1, 1])

    def test_mean_of_squares(self):
        x = leaf([1.0, 2.0])
        with Tape():
            backward(fn.mean(fn.mul(x, x)))
        np.testing.assert_allclose(x.grad, [1.0, 2.0])

    def test_non_scalar_loss(self):
        x = leaf([1.0, 2.0])
        with Tape() as tape:
            with pytest.raises(DimensionError):
                tape.backward(fn.scale(x, 2.0))

    def test_repeated_backward_accumulates(self):
        x = leaf([1.0, 2.0])
        for _ in range(2):
            with Tape() as tape:
                tape.backward(fn.sum(fn.scale(x, 3.0)))
        np.testing.assert_array_equal(x.grad, [6.0, 6.0])

    def test_diamond_graph(self, rng):
        """y = x*x 被使用两次：loss = Σ (y + y) * x = Σ 2x³"""
        values = rng.uniform(-1, 1, size=5)
        x = leaf(values)
        with Tape() as tape:
            y = fn.mul(x, x)
            z = fn.add(y, y)
            tape.backward(fn.sum(fn.mul(z, x)))
        np.testing.assert_allclose(x.grad, 6.0 * values**2, rtol=1e-12)

    def test_intermediate_gradients_are_populated(self):
        x = leaf([1.0, 2.0])
        with Tape() as tape:
            y = fn.scale(x, 2.0)
            tape.backward(fn.sum(y))
        np.testing.assert_array_equal(y.grad, [1.0, 1.0])

    def test_no_recording_outside_tape(self):
        x = leaf([1.0])
        y = fn.add(x, x)
        assert y.node_id is None
        assert active_tape() is None
        with pytest.raises(RuntimeError):
            backward(fn.sum(y))

    def test_loss_from_other_tape_rejected(self):
        x = leaf([1.0])
        with Tape():
            loss = fn.sum(x)
        with Tape() as other:
            with pytest.raises(ValueError):
                other.backward(loss)

    def test_tapes_are_thread_confined(self, rng):
        values = [rng.uniform(-1, 1, size=4) for _ in range(4)]
        results = {}

        def work(i):
            x = leaf(values[i])
            with Tape() as tape:
                tape.backward(fn.sum(fn.mul(x, x)))
            results[i] = x.grad

        threads = [threading.Thread(target=work, args=(i,)) for i in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        for i in range(4):
            np.testing.assert_allclose(results[i], 2 * values[i])


# ===== 有限差分校验：每个可微运算 × 20 个种子 =====

def _case(name: str, r: np.random.Generator):
    """返回 (待校验的叶子张量列表, 构造标量损失的函数)"""
    u = lambda *shape: r.uniform(-1, 1, size=shape)  # noqa: E731
    if name == "matmul":
        a, b = leaf(u(3, 4)), leaf(u(4, 2))
        w = u(3, 2)
        return [a, b], lambda: weighted(fn.matmul(a, b), w)
    if name == "matmul_batched":
        a, b = leaf(u(2, 3, 4)), leaf(u(2, 4, 2))
        w = u(2, 3, 2)
        return [a, b], lambda: weighted(fn.matmul(a, b), w)
    if name == "matmul_shared_rhs":
        a, b = leaf(u(2, 3, 4)), leaf(u(4, 2))
        w = u(2, 3, 2)
        return [a, b], lambda: weighted(fn.matmul(a, b), w)
    if name in ("add", "sub", "mul"):
        a, b = leaf(u(3, 4)), leaf(u(3, 4))
        op = getattr(fn, name)
        w = u(3, 4)
        return [a, b], lambda: weighted(op(a, b), w)
    if name == "scale":
        a, w = leaf(u(5)), u(5)
        return [a], lambda: weighted(fn.scale(a, -1.7), w)
    if name == "bias_add":
        a, b, w = leaf(u(2, 3, 4)), leaf(u(3, 4)), u(2, 3, 4)
        return [a, b], lambda: weighted(fn.bias_add(a, b), w)
    if name == "sum":
        a = leaf(u(3, 2))
        return [a], lambda: fn.mul(fn.sum(a), fn.sum(a))
    if name == "mean":
        a = leaf(u(3, 2))
        return [a], lambda: fn.mul(fn.mean(a), fn.mean(a))
    if name == "reshape":
        a, w = leaf(u(2, 6)), u(3, 4)
        return [a], lambda: weighted(fn.reshape(a, (3, 4)), w)
    if name == "transpose":
        a, w = leaf(u(2, 3, 4)), u(4, 2, 3)
        return [a], lambda: weighted(fn.transpose(a, (2, 0, 1)), w)
    if name == "concat":
        a, b, w = leaf(u(2, 3)), leaf(u(2, 2)), u(2, 5)
        return [a, b], lambda: weighted(fn.concat([a, b], axis=-1), w)
    if name == "repeat_batch":
        a, w = leaf(u(2, 3)), u(6, 3)
        return [a], lambda: weighted(fn.repeat_batch(a, 3), w)
    if name == "softmax":
        a, w = leaf(u(5)), u(5)
        return [a], lambda: weighted(fn.softmax(a), w)
    if name == "gelu":
        a, w = leaf(u(3, 4)), u(3, 4)
        return [a], lambda: weighted(fn.gelu(a), w)
    if name == "layer_norm":
        a, g, b, w = leaf(u(3, 4)), leaf(u(4)), leaf(u(4)), u(3, 4)
        return [a, g, b], lambda: weighted(fn.layer_norm(a, g, b, 1e-5), w)
    if name == "dropout":
        a, w = leaf(u(4, 5)), u(4, 5)
        seed = int(r.integers(1 << 30))
        return [a], lambda: weighted(fn.dropout(a, 0.3, True, np.random.default_rng(seed)), w)
    if name == "mse_loss":
        a, b = leaf(u(3, 4)), leaf(u(3, 4))
        return [a, b], lambda: fn.mse_loss(a, b)
    if name == "heads":
        a, w = leaf(u(2, 3, 4)), u(2, 3, 4)
        return [a], lambda: weighted(fn.merge_heads(fn.gelu(fn.split_heads(a, 2))), w)
    raise KeyError(name)


OPS = [
    "matmul",
    "matmul_batched",
    "matmul_shared_rhs",
    "add",
    "sub",
    "mul",
    "scale",
    "bias_add",
    "sum",
    "mean",
    "reshape",
    "transpose",
    "concat",
    "repeat_batch",
    "softmax",
    "gelu",
    "layer_norm",
    "dropout",
    "mse_loss",
    "heads",
]


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("op", OPS)
def test_gradient_matches_finite_differences(op, seed):
    tensors, loss_fn = _case(op, np.random.default_rng(seed))
    for tensor in tensors:
        assert check_gradient(loss_fn, tensor) <= TOL


def test_matmul_sum_gradient_against_finite_differences(rng):
    a, b = leaf(rng.uniform(-1, 1, (3, 4))), leaf(rng.uniform(-1, 1, (4, 2)))
    loss = lambda: fn.sum(fn.matmul(a, b))  # noqa: E731
    analytic = analytic_grad(loss, a)
    np.testing.assert_allclose(analytic, np.tile(b.data.sum(axis=1), (3, 1)), rtol=1e-12)
    assert check_gradient(loss, a) <= TOL


def test_two_layer_network_gradient(rng):
    x = Tensor(rng.uniform(-1, 1, (6, 3)))
    target = Tensor(rng.uniform(-1, 1, (6, 2)))
    w1, b1 = leaf(rng.uniform(-1, 1, (3, 5))), leaf(rng.uniform(-1, 1, 5))
    w2, b2 = leaf(rng.uniform(-1, 1, (5, 2))), leaf(rng.uniform(-1, 1, 2))

    def loss():
        hidden = fn.gelu(fn.bias_add(fn.matmul(x, w1), b1))
        return fn.mse_loss(fn.bias_add(fn.matmul(hidden, w2), b2), target)

    for param in (w1, b1, w2, b2):
        assert check_gradient(loss, param) <= TOL


def test_numeric_grad_restores_values(rng):
    a = leaf(rng.uniform(-1, 1, 4))
    before = a.data.copy()
    numeric_grad(lambda: fn.sum(fn.mul(a, a)), a)
    np.testing.assert_array_equal(a.data, before)
