"""
可微运算

除标量乘法外不做任何隐式广播：偏置、位置编码等按尾部维度对齐的加法
统一走 bias_add，批量维度的复制走 repeat_batch。
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from contextformer.core.exceptions import DimensionError
from contextformer.numeric.tensor import Tensor, record

_GELU_C = math.sqrt(2.0 / math.pi)


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op} 要求形状一致", a.shape, b.shape)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """矩阵乘法

    支持 (m,k)·(k,n)、带相同前导维的批量乘法，以及批量输入乘共享的二维权重。
    """
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError("matmul 内维不一致", a.shape, b.shape)
    shared_rhs = b.ndim == 2
    if not shared_rhs and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError("matmul 批量维不一致", a.shape, b.shape)
    a_data, b_data = a.data, b.data

    def backward(g: np.ndarray):
        ga = g @ np.swapaxes(b_data, -1, -2) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if shared_rhs:
                k, n = b_data.shape
                gb = a_data.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = np.swapaxes(a_data, -1, -2) @ g
        return ga, gb

    return record((a, b), a_data @ b_data, backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    return record((a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    return record((a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)
    a_data, b_data = a.data, b.data
    return record((a, b), a_data * b_data, lambda g: (g * b_data, g * a_data))


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return record((x,), x.data * c, lambda g: (g * c,))


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    """x + b，b 的形状必须等于 x 的尾部维度"""
    if b.ndim > x.ndim or x.shape[x.ndim - b.ndim :] != b.shape:
        raise DimensionError("bias_add 要求 b 的形状等于 x 的尾部维度", x.shape, b.shape)
    b_shape = b.shape

    def backward(g: np.ndarray):
        return g, g.reshape((-1,) + b_shape).sum(axis=0)

    return record((x, b), x.data + b.data, backward)


def sum(x: Tensor) -> Tensor:  # noqa: A001
    shape = x.shape
    return record((x,), np.asarray(x.data.sum()), lambda g: (np.full(shape, float(g)),))


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return record(
        (x,), np.asarray(x.data.mean()), lambda g: (np.full(shape, float(g) / n),)
    )


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    original = x.shape
    out = x.data.reshape(tuple(shape))
    return record((x,), out, lambda g: (g.reshape(original),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.transpose(x.data, axes)
    return record((x,), out, lambda g: (np.transpose(g, inverse),))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not xs:
        raise ValueError("concat 至少需要一个张量")
    axis = axis % xs[0].ndim
    for t in xs[1:]:
        if t.ndim != xs[0].ndim or any(
            t.shape[i] != xs[0].shape[i] for i in range(t.ndim) if i != axis
        ):
            raise DimensionError("concat 非拼接维不一致", xs[0].shape, t.shape)
    bounds = np.cumsum([t.shape[axis] for t in xs])[:-1]
    out = np.concatenate([t.data for t in xs], axis=axis)
    return record(tuple(xs), out, lambda g: tuple(np.split(g, bounds, axis=axis)))


def repeat_batch(x: Tensor, repeats: int) -> Tensor:
    """沿第 0 维把每个元素连续复制 repeats 次"""
    if repeats < 1:
        raise ValueError(f"repeats 必须为正: {repeats}")
    if repeats == 1:
        return x
    n, rest = x.shape[0], x.shape[1:]
    out = np.repeat(x.data, repeats, axis=0)
    return record(
        (x,), out, lambda g: (g.reshape((n, repeats) + rest).sum(axis=1),)
    )


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """减去最大值后的数值稳定 softmax"""
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax 轴 {axis} 越界", x.shape)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return record((x,), y, backward)


def gelu(x: Tensor) -> Tensor:
    """tanh 近似的 GeLU"""
    v = x.data
    inner = _GELU_C * (v + 0.044715 * v**3)
    t = np.tanh(inner)
    out = 0.5 * v * (1.0 + t)

    def backward(g: np.ndarray):
        d_inner = _GELU_C * (1.0 + 3.0 * 0.044715 * v**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t**2) * d_inner),)

    return record((x,), out, backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """沿最后一维做总体方差归一化，再乘 gain 加 bias"""
    if eps < 0:
        raise ValueError(f"layer_norm 的 eps 不能为负: {eps}")
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError("layer_norm 的 gain/bias 必须与最后一维等长", x.shape, gain.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered**2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    out = xhat * gain.data + bias.data
    gain_data = gain.data

    def backward(g: np.ndarray):
        dxhat = g * gain_data
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        dgain = (g * xhat).reshape(-1, d).sum(axis=0)
        dbias = g.reshape(-1, d).sum(axis=0)
        return dx, dgain, dbias

    return record((x, gain, bias), out, backward)


def dropout(
    x: Tensor,
    p: float,
    training: bool,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """训练时以概率 p 置零并把保留值放大 1/(1-p)；评估时原样返回"""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout 概率必须在 [0, 1) 内: {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("训练模式下的 dropout 需要随机数生成器")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return record((x,), x.data * mask, lambda g: (g * mask,))


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """均方误差，所有元素等权"""
    diff = sub(pred, target)
    return mean(mul(diff, diff))


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    """(B, N, d) -> (B, H, N, d/H)"""
    b, n, d = x.shape
    return transpose(reshape(x, (b, n, n_heads, d // n_heads)), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    """(B, H, N, dh) -> (B, N, H*dh)"""
    b, h, n, dh = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (b, n, h * dh))


def constant(array: np.ndarray) -> Tensor:
    """不参与求导的常量张量"""
    return Tensor._wrap(np.asarray(array, dtype=np.float64))
