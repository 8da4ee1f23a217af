"""
有限差分梯度校验
"""

from typing import Callable

import numpy as np

from contextformer.numeric.tensor import Tape, Tensor

DEFAULT_STEP = 1e-5


def numeric_grad(
    fn: Callable[[], Tensor], tensor: Tensor, step: float = DEFAULT_STEP
) -> np.ndarray:
    """对 tensor 的每个元素做中心差分，fn 每次重新计算标量损失"""
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        plus = fn().item()
        flat[i] = original - step
        minus = fn().item()
        flat[i] = original
        out[i] = (plus - minus) / (2.0 * step)
    return grad


def analytic_grad(fn: Callable[[], Tensor], tensor: Tensor) -> np.ndarray:
    """在新 Tape 上前向并反向一次，返回 tensor 的梯度"""
    tensor.grad = None
    with Tape() as tape:
        loss = fn()
        tape.backward(loss)
    if tensor.grad is None:
        return np.zeros_like(tensor.data)
    return tensor.grad.copy()


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """基于范数的相对误差 ||a - n|| / max(||a||, ||n||)"""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)


def check_gradient(
    fn: Callable[[], Tensor], tensor: Tensor, step: float = DEFAULT_STEP
) -> float:
    """返回解析梯度与数值梯度的相对误差"""
    a = analytic_grad(fn, tensor)
    n = numeric_grad(fn, tensor, step)
    return relative_error(a, n)
