"""
Transformer 基础组件：线性层、LayerNorm、Dropout、多头注意力与编码器块
"""

import math
from functools import lru_cache
from typing import Optional, Tuple, Union

import numpy as np

from contextformer.models.base import Module, Parameter
from contextformer.numeric import functional as fn
from contextformer.numeric.tensor import Tensor


def xavier_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    """Xavier 均匀初始化，权重形状 (fan_in, fan_out)"""
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@lru_cache(maxsize=32)
def _sinusoidal_table(length: int, d_model: int) -> np.ndarray:
    position = np.arange(length, dtype=np.float64)[:, None]
    div = np.exp(np.arange(0, d_model, 2, dtype=np.float64) * (-math.log(10000.0) / d_model))
    table = np.zeros((length, d_model))
    table[:, 0::2] = np.sin(position * div)
    table[:, 1::2] = np.cos(position * div[: d_model // 2])
    table.setflags(write=False)
    return table


def sinusoidal_encoding(length: int, d_model: int) -> Tensor:
    """固定正弦位置编码 (length, d_model)"""
    return fn.constant(_sinusoidal_table(length, d_model))


class Linear(Module):
    """y = x @ W + b，W 形状 (in, out)"""

    def __init__(
        self,
        in_features: int,
        out_features: int,
        rng: np.random.Generator,
        zero_init: bool = False,
    ) -> None:
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        if zero_init:
            weight = np.zeros((in_features, out_features))
        else:
            weight = xavier_uniform(in_features, out_features, rng)
        self.weight = Parameter(weight)
        self.bias = Parameter(np.zeros(out_features))

    def zero_(self) -> None:
        self.weight.data[...] = 0.0
        self.bias.data[...] = 0.0

    def forward(self, x: Tensor) -> Tensor:
        return fn.bias_add(fn.matmul(x, self.weight), self.bias)


class LayerNorm(Module):
    def __init__(self, d_model: int, eps: float = 1e-5) -> None:
        super().__init__()
        self.eps = eps
        self.gain = Parameter(np.ones(d_model))
        self.bias = Parameter(np.zeros(d_model))

    def forward(self, x: Tensor) -> Tensor:
        return fn.layer_norm(x, self.gain, self.bias, self.eps)


class Dropout(Module):
    def __init__(self, p: float) -> None:
        super().__init__()
        self.p = p

    def forward(self, x: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        return fn.dropout(x, self.p, self.training, rng)


class FeedForward(Module):
    """Linear -> GeLU -> Dropout -> Linear"""

    def __init__(self, d_model: int, ff_dim: int, dropout: float, rng: np.random.Generator) -> None:
        super().__init__()
        self.hidden = Linear(d_model, ff_dim, rng)
        self.dropout = Dropout(dropout)
        self.out = Linear(ff_dim, d_model, rng)

    def forward(self, x: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        return self.out(self.dropout(fn.gelu(self.hidden(x)), rng))


class MultiHeadAttention(Module):
    """多头注意力，query 来自一路序列，key/value 来自另一路（自注意力时两者相同）

    zero_output=True 时输出投影初始化为零，整个模块初始输出恒为零。
    """

    def __init__(
        self,
        d_model: int,
        n_heads: int,
        rng: np.random.Generator,
        zero_output: bool = False,
    ) -> None:
        super().__init__()
        self.n_heads = n_heads
        self.scale = 1.0 / math.sqrt(d_model // n_heads)
        self.w_q = Linear(d_model, d_model, rng)
        self.w_k = Linear(d_model, d_model, rng)
        self.w_v = Linear(d_model, d_model, rng)
        self.w_o = Linear(d_model, d_model, rng, zero_init=zero_output)

    def forward(
        self,
        query: Tensor,
        context: Tensor,
        return_weights: bool = False,
    ) -> Union[Tensor, Tuple[Tensor, np.ndarray]]:
        q = fn.split_heads(self.w_q(query), self.n_heads)
        k = fn.split_heads(self.w_k(context), self.n_heads)
        v = fn.split_heads(self.w_v(context), self.n_heads)
        scores = fn.scale(fn.matmul(q, fn.transpose(k, (0, 1, 3, 2))), self.scale)
        weights = fn.softmax(scores, axis=-1)
        out = self.w_o(fn.merge_heads(fn.matmul(weights, v)))
        if return_weights:
            return out, weights.numpy()
        return out


class EncoderBlock(Module):
    """后归一化 Transformer 编码器块：自注意力 + 前馈，各带残差与 LayerNorm"""

    def __init__(
        self,
        d_model: int,
        n_heads: int,
        ff_dim: int,
        dropout: float,
        rng: np.random.Generator,
        eps: float = 1e-5,
    ) -> None:
        super().__init__()
        self.attention = MultiHeadAttention(d_model, n_heads, rng)
        self.attn_dropout = Dropout(dropout)
        self.norm1 = LayerNorm(d_model, eps)
        self.ff = FeedForward(d_model, ff_dim, dropout, rng)
        self.ff_dropout = Dropout(dropout)
        self.norm2 = LayerNorm(d_model, eps)

    def forward(self, x: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        h = self.norm1(fn.add(x, self.attn_dropout(self.attention(x, x), rng)))
        return self.norm2(fn.add(h, self.ff_dropout(self.ff(h, rng), rng)))
