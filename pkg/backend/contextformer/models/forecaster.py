"""
补丁式 Transformer 基础预测模型（上下文无关）

输入 (B, L, F) 按通道独立切成补丁，所有通道共享权重；
投影头把展平后的隐藏状态映射为 (B, T, F) 的预测。
"""

from typing import Optional, Tuple

import numpy as np

from contextformer.core.exceptions import ConfigError, DimensionError
from contextformer.core.model_config import ModelConfig
from contextformer.models.base import Module, ModuleList
from contextformer.models.layers import Dropout, EncoderBlock, Linear, sinusoidal_encoding
from contextformer.numeric import functional as fn
from contextformer.numeric.tensor import Tensor


def as_batch(x: np.ndarray, rows: int, cols: int, label: str) -> Tuple[np.ndarray, bool]:
    """把 (rows, cols) 或 (B, rows, cols) 统一成批量形式，返回是否为单样本"""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (rows, cols):
        raise DimensionError(f"{label} 形状不符合配置", x.shape, (rows, cols))
    return x, single


def patchify(x_hist: np.ndarray, config: ModelConfig) -> np.ndarray:
    """(B, L, F) -> (B*F, N, patch_len)，通道独立"""
    b = x_hist.shape[0]
    series = np.transpose(x_hist, (0, 2, 1)).reshape(b * config.F, config.L)
    windows = np.lib.stride_tricks.sliding_window_view(series, config.patch_len, axis=-1)
    return np.ascontiguousarray(windows[:, :: config.patch_stride, :][:, : config.n_patches])


class PatchEncoder:
    """补丁嵌入与编码器块之间共享的前向逻辑，供基础模型和 ContextFormer 复用"""

    @staticmethod
    def embed(
        patch_embed: Linear,
        dropout: Dropout,
        x_hist: np.ndarray,
        config: ModelConfig,
        rng: Optional[np.random.Generator],
    ) -> Tensor:
        patches = fn.constant(patchify(x_hist, config))
        h = fn.bias_add(patch_embed(patches), sinusoidal_encoding(config.n_patches, config.d_model))
        return dropout(h, rng)

    @staticmethod
    def project(head: Linear, h: Tensor, batch: int, config: ModelConfig) -> Tensor:
        flat = fn.reshape(h, (batch * config.F, config.n_patches * config.d_model))
        out = fn.reshape(head(flat), (batch, config.F, config.T))
        return fn.transpose(out, (0, 2, 1))


class BaseForecaster(Module):
    """上下文无关的基础预测模型"""

    def __init__(self, config: ModelConfig, rng: np.random.Generator) -> None:
        super().__init__()
        self.config = config
        self.patch_embed = Linear(config.patch_len, config.d_model, rng)
        self.dropout = Dropout(config.dropout)
        self.blocks = ModuleList(
            [
                EncoderBlock(
                    config.d_model,
                    config.n_heads,
                    config.ff_dim,
                    config.dropout,
                    rng,
                    config.layer_norm_eps,
                )
                for _ in range(config.n_blocks)
            ]
        )
        self.head = Linear(config.n_patches * config.d_model, config.T, rng)

    def forward(
        self,
        x_hist: np.ndarray,
        c_hist: Optional[np.ndarray] = None,
        timestamps: Optional[np.ndarray] = None,
        rng: Optional[np.random.Generator] = None,
    ) -> Tensor:
        """c_hist / timestamps 被忽略，保持与上下文感知模型相同的调用方式"""
        cfg = self.config
        x, single = as_batch(x_hist, cfg.L, cfg.F, "x_hist")
        h = PatchEncoder.embed(self.patch_embed, self.dropout, x, cfg, rng)
        for block in self.blocks:
            h = block(h, rng)
        out = PatchEncoder.project(self.head, h, x.shape[0], cfg)
        return fn.reshape(out, (cfg.T, cfg.F)) if single else out


def set_dropout(model: Module, p: float) -> None:
    """统一修改模型中所有 Dropout 的比例"""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout 概率必须在 [0, 1) 内: {p}")
    for module in model.modules():
        if isinstance(module, Dropout):
            module.p = p


def init_base(config: ModelConfig, rng: np.random.Generator) -> BaseForecaster:
    """按配置初始化基础模型（权重 Xavier 均匀，偏置为零）"""
    if not isinstance(config, ModelConfig):
        config = ModelConfig.model_validate(config)
    return BaseForecaster(config, rng)


def forward_base(model: BaseForecaster, x_hist: np.ndarray) -> np.ndarray:
    """评估模式前向，x_hist 为 (L, F) 或 (B, L, F)"""
    model.eval()
    return model(x_hist).numpy()
