"""
ContextFormer 附加模块

元数据嵌入与时间嵌入各自经过稠密编码器、位置编码和 Transformer 编码器，
再通过每个块前的两路并行交叉注意力注入到冻结的基础模型中。
交叉注意力的输出投影与嵌入编码器的最后一个线性层初始化为零，
投影头复制自基础模型，因此刚挂载时的预测与基础模型逐位一致。
"""

import copy
from typing import List, Optional, Sequence, Tuple

import numpy as np

from contextformer.core.exceptions import ConfigError, DimensionError, MissingContextError
from contextformer.core.logging import get_logger
from contextformer.core.model_config import ModelConfig
from contextformer.models.base import Module, ModuleList, Parameter
from contextformer.models.forecaster import BaseForecaster, PatchEncoder, as_batch
from contextformer.models.layers import (
    Dropout,
    EncoderBlock,
    Linear,
    MultiHeadAttention,
    sinusoidal_encoding,
)
from contextformer.numeric import functional as fn
from contextformer.numeric.tensor import Tensor
from contextformer.utils.time_features import decompose_timestamps

logger = get_logger("model")

NamedParameters = List[Tuple[str, Parameter]]


class MetadataEmbedding(Module):
    """离散（独热）与连续元数据分别编码，必要时融合，再叠加位置编码送入编码器"""

    def __init__(
        self,
        config: ModelConfig,
        rng: np.random.Generator,
        cardinalities: Optional[Sequence[int]] = None,
        n_continuous: Optional[int] = None,
    ) -> None:
        super().__init__()
        cards = list(config.categorical_cardinalities if cardinalities is None else cardinalities)
        self.n_categorical = int(np.sum(cards)) if cards else 0
        self.n_continuous = config.n_continuous if n_continuous is None else n_continuous
        if self.n_categorical + self.n_continuous == 0:
            raise ConfigError("元数据嵌入至少需要一个离散或连续特征")
        self.length = config.L
        self.d_model = config.d_model
        d = config.d_model

        self.categorical_encoder = Linear(self.n_categorical, d, rng) if self.n_categorical else None
        self.continuous_encoder = Linear(self.n_continuous, d, rng) if self.n_continuous else None
        # 两类特征都存在时 2d -> d 融合，否则直接使用单路输出
        both = self.categorical_encoder is not None and self.continuous_encoder is not None
        self.fusion = Linear(2 * d, d, rng) if both else None
        self.encoder = ModuleList(
            [
                EncoderBlock(d, config.n_heads, config.ff_dim, config.dropout, rng, config.layer_norm_eps)
                for _ in range(config.embed_encoder_layers)
            ]
        )
        self.dropout = Dropout(config.dropout)
        self.final_linear().zero_()

    def final_linear(self) -> Linear:
        """嵌入流水线中的最后一个线性层"""
        if len(self.encoder):
            return self.encoder[-1].ff.out
        if self.fusion is not None:
            return self.fusion
        return self.categorical_encoder or self.continuous_encoder

    def forward(self, c_hist: np.ndarray, rng: Optional[np.random.Generator] = None) -> Tensor:
        """(B, L, K) -> (B, L, d_model)"""
        width = self.n_categorical + self.n_continuous
        if c_hist.ndim != 3 or c_hist.shape[1:] != (self.length, width):
            raise DimensionError("c_hist 形状不符合配置", c_hist.shape, (self.length, width))
        parts = []
        if self.categorical_encoder is not None:
            parts.append(self.categorical_encoder(fn.constant(c_hist[..., : self.n_categorical])))
        if self.continuous_encoder is not None:
            parts.append(self.continuous_encoder(fn.constant(c_hist[..., self.n_categorical :])))
        h = self.fusion(fn.concat(parts, axis=-1)) if self.fusion is not None else parts[0]
        h = self.dropout(fn.bias_add(h, sinusoidal_encoding(self.length, self.d_model)), rng)
        for block in self.encoder:
            h = block(h, rng)
        return h


class TemporalEmbedding(MetadataEmbedding):
    """时间戳分解后的连续特征嵌入"""

    def __init__(self, config: ModelConfig, rng: np.random.Generator) -> None:
        super().__init__(config, rng, cardinalities=[], n_continuous=len(config.timestamp_fields))
        self.fields = list(config.timestamp_fields)

    def forward(self, timestamps: np.ndarray, rng: Optional[np.random.Generator] = None) -> Tensor:
        """(B, L) 整数时间戳 -> (B, L, d_model)"""
        return super().forward(decompose_timestamps(timestamps, self.fields), rng)


class ContextFormerModel(Module):
    """冻结的基础模型 + 元数据/时间嵌入 + 每块两路交叉注意力 + 新投影头"""

    def __init__(
        self,
        base: BaseForecaster,
        config: ModelConfig,
        rng: np.random.Generator,
        freeze_base: bool = True,
    ) -> None:
        super().__init__()
        base_cfg = base.config
        structural = (
            "d_model", "n_blocks", "n_heads", "patch_len", "patch_stride",
            "L", "T", "F", "ff_dim", "layer_norm_eps",
        )
        mismatched = [k for k in structural if getattr(base_cfg, k) != getattr(config, k)]
        if mismatched:
            raise ConfigError(f"上下文配置与基础模型不兼容: {mismatched}")
        if not (config.use_metadata or config.use_temporal):
            raise ConfigError("use_metadata 与 use_temporal 至少启用一个")

        self.config = config
        self.freeze_base = freeze_base
        base = copy.deepcopy(base)
        # 只保留基础模型的输入层与隐藏层，投影头另行复制
        self.patch_embed = base.patch_embed
        self.dropout = base.dropout
        self.blocks = base.blocks
        self.head = copy.deepcopy(base.head)

        self.metadata_embed = MetadataEmbedding(config, rng) if config.use_metadata else None
        self.temporal_embed = TemporalEmbedding(config, rng) if config.use_temporal else None
        self.cross_metadata = (
            ModuleList([MultiHeadAttention(config.d_model, config.n_heads, rng, zero_output=True) for _ in self.blocks])
            if config.use_metadata
            else None
        )
        self.cross_temporal = (
            ModuleList([MultiHeadAttention(config.d_model, config.n_heads, rng, zero_output=True) for _ in self.blocks])
            if config.use_temporal
            else None
        )
        self.cross_dropout = Dropout(config.dropout)
        self._warned_timestamps = False

        self.set_requires_grad(True)
        if freeze_base:
            for module in (self.patch_embed, self.blocks):
                module.set_requires_grad(False)

    def frozen_names(self) -> List[str]:
        return [name for name, p in self.named_parameters() if not p.requires_grad]

    def context_modules(self) -> List[Module]:
        """新挂载的上下文通路：嵌入、交叉注意力及其 Dropout"""
        candidates = (
            self.metadata_embed,
            self.temporal_embed,
            self.cross_metadata,
            self.cross_temporal,
            self.cross_dropout,
        )
        return [m for m in candidates if m is not None]

    def train(self, mode: bool = True) -> "ContextFormerModel":
        super().train(mode)
        # 冻结的基础部分始终按评估模式运行
        if self.freeze_base:
            for module in (self.patch_embed, self.dropout, self.blocks):
                module.train(False)
        return self

    def forward(
        self,
        x_hist: np.ndarray,
        c_hist: Optional[np.ndarray] = None,
        timestamps: Optional[np.ndarray] = None,
        rng: Optional[np.random.Generator] = None,
    ) -> Tensor:
        cfg = self.config
        x, single = as_batch(x_hist, cfg.L, cfg.F, "x_hist")
        batch = x.shape[0]

        metadata = temporal = None
        if self.metadata_embed is not None:
            if c_hist is None:
                raise MissingContextError("模型启用了元数据，但没有提供 c_hist")
            c = np.asarray(c_hist, dtype=np.float64)
            c = c[None] if single else c
            if c.shape[0] != batch:
                raise DimensionError("c_hist 与 x_hist 的批量不一致", c.shape, x.shape)
            metadata = fn.repeat_batch(self.metadata_embed(c, rng), cfg.F)
        if self.temporal_embed is not None:
            if timestamps is None:
                raise MissingContextError("模型启用了时间嵌入，但没有提供 timestamps")
            ts = np.asarray(timestamps)
            ts = ts[None] if single else ts
            if ts.shape != (batch, cfg.L):
                raise DimensionError("timestamps 形状不符合配置", ts.shape, (batch, cfg.L))
            temporal = fn.repeat_batch(self.temporal_embed(ts, rng), cfg.F)
        elif timestamps is not None and not self._warned_timestamps:
            logger.warning("⚠️ 模型未启用时间嵌入，传入的 timestamps 将被忽略")
            self._warned_timestamps = True

        h = PatchEncoder.embed(self.patch_embed, self.dropout, x, cfg, rng)
        for i, block in enumerate(self.blocks):
            update = h
            if metadata is not None:
                update = fn.add(update, self.cross_dropout(self.cross_metadata[i](h, metadata), rng))
            if temporal is not None:
                update = fn.add(update, self.cross_dropout(self.cross_temporal[i](h, temporal), rng))
            h = block(update, rng)
        out = PatchEncoder.project(self.head, h, batch, cfg)
        return fn.reshape(out, (cfg.T, cfg.F)) if single else out


def attach_context(
    base: BaseForecaster,
    config: Optional[ModelConfig],
    rng: np.random.Generator,
    freeze_base: bool = True,
) -> ContextFormerModel:
    """在基础模型上挂载 ContextFormer 组件（基础模型本身不会被修改）"""
    model = ContextFormerModel(base, config or base.config, rng, freeze_base=freeze_base)
    logger.info(
        f"挂载上下文模块: 可训练参数 {sum(p.size for _, p in trainable_parameters(model))}, "
        f"冻结参数 {sum(p.size for _, p in frozen_parameters(model))}"
    )
    return model


def forward_context(
    model: ContextFormerModel,
    x_hist: np.ndarray,
    c_hist: Optional[np.ndarray] = None,
    timestamps: Optional[np.ndarray] = None,
) -> np.ndarray:
    """评估模式前向"""
    model.eval()
    return model(x_hist, c_hist, timestamps).numpy()


def trainable_parameters(model: Module) -> NamedParameters:
    return [(name, p) for name, p in model.named_parameters() if p.requires_grad]


def frozen_parameters(model: Module) -> NamedParameters:
    return [(name, p) for name, p in model.named_parameters() if not p.requires_grad]
