"""
预测模型与训练配置
ModelConfig 描述补丁式 Transformer 与 ContextFormer 附加模块的结构，
TrainConfig 描述两阶段训练流程；model_presets 管理桌面规模与完整规模两套预设
"""

from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from contextformer.core.exceptions import ConfigError

TimestampField = Literal["year", "month", "day", "weekday", "hour", "minute"]


class ModelConfig(BaseModel):
    """预测模型结构配置（默认值为桌面规模）"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    d_model: int = Field(64, gt=0, description="隐藏维度")
    n_blocks: int = Field(2, gt=0, description="编码器块数量")
    n_heads: int = Field(4, gt=0, description="注意力头数")
    patch_len: int = Field(16, gt=0, description="补丁长度")
    patch_stride: int = Field(8, gt=0, description="补丁步长")
    activation: Literal["gelu"] = Field("gelu", description="激活函数")
    dropout: float = Field(0.1, ge=0.0, lt=1.0, description="Dropout 比例")
    layer_norm_eps: float = Field(1e-5, ge=0.0, description="LayerNorm epsilon")
    L: int = Field(96, gt=0, description="历史窗口长度")
    T: int = Field(96, gt=0, description="预测步长")
    F: int = Field(1, gt=0, description="通道数")
    categorical_cardinalities: List[int] = Field(
        default_factory=list, description="各离散元数据的类别数（独热展开宽度）"
    )
    n_continuous: int = Field(0, ge=0, description="连续元数据维度")
    embed_encoder_layers: int = Field(2, ge=0, description="嵌入模块的 Transformer 层数")
    ff_dim: int = Field(64, gt=0, description="前馈层维度")
    use_metadata: bool = Field(True, description="是否启用元数据交叉注意力")
    use_temporal: bool = Field(False, description="是否启用时间戳交叉注意力")
    timestamp_fields: List[TimestampField] = Field(
        default_factory=lambda: ["month", "day", "hour"],
        description="时间戳分解字段",
    )

    @model_validator(mode="after")
    def check_geometry(self) -> "ModelConfig":
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model={self.d_model} 不能被 n_heads={self.n_heads} 整除"
            )
        if self.patch_len > self.L:
            raise ValueError(f"patch_len={self.patch_len} 大于历史长度 L={self.L}")
        if any(c <= 0 for c in self.categorical_cardinalities):
            raise ValueError("离散元数据的类别数必须为正")
        if self.use_temporal and not self.timestamp_fields:
            raise ValueError("启用时间嵌入时 timestamp_fields 不能为空")
        return self

    @property
    def n_patches(self) -> int:
        """补丁数量 floor((L - patch_len) / stride) + 1"""
        return (self.L - self.patch_len) // self.patch_stride + 1

    @property
    def n_categorical(self) -> int:
        """独热展开后的离散元数据宽度"""
        return sum(self.categorical_cardinalities)

    @property
    def n_metadata(self) -> int:
        """元数据总宽度 K"""
        return self.n_categorical + self.n_continuous


class TrainConfig(BaseModel):
    """训练配置"""

    model_config = ConfigDict(extra="forbid")

    learning_rate: float = Field(3e-5, ge=0.0, description="学习率，0 表示参数保持不变")
    dropout: Optional[float] = Field(
        0.1, ge=0.0, lt=1.0, description="训练时的 Dropout，None 表示沿用模型配置"
    )
    base_epochs: int = Field(50, ge=0, description="基础模型训练轮数")
    finetune_epochs: int = Field(50, ge=0, description="上下文微调轮数")
    batch_size: int = Field(32, gt=0, description="批大小")
    seed: int = Field(0, ge=0, description="随机种子")
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)
    grad_clip_norm: Optional[float] = Field(None, gt=0.0, description="梯度裁剪范数")
    head_lr_scale: float = Field(0.1, ge=0.0, description="微调时复制而来的投影头的学习率倍数")
    context_lr_scale: float = Field(1.0, ge=0.0, description="微调时新挂载的上下文模块的学习率倍数")
    context_dropout: Optional[float] = Field(
        None, ge=0.0, lt=1.0, description="上下文通路（嵌入与交叉注意力）的 Dropout，None 表示沿用 dropout"
    )


class ModelPresets:
    """模型预设管理器"""

    def __init__(self) -> None:
        self.models: Dict[str, dict] = {
            # 单机 CPU 可在分钟级完成
            "desk": {"d_model": 64, "n_blocks": 2, "n_heads": 4, "ff_dim": 64},
            # 完整规模：6 个块、256 维、8 头
            "full": {"d_model": 256, "n_blocks": 6, "n_heads": 8, "ff_dim": 256},
        }
        self.train = {
            "desk": {
                "learning_rate": 1e-3,
                "batch_size": 32,
                "head_lr_scale": 0.1,
                "context_lr_scale": 3.0,
                "context_dropout": 0.0,
            },
            "full": {"batch_size": 128},
        }

    def get_model(self, name: str = "desk", **overrides) -> ModelConfig:
        """获取模型配置，overrides 覆盖预设字段"""
        if name not in self.models:
            raise ConfigError(f"模型预设 {name} 不存在")
        return ModelConfig(**{**self.models[name], **overrides})

    def get_train(self, name: str = "desk", **overrides) -> TrainConfig:
        """获取训练配置"""
        if name not in self.train:
            raise ConfigError(f"训练预设 {name} 不存在")
        return TrainConfig(**{**self.train[name], **overrides})

    def apply(self, name: str, raw: dict) -> dict:
        """以预设为底，实验配置中显式给出的 model / train 字段优先"""
        if name not in self.models:
            raise ConfigError(f"未知的预设 {name}，可选: {self.list_presets()}")
        merged = dict(raw)
        for section, presets in (("model", self.models), ("train", self.train)):
            body = raw.get(section) or {}
            if not isinstance(body, dict):
                raise ConfigError(f"{section} 段必须是对象")
            merged[section] = {**presets[name], **body}
        return merged

    def list_presets(self) -> List[str]:
        return sorted(self.models)


# 全局预设实例
model_presets = ModelPresets()
