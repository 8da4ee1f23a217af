"""
实验配置模式
一个 JSON 文档描述一次实验：数据生成、模型结构、训练流程与 AR 扫描，
所有随机性都来自顶层 seed
"""

from pathlib import Path
from typing import Annotated, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from contextformer.core.model_config import ModelConfig, TrainConfig

SEED_PURPOSES = ("data", "model", "context", "train", "sweep")


class ARMADataConfig(BaseModel):
    """ARMA(2,2) 合成数据"""

    model_config = ConfigDict(extra="forbid")

    generator: Literal["arma"] = "arma"
    n: int = Field(10000, gt=0, description="序列条数")
    length: int = Field(192, gt=1, description="序列长度")
    obs_noise_var: float = Field(0.1, ge=0.0, description="观测噪声方差")
    L: int = Field(96, gt=0, description="历史窗口长度")
    coef_bound: float = Field(1.0, gt=0.0, description="系数均匀采样区间半宽")
    noise_var: float = Field(1.0, gt=0.0, description="ARMA 新息方差")
    normalize: bool = Field(True, description="是否按训练集统计量归一化")
    split_ratios: List[int] = Field(default_factory=lambda: [7, 1, 2], min_length=3, max_length=3)


class LatentARDataConfig(BaseModel):
    """潜变量 AR 合成数据（滑动窗口切分）"""

    model_config = ConfigDict(extra="forbid")

    generator: Literal["latent_ar"] = "latent_ar"
    n: int = Field(100, gt=0, description="序列条数")
    length: int = Field(500, gt=1, description="序列长度")
    n_latents: int = Field(5, ge=0, description="潜变量个数")
    ar_order: int = Field(10, gt=0)
    noise_var: float = Field(0.25, gt=0.0)
    latent_phi: float = Field(0.8, gt=-1.0, lt=1.0)
    weight_scale: float = Field(1.0, ge=0.0)
    ar_coef_bound: float = Field(0.15, gt=0.0)
    L: int = Field(96, gt=0)
    T: int = Field(48, gt=0)
    stride: int = Field(24, gt=0, description="滑动窗口步长")
    timestamp_start: Optional[int] = Field(None, description="若设置，按 timestamp_step 生成等间隔时间戳")
    timestamp_step: int = Field(3600, gt=0)
    normalize: bool = True
    split_ratios: List[int] = Field(default_factory=lambda: [7, 1, 2], min_length=3, max_length=3)


DataConfig = Annotated[Union[ARMADataConfig, LatentARDataConfig], Field(discriminator="generator")]


class SweepConfig(BaseModel):
    """AR 残差回归扫描：q = 0..n_latents 个上下文列"""

    model_config = ConfigDict(extra="forbid")

    n_sequences: int = Field(1000, gt=0)
    length: int = Field(500, gt=1)
    ar_order: int = Field(10, gt=0)
    n_latents: int = Field(5, ge=0, description="最大上下文个数 Q")
    noise_var: float = Field(0.25, gt=0.0)
    latent_phi: float = Field(0.8, gt=-1.0, lt=1.0)
    weight_scale: float = Field(1.0, ge=0.0)
    ar_coef_bound: float = Field(0.15, gt=0.0)
    context: Literal["latent", "noise"] = Field("latent", description="noise 表示用纯噪声替换上下文")

    @model_validator(mode="after")
    def check_length(self) -> "SweepConfig":
        if self.length - self.ar_order < self.ar_order + self.n_latents:
            raise ValueError("序列过短，滞后矩阵行数少于待估系数个数")
        return self


class ExperimentConfig(BaseModel):
    """实验配置根节点，未知字段一律拒绝"""

    model_config = ConfigDict(extra="forbid")

    seed: int = Field(0, ge=0, description="唯一的随机种子")
    data: DataConfig = Field(default_factory=ARMADataConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    sweep: SweepConfig = Field(default_factory=SweepConfig)
    output_dir: Path = Field(Path("runs/default"), description="输出目录")

    @model_validator(mode="before")
    @classmethod
    def reject_section_seeds(cls, values):
        if isinstance(values, dict):
            for section in ("data", "model", "train", "sweep"):
                body = values.get(section)
                if isinstance(body, dict) and "seed" in body:
                    raise ValueError(f"{section}.seed 不允许出现，请使用顶层 seed")
        return values

    def sub_seed(self, purpose: str) -> int:
        """由 (seed, purpose) 确定性派生的子种子"""
        if purpose not in SEED_PURPOSES:
            raise ValueError(f"未知的种子用途: {purpose}")
        sequence = np.random.SeedSequence([self.seed, SEED_PURPOSES.index(purpose)])
        return int(sequence.generate_state(1, dtype=np.uint32)[0])

    def train_config(self) -> TrainConfig:
        """训练配置，seed 替换为派生子种子"""
        return self.train.model_copy(update={"seed": self.sub_seed("train")})
