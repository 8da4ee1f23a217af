"""
数据集相关模式：窗口样本、划分、归一化统计与磁盘清单
"""

from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

SplitName = Literal["train", "val", "test"]
SPLIT_NAMES: Tuple[str, ...] = ("train", "val", "test")


@dataclass
class WindowedSample:
    """一个 (X_hist, C_hist, X_future) 三元组

    c_hist 的列先是独热展开的离散元数据，再是连续元数据；
    c_future / future_timestamps 仅用于落盘时保持每个时间步一行。
    """

    x_hist: np.ndarray
    c_hist: np.ndarray
    x_future: np.ndarray
    c_future: np.ndarray
    timestamps: Optional[np.ndarray] = None
    future_timestamps: Optional[np.ndarray] = None

    @property
    def L(self) -> int:
        return self.x_hist.shape[0]

    @property
    def T(self) -> int:
        return self.x_future.shape[0]

    @property
    def F(self) -> int:
        return self.x_hist.shape[1]

    @property
    def K(self) -> int:
        return self.c_hist.shape[1]


class NormalizationStats(BaseModel):
    """训练集上的逐通道均值与标准差（离散元数据列记为 0/1，不做变换）"""

    series_mean: List[float] = Field(..., description="时间序列各通道均值")
    series_std: List[float] = Field(..., description="时间序列各通道标准差（已下限截断）")
    meta_mean: List[float] = Field(default_factory=list, description="元数据各列均值")
    meta_std: List[float] = Field(default_factory=list, description="元数据各列标准差")


@dataclass
class DatasetSplit:
    """train/val/test 三个划分及其共享的结构描述"""

    train: List[WindowedSample]
    val: List[WindowedSample]
    test: List[WindowedSample]
    L: int
    T: int
    F: int
    categorical_cardinalities: List[int] = field(default_factory=list)
    n_continuous: int = 0
    stats: Optional[NormalizationStats] = None
    generator: str = "external"
    seed: Optional[int] = None

    @property
    def K(self) -> int:
        return int(sum(self.categorical_cardinalities)) + self.n_continuous

    @property
    def has_timestamps(self) -> bool:
        return any(s.timestamps is not None for _, samples in self.items() for s in samples)

    def get(self, name: str) -> List[WindowedSample]:
        if name not in SPLIT_NAMES:
            raise KeyError(f"未知的数据划分: {name}")
        return getattr(self, name)

    def items(self) -> Iterator[Tuple[str, List[WindowedSample]]]:
        for name in SPLIT_NAMES:
            yield name, getattr(self, name)

    def sizes(self) -> Dict[str, int]:
        return {name: len(samples) for name, samples in self.items()}


class DatasetManifest(BaseModel):
    """单个划分目录下的 manifest.json"""

    model_config = ConfigDict(extra="forbid")

    format_version: int = Field(1, description="数据格式版本")
    split: SplitName = Field(..., description="划分名称")
    generator: str = Field(..., description="生成器名称")
    n_sequences: int = Field(..., ge=0, description="样本（序列）数量")
    length: int = Field(..., gt=0, description="每个样本的时间步数 L+T")
    F: int = Field(..., gt=0, description="通道数")
    K_ct: int = Field(0, ge=0, description="离散元数据变量个数")
    K_cn: int = Field(0, ge=0, description="连续元数据维度")
    L: int = Field(..., gt=0, description="历史窗口长度")
    T: int = Field(..., gt=0, description="预测步长")
    categorical_cardinalities: List[int] = Field(default_factory=list, description="离散元数据类别数")
    normalization: Optional[NormalizationStats] = Field(None, description="归一化统计量")
    seed: Optional[int] = Field(None, description="生成种子")
    has_timestamps: bool = Field(False, description="t 列是否为 Unix 时间戳")
