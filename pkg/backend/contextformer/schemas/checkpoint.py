"""
检查点清单模式
"""

from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field

from contextformer.core.model_config import ModelConfig


class TensorEntry(BaseModel):
    """载荷中的一个张量：小端 float64，按清单顺序首尾相接"""

    model_config = ConfigDict(extra="forbid")

    name: str
    shape: List[int]
    offset: int = Field(..., ge=0, description="在 payload.bin 中的字节偏移")
    nbytes: int = Field(..., ge=0)


class OptimizerEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    step: int = Field(..., ge=0)
    tensors: List[TensorEntry] = Field(default_factory=list, description="m/<参数名> 与 v/<参数名>")


class CheckpointManifest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    format_version: int
    kind: Literal["base", "context"]
    freeze_base: bool = True
    model: ModelConfig
    tensors: List[TensorEntry]
    optimizer: Optional[OptimizerEntry] = None
    payload_bytes: int = Field(..., ge=0)
