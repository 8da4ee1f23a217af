"""
结果模式：评估报告、扫描结果行、损失曲线与对比表
"""

from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field

Method = Literal["base", "context", "context_scratch"]


class SweepRow(BaseModel):
    """run_context_sweep 的一行"""

    q: int = Field(..., ge=0, description="使用的上下文列数")
    mean_mse: float = Field(..., ge=0.0)
    std_mse: float = Field(..., ge=0.0)
    n_sequences: int = Field(..., gt=0)


class EvalReport(BaseModel):
    """单个划分上的评估结果"""

    model_config = ConfigDict(extra="forbid")

    split: str = Field(..., description="数据划分")
    mae: float = Field(..., ge=0.0, description="平均绝对误差")
    mse: float = Field(..., ge=0.0, description="均方误差")
    method: Optional[Method] = Field(None, description="模型类型")
    n_samples: Optional[int] = Field(None, ge=0, description="样本数")
    per_sample_mse: Optional[List[float]] = Field(None, description="逐样本 MSE")


class EpochRecord(BaseModel):
    """损失曲线的一行，epoch 0 为训练前的评估"""

    epoch: int = Field(..., ge=0)
    train_loss: float
    val_loss: float


class ReportRow(BaseModel):
    """report 命令输出表的一行"""

    run: str
    method: str
    split: str
    mae: float
    mse: float
