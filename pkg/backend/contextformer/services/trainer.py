"""
训练与评估服务

train_base 训练上下文无关的基础模型；finetune_context 只训练挂载的上下文模块与新投影头；
train_context_full 从零训练全部参数。三者共用同一个循环：
每轮打乱训练集做小批量 Adam，轮末在验证集上评估，最终恢复验证损失最低的参数。
损失曲线的第 0 轮记录训练前的评估结果。
微调时投影头与上下文模块各用一组学习率倍数；传入已保存的优化器状态可以接着训练。
"""

import hashlib
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from contextformer.core.exceptions import (
    ConfigError,
    DatasetError,
    DimensionError,
    TrainingDivergedError,
)
from contextformer.core.logging import train_logger as logger
from contextformer.core.model_config import TrainConfig
from contextformer.models.base import Module
from contextformer.models.context import ContextFormerModel, trainable_parameters
from contextformer.models.forecaster import BaseForecaster, set_dropout
from contextformer.numeric import functional as fn
from contextformer.numeric.tensor import Tape
from contextformer.schemas.dataset import DatasetSplit, WindowedSample
from contextformer.schemas.report import EpochRecord, EvalReport
from contextformer.services.optimizer import Adam, NamedParameters, OptimizerState

Forecaster = Union[BaseForecaster, ContextFormerModel]
EVAL_BATCH_SIZE = 256
HISTORY_COLUMNS = ["epoch", "train_loss", "val_loss"]


@dataclass
class TrainingResult:
    model: Forecaster
    history: List[EpochRecord]
    best_epoch: int
    best_val_loss: float
    optimizer: Adam


# ===== 指标 =====

def _check_pair(pred: np.ndarray, target: np.ndarray):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError("预测与目标形状不一致", pred.shape, target.shape)
    return pred, target


def mse(pred: np.ndarray, target: np.ndarray) -> float:
    """所有元素上的均方误差"""
    pred, target = _check_pair(pred, target)
    return float(np.mean((pred - target) ** 2))


def mae(pred: np.ndarray, target: np.ndarray) -> float:
    """所有元素上的平均绝对误差"""
    pred, target = _check_pair(pred, target)
    return float(np.mean(np.abs(pred - target)))


# ===== 批处理 =====

@dataclass
class Batch:
    x_hist: np.ndarray
    c_hist: np.ndarray
    timestamps: Optional[np.ndarray]
    x_future: np.ndarray


def collate(samples: Sequence[WindowedSample]) -> Batch:
    """把样本列表堆叠成 (B, ...) 数组"""
    has_ts = all(s.timestamps is not None for s in samples)
    return Batch(
        x_hist=np.stack([s.x_hist for s in samples]),
        c_hist=np.stack([s.c_hist for s in samples]),
        timestamps=np.stack([s.timestamps for s in samples]) if has_ts else None,
        x_future=np.stack([s.x_future for s in samples]),
    )


def _uses_timestamps(model: Forecaster) -> bool:
    return isinstance(model, ContextFormerModel) and model.config.use_temporal


def _predict(model: Forecaster, batch: Batch, rng: Optional[np.random.Generator] = None):
    timestamps = batch.timestamps if _uses_timestamps(model) else None
    return model(batch.x_hist, batch.c_hist, timestamps, rng)


def check_compatible(model: Forecaster, split: DatasetSplit) -> None:
    """模型配置与数据集结构是否一致"""
    cfg = model.config
    if (cfg.L, cfg.T, cfg.F) != (split.L, split.T, split.F):
        raise ConfigError(
            f"模型 (L={cfg.L}, T={cfg.T}, F={cfg.F}) 与数据集 "
            f"(L={split.L}, T={split.T}, F={split.F}) 不一致"
        )
    if isinstance(model, ContextFormerModel) and cfg.use_metadata:
        if (list(cfg.categorical_cardinalities), cfg.n_continuous) != (
            list(split.categorical_cardinalities),
            split.n_continuous,
        ):
            raise ConfigError(
                f"模型元数据结构 {cfg.categorical_cardinalities}+{cfg.n_continuous} 与数据集 "
                f"{split.categorical_cardinalities}+{split.n_continuous} 不一致"
            )
    if isinstance(model, ContextFormerModel) and cfg.use_temporal and not split.has_timestamps:
        raise ConfigError("模型启用了时间嵌入，但数据集没有时间戳")


# ===== 评估 =====

def method_of(model: Forecaster) -> str:
    if isinstance(model, ContextFormerModel):
        return "context" if model.freeze_base else "context_scratch"
    return "base"


def predict_samples(
    model: Forecaster, samples: Sequence[WindowedSample], batch_size: int = EVAL_BATCH_SIZE
) -> np.ndarray:
    """评估模式下的批量预测，返回 (N, T, F)"""
    model.eval()
    outputs = [
        _predict(model, collate(samples[start : start + batch_size])).numpy()
        for start in range(0, len(samples), batch_size)
    ]
    return np.concatenate(outputs, axis=0)


def evaluate_samples(
    model: Forecaster,
    samples: Sequence[WindowedSample],
    split_name: str = "test",
    batch_size: int = EVAL_BATCH_SIZE,
    per_sample: bool = False,
) -> EvalReport:
    if not samples:
        raise DatasetError(f"划分 {split_name} 为空，无法评估")
    pred = predict_samples(model, samples, batch_size)
    target = np.stack([s.x_future for s in samples])
    per_sample_mse = None
    if per_sample:
        per_sample_mse = np.mean((pred - target) ** 2, axis=(1, 2)).tolist()
    return EvalReport(
        split=split_name,
        mae=mae(pred, target),
        mse=mse(pred, target),
        method=method_of(model),
        n_samples=len(samples),
        per_sample_mse=per_sample_mse,
    )


def evaluate(
    model: Forecaster,
    split: DatasetSplit,
    split_name: str = "test",
    batch_size: int = EVAL_BATCH_SIZE,
    per_sample: bool = False,
) -> EvalReport:
    """在指定划分上计算 MAE/MSE（dropout 关闭）"""
    check_compatible(model, split)
    return evaluate_samples(model, split.get(split_name), split_name, batch_size, per_sample)


# ===== 训练循环 =====

def parameter_digest(params: NamedParameters) -> str:
    """参数名与原始字节的 sha256"""
    digest = hashlib.sha256()
    for name, p in params:
        digest.update(name.encode("utf-8"))
        digest.update(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return digest.hexdigest()


def _mean_loss(model: Forecaster, samples: Sequence[WindowedSample], label: str, stage: str) -> float:
    """评估模式下的 MSE，非有限值视为发散"""
    pred = predict_samples(model, samples)
    value = mse(pred, np.stack([s.x_future for s in samples]))
    if not np.isfinite(value):
        logger.error(f"❌ [{label}] {stage}损失发散: {value}")
        raise TrainingDivergedError(f"{stage}损失为 {value}")
    return value


def _fit(
    model: Forecaster,
    split: DatasetSplit,
    config: TrainConfig,
    epochs: int,
    params: NamedParameters,
    label: str,
    lr_scales: Optional[Dict[str, float]] = None,
    optimizer_state: Optional[OptimizerState] = None,
) -> TrainingResult:
    if not split.train:
        raise DatasetError("训练集为空")
    if not params:
        raise ConfigError("没有可训练的参数")
    check_compatible(model, split)
    if config.dropout is not None:
        set_dropout(model, config.dropout)
    if isinstance(model, ContextFormerModel) and config.context_dropout is not None:
        for module in model.context_modules():
            set_dropout(module, config.context_dropout)

    rng = np.random.default_rng(config.seed)
    optimizer = Adam(
        params,
        learning_rate=config.learning_rate,
        beta1=config.beta1,
        beta2=config.beta2,
        eps=config.eps,
        max_grad_norm=config.grad_clip_norm,
        lr_scales=lr_scales,
    )
    if optimizer_state is not None:
        optimizer.load_state(optimizer_state)
        logger.info(f"🔁 [{label}] 从第 {optimizer_state.step} 步的优化器状态继续训练")
    val_samples = split.val
    if not val_samples:
        logger.warning("⚠️ 验证集为空，使用训练集做模型选择")
        val_samples = split.train

    history = [
        EpochRecord(
            epoch=0,
            train_loss=_mean_loss(model, split.train, label, "初始训练"),
            val_loss=_mean_loss(model, val_samples, label, "初始验证"),
        )
    ]
    best_epoch, best_val = 0, history[0].val_loss
    best_state: Dict[str, np.ndarray] = model.state_dict()
    logger.info(f"🚀 [{label}] 开始训练: {epochs} 轮, 初始验证 MSE {best_val:.6f}")

    n = len(split.train)
    for epoch in range(1, epochs + 1):
        model.train()
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            batch = collate([split.train[i] for i in order[start : start + config.batch_size]])
            optimizer.zero_grad()
            with Tape() as tape:
                loss = fn.mse_loss(_predict(model, batch, rng), fn.constant(batch.x_future))
                value = loss.item()
                if not np.isfinite(value):
                    logger.error(f"❌ [{label}] 第 {epoch} 轮损失发散: {value}")
                    raise TrainingDivergedError(f"第 {epoch} 轮训练损失为 {value}")
                tape.backward(loss)
            optimizer.step()
            total += value * batch.x_hist.shape[0]

        val_loss = _mean_loss(model, val_samples, label, f"第 {epoch} 轮验证")
        history.append(EpochRecord(epoch=epoch, train_loss=total / n, val_loss=val_loss))
        improved = val_loss < best_val
        if improved:
            best_epoch, best_val, best_state = epoch, val_loss, model.state_dict()
        logger.info(
            f"[{label}] epoch {epoch}/{epochs} train={total / n:.6f} val={val_loss:.6f}"
            + (" ⭐" if improved else "")
        )

    model.load_state_dict(best_state)
    model.eval()
    logger.info(f"✅ [{label}] 训练完成, 最佳轮次 {best_epoch}, 验证 MSE {best_val:.6f}")
    return TrainingResult(model=model, history=history, best_epoch=best_epoch, best_val_loss=best_val, optimizer=optimizer)


def train_base(
    model: BaseForecaster,
    split: DatasetSplit,
    config: TrainConfig,
    optimizer_state: Optional[OptimizerState] = None,
) -> TrainingResult:
    """基础模型训练 base_epochs 轮；给出 optimizer_state 时接着之前的 Adam 状态继续"""
    if isinstance(model, ContextFormerModel):
        raise ConfigError("train_base 只接受基础模型")
    params = trainable_parameters(model)
    return _fit(model, split, config, config.base_epochs, params, "base", optimizer_state=optimizer_state)


def finetune_lr_scales(model: ContextFormerModel, config: TrainConfig) -> Dict[str, float]:
    """投影头按 head_lr_scale，其余可训练参数（上下文模块）按 context_lr_scale"""
    return {
        name: config.head_lr_scale if name.startswith("head.") else config.context_lr_scale
        for name, _ in trainable_parameters(model)
    }


def finetune_context(
    model: ContextFormerModel,
    split: DatasetSplit,
    config: TrainConfig,
    optimizer_state: Optional[OptimizerState] = None,
) -> TrainingResult:
    """冻结基础模型，只训练上下文模块与投影头 finetune_epochs 轮"""
    if not isinstance(model, ContextFormerModel) or not model.freeze_base:
        raise ConfigError("finetune_context 需要冻结了基础模型的 ContextFormerModel")
    return _fit(
        model,
        split,
        config,
        config.finetune_epochs,
        trainable_parameters(model),
        "finetune",
        lr_scales=finetune_lr_scales(model, config),
        optimizer_state=optimizer_state,
    )


def train_context_full(
    model: ContextFormerModel,
    split: DatasetSplit,
    config: TrainConfig,
    optimizer_state: Optional[OptimizerState] = None,
) -> TrainingResult:
    """从零训练上下文感知模型的全部参数 base_epochs + finetune_epochs 轮"""
    if not isinstance(model, ContextFormerModel) or model.freeze_base:
        raise ConfigError("train_context_full 需要未冻结的 ContextFormerModel")
    epochs = config.base_epochs + config.finetune_epochs
    params = trainable_parameters(model)
    return _fit(model, split, config, epochs, params, "scratch", optimizer_state=optimizer_state)


def history_to_frame(history: List[EpochRecord]) -> pd.DataFrame:
    return pd.DataFrame([r.model_dump() for r in history], columns=HISTORY_COLUMNS)


def frozen_digest(model: Module) -> str:
    """冻结参数的摘要，用于确认微调前后基础模型未被修改"""
    return parameter_digest([(name, p) for name, p in model.named_parameters() if not p.requires_grad])
