"""
命令行公共逻辑：配置加载、参数覆盖与统一的错误出口
"""

import json
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Optional

import typer
from pydantic import ValidationError

from contextformer.core.exceptions import ConfigError, ContextFormerError
from contextformer.core.logging import cli_logger
from contextformer.core.model_config import ModelConfig, model_presets
from contextformer.schemas.dataset import DatasetSplit
from contextformer.schemas.experiment import ExperimentConfig
from contextformer.utils.file_utils import read_json, write_json

EXPERIMENT_FILE = "experiment.json"
CHECKPOINT_DIR = "checkpoint"
HISTORY_FILE = "loss_history.csv"


@contextmanager
def command_errors(command: str) -> Iterator[None]:
    """把可预期的错误转换为退出码 1 和一条错误信息"""
    try:
        yield
    except typer.Exit:
        raise
    except (ContextFormerError, ValidationError, FileNotFoundError, OSError) as e:
        cli_logger.error(f"❌ {command} 失败: {e}")
        typer.echo(f"错误: {e}", err=True)
        raise typer.Exit(code=1) from e


def load_experiment(
    config_path: Optional[Path],
    seed: Optional[int] = None,
    epochs: Optional[int] = None,
    learning_rate: Optional[float] = None,
    preset: Optional[str] = None,
) -> ExperimentConfig:
    """读取并校验实验配置；preset 作为 model / train 段的底，命令行参数覆盖配置中的标量"""
    raw: dict = {}
    if config_path is not None:
        if not Path(config_path).is_file():
            raise FileNotFoundError(f"配置文件不存在: {config_path}")
        try:
            raw = read_json(config_path)
        except json.JSONDecodeError as e:
            raise ConfigError(f"配置文件 {config_path} 不是合法的 JSON: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"配置文件 {config_path} 的顶层必须是对象")
    if preset is not None:
        raw = model_presets.apply(preset, raw)
    config = ExperimentConfig.model_validate(raw)

    if seed is not None:
        config = config.model_copy(update={"seed": seed})
    train_updates = {}
    if epochs is not None:
        train_updates.update(base_epochs=epochs, finetune_epochs=epochs)
    if learning_rate is not None:
        train_updates["learning_rate"] = learning_rate
    if train_updates:
        train = config.train.model_validate({**config.train.model_dump(), **train_updates})
        config = config.model_copy(update={"train": train})
    cli_logger.debug(f"实验配置: {config.model_dump(mode='json')}")
    return config


def resolve_model_config(model: ModelConfig, split: DatasetSplit) -> ModelConfig:
    """结构参数取自配置，数据布局 (L, T, F, 元数据宽度) 取自数据集"""
    return ModelConfig.model_validate(
        {
            **model.model_dump(),
            "L": split.L,
            "T": split.T,
            "F": split.F,
            "categorical_cardinalities": list(split.categorical_cardinalities),
            "n_continuous": split.n_continuous,
        }
    )


def save_experiment(config: ExperimentConfig, model: ModelConfig, out_dir: Path) -> None:
    """记录实际使用的配置（含解析后的模型配置）"""
    resolved = config.model_copy(update={"model": model, "output_dir": out_dir})
    write_json(
        resolved.model_dump(mode="json", exclude={"train": {"seed"}}), Path(out_dir) / EXPERIMENT_FILE
    )
