"""
训练相关命令：train-base、finetune、eval
train-base 与 finetune 支持 --resume，从检查点连同 Adam 状态继续训练
"""

import json
from pathlib import Path
from typing import Optional

import numpy as np
import typer

from contextformer.commands.common import (
    CHECKPOINT_DIR,
    HISTORY_FILE,
    command_errors,
    load_experiment,
    resolve_model_config,
    save_experiment,
)
from contextformer.core.exceptions import ConfigError
from contextformer.core.logging import cli_logger
from contextformer.core.model_config import ModelConfig
from contextformer.models.context import ContextFormerModel, attach_context
from contextformer.models.forecaster import BaseForecaster, init_base
from contextformer.services.checkpoint import LoadedCheckpoint, load_checkpoint, save_checkpoint
from contextformer.services.dataset_store import load_dataset
from contextformer.services.trainer import (
    TrainingResult,
    evaluate,
    finetune_context,
    history_to_frame,
    train_base,
    train_context_full,
)
from contextformer.utils.file_utils import ensure_dir, write_csv, write_json


def _write_run(result: TrainingResult, out: Path) -> None:
    save_checkpoint(result.model, out / CHECKPOINT_DIR, result.optimizer)
    write_csv(history_to_frame(result.history), out / HISTORY_FILE)
    typer.echo(f"{out} best_epoch={result.best_epoch} val_mse={result.best_val_loss:.6f}")


def _resume(path: Path, model_config: ModelConfig) -> LoadedCheckpoint:
    """读取要继续训练的检查点，模型配置必须与本次实验一致"""
    loaded = load_checkpoint(path, expected_config=model_config)
    if loaded.optimizer_state is None:
        cli_logger.warning(f"⚠️ {path} 没有保存优化器状态，Adam 将从零开始")
    return loaded


def train_base_command(
    config: Optional[Path] = typer.Option(None, "--config", "-c", help="实验配置 JSON"),
    data: Path = typer.Option(..., "--data", "-d", help="数据集目录"),
    out: Path = typer.Option(..., "--out", "-o", help="运行输出目录"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    epochs: Optional[int] = typer.Option(None, "--epochs", help="覆盖训练轮数"),
    learning_rate: Optional[float] = typer.Option(None, "--learning-rate", help="覆盖学习率"),
    preset: Optional[str] = typer.Option(None, "--preset", "-p", help="模型/训练预设：desk 或 full"),
    resume: Optional[Path] = typer.Option(None, "--resume", "-r", help="从基础模型检查点继续训练"),
) -> None:
    """训练上下文无关的基础模型，写出检查点与损失曲线"""
    with command_errors("train-base"):
        experiment = load_experiment(
            config, seed=seed, epochs=epochs, learning_rate=learning_rate, preset=preset
        )
        split = load_dataset(data)
        model_config = resolve_model_config(experiment.model, split)
        ensure_dir(out)
        save_experiment(experiment, model_config, out)

        if resume is not None:
            loaded = _resume(resume, model_config)
            if not isinstance(loaded.model, BaseForecaster):
                raise ConfigError(f"{resume} 不是基础模型检查点")
            result = train_base(loaded.model, split, experiment.train_config(), loaded.optimizer_state)
        else:
            model = init_base(model_config, np.random.default_rng(experiment.sub_seed("model")))
            result = train_base(model, split, experiment.train_config())
        _write_run(result, out)


def finetune_command(
    config: Optional[Path] = typer.Option(None, "--config", "-c", help="实验配置 JSON"),
    data: Path = typer.Option(..., "--data", "-d", help="数据集目录"),
    out: Path = typer.Option(..., "--out", "-o", help="运行输出目录"),
    base: Optional[Path] = typer.Option(None, "--base", "-b", help="基础模型检查点目录"),
    from_scratch: bool = typer.Option(False, "--from-scratch", help="不使用基础模型，从零训练全部参数"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    epochs: Optional[int] = typer.Option(None, "--epochs", help="覆盖训练轮数"),
    learning_rate: Optional[float] = typer.Option(None, "--learning-rate", help="覆盖学习率"),
    preset: Optional[str] = typer.Option(None, "--preset", "-p", help="模型/训练预设：desk 或 full"),
    resume: Optional[Path] = typer.Option(None, "--resume", "-r", help="从上下文模型检查点继续训练"),
) -> None:
    """挂载 ContextFormer 模块并微调（或 --from-scratch 从零训练）"""
    with command_errors("finetune"):
        experiment = load_experiment(
            config, seed=seed, epochs=epochs, learning_rate=learning_rate, preset=preset
        )
        split = load_dataset(data)
        model_config = resolve_model_config(experiment.model, split)
        train_config = experiment.train_config()

        if resume is not None:
            if base is not None or from_scratch:
                raise ConfigError("--resume 不能与 --base 或 --from-scratch 同时使用")
            loaded = _resume(resume, model_config)
            if not isinstance(loaded.model, ContextFormerModel):
                raise ConfigError(f"{resume} 不是上下文模型检查点")
            run = finetune_context if loaded.model.freeze_base else train_context_full
            ensure_dir(out)
            save_experiment(experiment, model_config, out)
            _write_run(run(loaded.model, split, train_config, loaded.optimizer_state), out)
            return

        context_rng = np.random.default_rng(experiment.sub_seed("context"))
        if from_scratch:
            base_model = init_base(model_config, np.random.default_rng(experiment.sub_seed("model")))
            model = attach_context(base_model, model_config, context_rng, freeze_base=False)
            ensure_dir(out)
            save_experiment(experiment, model_config, out)
            _write_run(train_context_full(model, split, train_config), out)
            return

        if base is None:
            raise ConfigError("finetune 需要 --base 指定基础模型检查点，或使用 --from-scratch")
        loaded = load_checkpoint(base)
        if not isinstance(loaded.model, BaseForecaster):
            raise ConfigError(f"{base} 不是基础模型检查点")
        model = attach_context(loaded.model, model_config, context_rng)
        ensure_dir(out)
        save_experiment(experiment, model_config, out)
        _write_run(finetune_context(model, split, train_config), out)


def eval_command(
    checkpoint: Path = typer.Option(..., "--checkpoint", "-k", help="检查点目录"),
    data: Path = typer.Option(..., "--data", "-d", help="数据集目录"),
    split_name: str = typer.Option("test", "--split", "-s", help="train / val / test"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="报告 JSON 路径，默认写到运行目录"),
) -> None:
    """评估检查点，打印并写出 EvalReport JSON"""
    with command_errors("eval"):
        if split_name not in ("train", "val", "test"):
            raise ConfigError(f"未知的数据划分: {split_name}")
        loaded = load_checkpoint(checkpoint)
        split = load_dataset(data)
        report = evaluate(loaded.model, split, split_name)
        target = out or Path(checkpoint).parent / f"eval_{split_name}.json"
        payload = report.model_dump(mode="json", exclude_none=True)
        write_json(payload, target)
        cli_logger.info(f"📊 {split_name}: mae={report.mae:.6f} mse={report.mse:.6f} -> {target}")
        typer.echo(json.dumps(payload, sort_keys=True))
