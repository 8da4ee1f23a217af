"""
数据相关命令：synth-gen 与 ar-sweep
"""

from pathlib import Path
from typing import Optional

import typer

from contextformer.commands.common import command_errors, load_experiment
from contextformer.core.logging import cli_logger
from contextformer.services.dataset_store import save_dataset
from contextformer.services.linear_baselines import run_context_sweep, sweep_to_frame
from contextformer.services.synthgen import generate_from_config
from contextformer.utils.file_utils import write_csv


def synth_gen(
    config: Optional[Path] = typer.Option(None, "--config", "-c", help="实验配置 JSON"),
    out: Path = typer.Option(..., "--out", "-o", help="数据集输出目录"),
    seed: Optional[int] = typer.Option(None, "--seed", help="覆盖配置中的 seed"),
) -> None:
    """生成合成数据集（arma 或 latent_ar）"""
    with command_errors("synth-gen"):
        experiment = load_experiment(config, seed=seed)
        split = generate_from_config(experiment.data, experiment.sub_seed("data"))
        save_dataset(split, out)
        sizes = split.sizes()
        cli_logger.info(f"✅ 数据集已写入 {out}: {sizes}")
        typer.echo(f"{out} train={sizes['train']} val={sizes['val']} test={sizes['test']}")


def ar_sweep(
    config: Optional[Path] = typer.Option(None, "--config", "-c", help="实验配置 JSON"),
    out: Path = typer.Option(..., "--out", "-o", help="结果 CSV 路径"),
    seed: Optional[int] = typer.Option(None, "--seed", help="覆盖配置中的 seed"),
) -> None:
    """AR 残差回归扫描：q = 0..Q 个上下文特征的平均 MSE"""
    with command_errors("ar-sweep"):
        experiment = load_experiment(config, seed=seed)
        rows = run_context_sweep(experiment.sweep, seed=experiment.sub_seed("sweep"))
        write_csv(sweep_to_frame(rows), out)
        for row in rows:
            typer.echo(f"q={row.q} mean_mse={row.mean_mse:.6f} std_mse={row.std_mse:.6f}")
