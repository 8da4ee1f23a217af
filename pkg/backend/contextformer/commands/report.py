"""
report 命令：汇总多个运行目录下的评估报告
"""

from pathlib import Path
from typing import Dict, List, Optional

import pandas as pd
import typer
from pydantic import ValidationError

from contextformer.commands.common import command_errors
from contextformer.core.exceptions import ReportError
from contextformer.core.logging import cli_logger
from contextformer.schemas.report import EvalReport, ReportRow
from contextformer.utils.file_utils import read_json, write_csv

REPORT_COLUMNS = ["run", "method", "split", "mae", "mse"]
SUMMARY_COLUMNS = ["method", "split", "mae_mean", "mae_std", "mse_mean", "mse_std", "n_runs"]


def unique_run_names(runs: List[Path]) -> List[str]:
    """同名运行目录依次加后缀 -2、-3…"""
    seen: Dict[str, int] = {}
    names = []
    for run in runs:
        base = Path(run).name or str(run)
        seen[base] = seen.get(base, 0) + 1
        names.append(base if seen[base] == 1 else f"{base}-{seen[base]}")
    return names


def collect_reports(runs: List[Path]) -> List[ReportRow]:
    if not runs:
        raise ReportError("没有指定任何运行目录")
    rows: List[ReportRow] = []
    for name, run in zip(unique_run_names(runs), runs):
        files = sorted(Path(run).glob("eval_*.json"))
        if not files:
            raise ReportError(f"运行目录 {run} 中没有评估报告 (eval_*.json)")
        for path in files:
            try:
                report = EvalReport.model_validate(read_json(path))
            except (ValidationError, ValueError) as e:
                raise ReportError(f"无法解析评估报告 {path}: {e}") from e
            rows.append(
                ReportRow(run=name, method=report.method or "unknown", split=report.split, mae=report.mae, mse=report.mse)
            )
    return rows


def summarize(frame: pd.DataFrame) -> pd.DataFrame:
    """按 (method, split) 聚合多次运行（例如多个种子）"""
    grouped = frame.groupby(["method", "split"], sort=True)
    summary = grouped.agg(
        mae_mean=("mae", "mean"),
        mae_std=("mae", lambda s: float(s.std(ddof=0))),
        mse_mean=("mse", "mean"),
        mse_std=("mse", lambda s: float(s.std(ddof=0))),
        n_runs=("run", "count"),
    ).reset_index()
    return summary[SUMMARY_COLUMNS]


def report(
    runs: Optional[List[Path]] = typer.Option(None, "--runs", "-r", help="运行目录，可重复指定"),
    out: Path = typer.Option(..., "--out", "-o", help="对比表 CSV"),
    summary: Optional[Path] = typer.Option(None, "--summary", help="按方法聚合的 CSV"),
) -> None:
    """汇总评估报告为 run,method,split,mae,mse 表"""
    with command_errors("report"):
        rows = collect_reports(list(runs or []))
        frame = pd.DataFrame([r.model_dump() for r in rows], columns=REPORT_COLUMNS)
        write_csv(frame, out)
        if summary is not None:
            write_csv(summarize(frame), summary)
        cli_logger.info(f"📋 对比表已写入 {out} ({len(frame)} 行)")
        typer.echo(frame.to_string(index=False))
