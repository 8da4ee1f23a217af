"""
命令主路由
"""

import typer

from contextformer.commands.data import ar_sweep, synth_gen
from contextformer.commands.report import report
from contextformer.commands.training import eval_command, finetune_command, train_base_command

api_router = typer.Typer(no_args_is_help=True, add_completion=False)

# 数据生成与线性基线
api_router.command("synth-gen")(synth_gen)
api_router.command("ar-sweep")(ar_sweep)

# 训练与评估
api_router.command("train-base")(train_base_command)
api_router.command("finetune")(finetune_command)
api_router.command("eval")(eval_command)

# 结果汇总
api_router.command("report")(report)
