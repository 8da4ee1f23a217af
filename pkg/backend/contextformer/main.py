from typing import Optional

import typer

from contextformer.commands.api import api_router
from contextformer.core.config import settings
from contextformer.core.logging import cli_logger, setup_logging


def create_application() -> typer.Typer:
    """创建命令行应用"""

    app = api_router

    @app.callback()
    def startup(
        log_level: Optional[str] = typer.Option(
            None, "--log-level", help="error / info / debug，默认读取 CONTEXTFORMER_LOG"
        ),
    ) -> None:
        """上下文感知时间序列预测：AR 基线与 ContextFormer 插拔式微调"""
        if log_level is not None and log_level.lower() not in ("error", "info", "debug"):
            raise typer.BadParameter(f"未知的日志级别: {log_level}")
        setup_logging(log_level)
        cli_logger.debug(f"🚀 {settings.PROJECT_NAME} v{settings.VERSION}")

    return app


app = create_application()


if __name__ == "__main__":
    app()
