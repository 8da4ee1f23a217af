import sys
from typing import Optional

from loguru import logger

from contextformer.core.config import settings


def setup_logging(level: Optional[str] = None) -> None:
    """设置日志配置"""

    # 移除默认的logger
    logger.remove()

    level = (level or settings.log_level).upper()

    # 控制台日志格式
    console_format = (
        "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | "
        "<level>{level: <8}</level> | "
        "<cyan>{extra[name]}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> | "
        "<level>{message}</level>"
    )

    # 文件日志格式
    file_format = (
        "{time:YYYY-MM-DD HH:mm:ss} | "
        "{level: <8} | "
        "{extra[name]}:{function}:{line} | "
        "{message}"
    )

    # 未绑定组件名的日志也能套用同一格式
    logger.configure(extra={"name": "contextformer"})

    # 结果文件写到 stdout，日志统一走 stderr
    logger.add(
        sys.stderr,
        format=console_format,
        level=level,
        colorize=True,
        backtrace=True,
        diagnose=False,
    )

    if settings.LOG_FILE is not None:
        settings.LOG_FILE.parent.mkdir(parents=True, exist_ok=True)
        logger.add(
            str(settings.LOG_FILE),
            format=file_format,
            level=level,
            rotation="10 MB",
            retention="30 days",
            backtrace=True,
            diagnose=False,
        )


def get_logger(name: str = __name__):
    """获取logger实例"""
    return logger.bind(name=name)


# 创建常用的logger实例
cli_logger = get_logger("cli")
data_logger = get_logger("data")
train_logger = get_logger("train")
baseline_logger = get_logger("baseline")


class LoggerMixin:
    """Logger混入类，为其他类提供日志功能"""

    @property
    def logger(self):
        return get_logger(self.__class__.__name__)
