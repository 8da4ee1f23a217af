from pathlib import Path
from typing import Literal, Optional

from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="CONTEXTFORMER_",
        env_file=".env",
        env_file_encoding="utf-8",
        env_ignore_empty=True,
        extra="ignore",
        case_sensitive=False,
    )

    # ========================================
    # 项目基础配置
    # ========================================
    PROJECT_NAME: str = "ContextFormer"
    VERSION: str = "0.1.0"

    # ========================================
    # 日志配置
    # ========================================
    # 对应环境变量 CONTEXTFORMER_LOG
    LOG: Literal["error", "info", "debug"] = "info"
    LOG_FILE: Optional[Path] = None

    # ========================================
    # 持久化格式
    # ========================================
    CHECKPOINT_FORMAT_VERSION: int = 1
    CSV_FLOAT_FORMAT: str = "%.17g"

    @field_validator("LOG", mode="before")
    @classmethod
    def normalize_log_level(cls, v: object) -> object:
        if isinstance(v, str):
            return v.strip().lower()
        return v

    @property
    def log_level(self) -> str:
        """loguru 使用的日志级别名"""
        return self.LOG.upper()


settings = Settings()
