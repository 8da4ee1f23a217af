"""
文件读写工具
JSON 统一 sort_keys + 缩进 2 + 末尾换行，CSV 统一 17 位有效数字，保证同样的输入写出同样的字节
"""

import hashlib
import json
from pathlib import Path
from typing import Any, Union

import pandas as pd
from loguru import logger

from contextformer.core.config import settings

PathLike = Union[str, Path]


def ensure_dir(path: PathLike) -> Path:
    """确保目录存在"""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_json(data: Any, path: PathLike) -> Path:
    path = Path(path)
    ensure_dir(path.parent)
    path.write_text(json.dumps(data, sort_keys=True, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    logger.debug(f"写入 JSON: {path}")
    return path


def read_json(path: PathLike) -> Any:
    """读取 JSON，文件不存在时抛出 FileNotFoundError"""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"文件不存在: {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def write_csv(frame: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    ensure_dir(path.parent)
    frame.to_csv(path, index=False, float_format=settings.CSV_FLOAT_FORMAT, lineterminator="\n")
    logger.debug(f"写入 CSV: {path} ({len(frame)} 行)")
    return path


def read_csv(path: PathLike) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"文件不存在: {path}")
    # round_trip 解析器保证 17 位有效数字读回后逐位一致
    return pd.read_csv(path, float_precision="round_trip")


def sha256_file(path: PathLike) -> str:
    """计算文件的 sha256"""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
