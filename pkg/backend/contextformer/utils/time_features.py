"""
时间戳分解
把 Unix 秒级时间戳拆成日历分量，并按各分量的取值范围线性缩放到 [0, 1]
"""

from typing import Dict, Sequence, Tuple

import numpy as np
import pandas as pd

# 字段 -> (最小值, 最大值)，year 采用固定区间
FIELD_RANGES: Dict[str, Tuple[float, float]] = {
    "year": (1970.0, 2100.0),
    "month": (1.0, 12.0),
    "day": (1.0, 31.0),
    "weekday": (0.0, 6.0),
    "hour": (0.0, 23.0),
    "minute": (0.0, 59.0),
}


def decompose_timestamps(timestamps: np.ndarray, fields: Sequence[str]) -> np.ndarray:
    """(...,) 整数时间戳 -> (..., len(fields)) 的 [0, 1] 特征"""
    ts = np.asarray(timestamps, dtype=np.int64)
    unknown = [f for f in fields if f not in FIELD_RANGES]
    if unknown:
        raise ValueError(f"不支持的时间字段: {unknown}")
    index = pd.DatetimeIndex(pd.to_datetime(ts.reshape(-1), unit="s"))
    columns = []
    for field in fields:
        raw = index.dayofweek if field == "weekday" else getattr(index, field)
        lo, hi = FIELD_RANGES[field]
        columns.append(np.clip((np.asarray(raw, dtype=np.float64) - lo) / (hi - lo), 0.0, 1.0))
    return np.stack(columns, axis=-1).reshape(ts.shape + (len(fields),))
