"""
数据集磁盘格式

<root>/<split>/data.csv       seq_id,t,ch0..ch{F-1},meta0..meta{K-1}，每个时间步一行
<root>/<split>/manifest.json  DatasetManifest

每个样本占 L+T 行，前 L 行为历史；t 列在有时间戳时为 Unix 秒，否则为步序号。
"""

from pathlib import Path
from typing import Dict, List

import numpy as np
import pandas as pd
from pydantic import ValidationError

from contextformer.core.exceptions import DatasetError
from contextformer.core.logging import LoggerMixin
from contextformer.schemas.dataset import (
    SPLIT_NAMES,
    DatasetManifest,
    DatasetSplit,
    WindowedSample,
)
from contextformer.utils.file_utils import ensure_dir, read_csv, read_json, write_csv, write_json

DATA_FILE = "data.csv"
MANIFEST_FILE = "manifest.json"


def _columns(F: int, K: int) -> List[str]:
    return ["seq_id", "t"] + [f"ch{i}" for i in range(F)] + [f"meta{j}" for j in range(K)]


class DatasetStore(LoggerMixin):
    """数据集读写服务"""

    def save(self, split: DatasetSplit, out_dir: Path) -> Dict[str, Path]:
        """写出三个划分目录，返回 划分名 -> 目录"""
        root = ensure_dir(out_dir)
        written = {}
        for name, samples in split.items():
            split_dir = ensure_dir(root / name)
            write_csv(self._to_frame(samples, split), split_dir / DATA_FILE)
            manifest = DatasetManifest(
                split=name,
                generator=split.generator,
                n_sequences=len(samples),
                length=split.L + split.T,
                F=split.F,
                K_ct=len(split.categorical_cardinalities),
                K_cn=split.n_continuous,
                L=split.L,
                T=split.T,
                categorical_cardinalities=list(split.categorical_cardinalities),
                normalization=split.stats,
                seed=split.seed,
                has_timestamps=split.has_timestamps,
            )
            write_json(manifest.model_dump(mode="json"), split_dir / MANIFEST_FILE)
            written[name] = split_dir
        self.logger.info(f"💾 数据集已保存到 {root}: {split.sizes()}")
        return written

    def load(self, root: Path) -> DatasetSplit:
        root = Path(root)
        if not root.is_dir():
            raise DatasetError(f"数据集目录不存在: {root}")
        manifests: Dict[str, DatasetManifest] = {}
        samples: Dict[str, List[WindowedSample]] = {}
        for name in SPLIT_NAMES:
            split_dir = root / name
            try:
                manifest = DatasetManifest.model_validate(read_json(split_dir / MANIFEST_FILE))
                frame = read_csv(split_dir / DATA_FILE)
            except FileNotFoundError as e:
                raise DatasetError(f"数据集不完整: {e}") from e
            except (ValidationError, ValueError) as e:
                raise DatasetError(f"无法解析 {split_dir}: {e}") from e
            manifests[name] = manifest
            samples[name] = self._from_frame(frame, manifest, split_dir)

        first = manifests["train"]
        for name, manifest in manifests.items():
            layout = (manifest.L, manifest.T, manifest.F, manifest.K_cn, manifest.categorical_cardinalities)
            if layout != (first.L, first.T, first.F, first.K_cn, first.categorical_cardinalities):
                raise DatasetError(f"划分 {name} 的结构与训练集不一致")

        split = DatasetSplit(
            train=samples["train"],
            val=samples["val"],
            test=samples["test"],
            L=first.L,
            T=first.T,
            F=first.F,
            categorical_cardinalities=list(first.categorical_cardinalities),
            n_continuous=first.K_cn,
            stats=first.normalization,
            generator=first.generator,
            seed=first.seed,
        )
        self.logger.info(f"📂 加载数据集 {root}: {split.sizes()}")
        return split

    # ------------------------------------------------------------------
    def _to_frame(self, samples: List[WindowedSample], split: DatasetSplit) -> pd.DataFrame:
        length, F, K = split.L + split.T, split.F, split.K
        columns = _columns(F, K)
        if not samples:
            return pd.DataFrame({c: pd.Series(dtype="int64" if c in ("seq_id", "t") else "float64") for c in columns})

        series = np.stack([np.vstack([s.x_hist, s.x_future]) for s in samples]).reshape(-1, F)
        meta = np.stack([np.vstack([s.c_hist, s.c_future]) for s in samples]).reshape(-1, K)
        seq_id = np.repeat(np.arange(len(samples), dtype=np.int64), length)
        if split.has_timestamps:
            t = np.concatenate([np.r_[s.timestamps, s.future_timestamps] for s in samples]).astype(np.int64)
        else:
            t = np.tile(np.arange(length, dtype=np.int64), len(samples))

        frame = pd.DataFrame({"seq_id": seq_id, "t": t})
        for i in range(F):
            frame[f"ch{i}"] = series[:, i]
        for j in range(K):
            frame[f"meta{j}"] = meta[:, j]
        return frame

    def _from_frame(self, frame: pd.DataFrame, manifest: DatasetManifest, split_dir: Path) -> List[WindowedSample]:
        K = sum(manifest.categorical_cardinalities) + manifest.K_cn
        expected = _columns(manifest.F, K)
        if list(frame.columns) != expected:
            raise DatasetError(f"{split_dir / DATA_FILE} 的列与清单不一致: {list(frame.columns)}")
        n, L, length = manifest.n_sequences, manifest.L, manifest.length
        if len(frame) != n * length:
            raise DatasetError(f"{split_dir / DATA_FILE} 行数 {len(frame)} 与清单 {n}×{length} 不一致")
        if n == 0:
            return []

        series = frame[expected[2 : 2 + manifest.F]].to_numpy(dtype=np.float64).reshape(n, length, manifest.F)
        meta = frame[expected[2 + manifest.F :]].to_numpy(dtype=np.float64).reshape(n, length, K)
        t = frame["t"].to_numpy(dtype=np.int64).reshape(n, length)
        if np.isnan(series).any() or np.isnan(meta).any():
            raise DatasetError(f"{split_dir / DATA_FILE} 含有缺失值")

        return [
            WindowedSample(
                x_hist=series[i, :L].copy(),
                c_hist=meta[i, :L].copy(),
                x_future=series[i, L:].copy(),
                c_future=meta[i, L:].copy(),
                timestamps=t[i, :L].copy() if manifest.has_timestamps else None,
                future_timestamps=t[i, L:].copy() if manifest.has_timestamps else None,
            )
            for i in range(n)
        ]


# 全局实例
dataset_store = DatasetStore()


def save_dataset(split: DatasetSplit, out_dir: Path) -> Dict[str, Path]:
    return dataset_store.save(split, out_dir)


def load_dataset(root: Path) -> DatasetSplit:
    return dataset_store.load(root)
