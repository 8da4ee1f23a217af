"""
检查点读写

<dir>/manifest.json  CheckpointManifest
<dir>/payload.bin    所有张量的小端 float64 原始字节，先模型参数（named_parameters 顺序），后优化器矩

同一模型重复保存得到逐字节相同的文件。
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError

from contextformer.core.config import settings
from contextformer.core.exceptions import (
    CheckpointCorruptError,
    CheckpointError,
    CheckpointShapeError,
    CheckpointVersionError,
    ConfigError,
)
from contextformer.core.logging import get_logger
from contextformer.core.model_config import ModelConfig
from contextformer.models.context import ContextFormerModel
from contextformer.models.forecaster import BaseForecaster
from contextformer.schemas.checkpoint import CheckpointManifest, OptimizerEntry, TensorEntry
from contextformer.services.optimizer import Adam, OptimizerState
from contextformer.utils.file_utils import ensure_dir, write_json

logger = get_logger("checkpoint")

MANIFEST_FILE = "manifest.json"
PAYLOAD_FILE = "payload.bin"
_DTYPE = np.dtype("<f8")

Forecaster = Union[BaseForecaster, ContextFormerModel]


@dataclass
class LoadedCheckpoint:
    model: Forecaster
    manifest: CheckpointManifest
    optimizer_state: Optional[OptimizerState] = None


def _pack(arrays: List[Tuple[str, np.ndarray]], start: int) -> Tuple[List[TensorEntry], List[bytes]]:
    entries, chunks, offset = [], [], start
    for name, array in arrays:
        raw = np.ascontiguousarray(array, dtype=_DTYPE).tobytes()
        entries.append(TensorEntry(name=name, shape=list(array.shape), offset=offset, nbytes=len(raw)))
        chunks.append(raw)
        offset += len(raw)
    return entries, chunks


def save_checkpoint(model: Forecaster, path: Path, optimizer: Optional[Adam] = None) -> Path:
    """保存模型（及可选的优化器状态）到目录 path"""
    root = ensure_dir(path)
    params = [(name, p.data) for name, p in model.named_parameters()]
    entries, chunks = _pack(params, 0)
    offset = sum(len(c) for c in chunks)

    optimizer_entry = None
    if optimizer is not None:
        state = optimizer.state
        moments = [(f"m/{k}", state.m[k]) for k in state.m] + [(f"v/{k}", state.v[k]) for k in state.v]
        moment_entries, moment_chunks = _pack(moments, offset)
        optimizer_entry = OptimizerEntry(step=state.step, tensors=moment_entries)
        chunks.extend(moment_chunks)

    payload = b"".join(chunks)
    context = isinstance(model, ContextFormerModel)
    manifest = CheckpointManifest(
        format_version=settings.CHECKPOINT_FORMAT_VERSION,
        kind="context" if context else "base",
        freeze_base=model.freeze_base if context else True,
        model=model.config,
        tensors=entries,
        optimizer=optimizer_entry,
        payload_bytes=len(payload),
    )
    (root / PAYLOAD_FILE).write_bytes(payload)
    write_json(manifest.model_dump(mode="json"), root / MANIFEST_FILE)
    logger.info(f"💾 检查点已保存: {root} ({manifest.kind}, {len(entries)} 个张量)")
    return root


def _read_manifest(root: Path) -> CheckpointManifest:
    manifest_path = root / MANIFEST_FILE
    if not manifest_path.is_file():
        raise CheckpointError(f"检查点不存在: {manifest_path}")
    try:
        raw = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CheckpointCorruptError(f"清单无法解析: {manifest_path}: {e}") from e
    if not isinstance(raw, dict) or "format_version" not in raw:
        raise CheckpointCorruptError(f"清单缺少 format_version: {manifest_path}")
    if raw["format_version"] != settings.CHECKPOINT_FORMAT_VERSION:
        raise CheckpointVersionError(
            f"检查点格式版本 {raw['format_version']} 不受支持（当前 {settings.CHECKPOINT_FORMAT_VERSION}）"
        )
    try:
        return CheckpointManifest.model_validate(raw)
    except ValidationError as e:
        raise CheckpointCorruptError(f"清单字段不完整或非法: {manifest_path}: {e}") from e


def _unpack(payload: bytes, entry: TensorEntry, root: Path) -> np.ndarray:
    count = int(np.prod(entry.shape, dtype=np.int64))
    if entry.nbytes != count * _DTYPE.itemsize:
        raise CheckpointCorruptError(f"张量 {entry.name} 的字节数与形状不符")
    if entry.offset + entry.nbytes > len(payload):
        raise CheckpointCorruptError(f"载荷被截断: {root / PAYLOAD_FILE} 读取 {entry.name} 越界")
    return np.frombuffer(payload, dtype=_DTYPE, count=count, offset=entry.offset).reshape(entry.shape).astype(np.float64)


def build_model(manifest: CheckpointManifest) -> Forecaster:
    """按清单中的配置构造未初始化权重的模型骨架"""
    rng = np.random.default_rng(0)
    base = BaseForecaster(manifest.model, rng)
    if manifest.kind == "base":
        return base
    return ContextFormerModel(base, manifest.model, rng, freeze_base=manifest.freeze_base)


def load_checkpoint(path: Path, expected_config: Optional[ModelConfig] = None) -> LoadedCheckpoint:
    """加载检查点；expected_config 给出时要求与检查点中的配置一致"""
    root = Path(path)
    manifest = _read_manifest(root)
    if expected_config is not None and expected_config != manifest.model:
        raise ConfigError(f"配置与检查点 {root} 中的模型配置不一致")

    payload_path = root / PAYLOAD_FILE
    if not payload_path.is_file():
        raise CheckpointCorruptError(f"缺少载荷文件: {payload_path}")
    payload = payload_path.read_bytes()
    if len(payload) != manifest.payload_bytes:
        raise CheckpointCorruptError(
            f"载荷大小 {len(payload)} 与清单记录的 {manifest.payload_bytes} 字节不一致"
        )

    model = build_model(manifest)
    own = dict(model.named_parameters())
    names = [e.name for e in manifest.tensors]
    if sorted(names) != sorted(own):
        missing = sorted(set(own) - set(names))
        unexpected = sorted(set(names) - set(own))
        raise CheckpointShapeError(f"张量名称不一致, 缺少: {missing}, 多余: {unexpected}")
    for entry in manifest.tensors:
        param = own[entry.name]
        if tuple(entry.shape) != param.shape:
            raise CheckpointShapeError(f"张量 {entry.name} 形状 {tuple(entry.shape)} 与模型 {param.shape} 不一致")
        param.data[...] = _unpack(payload, entry, root)

    optimizer_state = None
    if manifest.optimizer is not None:
        m: Dict[str, np.ndarray] = {}
        v: Dict[str, np.ndarray] = {}
        for entry in manifest.optimizer.tensors:
            kind, _, name = entry.name.partition("/")
            if name not in own or kind not in ("m", "v"):
                raise CheckpointShapeError(f"优化器张量 {entry.name} 与模型参数不对应")
            (m if kind == "m" else v)[name] = _unpack(payload, entry, root)
        optimizer_state = OptimizerState(m=m, v=v, step=manifest.optimizer.step)

    model.eval()
    logger.info(f"📂 检查点已加载: {root} ({manifest.kind})")
    return LoadedCheckpoint(model=model, manifest=manifest, optimizer_state=optimizer_state)
