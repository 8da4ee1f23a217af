"""
检查点测试：逐位往返、错误分类与优化器状态
"""

import json

import numpy as np
import pytest

from contextformer.core.exceptions import (
    CheckpointCorruptError,
    CheckpointError,
    CheckpointShapeError,
    CheckpointVersionError,
    ConfigError,
)
from contextformer.models.context import attach_context, forward_context, frozen_parameters
from contextformer.models.forecaster import forward_base, init_base
from contextformer.services.checkpoint import load_checkpoint, save_checkpoint
from contextformer.services.trainer import finetune_context, train_base
from contextformer.utils.file_utils import sha256_file


def edit_manifest(path, fn) -> None:
    manifest_path = path / "manifest.json"
    raw = json.loads(manifest_path.read_text())
    fn(raw)
    manifest_path.write_text(json.dumps(raw))


@pytest.fixture
def base(tiny_config, rng):
    return init_base(tiny_config, rng)


class TestRoundTrip:
    def test_resave_is_byte_identical(self, base, tmp_path):
        save_checkpoint(base, tmp_path / "a")
        save_checkpoint(load_checkpoint(tmp_path / "a").model, tmp_path / "b")
        for name in ("manifest.json", "payload.bin"):
            assert sha256_file(tmp_path / "a" / name) == sha256_file(tmp_path / "b" / name)

    def test_forward_is_exact(self, base, tmp_path, rng):
        save_checkpoint(base, tmp_path)
        loaded = load_checkpoint(tmp_path)
        x = rng.normal(size=(5, 12, 1))
        np.testing.assert_array_equal(forward_base(loaded.model, x), forward_base(base, x))
        assert loaded.manifest.kind == "base"
        assert loaded.optimizer_state is None

    def test_manifest_lists_parameters_in_order(self, base, tmp_path):
        save_checkpoint(base, tmp_path)
        raw = json.loads((tmp_path / "manifest.json").read_text())
        assert [t["name"] for t in raw["tensors"]] == [name for name, _ in base.named_parameters()]
        assert raw["payload_bytes"] == base.num_parameters() * 8
        assert (tmp_path / "payload.bin").stat().st_size == raw["payload_bytes"]

    def test_context_model_keeps_freeze_mask(self, base, tiny_config, tiny_split, tiny_train, tmp_path, rng):
        model = attach_context(base, tiny_config, rng)
        result = finetune_context(model, tiny_split, tiny_train)
        save_checkpoint(result.model, tmp_path, result.optimizer)
        loaded = load_checkpoint(tmp_path)
        assert loaded.manifest.kind == "context" and loaded.model.freeze_base
        assert [n for n, _ in frozen_parameters(loaded.model)] == [n for n, _ in frozen_parameters(result.model)]
        x, c = np.stack([s.x_hist for s in tiny_split.test]), np.stack([s.c_hist for s in tiny_split.test])
        np.testing.assert_array_equal(forward_context(loaded.model, x, c), forward_context(result.model, x, c))

    def test_optimizer_state_round_trip(self, base, tiny_config, tiny_split, tiny_train, tmp_path, rng):
        model = attach_context(base, tiny_config, rng)
        optimizer = finetune_context(model, tiny_split, tiny_train).optimizer
        save_checkpoint(model, tmp_path, optimizer)
        state = load_checkpoint(tmp_path).optimizer_state
        assert state.step == optimizer.state.step > 0
        assert state.names() == optimizer.state.names()
        for name in optimizer.state.m:
            np.testing.assert_array_equal(state.m[name], optimizer.state.m[name])
            np.testing.assert_array_equal(state.v[name], optimizer.state.v[name])
        frozen = {n for n, _ in frozen_parameters(model)}
        assert frozen.isdisjoint(state.names())

    def test_expected_config(self, base, tiny_config, tmp_path):
        save_checkpoint(base, tmp_path)
        assert load_checkpoint(tmp_path, expected_config=tiny_config).model.config == tiny_config
        with pytest.raises(ConfigError):
            load_checkpoint(tmp_path, expected_config=tiny_config.model_copy(update={"d_model": 16}))

    def test_layer_norm_eps_mismatch_never_reaches_disk(self, tiny_config, tmp_path, rng):
        """基础模型与上下文配置的 eps 不同：挂载即失败，不会写出加载后前向不一致的检查点"""
        base = init_base(tiny_config.model_copy(update={"layer_norm_eps": 1e-1}), rng)
        with pytest.raises(ConfigError):
            attach_context(base, tiny_config, rng)
        model = attach_context(base, base.config, rng)
        save_checkpoint(model, tmp_path)
        loaded = load_checkpoint(tmp_path)
        assert loaded.model.config.layer_norm_eps == 1e-1
        x, c = rng.normal(size=(4, 12, 1)), rng.normal(size=(4, 12, 4))
        np.testing.assert_array_equal(forward_context(loaded.model, x, c), forward_context(model, x, c))

    def test_resume_continues_adam_steps(self, base, tiny_split, tiny_train, tmp_path):
        """保存的优化器状态可以接着训练，步数累加"""
        first = train_base(base, tiny_split, tiny_train)
        save_checkpoint(first.model, tmp_path, first.optimizer)
        loaded = load_checkpoint(tmp_path)
        resumed = train_base(loaded.model, tiny_split, tiny_train, loaded.optimizer_state)
        assert resumed.optimizer.state.step == 2 * first.optimizer.state.step > 0
        assert resumed.history[0].val_loss == pytest.approx(first.best_val_loss, abs=1e-12)

    def test_resume_rejects_foreign_optimizer_state(self, base, tiny_config, tiny_split, tiny_train, tmp_path, rng):
        model = attach_context(base, tiny_config, rng)
        result = finetune_context(model, tiny_split, tiny_train)
        with pytest.raises(ConfigError):
            train_base(init_base(tiny_config, rng), tiny_split, tiny_train, result.optimizer.state)


class TestErrors:
    def test_missing_directory(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "nothing")

    def test_truncated_payload(self, base, tmp_path):
        save_checkpoint(base, tmp_path)
        payload = tmp_path / "payload.bin"
        payload.write_bytes(payload.read_bytes()[:-8])
        with pytest.raises(CheckpointCorruptError):
            load_checkpoint(tmp_path)

    def test_truncated_payload_with_consistent_size(self, base, tmp_path):
        save_checkpoint(base, tmp_path)
        payload = tmp_path / "payload.bin"
        payload.write_bytes(payload.read_bytes()[:-8])
        edit_manifest(tmp_path, lambda raw: raw.update(payload_bytes=raw["payload_bytes"] - 8))
        with pytest.raises(CheckpointCorruptError):
            load_checkpoint(tmp_path)

    def test_unparseable_manifest(self, base, tmp_path):
        save_checkpoint(base, tmp_path)
        (tmp_path / "manifest.json").write_text("{not json")
        with pytest.raises(CheckpointCorruptError):
            load_checkpoint(tmp_path)

    def test_missing_field(self, base, tmp_path):
        save_checkpoint(base, tmp_path)
        edit_manifest(tmp_path, lambda raw: raw.pop("tensors"))
        with pytest.raises(CheckpointCorruptError):
            load_checkpoint(tmp_path)

    def test_missing_version(self, base, tmp_path):
        save_checkpoint(base, tmp_path)
        edit_manifest(tmp_path, lambda raw: raw.pop("format_version"))
        with pytest.raises(CheckpointCorruptError):
            load_checkpoint(tmp_path)

    def test_unsupported_version(self, base, tmp_path):
        save_checkpoint(base, tmp_path)
        edit_manifest(tmp_path, lambda raw: raw.update(format_version=99))
        with pytest.raises(CheckpointVersionError):
            load_checkpoint(tmp_path)

    def test_shape_mismatch(self, base, tmp_path):
        save_checkpoint(base, tmp_path)

        def reshape_first(raw):
            raw["tensors"][0]["shape"] = [999]

        edit_manifest(tmp_path, reshape_first)
        with pytest.raises(CheckpointShapeError):
            load_checkpoint(tmp_path)

    def test_name_mismatch(self, base, tmp_path):
        save_checkpoint(base, tmp_path)
        edit_manifest(tmp_path, lambda raw: raw["tensors"][0].update(name="renamed.weight"))
        with pytest.raises(CheckpointShapeError):
            load_checkpoint(tmp_path)

    def test_errors_are_distinct(self):
        kinds = {CheckpointCorruptError, CheckpointShapeError, CheckpointVersionError}
        for kind in kinds:
            assert issubclass(kind, CheckpointError)
            assert not any(issubclass(kind, other) for other in kinds - {kind})
