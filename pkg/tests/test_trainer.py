"""
训练与评估测试：指标、Adam、训练循环、模型选择与冻结
"""

from dataclasses import replace

import numpy as np
import pytest

from contextformer.core.exceptions import (
    ConfigError,
    DatasetError,
    DimensionError,
    TrainingDivergedError,
)
from contextformer.core.model_config import ModelConfig, TrainConfig, model_presets
from contextformer.models.base import Module, Parameter
from contextformer.models.context import attach_context, trainable_parameters
from contextformer.models.forecaster import forward_base, init_base
from contextformer.numeric import functional as fn
from contextformer.schemas.dataset import DatasetSplit, WindowedSample
from contextformer.services.optimizer import Adam
from contextformer.services.synthgen import gen_arma_dataset, normalize
from contextformer.services.trainer import (
    HISTORY_COLUMNS,
    evaluate,
    finetune_context,
    frozen_digest,
    history_to_frame,
    mae,
    mse,
    train_base,
    train_context_full,
)


def metadata_target_split(rng, n_train: int = 96, n_val: int = 32) -> DatasetSplit:
    """历史是纯噪声，未来恒等于第一列元数据：只有上下文通路能预测"""

    def sample() -> WindowedSample:
        meta = rng.normal(size=4)
        return WindowedSample(
            x_hist=rng.normal(size=(12, 1)),
            c_hist=np.tile(meta, (12, 1)),
            x_future=np.full((6, 1), meta[0]),
            c_future=np.tile(meta, (6, 1)),
        )

    return DatasetSplit(
        train=[sample() for _ in range(n_train)],
        val=[sample() for _ in range(n_val)],
        test=[sample() for _ in range(n_val)],
        L=12,
        T=6,
        F=1,
        n_continuous=4,
    )


class DoublingStub(Module):
    """预测 2 × 历史前 T 步的桩模型"""

    def __init__(self, config: ModelConfig) -> None:
        super().__init__()
        self.config = config

    def forward(self, x_hist, c_hist=None, timestamps=None, rng=None):
        return fn.constant(2.0 * np.asarray(x_hist)[:, : self.config.T, :])


# ===== 指标 =====

class TestMetrics:
    def test_identical(self):
        assert mse(np.ones(4), np.ones(4)) == 0.0
        assert mae(np.ones(4), np.ones(4)) == 0.0

    def test_hand_arithmetic(self):
        assert mse(np.array([0.0, 0.0]), np.array([1.0, 3.0])) == 5.0
        assert mae(np.array([0.0, 0.0]), np.array([1.0, 3.0])) == 2.0

    def test_loop_oracle(self, rng):
        pred, target = rng.normal(size=(5, 6, 2)), rng.normal(size=(5, 6, 2))
        sq = ab = 0.0
        for p, t in zip(pred.reshape(-1), target.reshape(-1)):
            sq += (p - t) ** 2
            ab += abs(p - t)
        assert mse(pred, target) == pytest.approx(sq / pred.size, abs=1e-12)
        assert mae(pred, target) == pytest.approx(ab / pred.size, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            mse(np.zeros(3), np.zeros(4))
        with pytest.raises(DimensionError):
            mae(np.zeros((2, 2)), np.zeros(4))


# ===== Adam =====

class TestAdam:
    def test_first_step_moves_by_learning_rate(self):
        p = Parameter(np.array([1.0, -1.0]))
        p.grad = np.array([0.5, -2.0])
        Adam([("p", p)], learning_rate=0.1).step()
        # 偏差校正后首步的更新量为 lr · sign(g)
        np.testing.assert_allclose(p.data, [0.9, -0.9], atol=1e-7)

    def test_clipping_scales_gradient(self):
        p = Parameter(np.zeros(2))
        p.grad = np.array([3.0, 4.0])
        optimizer = Adam([("p", p)], learning_rate=0.1, max_grad_norm=1.0)
        assert optimizer.step() == pytest.approx(5.0)
        np.testing.assert_allclose(optimizer.state.m["p"], 0.1 * np.array([3.0, 4.0]) / (5.0 + 1e-6))

    def test_missing_gradient_counts_as_zero(self):
        p = Parameter(np.ones(3))
        optimizer = Adam([("p", p)], learning_rate=0.1)
        optimizer.step()
        np.testing.assert_array_equal(p.data, np.ones(3))
        assert optimizer.state.step == 1

    def test_rejects_negative_learning_rate(self):
        with pytest.raises(ConfigError):
            Adam([("p", Parameter(np.zeros(1)))], learning_rate=-1.0)

    def test_load_state_checks_names(self):
        optimizer = Adam([("p", Parameter(np.zeros(1)))])
        other = Adam([("q", Parameter(np.zeros(1)))])
        with pytest.raises(ConfigError):
            optimizer.load_state(other.state)

    def test_lr_scales_per_parameter(self):
        """首步更新量为 lr · scale · sign(g)，未列出的参数倍数为 1"""
        a, b = Parameter(np.zeros(2)), Parameter(np.zeros(2))
        a.grad, b.grad = np.ones(2), -np.ones(2)
        optimizer = Adam([("a", a), ("b", b)], learning_rate=0.1, lr_scales={"a": 0.1})
        optimizer.step()
        assert optimizer.lr_scales == {"a": 0.1, "b": 1.0}
        np.testing.assert_allclose(a.data, [-0.01, -0.01], atol=1e-7)
        np.testing.assert_allclose(b.data, [0.1, 0.1], atol=1e-7)

    def test_lr_scales_checked(self):
        with pytest.raises(ConfigError):
            Adam([("p", Parameter(np.zeros(1)))], lr_scales={"q": 2.0})
        with pytest.raises(ConfigError):
            Adam([("p", Parameter(np.zeros(1)))], lr_scales={"p": -1.0})


# ===== 训练 =====

class TestTrainBase:
    def test_zero_learning_rate_keeps_parameters(self, tiny_config, tiny_split, tiny_train, rng):
        model = init_base(tiny_config, rng)
        before = model.state_dict()
        train_base(model, tiny_split, tiny_train.model_copy(update={"learning_rate": 0.0}))
        for name, value in model.state_dict().items():
            np.testing.assert_array_equal(value, before[name])

    def test_history_layout(self, tiny_config, tiny_split, tiny_train, rng):
        result = train_base(init_base(tiny_config, rng), tiny_split, tiny_train)
        assert [r.epoch for r in result.history] == [0, 1, 2]
        frame = history_to_frame(result.history)
        assert list(frame.columns) == HISTORY_COLUMNS == ["epoch", "train_loss", "val_loss"]

    def test_seeded_runs_are_identical(self, tiny_config, tiny_split, tiny_train):
        runs = [
            train_base(init_base(tiny_config, np.random.default_rng(3)), tiny_split, tiny_train)
            for _ in range(2)
        ]
        assert runs[0].history == runs[1].history
        for name, value in runs[0].model.state_dict().items():
            np.testing.assert_array_equal(value, runs[1].model.state_dict()[name])

    def test_keeps_best_validation_parameters(self, tiny_config, tiny_split, tiny_train, rng):
        config = tiny_train.model_copy(update={"base_epochs": 5, "learning_rate": 5e-3})
        result = train_base(init_base(tiny_config, rng), tiny_split, config)
        losses = [r.val_loss for r in result.history]
        assert result.best_val_loss == min(losses)
        assert result.best_epoch == int(np.argmin(losses))
        assert evaluate(result.model, tiny_split, "val").mse == pytest.approx(result.best_val_loss, abs=1e-12)

    def test_learns_on_small_split(self, tiny_config, tiny_split, tiny_train, rng):
        config = tiny_train.model_copy(update={"base_epochs": 10, "learning_rate": 5e-3})
        result = train_base(init_base(tiny_config, rng), tiny_split, config)
        assert result.history[-1].train_loss < result.history[0].train_loss

    def test_empty_train_split(self, tiny_config, tiny_split, tiny_train, rng):
        with pytest.raises(DatasetError):
            train_base(init_base(tiny_config, rng), replace(tiny_split, train=[]), tiny_train)

    def test_empty_val_falls_back_to_train(self, tiny_config, tiny_split, tiny_train, rng):
        result = train_base(init_base(tiny_config, rng), replace(tiny_split, val=[]), tiny_train)
        assert result.history[0].val_loss == result.history[0].train_loss

    def test_non_finite_loss_aborts(self, tiny_config, tiny_split, tiny_train, rng):
        broken = replace(tiny_split.train[0], x_future=np.full_like(tiny_split.train[0].x_future, np.nan))
        split = replace(tiny_split, train=[broken] + tiny_split.train[1:])
        with pytest.raises(TrainingDivergedError):
            train_base(init_base(tiny_config, rng), split, tiny_train)

    def test_layout_mismatch(self, tiny_config, tiny_split, tiny_train, rng):
        model = init_base(tiny_config.model_copy(update={"T": 5}), rng)
        with pytest.raises(ConfigError):
            train_base(model, tiny_split, tiny_train)

    def test_rejects_context_model(self, tiny_config, tiny_split, tiny_train, rng):
        model = attach_context(init_base(tiny_config, rng), tiny_config, rng)
        with pytest.raises(ConfigError):
            train_base(model, tiny_split, tiny_train)

    @pytest.mark.slow
    def test_memorizes_eight_samples(self):
        split = normalize(gen_arma_dataset(n=12, length=120, L=96, seed=0))
        assert len(split.train) == 8
        config = model_presets.get_model("desk", L=96, T=24, n_continuous=4, dropout=0.0)
        train = TrainConfig(learning_rate=1e-3, dropout=0.0, base_epochs=500, batch_size=8, seed=0)
        result = train_base(init_base(config, np.random.default_rng(0)), split, train)
        assert evaluate(result.model, split, "train").mse < 0.01


# ===== 微调 =====

class TestFinetune:
    def test_initial_loss_equals_base(self, tiny_config, tiny_split, tiny_train, rng):
        base = train_base(init_base(tiny_config, rng), tiny_split, tiny_train).model
        base_val = evaluate(base, tiny_split, "val").mse
        result = finetune_context(attach_context(base, tiny_config, rng), tiny_split, tiny_train)
        assert abs(result.history[0].val_loss - base_val) <= 1e-9
        # 选择保证不比基础模型差
        assert result.best_val_loss <= base_val + 1e-12

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_frozen_parameters_untouched(self, seed, tiny_config, tiny_split, tiny_train):
        rng = np.random.default_rng(seed)
        base = init_base(tiny_config, rng)
        model = attach_context(base, tiny_config, rng)
        before = frozen_digest(model)
        config = tiny_train.model_copy(update={"seed": seed, "finetune_epochs": 3, "learning_rate": 1e-2})
        result = finetune_context(model, tiny_split, config)
        assert frozen_digest(result.model) == before
        np.testing.assert_array_equal(result.model.blocks[0].ff.out.weight.data, base.blocks[0].ff.out.weight.data)
        assert set(result.optimizer.state.names()) == {name for name, _ in trainable_parameters(model)}

    def test_head_and_context_learning_rates(self, tiny_config, tiny_split, tiny_train, rng):
        model = attach_context(init_base(tiny_config, rng), tiny_config, rng)
        config = tiny_train.model_copy(update={"head_lr_scale": 0.5, "context_lr_scale": 4.0})
        scales = finetune_context(model, tiny_split, config).optimizer.lr_scales
        assert scales["head.weight"] == scales["head.bias"] == 0.5
        assert scales["cross_metadata.0.w_o.weight"] == 4.0
        assert set(scales) == {name for name, _ in trainable_parameters(model)}

    def test_context_dropout_only_touches_context_path(self, tiny_config, tiny_split, tiny_train, rng):
        model = attach_context(init_base(tiny_config, rng), tiny_config, rng)
        config = tiny_train.model_copy(update={"dropout": 0.3, "context_dropout": 0.0, "finetune_epochs": 0})
        finetune_context(model, tiny_split, config)
        assert model.cross_dropout.p == 0.0 and model.metadata_embed.dropout.p == 0.0
        assert model.dropout.p == 0.3

    def test_metadata_only_target_is_learned(self, tiny_config):
        """目标只取决于元数据时，微调必须在验证集上明显超过基础模型"""
        split = metadata_target_split(np.random.default_rng(0))
        train = TrainConfig(
            learning_rate=1e-2, dropout=0.0, base_epochs=20, finetune_epochs=30, batch_size=16, seed=0
        )
        base = train_base(init_base(tiny_config, np.random.default_rng(1)), split, train).model
        base_val = evaluate(base, split, "val").mse
        result = finetune_context(attach_context(base, tiny_config, np.random.default_rng(2)), split, train)
        assert result.history[0].val_loss == pytest.approx(base_val, abs=1e-9)
        assert result.best_epoch > 0
        assert result.best_val_loss < 0.9 * base_val

    def test_requires_frozen_context_model(self, tiny_config, tiny_split, tiny_train, rng):
        base = init_base(tiny_config, rng)
        with pytest.raises(ConfigError):
            finetune_context(base, tiny_split, tiny_train)
        with pytest.raises(ConfigError):
            finetune_context(attach_context(base, tiny_config, rng, freeze_base=False), tiny_split, tiny_train)

    def test_metadata_layout_mismatch(self, tiny_config, tiny_split, tiny_train, rng):
        config = tiny_config.model_copy(update={"n_continuous": 3})
        model = attach_context(init_base(config, rng), config, rng)
        with pytest.raises(ConfigError):
            finetune_context(model, tiny_split, tiny_train)

    def test_temporal_needs_timestamps(self, tiny_config, tiny_split, tiny_train, rng):
        config = tiny_config.model_copy(update={"use_temporal": True})
        model = attach_context(init_base(config, rng), config, rng)
        with pytest.raises(ConfigError):
            finetune_context(model, tiny_split, tiny_train)

    def test_train_from_scratch(self, tiny_config, tiny_split, tiny_train, rng):
        model = attach_context(init_base(tiny_config, rng), tiny_config, rng, freeze_base=False)
        before = model.state_dict()["blocks.0.attention.w_q.weight"]
        result = train_context_full(model, tiny_split, tiny_train)
        assert len(result.history) == 1 + tiny_train.base_epochs + tiny_train.finetune_epochs
        if result.best_epoch > 0:
            assert np.any(result.model.state_dict()["blocks.0.attention.w_q.weight"] != before)
        with pytest.raises(ConfigError):
            train_context_full(attach_context(init_base(tiny_config, rng), tiny_config, rng), tiny_split, tiny_train)


# ===== 评估 =====

class TestEvaluate:
    def test_loop_oracle(self, tiny_config, tiny_split, rng):
        model = init_base(tiny_config, rng)
        report = evaluate(model, tiny_split, "test", per_sample=True)
        sq = ab = 0.0
        per_sample = []
        for s in tiny_split.test:
            diff = forward_base(model, s.x_hist) - s.x_future
            sq += float(np.sum(diff**2))
            ab += float(np.sum(np.abs(diff)))
            per_sample.append(float(np.mean(diff**2)))
        count = len(tiny_split.test) * 6
        assert report.mse == pytest.approx(sq / count, abs=1e-12)
        assert report.mae == pytest.approx(ab / count, abs=1e-12)
        np.testing.assert_allclose(report.per_sample_mse, per_sample, atol=1e-12)
        assert (report.split, report.method, report.n_samples) == ("test", "base", 4)

    def test_repeatable(self, tiny_config, tiny_split, rng):
        model = init_base(tiny_config.model_copy(update={"dropout": 0.3}), rng)
        assert evaluate(model, tiny_split) == evaluate(model, tiny_split)

    def test_exact_model_scores_zero(self, tiny_config, rng):
        samples = []
        for _ in range(5):
            x = rng.normal(size=(12, 1))
            samples.append(
                replace(
                    gen_arma_dataset(n=10, length=18, L=12).train[0],
                    x_hist=x,
                    x_future=2.0 * x[:6],
                )
            )
        split = DatasetSplit(train=samples, val=[], test=samples, L=12, T=6, F=1, n_continuous=4)
        report = evaluate(DoublingStub(tiny_config), split)
        assert report.mse == 0.0 and report.mae == 0.0

    def test_empty_split(self, tiny_config, tiny_split, rng):
        with pytest.raises(DatasetError):
            evaluate(init_base(tiny_config, rng), replace(tiny_split, test=[]))

    def test_method_labels(self, tiny_config, tiny_split, rng):
        base = init_base(tiny_config, rng)
        assert evaluate(attach_context(base, tiny_config, rng), tiny_split).method == "context"
        scratch = attach_context(base, tiny_config, rng, freeze_base=False)
        assert evaluate(scratch, tiny_split).method == "context_scratch"
