"""
测试公共夹具
"""

import numpy as np
import pytest
from loguru import logger

from contextformer.core.logging import setup_logging
from contextformer.core.model_config import ModelConfig, TrainConfig
from contextformer.services.synthgen import gen_arma_dataset, normalize


@pytest.fixture(autouse=True, scope="session")
def quiet_logging():
    setup_logging("error")


@pytest.fixture
def captured_warnings():
    """收集测试期间 WARNING 及以上级别的日志消息"""
    messages = []
    sink_id = logger.add(lambda message: messages.append(message.record["message"]), level="WARNING")
    yield messages
    logger.remove(sink_id)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_config() -> ModelConfig:
    """单块、8 维的小模型，L=12 对应 5 个补丁"""
    return ModelConfig(
        d_model=8,
        n_blocks=1,
        n_heads=2,
        patch_len=4,
        patch_stride=2,
        dropout=0.0,
        L=12,
        T=6,
        F=1,
        n_continuous=4,
        embed_encoder_layers=1,
        ff_dim=8,
    )


@pytest.fixture
def tiny_split():
    """20 条长度 18 的 ARMA 序列（L=12, T=6），已归一化"""
    return normalize(gen_arma_dataset(n=20, length=18, L=12, seed=3))


@pytest.fixture
def tiny_train() -> TrainConfig:
    return TrainConfig(learning_rate=1e-3, dropout=0.0, base_epochs=2, finetune_epochs=2, batch_size=8, seed=1)
