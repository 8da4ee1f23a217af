"""
Adam 优化器
只管理构造时传入的可训练参数，冻结参数不会出现在状态里
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from contextformer.core.exceptions import ConfigError
from contextformer.models.base import Parameter

NamedParameters = List[Tuple[str, Parameter]]


@dataclass
class OptimizerState:
    """一阶/二阶矩与步数"""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def names(self) -> List[str]:
        return list(self.m)


class Adam:
    def __init__(
        self,
        params: NamedParameters,
        learning_rate: float = 3e-5,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        max_grad_norm: Optional[float] = None,
        lr_scales: Optional[Dict[str, float]] = None,
    ) -> None:
        frozen = [name for name, p in params if not p.requires_grad]
        if frozen:
            raise ConfigError(f"优化器不能包含冻结参数: {frozen}")
        if learning_rate < 0:
            raise ConfigError(f"学习率不能为负: {learning_rate}")
        self.params = list(params)
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.max_grad_norm = max_grad_norm
        # 按参数名的学习率倍数，未列出的参数为 1
        scales = dict(lr_scales or {})
        unknown = sorted(set(scales) - {name for name, _ in self.params})
        if unknown:
            raise ConfigError(f"学习率倍数指向未知参数: {unknown}")
        if any(scale < 0 for scale in scales.values()):
            raise ConfigError("学习率倍数不能为负")
        self.lr_scales: Dict[str, float] = {name: float(scales.get(name, 1.0)) for name, _ in self.params}
        self.state = OptimizerState(
            m={name: np.zeros_like(p.data) for name, p in self.params},
            v={name: np.zeros_like(p.data) for name, p in self.params},
        )

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(p.grad**2)) for _, p in self.params if p.grad is not None)))

    def step(self) -> float:
        """执行一步更新，返回裁剪前的全局梯度范数"""
        norm = self.grad_norm()
        clip = 1.0
        if self.max_grad_norm is not None and norm > self.max_grad_norm:
            clip = self.max_grad_norm / (norm + 1e-6)

        self.state.step += 1
        t = self.state.step
        for name, p in self.params:
            grad = np.zeros_like(p.data) if p.grad is None else p.grad * clip
            m = self.state.m[name] = self.beta1 * self.state.m[name] + (1 - self.beta1) * grad
            v = self.state.v[name] = self.beta2 * self.state.v[name] + (1 - self.beta2) * grad**2
            m_hat = m / (1 - self.beta1**t)
            v_hat = v / (1 - self.beta2**t)
            p.data -= self.learning_rate * self.lr_scales[name] * m_hat / (np.sqrt(v_hat) + self.eps)
        return norm

    def load_state(self, state: OptimizerState) -> None:
        names = [name for name, _ in self.params]
        if sorted(state.m) != sorted(names) or sorted(state.v) != sorted(names):
            raise ConfigError("优化器状态与参数集合不一致")
        self.state = OptimizerState(
            m={k: np.array(v, dtype=np.float64) for k, v in state.m.items()},
            v={k: np.array(v, dtype=np.float64) for k, v in state.v.items()},
            step=state.step,
        )
