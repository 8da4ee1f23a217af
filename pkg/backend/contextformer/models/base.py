from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from contextformer.core.exceptions import DimensionError
from contextformer.numeric.tensor import Tensor


class Parameter(Tensor):
    """可学习参数，默认需要梯度"""

    __slots__ = ()

    def __init__(self, data, requires_grad: bool = True, name: Optional[str] = None) -> None:
        super().__init__(data, requires_grad=requires_grad, name=name)


class Module:
    """模型组件基类

    参数与子模块通过属性赋值自动注册，名称按属性路径以点号拼接，
    保证保存/加载前后名称稳定。
    """

    def __init__(self) -> None:
        object.__setattr__(self, "_parameters", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name: str, value) -> None:
        params: Dict[str, Parameter] = self.__dict__.get("_parameters")
        modules: Dict[str, Module] = self.__dict__.get("_modules")
        if params is None or modules is None:
            raise AttributeError("子类必须先调用 Module.__init__()")
        params.pop(name, None)
        modules.pop(name, None)
        if isinstance(value, Parameter):
            params[name] = value
        elif isinstance(value, Module):
            modules[name] = value
        object.__setattr__(self, name, value)

    # ------------------------------------------------------------------
    # 参数遍历
    # ------------------------------------------------------------------
    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, param in self._parameters.items():
            yield prefix + name, param
        for name, module in self._modules.items():
            yield from module.named_parameters(prefix + name + ".")

    def modules(self) -> Iterator["Module"]:
        yield self
        for module in self._modules.values():
            yield from module.modules()

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def set_requires_grad(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag

    # ------------------------------------------------------------------
    # 训练/评估模式
    # ------------------------------------------------------------------
    def train(self, mode: bool = True) -> "Module":
        object.__setattr__(self, "training", mode)
        for module in self._modules.values():
            module.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    # ------------------------------------------------------------------
    # 状态字典
    # ------------------------------------------------------------------
    def state_dict(self) -> Dict[str, np.ndarray]:
        """参数名到数据副本的有序映射"""
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(f"参数名不一致, 缺少: {missing}, 多余: {unexpected}")
        for name, param in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != param.shape:
                raise DimensionError(f"参数 {name} 形状不一致", param.shape, value.shape)
            param.data[...] = value

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"<{self.__class__.__name__}(parameters={self.num_parameters()})>"


class ModuleList(Module):
    """按下标注册的子模块列表"""

    def __init__(self, modules: Optional[List[Module]] = None) -> None:
        super().__init__()
        object.__setattr__(self, "_items", [])
        for module in modules or []:
            self.append(module)

    def append(self, module: Module) -> None:
        setattr(self, str(len(self._items)), module)
        self._items.append(module)

    def __getitem__(self, index: int) -> Module:
        return self._items[index]

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self) -> Iterator[Module]:
        return iter(self._items)
