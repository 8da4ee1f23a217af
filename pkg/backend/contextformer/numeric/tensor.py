"""
张量与反向模式自动微分的记录带（Tape）

每个线程维护自己的 Tape 栈；只有在活动 Tape 内、且至少一个输入需要梯度时，
运算才会被记录。Tape 按创建顺序保存节点，天然是拓扑序，反向传播时逆序遍历。
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from contextformer.core.exceptions import DimensionError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_local = threading.local()


def _tape_stack() -> List["Tape"]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> Optional["Tape"]:
    """当前线程最内层的活动 Tape"""
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """64 位浮点稠密张量"""

    __slots__ = ("data", "requires_grad", "grad", "node_id", "name")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: Optional[str] = None,
    ) -> None:
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.node_id: Optional[int] = None
        self.name = name

    @classmethod
    def _wrap(cls, array: np.ndarray, requires_grad: bool = False) -> "Tensor":
        # 运算结果直接持有新数组，不再复制
        obj = cls.__new__(cls)
        obj.data = np.asarray(array, dtype=np.float64)
        obj.requires_grad = requires_grad
        obj.grad = None
        obj.node_id = None
        obj.name = None
        return obj

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        """返回数据副本"""
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError("只有单元素张量可以转换为标量", self.shape)
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"<Tensor shape={self.shape} requires_grad={self.requires_grad}{label}>"

    # 运算符只是 functional 的薄封装
    def __add__(self, other: "Tensor") -> "Tensor":
        from contextformer.numeric import functional as fn

        return fn.add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        from contextformer.numeric import functional as fn

        return fn.sub(self, other)

    def __mul__(self, other) -> "Tensor":
        from contextformer.numeric import functional as fn

        if isinstance(other, Tensor):
            return fn.mul(self, other)
        return fn.scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        from contextformer.numeric import functional as fn

        return fn.scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from contextformer.numeric import functional as fn

        return fn.matmul(self, other)


@dataclass
class TapeNode:
    """一次被记录的运算"""

    node_id: int
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """反向模式自动微分记录带，仅限创建它的线程使用"""

    def __init__(self) -> None:
        self.nodes: List[TapeNode] = []
        self._producers: Dict[int, TapeNode] = {}

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(
        self, inputs: Sequence[Tensor], output: Tensor, backward: BackwardFn
    ) -> None:
        node = TapeNode(len(self.nodes), tuple(inputs), output, backward)
        output.node_id = node.node_id
        output.requires_grad = True
        self.nodes.append(node)
        self._producers[node.node_id] = node

    def produced(self, tensor: Tensor) -> bool:
        node = self._producers.get(tensor.node_id) if tensor.node_id is not None else None
        return node is not None and node.output is tensor

    def backward(self, loss: Tensor) -> None:
        """从标量损失反向传播，叶子张量的梯度累加（不会被清零）"""
        if loss.size != 1:
            raise DimensionError("backward 只接受标量损失", loss.shape)
        if not self.produced(loss):
            raise ValueError("损失张量不是由当前 Tape 记录的运算产生的")

        pending: Dict[int, np.ndarray] = {
            loss.node_id: np.ones_like(loss.data)
        }
        for node in reversed(self.nodes[: loss.node_id + 1]):
            g = pending.pop(node.node_id, None)
            if g is None:
                continue
            node.output.grad = g
            input_grads = node.backward(g)
            for tensor, ig in zip(node.inputs, input_grads):
                if ig is None or not tensor.requires_grad:
                    continue
                if self.produced(tensor):
                    prev = pending.get(tensor.node_id)
                    pending[tensor.node_id] = ig if prev is None else prev + ig
                else:
                    tensor.grad = ig.copy() if tensor.grad is None else tensor.grad + ig


def record(
    inputs: Sequence[Tensor], output_data: np.ndarray, backward: BackwardFn
) -> Tensor:
    """包装运算结果；需要梯度时记录到当前 Tape"""
    out = Tensor._wrap(output_data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(inputs, out, backward)
    return out


def backward(loss: Tensor) -> None:
    """在当前活动 Tape 上对 loss 反向传播"""
    tape = active_tape()
    if tape is None:
        raise RuntimeError("没有活动的 Tape，无法反向传播")
    tape.backward(loss)
