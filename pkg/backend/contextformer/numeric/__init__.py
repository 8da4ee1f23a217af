"""最小化的稠密张量与反向模式自动微分"""

from contextformer.numeric.tensor import Tape, Tensor, active_tape, backward

__all__ = ["Tape", "Tensor", "active_tape", "backward"]
