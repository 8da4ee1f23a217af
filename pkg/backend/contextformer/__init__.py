"""上下文感知时间序列预测：自回归基线与 ContextFormer 插拔式微调."""

__version__ = "0.1.0"
