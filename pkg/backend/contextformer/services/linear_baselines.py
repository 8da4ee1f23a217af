"""
线性基线：AR(p) 最小二乘与残差上的外生回归

先用滞后矩阵拟合 AR 系数 β，再把上下文 C 回归到残差 Y' = Y - Xβ 上得到 γ。
γ = 0 总是可行解，因此 E_new ≤ E_orig；嵌套的 q = 1..Q 个上下文列同理单调不增。
"""

from dataclasses import dataclass
from typing import List

import numpy as np
import pandas as pd
from scipy import linalg

from contextformer.core.exceptions import DimensionError, UnderdeterminedSystemError
from contextformer.core.logging import baseline_logger as logger
from contextformer.schemas.experiment import SweepConfig
from contextformer.schemas.report import SweepRow
from contextformer.services.synthgen import gen_latent_ar_dataset

RIDGE_LAMBDA = 1e-10
SWEEP_COLUMNS = ["q", "mean_mse", "std_mse", "n_sequences"]


@dataclass
class LaggedDesign:
    """第 i 行为 [y_{t-1}, ..., y_{t-p}]，对应目标 y_t"""

    X: np.ndarray
    Y: np.ndarray

    @property
    def n(self) -> int:
        return self.Y.shape[0]


@dataclass
class LeastSquaresSolution:
    coef: np.ndarray
    rank: int
    rank_deficient: bool = False


@dataclass
class ARFit:
    beta: np.ndarray
    residuals: np.ndarray
    e_orig: float
    rank_deficient: bool = False


@dataclass
class ContextFit:
    gamma: np.ndarray
    e_new: float
    rank_deficient: bool = False


def build_lagged(y: np.ndarray, p: int) -> LaggedDesign:
    """构造 (len(y) - p) × p 的滞后矩阵"""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if p < 1:
        raise ValueError(f"滞后阶数必须 ≥ 1: {p}")
    if y.size <= p:
        raise UnderdeterminedSystemError(f"序列长度 {y.size} 必须大于滞后阶数 {p}")
    n = y.size - p
    X = np.column_stack([y[p - i : p - i + n] for i in range(1, p + 1)])
    return LaggedDesign(X=X, Y=y[p:].copy())


def fit_least_squares(X: np.ndarray, Y: np.ndarray) -> LeastSquaresSolution:
    """min ||Y - Xβ||²，Householder QR 求解；秩亏时改用带 1e-10 岭项的正规方程"""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64).reshape(-1)
    if X.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise DimensionError("设计矩阵与目标向量行数不一致", X.shape, Y.shape)
    n, k = X.shape
    if n < k:
        raise UnderdeterminedSystemError(f"样本数 {n} 少于系数个数 {k}")
    if k == 0:
        return LeastSquaresSolution(coef=np.zeros(0), rank=0)

    Q, R = linalg.qr(X, mode="economic")
    diag = np.abs(np.diag(R))
    tol = max(n, k) * np.finfo(np.float64).eps * (diag.max() if diag.size else 0.0)
    rank = int(np.sum(diag > tol))
    if rank == k:
        return LeastSquaresSolution(coef=linalg.solve_triangular(R, Q.T @ Y), rank=rank)

    logger.warning(f"⚠️ 设计矩阵秩亏 (rank={rank} < {k})，使用 λ={RIDGE_LAMBDA} 的岭回归")
    gram = X.T @ X + RIDGE_LAMBDA * np.eye(k)
    coef = linalg.solve(gram, X.T @ Y, assume_a="pos")
    return LeastSquaresSolution(coef=coef, rank=rank, rank_deficient=True)


def fit_ar(y: np.ndarray, p: int) -> ARFit:
    design = build_lagged(y, p)
    solution = fit_least_squares(design.X, design.Y)
    residuals = design.Y - design.X @ solution.coef
    return ARFit(
        beta=solution.coef,
        residuals=residuals,
        e_orig=float(residuals @ residuals),
        rank_deficient=solution.rank_deficient,
    )


def fit_context_residuals(fit: ARFit, C: np.ndarray) -> ContextFit:
    """把上下文 C (n×q) 回归到 AR 残差上"""
    C = np.asarray(C, dtype=np.float64)
    if C.ndim == 1:
        C = C[:, None]
    if C.shape[0] != fit.residuals.shape[0]:
        raise DimensionError("上下文矩阵行数与残差长度不一致", C.shape, fit.residuals.shape)
    solution = fit_least_squares(C, fit.residuals)
    remaining = fit.residuals - C @ solution.coef
    e_new = float(remaining @ remaining)
    if e_new > fit.e_orig:
        # 舍入误差导致变差时退回 γ = 0
        logger.debug(f"残差回归未改善 ({e_new} > {fit.e_orig})，使用 γ = 0")
        return ContextFit(gamma=np.zeros(C.shape[1]), e_new=fit.e_orig, rank_deficient=solution.rank_deficient)
    return ContextFit(gamma=solution.coef, e_new=e_new, rank_deficient=solution.rank_deficient)


def nested_context_errors(fit: ARFit, C: np.ndarray) -> np.ndarray:
    """依次使用前 q 列上下文 (q = 0..Q) 的平方误差，保证单调不增"""
    errors = [fit.e_orig]
    for q in range(1, C.shape[1] + 1):
        e = fit_context_residuals(fit, C[:, :q]).e_new
        errors.append(min(e, errors[-1]))
    return np.asarray(errors)


def run_context_sweep(config: SweepConfig, seed: int = 0) -> List[SweepRow]:
    """生成潜变量 AR 数据，逐序列拟合 AR(p)，再对 q = 0..Q 拟合残差回归

    每条序列的 MSE 为 E / n，结果按 q 汇总均值与标准差。
    """
    sequences = gen_latent_ar_dataset(
        N=config.n_sequences,
        length=config.length,
        n_latents=config.n_latents,
        seed=seed,
        ar_order=config.ar_order,
        noise_var=config.noise_var,
        latent_phi=config.latent_phi,
        weight_scale=config.weight_scale,
        ar_coef_bound=config.ar_coef_bound,
    )
    p = config.ar_order
    per_sequence = np.zeros((len(sequences), config.n_latents + 1))
    for index, seq in enumerate(sequences):
        fit = fit_ar(seq.y, p)
        if config.context == "noise":
            noise_rng = np.random.default_rng([seed, index, 1])
            C = noise_rng.normal(size=(fit.residuals.size, config.n_latents))
        else:
            C = seq.context[:, p:].T
        per_sequence[index] = nested_context_errors(fit, C) / fit.residuals.size

    means = per_sequence.mean(axis=0)
    stds = per_sequence.std(axis=0)
    rows = [
        SweepRow(q=q, mean_mse=float(means[q]), std_mse=float(stds[q]), n_sequences=len(sequences))
        for q in range(config.n_latents + 1)
    ]
    logger.info(
        "📉 上下文扫描完成: "
        + ", ".join(f"q={row.q}: {row.mean_mse:.4f}" for row in rows)
    )
    return rows


def sweep_to_frame(rows: List[SweepRow]) -> pd.DataFrame:
    return pd.DataFrame([row.model_dump() for row in rows], columns=SWEEP_COLUMNS)
