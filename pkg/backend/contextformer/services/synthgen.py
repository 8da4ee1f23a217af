"""
合成数据生成服务

- ARMA(2,2) 数据集：系数在 [-1, 1]^4 上均匀采样并拒绝非平稳/不可逆的组合，
  真实系数作为时不变的连续元数据
- 潜变量 AR 数据集：AR(10) 序列叠加若干 AR(1) 潜变量的线性组合，潜变量作为上下文
- 滑动窗口切分与基于训练集统计量的归一化
"""

from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import signal

from contextformer.core.exceptions import ConfigError, DatasetError, UnstableSpecError
from contextformer.core.logging import data_logger as logger
from contextformer.schemas.dataset import DatasetSplit, NormalizationStats, WindowedSample
from contextformer.schemas.experiment import ARMADataConfig, LatentARDataConfig

BURN_IN = 200
STD_FLOOR = 1e-8
SPLIT_RATIOS: Tuple[int, int, int] = (7, 1, 2)
_REJECTION_BATCH = 256
_MAX_REJECTION_BATCHES = 1000


# ===== 平稳性判定 =====

def stable_mask(coeffs: np.ndarray) -> np.ndarray:
    """批量判定 (N, k) 个系数向量的伴随矩阵特征值是否都在单位圆内"""
    c = np.atleast_2d(np.asarray(coeffs, dtype=np.float64))
    n, k = c.shape
    if k < 1:
        raise ValueError("系数向量至少需要一个元素")
    matrices = np.zeros((n, k, k))
    matrices[:, 0, :] = c
    matrices[:, 1:, :-1] = np.eye(k - 1)
    eigenvalues = np.linalg.eigvals(matrices)
    return np.max(np.abs(eigenvalues), axis=-1) < 1.0


def is_stable(coeffs: Sequence[float]) -> bool:
    return bool(stable_mask(np.asarray(coeffs, dtype=np.float64)[None, :])[0])


# ===== ARMA(2,2) =====

@dataclass(frozen=True)
class ARMASpec:
    """y_t = φ1 y_{t-1} + φ2 y_{t-2} + ε_t + θ1 ε_{t-1} + θ2 ε_{t-2}"""

    phi: Tuple[float, float]
    theta: Tuple[float, float]
    noise_var: float = 1.0

    def is_stationary(self) -> bool:
        return is_stable(self.phi)

    def is_invertible(self) -> bool:
        # 1 + θ1 z + θ2 z² 的根在单位圆外 ⇔ [-θ1, -θ2] 的伴随矩阵特征值在圆内
        return is_stable([-t for t in self.theta])

    def coefficients(self) -> np.ndarray:
        """(φ1, φ2, θ1, θ2)"""
        return np.array([*self.phi, *self.theta], dtype=np.float64)


def draw_arma_spec(
    rng: np.random.Generator, bound: float = 1.0, noise_var: float = 1.0
) -> ARMASpec:
    """在 [-bound, bound]^4 上均匀采样，直到平稳且可逆"""
    for _ in range(_MAX_REJECTION_BATCHES):
        candidates = rng.uniform(-bound, bound, size=(_REJECTION_BATCH, 4))
        ok = stable_mask(candidates[:, :2]) & stable_mask(-candidates[:, 2:])
        if ok.any():
            c = candidates[int(np.argmax(ok))]
            return ARMASpec((float(c[0]), float(c[1])), (float(c[2]), float(c[3])), noise_var)
    raise UnstableSpecError(f"在 [-{bound}, {bound}]^4 内没有采样到平稳可逆的 ARMA 系数")


def sample_arma(
    spec: ARMASpec, length: int, rng: np.random.Generator, burn_in: int = BURN_IN
) -> np.ndarray:
    """模拟 ARMA(2,2)，丢弃 burn_in 步后返回 length 个值"""
    if not spec.is_stationary() or not spec.is_invertible():
        raise UnstableSpecError(f"ARMA 系数不满足平稳/可逆条件: phi={spec.phi}, theta={spec.theta}")
    if spec.noise_var <= 0:
        raise UnstableSpecError(f"噪声方差必须为正: {spec.noise_var}")
    eps = rng.normal(0.0, np.sqrt(spec.noise_var), size=length + burn_in)
    ma = np.r_[1.0, spec.theta]
    ar = np.r_[1.0, -np.asarray(spec.phi)]
    return signal.lfilter(ma, ar, eps)[burn_in:]


def split_counts(n: int, ratios: Sequence[int] = SPLIT_RATIOS) -> Tuple[int, int, int]:
    """按比例向下取整得到 train/val，其余归入 test"""
    total = sum(ratios)
    n_train = n * ratios[0] // total
    n_val = n * ratios[1] // total
    return n_train, n_val, n - n_train - n_val


def _split_sequences(items: list, ratios: Sequence[int]) -> Tuple[list, list, list]:
    n_train, n_val, _ = split_counts(len(items), ratios)
    return items[:n_train], items[n_train : n_train + n_val], items[n_train + n_val :]


def gen_arma_dataset(
    n: int = 10000,
    length: int = 192,
    obs_noise_var: float = 0.1,
    seed: int = 0,
    L: int = 96,
    coef_bound: float = 1.0,
    noise_var: float = 1.0,
    burn_in: int = BURN_IN,
    ratios: Sequence[int] = SPLIT_RATIOS,
) -> DatasetSplit:
    """生成 ARMA(2,2) 数据集，每条序列对应一个样本，按整条序列 7:1:2 划分

    Args:
        n: 序列条数
        length: 每条序列长度，前 L 步为历史，其余为预测目标
        obs_noise_var: 叠加在所有点上的观测噪声方差
        seed: 主种子，第 i 条序列使用 (seed, i) 派生的独立随机流

    Returns:
        DatasetSplit: 未归一化的数据集，元数据为 4 个真实系数
    """
    if n <= 0 or length <= 0:
        raise ConfigError(f"n 与 length 必须为正: n={n}, length={length}")
    if not 0 < L < length:
        raise ConfigError(f"历史长度 L={L} 必须小于序列长度 {length}")
    if obs_noise_var < 0:
        raise ConfigError(f"观测噪声方差不能为负: {obs_noise_var}")

    samples: List[WindowedSample] = []
    for index in range(n):
        rng = np.random.default_rng([seed, index])
        spec = draw_arma_spec(rng, coef_bound, noise_var)
        y = sample_arma(spec, length, rng, burn_in)
        if obs_noise_var > 0:
            y = y + rng.normal(0.0, np.sqrt(obs_noise_var), size=length)
        meta = np.tile(spec.coefficients(), (length, 1))
        samples.append(
            WindowedSample(
                x_hist=y[:L, None].copy(),
                c_hist=meta[:L].copy(),
                x_future=y[L:, None].copy(),
                c_future=meta[L:].copy(),
            )
        )

    train, val, test = _split_sequences(samples, ratios)
    logger.info(f"🎲 ARMA 数据集生成完成: {len(train)}/{len(val)}/{len(test)} 条, 长度 {length}")
    return DatasetSplit(
        train=train,
        val=val,
        test=test,
        L=L,
        T=length - L,
        F=1,
        n_continuous=4,
        generator="arma",
        seed=seed,
    )


# ===== 潜变量 AR =====

@dataclass
class LatentARSequence:
    """一条潜变量 AR 序列：y (length,)，context (n_latents, length)"""

    y: np.ndarray
    context: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray


def draw_stable_ar(rng: np.random.Generator, order: int, bound: float) -> np.ndarray:
    """在 [-bound, bound]^order 上拒绝采样平稳 AR 系数"""
    for _ in range(_MAX_REJECTION_BATCHES):
        candidates = rng.uniform(-bound, bound, size=(_REJECTION_BATCH, order))
        ok = stable_mask(candidates)
        if ok.any():
            return candidates[int(np.argmax(ok))]
    raise UnstableSpecError(f"在 [-{bound}, {bound}]^{order} 内没有采样到平稳 AR 系数")


def gen_latent_ar_dataset(
    N: int = 1000,
    length: int = 500,
    n_latents: int = 5,
    seed: int = 0,
    ar_order: int = 10,
    noise_var: float = 0.25,
    latent_phi: float = 0.8,
    weight_scale: float = 1.0,
    ar_coef_bound: float = 0.15,
    burn_in: int = BURN_IN,
) -> List[LatentARSequence]:
    """y_t = Σ β_i y_{t-i} + Σ γ_j c_{j,t} + ε_t

    潜变量 c_j 为 φ=latent_phi 的 AR(1)（单位噪声），γ_j ~ N(0, weight_scale²)，
    ε ~ N(0, noise_var)。
    """
    if N <= 0 or length <= ar_order:
        raise ConfigError(f"N 必须为正且 length 必须大于 AR 阶数: N={N}, length={length}")
    if n_latents < 0:
        raise ConfigError(f"潜变量个数不能为负: {n_latents}")
    if not -1.0 < latent_phi < 1.0:
        raise ConfigError(f"潜变量 AR(1) 系数必须在 (-1, 1) 内: {latent_phi}")

    total = length + burn_in
    sequences: List[LatentARSequence] = []
    for index in range(N):
        rng = np.random.default_rng([seed, index])
        beta = draw_stable_ar(rng, ar_order, ar_coef_bound)
        latents = np.zeros((0, total))
        if n_latents > 0:
            latents = signal.lfilter([1.0], [1.0, -latent_phi], rng.normal(size=(n_latents, total)), axis=-1)
        gamma = rng.normal(0.0, 1.0, size=n_latents) * weight_scale
        drive = gamma @ latents + rng.normal(0.0, np.sqrt(noise_var), size=total)
        y = signal.lfilter([1.0], np.r_[1.0, -beta], drive)
        sequences.append(
            LatentARSequence(y=y[burn_in:], context=latents[:, burn_in:], beta=beta, gamma=gamma)
        )
    logger.debug(f"潜变量 AR 数据集: {N} 条, 长度 {length}, 潜变量 {n_latents} 个")
    return sequences


# ===== 窗口化 =====

def sliding_windows(
    series: np.ndarray,
    metadata: Optional[np.ndarray],
    window_len: int,
    stride: int,
    history_len: int = 96,
    timestamps: Optional[np.ndarray] = None,
) -> List[WindowedSample]:
    """按步长切出 floor((len - window_len) / stride) + 1 个窗口，元数据逐行对齐"""
    x = np.asarray(series, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    meta = np.zeros((n, 0)) if metadata is None else np.asarray(metadata, dtype=np.float64)
    if meta.ndim == 1:
        meta = meta[:, None]
    if meta.shape[0] != n:
        raise DatasetError(f"元数据行数 {meta.shape[0]} 与序列长度 {n} 不一致")
    if timestamps is not None and len(timestamps) != n:
        raise DatasetError(f"时间戳个数 {len(timestamps)} 与序列长度 {n} 不一致")
    if window_len > n:
        raise DatasetError(f"窗口长度 {window_len} 大于序列长度 {n}")
    if stride <= 0 or not 0 < history_len < window_len:
        raise ConfigError(f"非法窗口参数: stride={stride}, history_len={history_len}, window_len={window_len}")

    windows = []
    for start in range(0, n - window_len + 1, stride):
        mid, end = start + history_len, start + window_len
        ts = None if timestamps is None else np.asarray(timestamps, dtype=np.int64)
        windows.append(
            WindowedSample(
                x_hist=x[start:mid].copy(),
                c_hist=meta[start:mid].copy(),
                x_future=x[mid:end].copy(),
                c_future=meta[mid:end].copy(),
                timestamps=None if ts is None else ts[start:mid].copy(),
                future_timestamps=None if ts is None else ts[mid:end].copy(),
            )
        )
    return windows


def windowed_latent_dataset(
    sequences: Sequence[LatentARSequence],
    L: int,
    T: int,
    stride: int = 24,
    ratios: Sequence[int] = SPLIT_RATIOS,
    seed: Optional[int] = None,
    timestamp_start: Optional[int] = None,
    timestamp_step: int = 3600,
) -> DatasetSplit:
    """把潜变量 AR 序列切成 (L, T) 窗口，潜变量作为时变连续元数据，按整条序列划分"""
    if not sequences:
        raise DatasetError("没有可切分的序列")
    n_latents = sequences[0].context.shape[0]
    parts = []
    for group in _split_sequences(list(sequences), ratios):
        samples: List[WindowedSample] = []
        for seq in group:
            ts = None
            if timestamp_start is not None:
                ts = timestamp_start + timestamp_step * np.arange(seq.y.size, dtype=np.int64)
            samples.extend(sliding_windows(seq.y, seq.context.T, L + T, stride, L, ts))
        parts.append(samples)
    return DatasetSplit(
        train=parts[0],
        val=parts[1],
        test=parts[2],
        L=L,
        T=T,
        F=1,
        n_continuous=n_latents,
        generator="latent_ar",
        seed=seed,
    )


# ===== 归一化 =====

def _continuous_mask(split: DatasetSplit) -> np.ndarray:
    mask = np.zeros(split.K, dtype=bool)
    mask[int(sum(split.categorical_cardinalities)) :] = True
    return mask


def _apply(split: DatasetSplit, series_fn, meta_fn, stats: Optional[NormalizationStats]) -> DatasetSplit:
    def convert(samples: List[WindowedSample]) -> List[WindowedSample]:
        return [
            replace(
                s,
                x_hist=series_fn(s.x_hist),
                x_future=series_fn(s.x_future),
                c_hist=meta_fn(s.c_hist),
                c_future=meta_fn(s.c_future),
            )
            for s in samples
        ]

    return replace(
        split,
        train=convert(split.train),
        val=convert(split.val),
        test=convert(split.test),
        stats=stats,
    )


def compute_stats(split: DatasetSplit) -> NormalizationStats:
    """只用训练集计算逐通道均值/标准差"""
    if not split.train:
        raise DatasetError("训练集为空，无法计算归一化统计量")
    series = np.concatenate([np.vstack([s.x_hist, s.x_future]) for s in split.train])
    meta = np.concatenate([np.vstack([s.c_hist, s.c_future]) for s in split.train])
    mask = _continuous_mask(split)
    # 离散列记为均值 0、标准差 1，变换后保持原值
    meta_mean = np.where(mask, meta.mean(axis=0), 0.0)
    meta_std = np.where(mask, np.maximum(meta.std(axis=0), STD_FLOOR), 1.0)
    return NormalizationStats(
        series_mean=series.mean(axis=0).tolist(),
        series_std=np.maximum(series.std(axis=0), STD_FLOOR).tolist(),
        meta_mean=meta_mean.tolist(),
        meta_std=meta_std.tolist(),
    )


def normalize(split: DatasetSplit, stats: Optional[NormalizationStats] = None) -> DatasetSplit:
    """z-score 归一化：时间序列与连续元数据，离散元数据不变"""
    if split.stats is not None:
        raise DatasetError("数据集已经归一化")
    stats = stats or compute_stats(split)
    s_mean, s_std = np.asarray(stats.series_mean), np.asarray(stats.series_std)
    m_mean, m_std = np.asarray(stats.meta_mean), np.asarray(stats.meta_std)
    logger.debug(f"归一化: series_mean={s_mean}, series_std={s_std}")
    return _apply(split, lambda x: (x - s_mean) / s_std, lambda c: (c - m_mean) / m_std, stats)


def denormalize(split: DatasetSplit) -> DatasetSplit:
    """normalize 的逆变换"""
    stats = split.stats
    if stats is None:
        raise DatasetError("数据集未归一化")
    s_mean, s_std = np.asarray(stats.series_mean), np.asarray(stats.series_std)
    m_mean, m_std = np.asarray(stats.meta_mean), np.asarray(stats.meta_std)
    return _apply(split, lambda x: x * s_std + s_mean, lambda c: c * m_std + m_mean, None)


def generate_from_config(data: Union[ARMADataConfig, LatentARDataConfig], seed: int) -> DatasetSplit:
    """按实验配置的 data 段生成（并按需归一化）数据集"""
    ratios = tuple(data.split_ratios)
    if isinstance(data, ARMADataConfig):
        split = gen_arma_dataset(
            n=data.n,
            length=data.length,
            obs_noise_var=data.obs_noise_var,
            seed=seed,
            L=data.L,
            coef_bound=data.coef_bound,
            noise_var=data.noise_var,
            ratios=ratios,
        )
    else:
        sequences = gen_latent_ar_dataset(
            N=data.n,
            length=data.length,
            n_latents=data.n_latents,
            seed=seed,
            ar_order=data.ar_order,
            noise_var=data.noise_var,
            latent_phi=data.latent_phi,
            weight_scale=data.weight_scale,
            ar_coef_bound=data.ar_coef_bound,
        )
        split = windowed_latent_dataset(
            sequences,
            L=data.L,
            T=data.T,
            stride=data.stride,
            ratios=ratios,
            seed=seed,
            timestamp_start=data.timestamp_start,
            timestamp_step=data.timestamp_step,
        )
    return normalize(split) if data.normalize else split
