#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
SPDC 多光子符合计数模型
将泵浦干涉场映射为 2n 重符合计数率，包含多路复用探测的接受率，并生成泊松分布的合成计数扫描
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.correlator import CorrelationTrace, InterferencePair, correlation_integrals
from src.errors import GainTooLargeError, ValidationError

logger = logging.getLogger(__name__)

# 小泵浦功率近似：gain² 必须小于该值，(n+1) 阶事件才可忽略
MAX_GAIN_SQUARED = 0.1
_MC_CHUNK = 100_000


@dataclass(frozen=True)
class SpdcSource:
    """
    SPDC 光源与探测装置

    参数:
        gain: 每个脉冲的振幅常数（晶体参数与泵浦振幅 E₀ 的乘积）
        efficiency: 单光子探测效率 η ∈ (0, 1]
        num_modes: 空间输出模式数 M，每个模式带偏振分析
        rep_rate: 重复频率（Hz）
    """

    gain: float
    efficiency: float = 0.3
    num_modes: int = 6
    rep_rate: float = 8e7

    def __post_init__(self):
        if not np.isfinite(self.gain) or self.gain < 0:
            raise ValidationError(f"gain 不能为负，当前为 {self.gain}")
        if not 0 < self.efficiency <= 1:
            raise ValidationError(f"探测效率必须位于 (0, 1]，当前为 {self.efficiency}")
        if int(self.num_modes) != self.num_modes or self.num_modes < 1:
            raise ValidationError(f"模式数必须为正整数，当前为 {self.num_modes}")
        if not np.isfinite(self.rep_rate) or self.rep_rate <= 0:
            raise ValidationError(f"重复频率必须为正数，当前为 {self.rep_rate}")
        object.__setattr__(self, "num_modes", int(self.num_modes))


@dataclass(frozen=True)
class CountRecord:
    tau: float
    order: int
    counts: int
    exposure_s: float

    def __post_init__(self):
        if int(self.counts) != self.counts or self.counts < 0:
            raise ValidationError(f"计数必须为非负整数，当前为 {self.counts}")
        if not self.exposure_s > 0:
            raise ValidationError(f"曝光时间必须为正数，当前为 {self.exposure_s}")
        object.__setattr__(self, "counts", int(self.counts))


def acceptance(n: int, num_modes: int) -> float:
    """
    n 个同偏振光子独立均匀地分配到 M 个模式且互不重叠的概率，两个偏振取平方

    参数:
        n: 阶数（每个偏振的光子数）
        num_modes: 模式数 M

    返回:
        [M!/((M−n)!·Mⁿ)]²；n > M 时为 0
    """
    if n < 1 or num_modes < 1:
        raise ValidationError(f"接受率要求 n ≥ 1、M ≥ 1，当前 n={n}, M={num_modes}")
    if n > num_modes:
        return 0.0
    single = math.perm(num_modes, n) / num_modes ** n
    return float(single ** 2)


def monte_carlo_acceptance(n: int, num_modes: int, trials: int = 1_000_000,
                           seed: int = 0) -> Tuple[float, float]:
    """
    蒙特卡罗估计接受率：随机分配 2n 个光子（每个偏振 n 个），统计所有光子各占一个探测器的比例

    返回:
        (估计值, 标准误差)
    """
    if trials < 1:
        raise ValidationError(f"试验次数必须为正，当前为 {trials}")
    rng = np.random.default_rng(seed)
    hits = 0
    for start in range(0, trials, _MC_CHUNK):
        size = min(_MC_CHUNK, trials - start)
        modes = np.sort(rng.integers(0, num_modes, size=(size, 2, n)), axis=-1)
        distinct = np.all(np.diff(modes, axis=-1) != 0, axis=(1, 2))
        hits += int(np.count_nonzero(distinct))
    p = hits / trials
    return p, math.sqrt(p * (1.0 - p) / trials)


def _check_order(n: int) -> int:
    if int(n) != n or n < 1:
        raise ValidationError(f"阶数必须为正整数，当前为 {n}")
    return int(n)


def _check_gain(source: SpdcSource) -> None:
    if source.gain ** 2 >= MAX_GAIN_SQUARED:
        raise GainTooLargeError(
            f"gain²={source.gain ** 2:.3g} 不满足小泵浦条件 gain² < {MAX_GAIN_SQUARED}，高阶事件不可忽略"
        )


def _rate_prefactor(source: SpdcSource, n: int) -> float:
    return (source.rep_rate * source.gain ** (2 * n) / math.factorial(n) ** 2
            * source.efficiency ** (2 * n) * acceptance(n, source.num_modes))


def coincidence_rate(source: SpdcSource, pair: InterferencePair, n: int,
                     tau: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """
    第 n 阶 SPDC 过程的 2n 重符合计数率（Hz）

    rate = rep_rate · gain^{2n}/(n!)² · η^{2n} · acceptance(n, M) · Nnum(τ)，
    Nnum 为 φ=0 时相关函数分子积分（fs，包络峰值归一化），单脉冲时等于 ∫|E(t)^n|²dt；
    泵浦振幅已并入 gain，pair.pulse.amplitude 不参与计算
    """
    n = _check_order(n)
    _check_gain(source)
    numerator, _ = correlation_integrals(pair, n, tau)
    rate = _rate_prefactor(source, n) * numerator
    return float(rate) if np.ndim(rate) == 0 else rate


def background_rate(source: SpdcSource, pair: InterferencePair, n: int) -> float:
    """两臂分别单独泵浦时的计数率之和，即归一化迹线的背景"""
    n = _check_order(n)
    _check_gain(source)
    _, denominator = correlation_integrals(pair, n, 0.0)
    return float(_rate_prefactor(source, n) * denominator)


def calibrate_gain(source: SpdcSource, pair: InterferencePair, n: int,
                   background_counts: float, exposure_s: float) -> SpdcSource:
    """
    反解 gain，使 n 阶背景计数在给定曝光时间内达到目标值

    返回:
        gain 已替换的新光源
    """
    n = _check_order(n)
    if not background_counts > 0 or not exposure_s > 0:
        raise ValidationError("目标背景计数与曝光时间必须为正数")
    _, denominator = correlation_integrals(pair, n, 0.0)
    unit = replace(source, gain=1.0)
    per_unit_gain = _rate_prefactor(unit, n) * float(denominator) * exposure_s
    if per_unit_gain <= 0:
        raise ValidationError(f"n={n} 的接受率为零，无法标定增益")
    gain = (background_counts / per_unit_gain) ** (1.0 / (2 * n))
    calibrated = replace(source, gain=gain)
    _check_gain(calibrated)
    logger.info("n=%d 背景目标 %.3g 计数，标定 gain=%.5f", n, background_counts, gain)
    return calibrated


def keyed_poisson(mean: float, seed: int, point_index: int, order: int) -> int:
    """
    按 (seed, 点序号, 阶数) 键控的泊松抽样

    每次调用独立构造 Philox 计数器型生成器，结果与调用顺序和线程数无关
    """
    if not np.isfinite(mean) or mean < 0:
        raise ValidationError(f"泊松均值必须为非负有限值，当前为 {mean}")
    if min(seed, point_index, order) < 0:
        raise ValidationError("随机数键必须为非负整数")
    if mean == 0:
        return 0
    key = np.random.SeedSequence([int(seed), int(point_index), int(order)])
    rng = np.random.Generator(np.random.Philox(key))
    return int(rng.poisson(mean))


def simulate_scan(source: SpdcSource, pair: InterferencePair, delays: Sequence[float],
                  orders: Iterable[int], exposure_s: float, seed: int,
                  workers: int = 1) -> List[CountRecord]:
    """
    生成合成计数扫描

    参数:
        source: SPDC 光源
        pair: 干涉脉冲对
        delays: 延迟（fs）
        orders: 要模拟的阶数集合
        exposure_s: 每点曝光时间（s）
        seed: 随机种子
        workers: 线程数；结果与线程数无关

    返回:
        按 (阶数, 延迟序号) 排序的计数记录
    """
    if not exposure_s > 0:
        raise ValidationError(f"曝光时间必须为正数，当前为 {exposure_s}")
    orders = sorted({_check_order(n) for n in orders})
    if not orders:
        raise ValidationError("至少需要一个阶数")
    delays = np.asarray(delays, dtype=float)
    workers = max(1, int(workers))

    with ThreadPoolExecutor(max_workers=workers) as executor:
        rates = list(executor.map(lambda n: np.atleast_1d(coincidence_rate(source, pair, n, delays)), orders))
        jobs = [(n, index, float(tau), float(rate[index]) * exposure_s)
                for n, rate in zip(orders, rates)
                for index, tau in enumerate(delays)]

        def draw(job) -> CountRecord:
            n, index, tau, mean = job
            return CountRecord(tau=tau, order=n, counts=keyed_poisson(mean, seed, index, n), exposure_s=exposure_s)

        records = list(executor.map(draw, jobs))

    logger.info("模拟完成：阶数 %s，每阶 %d 个延迟点，线程数 %d", orders, delays.size, workers)
    return records


def poisson_sigma(record: Union[CountRecord, float, np.ndarray]) -> Union[float, np.ndarray]:
    """计数的泊松误差 max(1, √counts)"""
    counts = record.counts if isinstance(record, CountRecord) else record
    sigma = np.maximum(1.0, np.sqrt(np.asarray(counts, dtype=float)))
    return float(sigma) if sigma.ndim == 0 else sigma


def _select(records: Sequence[CountRecord], order: Optional[int]) -> List[CountRecord]:
    if order is not None:
        records = [r for r in records if r.order == order]
    if not records:
        raise ValidationError(f"没有阶数为 {order} 的计数记录")
    if len({r.order for r in records}) > 1:
        raise ValidationError("记录中包含多个阶数，请指定 order")
    return sorted(records, key=lambda r: r.tau)


def records_to_trace(records: Sequence[CountRecord], order: Optional[int] = None) -> CorrelationTrace:
    """原始计数 → 带泊松误差的迹线（未归一化）"""
    selected = _select(records, order)
    exposures = {r.exposure_s for r in selected}
    counts = np.array([r.counts for r in selected], dtype=float)
    return CorrelationTrace(
        order=selected[0].order,
        delays=np.array([r.tau for r in selected]),
        values=counts,
        errors=poisson_sigma(counts),
        exposure_s=exposures.pop() if len(exposures) == 1 else None,
    )


def normalize_counts(records: Sequence[CountRecord], single_arm_counts: Union[float, np.ndarray],
                     order: Optional[int] = None) -> CorrelationTrace:
    """
    计数除以两臂单独计数之和，得到背景为 1 的 g^n 迹线

    参数:
        records: 计数记录
        single_arm_counts: 两臂单独计数之和，标量或与延迟点等长的数组
        order: 阶数，记录只含一个阶数时可省略
    """
    trace = records_to_trace(records, order)
    background = np.broadcast_to(np.asarray(single_arm_counts, dtype=float), trace.values.shape)
    if np.any(background <= 0):
        raise ValidationError("单臂计数之和必须为正数")
    return CorrelationTrace(
        order=trace.order,
        delays=trace.delays,
        values=trace.values / background,
        errors=trace.errors / background,
        exposure_s=trace.exposure_s,
    )
