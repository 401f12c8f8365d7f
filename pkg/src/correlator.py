#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
n 阶干涉相关函数
包括 n=1、2 的解析包络、定义积分的数值求值（任意阶）、条纹分辨迹线以及脉宽换算因子
"""

import logging
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy import fft as sp_fft
from scipy.integrate import trapezoid
from scipy.optimize import brentq

from src.errors import GridTooCoarseError, NoPeakError, NumericalError, ValidationError
from src.pulse import SECH_FWHM_FACTOR, PulseModel, half_maximum_width, sample_field

logger = logging.getLogger(__name__)

# |τ/Δt| 小于该值时用级数展开处理 τ=0 的可去奇点
SERIES_THRESHOLD = 1e-3
# 超过该值时导数按零处理（函数值已低于 1e-40）
_DERIVATIVE_CUTOFF = 50.0
# 求积网格：步长 Δt/8，两侧各延伸 30·Δt
QUADRATURE_STEPS_PER_DELTA_T = 8
QUADRATURE_REACH_DELTA_T = 30.0
# 半步长检验的相对容差
RICHARDSON_TOLERANCE = 1e-6
# sech 脉冲 τ_FT = 0.4048·Δτ_g1
FT_LIMIT_FACTOR = 0.4048

ArrayLike = Union[float, np.ndarray]


class TraceKind(str, Enum):
    ENVELOPE_UPPER = "envelope_upper"
    FRINGE_RESOLVED = "fringe_resolved"


@dataclass(frozen=True, eq=False)
class CorrelationTrace:
    """
    相关函数迹线

    参数:
        order: 阶数 n
        delays: 严格递增的延迟（fs）
        values: 迹线值（归一化的 g^n 或原始计数）
        kind: 上包络或条纹分辨
        errors: 每点标准差 σ，可选
        exposure_s: 每点曝光时间（s），可选
    """

    order: int
    delays: np.ndarray
    values: np.ndarray
    kind: TraceKind = TraceKind.ENVELOPE_UPPER
    errors: Optional[np.ndarray] = None
    exposure_s: Optional[float] = None

    def __post_init__(self):
        if int(self.order) != self.order or self.order < 1:
            raise ValidationError(f"相关阶数必须为正整数，当前为 {self.order}")
        delays = np.array(self.delays, dtype=float)
        values = np.array(self.values, dtype=float)
        if delays.ndim != 1 or delays.size == 0 or delays.shape != values.shape:
            raise ValidationError("延迟与迹线值必须是等长的非空一维序列")
        if np.any(np.diff(delays) <= 0):
            raise ValidationError("延迟必须严格递增")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValidationError("迹线值必须为有限的非负数")
        object.__setattr__(self, "order", int(self.order))
        object.__setattr__(self, "kind", TraceKind(self.kind))
        object.__setattr__(self, "delays", delays)
        object.__setattr__(self, "values", values)
        if self.errors is not None:
            errors = np.array(self.errors, dtype=float)
            if errors.shape != values.shape:
                raise ValidationError("误差序列长度必须与迹线一致")
            if not np.all(np.isfinite(errors)) or np.any(errors <= 0):
                raise ValidationError("误差必须为正的有限值")
            errors.setflags(write=False)
            object.__setattr__(self, "errors", errors)
        if self.exposure_s is not None and not self.exposure_s > 0:
            raise ValidationError(f"曝光时间必须为正数，当前为 {self.exposure_s}")
        delays.setflags(write=False)
        values.setflags(write=False)

    def __len__(self) -> int:
        return self.delays.size

    def is_uniform(self, rtol: float = 1e-6) -> bool:
        steps = np.diff(self.delays)
        return steps.size == 0 or bool(np.allclose(steps, steps[0], rtol=rtol, atol=0.0))


@dataclass(frozen=True)
class InterferencePair:
    """两个干涉脉冲 a·E(t) 与 b·E(t−τ)，约定 a = 1"""

    pulse: PulseModel
    a: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.a) or self.a <= 0:
            raise ValidationError(f"振幅 a 必须为正数，当前为 {self.a}")
        if not np.isfinite(self.b) or self.b < 0:
            raise ValidationError(f"振幅 b 不能为负，当前为 {self.b}")

    @classmethod
    def from_visibility(cls, pulse: PulseModel, visibility_value: float) -> "InterferencePair":
        return cls(pulse=pulse, a=1.0, b=b_from_visibility(visibility_value))

    @property
    def visibility(self) -> float:
        return visibility(self.a, self.b)


def visibility(a: float, b: float) -> float:
    """干涉可见度 2ab/(a²+b²)"""
    if not a > 0 or not b >= 0:
        raise ValidationError(f"可见度要求 a > 0、b ≥ 0，当前 a={a}, b={b}")
    return float(2.0 * a * b / (a * a + b * b))


def b_from_visibility(visibility_value: float) -> float:
    """a = 1 时 2b/(1+b²) = V 的较小根"""
    if not 0.0 <= visibility_value <= 1.0:
        raise ValidationError(f"可见度必须位于 [0, 1]，当前为 {visibility_value}")
    if visibility_value == 0:
        return 0.0
    return float((1.0 - np.sqrt(1.0 - visibility_value ** 2)) / visibility_value)


# ======== 解析包络的形状函数 ========
def _split(x: np.ndarray):
    ax = np.abs(x)
    return ax < SERIES_THRESHOLD, ax


def _h1(x: np.ndarray) -> np.ndarray:
    # x/sinh x = 2|x|e^{-|x|} / (1 - e^{-2|x|})
    small, ax = _split(x)
    out = np.empty_like(ax)
    xs = ax[small]
    out[small] = 1.0 - xs ** 2 / 6.0 + 7.0 * xs ** 4 / 360.0
    xl = ax[~small]
    out[~small] = 2.0 * xl * np.exp(-xl) / -np.expm1(-2.0 * xl)
    return out


def _f1(x: np.ndarray) -> np.ndarray:
    # (x cosh x − sinh x)/sinh³x
    small, ax = _split(x)
    out = np.empty_like(ax)
    xs = ax[small]
    out[small] = 1.0 / 3.0 - 2.0 * xs ** 2 / 15.0 + 2.0 * xs ** 4 / 63.0
    xl = ax[~small]
    e = np.exp(-xl)
    one_minus = -np.expm1(-2.0 * xl)
    out[~small] = 4.0 * e ** 2 * (xl * (1.0 + e ** 2) - one_minus) / one_minus ** 3
    return out


def _f2(x: np.ndarray) -> np.ndarray:
    # (sinh 2x − 2x)/sinh³x
    small, ax = _split(x)
    out = np.empty_like(ax)
    xs = ax[small]
    out[small] = 4.0 / 3.0 - 2.0 * xs ** 2 / 5.0 + 17.0 * xs ** 4 / 210.0
    xl = ax[~small]
    e = np.exp(-xl)
    one_minus = -np.expm1(-2.0 * xl)
    out[~small] = (4.0 * e * -np.expm1(-4.0 * xl) - 16.0 * xl * e ** 3) / one_minus ** 3
    return out


def _derivative(x: np.ndarray, series, direct) -> np.ndarray:
    small, ax = _split(x)
    out = np.zeros_like(ax)
    out[small] = series(x[small])
    mid = ~small & (ax <= _DERIVATIVE_CUTOFF)
    out[mid] = direct(x[mid])
    return out


def _dh1(x: np.ndarray) -> np.ndarray:
    return _derivative(
        x,
        lambda s: -s / 3.0 + 7.0 * s ** 3 / 90.0,
        lambda m: (np.sinh(m) - m * np.cosh(m)) / np.sinh(m) ** 2,
    )


def _df1(x: np.ndarray) -> np.ndarray:
    def direct(m):
        sh, ch = np.sinh(m), np.cosh(m)
        return (m * sh ** 2 - 3.0 * ch * (m * ch - sh)) / sh ** 4

    return _derivative(x, lambda s: -4.0 * s / 15.0 + 8.0 * s ** 3 / 63.0, direct)


def _df2(x: np.ndarray) -> np.ndarray:
    def direct(m):
        sh, ch = np.sinh(m), np.cosh(m)
        return (2.0 * (np.cosh(2.0 * m) - 1.0) * sh - 3.0 * ch * (np.sinh(2.0 * m) - 2.0 * m)) / sh ** 4

    return _derivative(x, lambda s: -4.0 * s / 5.0 + 34.0 * s ** 3 / 105.0, direct)


def shape_functions(order: int, x: np.ndarray, derivative: bool = False) -> List[np.ndarray]:
    """
    解析包络 g = 1 + Σ cᵢ·sᵢ(x) 中的形状函数 sᵢ(x)，x = τ/Δt

    参数:
        order: 1 或 2
        x: 归一化延迟
        derivative: 为 True 时返回 dsᵢ/dx
    """
    x = np.asarray(x, dtype=float)
    if order == 1:
        return [_dh1(x) if derivative else _h1(x)]
    if order == 2:
        if derivative:
            return [_df1(x), _df2(x)]
        return [_f1(x), _f2(x)]
    raise ValidationError(f"阶数 {order} 没有解析包络，请使用 gn_numeric")


def amplitude_coefficients(order: int, a: float, b: float, derivative: bool = False) -> List[float]:
    """解析包络中的振幅系数 cᵢ(a, b)；derivative 为 True 时返回 ∂cᵢ/∂b"""
    if order == 1:
        s = a * a + b * b
        if derivative:
            return [2.0 * a * (a * a - b * b) / s ** 2]
        return [2.0 * a * b / s]
    if order == 2:
        q = a ** 4 + b ** 4
        if derivative:
            return [
                36.0 * a * a * b * (a ** 4 - b ** 4) / q ** 2,
                3.0 * (a ** 7 + 3.0 * a ** 5 * b ** 2 - 3.0 * a ** 3 * b ** 4 - a * b ** 6) / q ** 2,
            ]
        return [18.0 * a * a * b * b / q, 3.0 * (a * b ** 3 + a ** 3 * b) / q]
    raise ValidationError(f"阶数 {order} 没有解析包络，请使用 gn_numeric")


def _unchirped(pair: InterferencePair) -> None:
    if pair.pulse.gdd != 0:
        raise ValidationError("解析包络只适用于无啁啾脉冲（gdd = 0），请使用 gn_numeric")


def analytic_envelope(pair: InterferencePair, order: int, tau: ArrayLike) -> Union[float, np.ndarray]:
    """按阶数分派到 g1_envelope / g2_envelope"""
    _unchirped(pair)
    tau_arr = np.asarray(tau, dtype=float)
    x = tau_arr / pair.pulse.delta_t
    coefficients = amplitude_coefficients(order, pair.a, pair.b)
    shapes = shape_functions(order, x.ravel())
    values = 1.0 + sum(c * s for c, s in zip(coefficients, shapes))
    values = values.reshape(tau_arr.shape)
    return float(values) if values.ndim == 0 else values


def g1_envelope(pair: InterferencePair, tau: ArrayLike) -> Union[float, np.ndarray]:
    """
    一阶相关函数上包络
    g1 = 1 + [2ab/(a²+b²)]·(τ/Δt)/sinh(τ/Δt)
    """
    return analytic_envelope(pair, 1, tau)


def g2_envelope(pair: InterferencePair, tau: ArrayLike) -> Union[float, np.ndarray]:
    """
    二阶相关函数上包络
    g2 = 1 + [18a²b²/(a⁴+b⁴)]·(x cosh x − sinh x)/sinh³x + [3(ab³+a³b)/(a⁴+b⁴)]·(sinh 2x − 2x)/sinh³x
    """
    return analytic_envelope(pair, 2, tau)


# ======== 定义积分的数值求值 ========
def _support_half_width(pulse: PulseModel) -> float:
    stretch = 1.0 + abs(pulse.gdd) / pulse.delta_t ** 2
    return QUADRATURE_REACH_DELTA_T * pulse.delta_t * stretch


def _fields_on_grid(pulse: PulseModel, t: np.ndarray, tau: float) -> Tuple[np.ndarray, np.ndarray]:
    """峰值归一化的 E(t) 与 E(t−τ)"""
    if pulse.gdd == 0:
        with np.errstate(over="ignore"):
            direct = 1.0 / np.cosh(t / pulse.delta_t)
            delayed = 1.0 / np.cosh((t - tau) / pulse.delta_t)
        return direct, delayed
    unit = PulseModel(delta_t=pulse.delta_t, center_wavelength=pulse.center_wavelength,
                      amplitude=1.0, gdd=pulse.gdd)
    direct = sample_field(unit, t[0], t[1] - t[0], t.size).samples
    freqs = sp_fft.fftfreq(t.size, d=t[1] - t[0])
    delayed = sp_fft.ifft(sp_fft.fft(direct) * np.exp(-2j * np.pi * freqs * tau))
    return direct, delayed


def _integrals_at_step(pair: InterferencePair, n: int, tau: float, phase: float,
                       step: float) -> Tuple[float, float]:
    reach = _support_half_width(pair.pulse)
    start = min(tau, 0.0) - reach
    stop = max(tau, 0.0) + reach
    t = start + step * np.arange(int(np.ceil((stop - start) / step)) + 1)
    direct, delayed = _fields_on_grid(pair.pulse, t, tau)

    superposed = pair.a * direct + pair.b * np.exp(1j * phase) * delayed
    numerator = trapezoid(np.abs(superposed ** n) ** 2, dx=step)
    single = trapezoid(np.abs(direct ** n) ** 2, dx=step)
    shifted = trapezoid(np.abs(delayed ** n) ** 2, dx=step)
    denominator = pair.a ** (2 * n) * single + pair.b ** (2 * n) * shifted
    return float(numerator), float(denominator)


def correlation_integrals(pair: InterferencePair, n: int, tau: ArrayLike, relative_phase: ArrayLike = 0.0,
                          step: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    相关函数定义式的分子与分母积分（峰值归一化包络，单位 fs）

    分子 ∫|(a·E(t) + b·e^{iφ}·E(t−τ))^n|² dt，分母 a^{2n}∫|E^n|² + b^{2n}∫|E(t−τ)^n|²。
    以步长 h 与 h/2 各算一次，偏差超过 RICHARDSON_TOLERANCE 时报错，返回细网格结果。
    每个延迟点使用各自的积分网格，结果与批量划分和求值顺序无关。

    参数:
        pair: 干涉脉冲对
        n: 阶数
        tau: 延迟（fs），标量或数组
        relative_phase: 相对相位 φ，可与 tau 广播
        step: 粗网格步长，默认 Δt/8

    返回:
        (分子, 分母) 数组，形状与广播后的 tau 相同
    """
    if int(n) != n or n < 1:
        raise ValidationError(f"相关阶数必须为正整数，当前为 {n}")
    n = int(n)
    taus, phases = np.broadcast_arrays(np.asarray(tau, dtype=float), np.asarray(relative_phase, dtype=float))
    shape = taus.shape
    taus, phases = taus.ravel(), phases.ravel()
    step = step or pair.pulse.delta_t / QUADRATURE_STEPS_PER_DELTA_T

    numerator = np.empty(taus.size)
    denominator = np.empty(taus.size)
    for k, (tau_k, phase_k) in enumerate(zip(taus, phases)):
        num_c, den_c = _integrals_at_step(pair, n, float(tau_k), float(phase_k), step)
        num_f, den_f = _integrals_at_step(pair, n, float(tau_k), float(phase_k), step / 2.0)
        deviation = max(abs(num_f / den_f - num_c / den_c) / max(abs(num_f / den_f), 1.0),
                        abs(den_f - den_c) / den_f)
        if deviation > RICHARDSON_TOLERANCE:
            raise GridTooCoarseError(
                f"求积网格过粗：τ={tau_k:.3f} fs 处半步长检验偏差 {deviation:.2e} 超过 {RICHARDSON_TOLERANCE:g}"
            )
        numerator[k], denominator[k] = num_f, den_f
    logger.debug("n=%d 求积完成：%d 个延迟点，步长 %.3f fs", n, taus.size, step / 2.0)
    return numerator.reshape(shape), denominator.reshape(shape)


def gn_numeric(pair: InterferencePair, n: int, tau: ArrayLike, relative_phase: ArrayLike = 0.0,
               step: Optional[float] = None) -> Union[float, np.ndarray]:
    """
    按定义式数值计算 n 阶相关函数 g^n(τ)

    对 φ = 0 且 n ∈ {1, 2}，结果与解析包络一致
    """
    if pair.pulse.amplitude == 0:
        raise ValidationError("场振幅为零，相关函数无定义")
    numerator, denominator = correlation_integrals(pair, n, tau, relative_phase, step)
    values = numerator / denominator
    return float(values) if values.ndim == 0 else values


def fringe_trace(pair: InterferencePair, n: int, delays: np.ndarray) -> CorrelationTrace:
    """条纹分辨迹线，相对相位 φ = ω₀·τ"""
    delays = np.asarray(delays, dtype=float)
    phases = pair.pulse.carrier_angular_frequency * delays
    values = gn_numeric(pair, n, delays, phases)
    return CorrelationTrace(order=n, delays=delays, values=np.atleast_1d(values),
                            kind=TraceKind.FRINGE_RESOLVED)


def analytic_trace(pair: InterferencePair, order: int, delays: np.ndarray) -> CorrelationTrace:
    """解析上包络迹线（n = 1, 2）"""
    delays = np.asarray(delays, dtype=float)
    values = np.atleast_1d(analytic_envelope(pair, order, delays))
    return CorrelationTrace(order=order, delays=delays, values=values)


# ======== 宽度与换算因子 ========
def envelope_width(pair: InterferencePair, order: int) -> float:
    """
    解析包络在背景 1 之上的半高全宽（fs），半高取 (峰值 + 1)/2，两侧分别用 Brent 法求根
    """
    _unchirped(pair)
    peak = analytic_envelope(pair, order, 0.0)
    if peak - 1.0 <= 0:
        raise NoPeakError("包络没有高于背景的峰（b = 0）")
    half = 0.5 * (peak + 1.0)
    delta_t = pair.pulse.delta_t

    def excess(tau: float) -> float:
        return analytic_envelope(pair, order, tau) - half

    upper = delta_t
    while excess(upper) > 0:
        upper *= 2.0
        if upper > 1e3 * delta_t:
            raise NumericalError("包络半高点搜索失败")
    try:
        right = brentq(excess, 0.0, upper, xtol=1e-12 * delta_t)
        left = brentq(excess, -upper, 0.0, xtol=1e-12 * delta_t)
    except (RuntimeError, ValueError) as e:
        raise NumericalError(f"半高点求根不收敛: {e}") from e
    return float(right - left)


@lru_cache(maxsize=None)
def perfect_visibility_width(order: int) -> float:
    """a = b = 1 时包络 FWHM 与 Δt 之比（g1: 4.355，g2: 2.990）"""
    return envelope_width(InterferencePair(pulse=PulseModel(delta_t=1.0)), order)


@lru_cache(maxsize=4096)
def _gamma_cached(visibility_value: float) -> float:
    pair = InterferencePair.from_visibility(PulseModel(delta_t=1.0), visibility_value)
    return SECH_FWHM_FACTOR / envelope_width(pair, 2)


def gamma_factor(visibility_value: float) -> float:
    """
    g2 包络 FWHM 到脉冲强度 FWHM 的换算因子 γ = τ_pulse/Δτ_g2

    V = 1 时为 0.5895，V = 0.75 时为 0.582
    """
    if not 0.0 < visibility_value <= 1.0:
        raise ValidationError(f"可见度必须位于 (0, 1]，当前为 {visibility_value}")
    return _gamma_cached(float(visibility_value))


def ft_limited_duration(delta_tau_g1: float) -> float:
    """由 g1 的 FWHM 得到 sech 脉冲的变换极限脉宽 τ_FT = 0.4048·Δτ_g1"""
    if not np.isfinite(delta_tau_g1) or delta_tau_g1 <= 0:
        raise ValidationError(f"Δτ_g1 必须为正数，当前为 {delta_tau_g1}")
    return float(FT_LIMIT_FACTOR * delta_tau_g1)


def envelope_fwhm(trace: CorrelationTrace) -> float:
    """迹线在背景 1 之上的半高全宽（fs），两侧线性插值"""
    return half_maximum_width(trace.delays, trace.values, baseline=1.0)
