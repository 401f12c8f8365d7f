#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
迹线分析模块
对 g1/g2 上包络做泊松加权最小二乘拟合，换算脉宽与可见度并给出误差；
由 g1 经傅里叶变换恢复光谱；由 g2 拟合参数预测 g3
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Sequence, Tuple

import numpy as np
from scipy import fft as sp_fft
from scipy.optimize import brentq, least_squares

from src.correlator import (
    CorrelationTrace,
    InterferencePair,
    TraceKind,
    amplitude_coefficients,
    analytic_envelope,
    b_from_visibility,
    envelope_width,
    ft_limited_duration,
    gamma_factor,
    gn_numeric,
    perfect_visibility_width,
    shape_functions,
    visibility,
)
from src.errors import (
    DegenerateDataError,
    FitError,
    NoPeakError,
    NonUniformGridError,
    NumericalError,
    PulseMetrologyError,
    ValidationError,
)
from src.pulse import (
    C_NM_PER_FS,
    PulseModel,
    Spectrum,
    half_maximum_width,
    spectrum_from_detuning,
    spectrum_fwhm,
)

logger = logging.getLogger(__name__)

MIN_POINTS = 8
MIN_CONTRAST = 1.05
# 参数 (Δt, b, scale) 的边界；模型在 b → 1/b 下不变，b 限制在 [0, 1]
LOWER_BOUNDS = np.array([1e-9, 0.0, 0.0])
UPPER_BOUNDS = np.array([np.inf, 1.0, np.inf])
XTOL = 1e-8
MAX_ITERATIONS = 200
# 两端各取 10% 的点（至少 2 个）估计背景
EDGE_FRACTION = 0.1
# 谱端信号超过峰值该比例时给出衰减不足的警告
DECAY_LEVEL = 0.01
MIN_SPECTRUM_FFT = 2 ** 15
_DERIVED_STEP = 1e-6


@dataclass(frozen=True, eq=False)
class FitResult:
    """
    包络拟合结果，a 固定为 1

    时间单位为 fs；*_err 为标准误差
    """

    order: int
    delta_t: float
    delta_t_err: float
    b: float
    b_err: float
    scale: float
    scale_err: float
    covariance: np.ndarray
    chi2_reduced: float
    visibility: float
    visibility_err: float
    trace_fwhm: float
    trace_fwhm_err: float
    pulse_fwhm: float
    pulse_fwhm_err: float
    conversion: str
    n_points: int
    n_evaluations: int

    @property
    def params(self) -> np.ndarray:
        return np.array([self.delta_t, self.b, self.scale])

    @property
    def derived(self) -> Dict[str, float]:
        return {
            "visibility": self.visibility,
            "pulse_fwhm_fs": self.pulse_fwhm,
            "trace_fwhm_fs": self.trace_fwhm,
        }

    def model(self, delays: Sequence[float]) -> np.ndarray:
        """拟合参数下的模型曲线 scale·g(τ)"""
        return _model(self.params, self.order, np.asarray(delays, dtype=float))


# ======== 模型、残差与雅可比 ========
def _pair(delta_t: float, b: float) -> InterferencePair:
    return InterferencePair(pulse=PulseModel(delta_t=delta_t), a=1.0, b=b)


def _model(params: np.ndarray, order: int, delays: np.ndarray) -> np.ndarray:
    delta_t, b, scale = params
    return scale * np.atleast_1d(analytic_envelope(_pair(delta_t, b), order, delays))


def _require_errors(trace: CorrelationTrace) -> np.ndarray:
    if trace.errors is None:
        raise ValidationError("拟合需要每点误差：计数数据用泊松误差，模拟量数据用常数误差")
    return trace.errors


def residuals(params: Sequence[float], trace: CorrelationTrace) -> np.ndarray:
    """加权残差 (y − scale·g(τ; Δt, b))/σ"""
    sigma = _require_errors(trace)
    return (trace.values - _model(np.asarray(params, dtype=float), trace.order, trace.delays)) / sigma


def residual_jacobian(params: Sequence[float], trace: CorrelationTrace) -> np.ndarray:
    """
    加权残差对 (Δt, b, scale) 的解析雅可比，形状 (N, 3)
    """
    sigma = _require_errors(trace)
    delta_t, b, scale = (float(p) for p in params)
    x = trace.delays / delta_t
    coefficients = amplitude_coefficients(trace.order, 1.0, b)
    slopes = amplitude_coefficients(trace.order, 1.0, b, derivative=True)
    shapes = shape_functions(trace.order, x)
    shape_slopes = shape_functions(trace.order, x, derivative=True)

    d_scale = 1.0 + sum(c * s for c, s in zip(coefficients, shapes))
    d_b = scale * sum(c * s for c, s in zip(slopes, shapes))
    d_delta_t = scale * sum(c * s for c, s in zip(coefficients, shape_slopes)) * (-x / delta_t)
    return -np.column_stack([d_delta_t, d_b, d_scale]) / sigma[:, None]


def estimate_background(trace: CorrelationTrace) -> float:
    """扫描两端各 10%（至少 2 个）点的平均值"""
    n_edge = max(2, int(EDGE_FRACTION * len(trace)))
    edges = np.concatenate([trace.values[:n_edge], trace.values[-n_edge:]])
    return float(np.mean(edges))


# ======== 拟合 ========
def _check_contrast(values: np.ndarray) -> None:
    low, high = values.min(), values.max()
    if high <= low:
        raise DegenerateDataError(f"数据没有对比度：所有点都等于 {low:g}")
    ratio = np.inf if low <= 0 else high / low
    if ratio < MIN_CONTRAST:
        raise DegenerateDataError(f"数据没有对比度：max/min = {ratio:.4f} < {MIN_CONTRAST}")


def _peak_level(order: int, b: float) -> float:
    return float(analytic_envelope(_pair(1.0, b), order, 0.0))


def _initial_guess(trace: CorrelationTrace) -> np.ndarray:
    background = estimate_background(trace)
    if background <= 0:
        raise DegenerateDataError("背景估计不为正，无法初始化拟合")
    ratio = trace.values.max() / background

    if trace.order == 1:
        b0 = b_from_visibility(float(np.clip(ratio - 1.0, 0.05, 1.0)))
    else:
        target = float(np.clip(ratio, 1.01, 7.99))
        b0 = brentq(lambda b: _peak_level(2, b) - target, 0.0, 1.0)
    b0 = float(np.clip(b0, 0.01, 0.99))

    try:
        width = half_maximum_width(trace.delays, trace.values, baseline=background)
    except PulseMetrologyError:
        width = 0.25 * (trace.delays[-1] - trace.delays[0])
    delta_t0 = width / perfect_visibility_width(trace.order)
    return np.array([delta_t0, b0, background])


def _fit(trace: CorrelationTrace, order: int) -> Tuple[np.ndarray, np.ndarray, float, int]:
    if trace.order != order:
        raise ValidationError(f"迹线阶数为 {trace.order}，与所需阶数 {order} 不一致")
    if len(trace) < MIN_POINTS:
        raise ValidationError(f"拟合至少需要 {MIN_POINTS} 个数据点，当前为 {len(trace)}")
    _require_errors(trace)
    _check_contrast(trace.values)

    x0 = _initial_guess(trace)
    logger.debug("g%d 拟合初值: Δt=%.3f fs, b=%.4f, scale=%.4g", order, *x0)
    result = least_squares(
        residuals,
        x0,
        jac=residual_jacobian,
        bounds=(LOWER_BOUNDS, UPPER_BOUNDS),
        method="trf",
        xtol=XTOL,
        ftol=1e-12,
        gtol=1e-12,
        x_scale="jac",
        max_nfev=MAX_ITERATIONS,
        args=(trace,),
    )
    if result.status <= 0:
        raise FitError(f"g{order} 拟合不收敛（status={result.status}）：{result.message}")

    dof = len(trace) - 3
    chi2_reduced = float(2.0 * result.cost / dof) if dof > 0 else float("nan")
    jac = result.jac
    covariance = np.linalg.pinv(jac.T @ jac)
    covariance = 0.5 * (covariance + covariance.T)
    if chi2_reduced > 1.0:
        covariance = covariance * chi2_reduced
    logger.info("g%d 拟合收敛：%d 次函数求值，χ²_red=%.3f", order, result.nfev, chi2_reduced)
    return result.x, covariance, chi2_reduced, int(result.nfev)


def _propagate(func: Callable[[np.ndarray], float], params: np.ndarray, covariance: np.ndarray) -> float:
    """一阶 delta 方法；b 靠近边界时用单侧差分"""
    gradient = np.zeros(3)
    for k in range(3):
        h = _DERIVED_STEP * max(abs(params[k]), 1.0) if k == 1 else _DERIVED_STEP * abs(params[k])
        if h == 0:
            continue
        up, down = params.copy(), params.copy()
        up[k] += h
        down[k] -= h
        if k == 1 and down[k] < 0:
            gradient[k] = (func(up) - func(params)) / h
        elif k == 1 and up[k] > 1:
            gradient[k] = (func(params) - func(down)) / h
        else:
            gradient[k] = (func(up) - func(down)) / (2.0 * h)
    return float(np.sqrt(max(gradient @ covariance @ gradient, 0.0)))


def _result(order: int, params: np.ndarray, covariance: np.ndarray, chi2_reduced: float,
            n_points: int, n_evaluations: int, trace_width: Callable[[np.ndarray], float],
            pulse_width: Callable[[np.ndarray], float], conversion: str) -> FitResult:
    delta_t, b, scale = (float(p) for p in params)
    errors = np.sqrt(np.clip(np.diag(covariance), 0.0, None))
    v = visibility(1.0, b)
    v_err = abs(2.0 * (1.0 - b * b) / (1.0 + b * b) ** 2) * errors[1]
    return FitResult(
        order=order,
        delta_t=delta_t,
        delta_t_err=float(errors[0]),
        b=b,
        b_err=float(errors[1]),
        scale=scale,
        scale_err=float(errors[2]),
        covariance=covariance,
        chi2_reduced=chi2_reduced,
        visibility=v,
        visibility_err=float(v_err),
        trace_fwhm=trace_width(params),
        trace_fwhm_err=_propagate(trace_width, params, covariance),
        pulse_fwhm=pulse_width(params),
        pulse_fwhm_err=_propagate(pulse_width, params, covariance),
        conversion=conversion,
        n_points=n_points,
        n_evaluations=n_evaluations,
    )


def _check_visible(b: float) -> None:
    if b <= 1e-12:
        raise DegenerateDataError("拟合得到的可见度为零，数据中没有干涉")


def fit_g1(trace: CorrelationTrace) -> FitResult:
    """
    用 g1 闭式包络拟合迹线，脉宽按 sech 变换极限 τ_FT = 0.4048·Δτ_g1 换算

    参数:
        trace: order=1 且带误差的迹线

    返回:
        FitResult
    """
    params, covariance, chi2_reduced, nfev = _fit(trace, 1)
    _check_visible(params[1])
    width_factor = perfect_visibility_width(1)

    def trace_width(p: np.ndarray) -> float:
        return width_factor * float(p[0])

    def pulse_width(p: np.ndarray) -> float:
        return ft_limited_duration(trace_width(p))

    return _result(1, params, covariance, chi2_reduced, len(trace), nfev,
                   trace_width, pulse_width, "tau_FT = 0.4048 * trace_fwhm")


def fit_g2(trace: CorrelationTrace) -> FitResult:
    """
    用 g2 闭式包络拟合迹线，脉宽按 τ_pulse = γ(V)·Δτ_g2 换算
    """
    params, covariance, chi2_reduced, nfev = _fit(trace, 2)
    _check_visible(params[1])

    def trace_width(p: np.ndarray) -> float:
        return envelope_width(_pair(float(p[0]), float(p[1])), 2)

    def pulse_width(p: np.ndarray) -> float:
        return gamma_factor(visibility(1.0, float(p[1]))) * trace_width(p)

    gamma = gamma_factor(visibility(1.0, float(params[1])))
    return _result(2, params, covariance, chi2_reduced, len(trace), nfev,
                   trace_width, pulse_width, f"tau_pulse = gamma(V) * trace_fwhm, gamma = {gamma:.4f}")


def predict_g3(fit: FitResult, delays: Sequence[float]) -> CorrelationTrace:
    """由 g2 拟合参数 (Δt, b) 预测 g3 上包络（背景为 1）"""
    if fit.order != 2:
        raise ValidationError(f"g3 预测需要 g2 的拟合结果，当前为 g{fit.order}")
    delays = np.asarray(delays, dtype=float)
    values = np.atleast_1d(gn_numeric(_pair(fit.delta_t, fit.b), 3, delays))
    return CorrelationTrace(order=3, delays=delays, values=values)


# ======== 光谱 ========
def spectrum_from_g1(trace: CorrelationTrace, center_wavelength: float) -> Spectrum:
    """
    由 g1 上包络经傅里叶变换得到光谱

    对 (values − 1) 做零填充 FFT 并取模，频率轴视为相对 c/λ₀ 的失谐量映射到波长，峰值归一化；
    上包络不含条纹相位，得到的光谱关于 λ₀ 对称
    """
    if trace.order != 1 or trace.kind != TraceKind.ENVELOPE_UPPER:
        raise ValidationError("光谱恢复需要一阶上包络迹线")
    if len(trace) < 2:
        raise ValidationError("光谱恢复至少需要 2 个数据点")
    if not trace.is_uniform():
        raise NonUniformGridError("光谱恢复需要均匀延迟网格")

    signal = trace.values - 1.0
    step = float(trace.delays[1] - trace.delays[0])
    n_fft = max(MIN_SPECTRUM_FFT, 1 << int(np.ceil(np.log2(16 * signal.size))))
    detuning = sp_fft.fftshift(sp_fft.fftfreq(n_fft, d=step))

    peak = np.max(np.abs(signal))
    if peak == 0:
        logger.warning("迹线没有高于背景的信号，得到的光谱全为零")
        return spectrum_from_detuning(detuning, np.zeros(n_fft), center_wavelength)
    edge = max(abs(signal[0]), abs(signal[-1]))
    if edge > DECAY_LEVEL * peak:
        logger.warning("扫描端点信号为峰值的 %.1f%%，衰减不足，光谱会受截断影响", 100.0 * edge / peak)

    power = np.abs(sp_fft.fftshift(sp_fft.fft(signal, n=n_fft))) * step
    return spectrum_from_detuning(detuning, power, center_wavelength)


def sech_spectrum(wavelengths: Sequence[float], delta_t: float, center_wavelength: float) -> np.ndarray:
    """sech 脉冲光谱 S(λ) = sech²(Δt·π²·c·(1/λ − 1/λ₀))"""
    u = delta_t * np.pi ** 2 * C_NM_PER_FS * (1.0 / np.asarray(wavelengths, dtype=float) - 1.0 / center_wavelength)
    with np.errstate(over="ignore"):
        return 1.0 / np.cosh(u) ** 2


def sech_spectrum_fwhm(delta_t: float, center_wavelength: float) -> float:
    """sech² 光谱在波长轴上的精确 FWHM：1/λ± = 1/λ₀ ± asinh(1)/(Δt·π²·c)"""
    k = np.arcsinh(1.0) / (delta_t * np.pi ** 2 * C_NM_PER_FS)
    inverse = 1.0 / center_wavelength
    if k >= inverse:
        raise ValidationError(f"Δt={delta_t} fs 过短，光谱半高点超出正波长范围")
    return float(1.0 / (inverse - k) - 1.0 / (inverse + k))


def fit_spectrum_sech(spectrum: Spectrum, center_wavelength: float) -> Tuple[float, float]:
    """
    对峰附近的光谱做 sech² 最小二乘拟合

    参数:
        spectrum: 单峰光谱
        center_wavelength: 中心波长初值（nm）

    返回:
        (Δt（fs）, 波长 FWHM（nm）)
    """
    if spectrum.is_empty:
        raise NoPeakError("光谱为空，无法拟合")
    width = spectrum_fwhm(spectrum)
    i_peak = int(np.argmax(spectrum.density))
    peak_wavelength = float(spectrum.wavelengths[i_peak])
    window = np.abs(spectrum.wavelengths - peak_wavelength) <= 5.0 * width
    wavelengths, density = spectrum.wavelengths[window], spectrum.density[window]

    bandwidth = C_NM_PER_FS * width / peak_wavelength ** 2
    delta_t0 = np.arcsinh(1.0) * 2.0 / (np.pi ** 2 * bandwidth)
    x0 = np.array([delta_t0, peak_wavelength if window.any() else center_wavelength])

    def spectral_residuals(p: np.ndarray) -> np.ndarray:
        return sech_spectrum(wavelengths, p[0], p[1]) - density

    result = least_squares(
        spectral_residuals,
        x0,
        bounds=([1e-9, 1e-9], [np.inf, np.inf]),
        method="trf",
        xtol=1e-12,
        ftol=1e-14,
        gtol=1e-14,
        x_scale="jac",
        max_nfev=MAX_ITERATIONS,
    )
    if result.status <= 0:
        raise FitError(f"sech² 光谱拟合不收敛（status={result.status}）：{result.message}")
    delta_t, fitted_center = (float(p) for p in result.x)
    try:
        fwhm = sech_spectrum_fwhm(delta_t, fitted_center)
    except ValidationError as e:
        raise NumericalError(str(e)) from e
    logger.info("sech² 光谱拟合：Δt=%.3f fs，λ=%.3f nm，Δλ=%.4f nm", delta_t, fitted_center, fwhm)
    return delta_t, fwhm
