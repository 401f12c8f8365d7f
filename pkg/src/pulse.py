#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
泵浦脉冲电场模块
提供 sech 脉冲的参数化模型与均匀时间网格上的采样表示，
负责 sech 标度参数与强度 FWHM 的换算、谱相位（GDD）的施加以及光谱计算。
所有场均为去掉载波的复包络。
"""

import dataclasses
import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
from scipy import fft as sp_fft
from scipy.constants import c as SPEED_OF_LIGHT
from scipy.optimize import brentq

from src.errors import (
    FlankNotBracketedError,
    NoPeakError,
    ValidationError,
    WindowTooNarrowError,
)

logger = logging.getLogger(__name__)

# ======== 物理常数与约定 ========
# 光速，单位 nm/fs
C_NM_PER_FS = SPEED_OF_LIGHT * 1e-6
# 强度 FWHM = 2·ln(1+√2)·Δt
SECH_FWHM_FACTOR = 2.0 * np.arcsinh(1.0)
# sech² 脉冲的时间带宽积 Δν·Δτ
SECH_TIME_BANDWIDTH = SECH_FWHM_FACTOR ** 2 / np.pi ** 2
# 采样窗口至少覆盖 20·Δt
MIN_WINDOW_DELTA_T = 20.0
# 窗口边缘强度相对峰值的上限
TAIL_LEVEL = 1e-6
# 光谱计算的最小 FFT 长度（零填充提高频率分辨率）
MIN_FFT_SIZE = 2 ** 16
# 色散场逐点求值时谱积分的截断：|πΔtω/2| ≤ 40
_SPECTRAL_CUTOFF = 40.0
_TIME_REACH_DELTA_T = 30.0
_CHUNK = 256

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class PulseModel:
    """
    参数化 sech 脉冲 E(t) = E₀·sech(t/Δt)，可附加二次谱相位

    参数:
        delta_t: sech 标度参数 Δt（fs）
        center_wavelength: 中心波长 λ₀（nm）
        amplitude: 场振幅 E₀
        gdd: 群延迟色散（fs²）
    """

    delta_t: float
    center_wavelength: float = 390.0
    amplitude: float = 1.0
    gdd: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.delta_t) or self.delta_t <= 0:
            raise ValidationError(f"脉冲参数 delta_t 必须为正数，当前为 {self.delta_t}")
        if not np.isfinite(self.center_wavelength) or self.center_wavelength <= 0:
            raise ValidationError(f"中心波长必须为正数，当前为 {self.center_wavelength}")
        if not np.isfinite(self.amplitude) or self.amplitude < 0:
            raise ValidationError(f"振幅不能为负，当前为 {self.amplitude}")
        if not np.isfinite(self.gdd):
            raise ValidationError(f"GDD 必须为有限值，当前为 {self.gdd}")

    @classmethod
    def from_fwhm(cls, fwhm: float, center_wavelength: float = 390.0,
                  amplitude: float = 1.0, gdd: float = 0.0) -> "PulseModel":
        """由强度 FWHM（fs）构造变换极限意义下的 sech 脉冲"""
        if not np.isfinite(fwhm) or fwhm <= 0:
            raise ValidationError(f"脉冲 FWHM 必须为正数，当前为 {fwhm}")
        return cls(delta_t=fwhm / SECH_FWHM_FACTOR, center_wavelength=center_wavelength,
                   amplitude=amplitude, gdd=gdd)

    @property
    def carrier_angular_frequency(self) -> float:
        """载波角频率 ω₀ = 2πc/λ₀（rad/fs）"""
        return 2.0 * np.pi * C_NM_PER_FS / self.center_wavelength

    def with_gdd(self, gdd: float) -> "PulseModel":
        return dataclasses.replace(self, gdd=gdd)


@dataclass(frozen=True, eq=False)
class SampledField:
    """均匀时间网格上的复包络，t_k = t0 + k·dt"""

    t0: float
    dt: float
    samples: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.dt) or self.dt <= 0:
            raise ValidationError(f"时间步长 dt 必须为正数，当前为 {self.dt}")
        samples = np.array(self.samples, dtype=complex)
        if samples.ndim != 1 or samples.size == 0:
            raise ValidationError("采样场必须是非空的一维序列")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.samples.size)

    @property
    def intensity(self) -> np.ndarray:
        return np.abs(self.samples) ** 2

    def energy(self) -> float:
        """Σ|E|²·dt"""
        return float(np.sum(self.intensity) * self.dt)


@dataclass(frozen=True, eq=False)
class Spectrum:
    """
    光谱 S(λ)

    参数:
        wavelengths: 严格递增的波长（nm）
        density: 峰值归一化的谱密度；全零表示没有光谱内容
    """

    wavelengths: np.ndarray
    density: np.ndarray

    def __post_init__(self):
        wavelengths = np.array(self.wavelengths, dtype=float)
        density = np.array(self.density, dtype=float)
        if wavelengths.ndim != 1 or wavelengths.size == 0 or wavelengths.shape != density.shape:
            raise ValidationError("波长与谱密度必须是等长的非空一维序列")
        if np.any(np.diff(wavelengths) <= 0):
            raise ValidationError("光谱波长必须严格递增")
        if np.any(density < 0) or np.any(density > 1.0 + 1e-9):
            raise ValidationError("谱密度必须位于 [0, 1] 区间")
        wavelengths.setflags(write=False)
        density.setflags(write=False)
        object.__setattr__(self, "wavelengths", wavelengths)
        object.__setattr__(self, "density", density)

    @property
    def is_empty(self) -> bool:
        return not np.any(self.density > 0)


# ======== 半高宽 ========
def half_maximum_width(x: np.ndarray, y: np.ndarray, baseline: float = 0.0) -> float:
    """
    计算峰在基线之上的半高全宽，两侧都用相邻采样点线性插值

    参数:
        x: 递增的横坐标
        y: 纵坐标
        baseline: 背景值，半高取基线与峰值的中点

    返回:
        float: 半高全宽，单位同 x
    """
    x = np.asarray(x, dtype=float)
    excess = np.asarray(y, dtype=float) - baseline
    i_peak = int(np.argmax(excess))
    peak = excess[i_peak]
    if not np.isfinite(peak) or peak <= 0:
        raise NoPeakError("数据在背景之上没有峰")
    half = peak / 2.0

    below_left = np.nonzero(excess[:i_peak] <= half)[0]
    below_right = np.nonzero(excess[i_peak + 1:] <= half)[0]
    if below_left.size == 0 or below_right.size == 0:
        raise FlankNotBracketedError("扫描范围不足，半高点没有被两侧数据包围")

    i = below_left[-1]
    x_left = x[i] + (x[i + 1] - x[i]) * (half - excess[i]) / (excess[i + 1] - excess[i])
    j = i_peak + 1 + below_right[0]
    x_right = x[j - 1] + (x[j] - x[j - 1]) * (excess[j - 1] - half) / (excess[j - 1] - excess[j])
    return float(x_right - x_left)


# ======== 场的求值与采样 ========
def _sech(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return 1.0 / np.cosh(x)


def _dispersed_envelope(pulse: PulseModel, t: np.ndarray) -> np.ndarray:
    """通过解析频谱 πΔt·sech(πΔtω/2)·exp(i·gdd·ω²/2) 的数值逆变换逐点求值"""
    omega_max = 2.0 * _SPECTRAL_CUTOFF / (np.pi * pulse.delta_t)
    reach = _TIME_REACH_DELTA_T * pulse.delta_t + abs(pulse.gdd) * omega_max
    period = 2.0 * (float(np.max(np.abs(t), initial=0.0)) + reach)
    n_omega = int(np.ceil(2.0 * omega_max * period / (2.0 * np.pi))) | 1
    omega = np.linspace(-omega_max, omega_max, n_omega)
    d_omega = omega[1] - omega[0]
    spectrum = (np.pi * pulse.delta_t * _sech(np.pi * pulse.delta_t * omega / 2.0)
                * np.exp(0.5j * pulse.gdd * omega ** 2))

    flat = t.ravel()
    out = np.empty(flat.shape, dtype=complex)
    for start in range(0, flat.size, _CHUNK):
        chunk = flat[start:start + _CHUNK]
        kernel = np.exp(1j * np.outer(chunk, omega))
        out[start:start + _CHUNK] = kernel @ spectrum * d_omega / (2.0 * np.pi)
    return pulse.amplitude * out.reshape(t.shape)


def field_envelope(pulse: PulseModel, t: ArrayLike) -> Union[complex, np.ndarray]:
    """
    计算脉冲复包络 E(t)

    参数:
        pulse: 脉冲模型
        t: 时间（fs），标量或数组

    返回:
        复振幅；gdd = 0 时为 E₀·sech(t/Δt)，虚部为零
    """
    t_arr = np.asarray(t, dtype=float)
    if pulse.gdd == 0:
        values = (pulse.amplitude * _sech(t_arr / pulse.delta_t)).astype(complex)
    else:
        values = _dispersed_envelope(pulse, t_arr)
    return complex(values) if values.ndim == 0 else values


def intensity_fwhm(pulse: PulseModel) -> float:
    """强度 FWHM = 2·ln(1+√2)·Δt；带啁啾的脉冲请用 field_fwhm(sample_field(...))"""
    if pulse.gdd != 0:
        raise ValidationError("带 GDD 的脉冲没有解析 FWHM，请对采样场使用 field_fwhm")
    return float(SECH_FWHM_FACTOR * pulse.delta_t)


def _check_tails(field: SampledField) -> None:
    intensity = field.intensity
    peak = intensity.max()
    if peak <= 0:
        return
    if intensity[0] >= TAIL_LEVEL * peak or intensity[-1] >= TAIL_LEVEL * peak:
        raise WindowTooNarrowError(
            f"采样窗口 [{field.t0:.1f}, {field.times[-1]:.1f}] fs 边缘强度超过峰值的 {TAIL_LEVEL:g}"
        )


def sample_field(pulse: PulseModel, t0: float, dt: float, n_samples: int) -> SampledField:
    """
    在均匀网格上采样脉冲场，gdd ≠ 0 时通过 FFT 施加谱相位

    参数:
        pulse: 脉冲模型
        t0: 网格起点（fs）
        dt: 网格步长（fs）
        n_samples: 采样点数

    返回:
        SampledField
    """
    if not np.isfinite(dt) or dt <= 0:
        raise ValidationError(f"时间步长 dt 必须为正数，当前为 {dt}")
    if int(n_samples) < 2:
        raise ValidationError(f"采样点数至少为 2，当前为 {n_samples}")
    n_samples = int(n_samples)
    width = dt * (n_samples - 1)
    if width < MIN_WINDOW_DELTA_T * pulse.delta_t:
        raise WindowTooNarrowError(
            f"采样窗口宽度 {width:.1f} fs 小于 {MIN_WINDOW_DELTA_T:g}·Δt = {MIN_WINDOW_DELTA_T * pulse.delta_t:.1f} fs"
        )
    t = t0 + dt * np.arange(n_samples)
    field = SampledField(t0=t0, dt=dt, samples=pulse.amplitude * _sech(t / pulse.delta_t))
    if pulse.gdd != 0:
        field = apply_spectral_phase(field, pulse.gdd)
    _check_tails(field)
    return field


def apply_spectral_phase(field: SampledField, gdd: float) -> SampledField:
    """
    施加二次谱相位 exp(i·(gdd/2)·ω²)，ω 为基带角频率

    正向 FFT → 乘相位 → 逆 FFT；该滤波是幺正的，能量守恒
    """
    if gdd == 0:
        return field
    omega = 2.0 * np.pi * sp_fft.fftfreq(field.samples.size, d=field.dt)
    spectrum = sp_fft.fft(field.samples) * np.exp(0.5j * gdd * omega ** 2)
    return SampledField(t0=field.t0, dt=field.dt, samples=sp_fft.ifft(spectrum))


def field_fwhm(field: SampledField) -> float:
    """采样场的强度 FWHM（fs）"""
    return half_maximum_width(field.times, field.intensity)


# ======== 光谱 ========
def _fft_size(n: int, n_fft: Optional[int]) -> int:
    if n_fft is None:
        target = max(n, MIN_FFT_SIZE)
        return 1 << (target - 1).bit_length()
    if n_fft < n:
        raise ValidationError(f"FFT 长度 {n_fft} 小于采样点数 {n}")
    return int(n_fft)


def fourier_transform(field: SampledField, n_fft: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    连续傅里叶变换的离散近似（零填充）

    返回:
        (基带频率 PHz, 复振幅)，满足 Σ|Ẽ|²·df = Σ|E|²·dt
    """
    size = _fft_size(field.samples.size, n_fft)
    amplitudes = sp_fft.fftshift(sp_fft.fft(field.samples, n=size)) * field.dt
    freqs = sp_fft.fftshift(sp_fft.fftfreq(size, d=field.dt))
    return freqs, amplitudes


def spectrum_from_detuning(detuning: np.ndarray, power: np.ndarray, center_wavelength: float) -> Spectrum:
    """
    把基带频率 f 上的功率映射到波长 λ = 1/(1/λ₀ + f/c)，并做峰值归一化

    对应负波长的频率点（f ≤ −c/λ₀）被丢弃
    """
    if not np.isfinite(center_wavelength) or center_wavelength <= 0:
        raise ValidationError(f"中心波长必须为正数，当前为 {center_wavelength}")
    inverse = 1.0 / center_wavelength + np.asarray(detuning, dtype=float) / C_NM_PER_FS
    valid = inverse > 0
    wavelengths = 1.0 / inverse[valid]
    density = np.asarray(power, dtype=float)[valid]
    order = np.argsort(wavelengths)
    wavelengths, density = wavelengths[order], density[order]
    peak = density.max() if density.size else 0.0
    if peak > 0:
        density = density / peak
    return Spectrum(wavelengths=wavelengths, density=np.clip(density, 0.0, 1.0))


def field_spectrum(field: SampledField, center_wavelength: float, n_fft: Optional[int] = None) -> Spectrum:
    """|FT(包络)|² 映射到波长轴后的光谱"""
    freqs, amplitudes = fourier_transform(field, n_fft)
    return spectrum_from_detuning(freqs, np.abs(amplitudes) ** 2, center_wavelength)


def spectrum_fwhm(spectrum: Spectrum) -> float:
    """光谱在波长轴上的 FWHM（nm）"""
    return half_maximum_width(spectrum.wavelengths, spectrum.density)


def spectrum_bandwidth(spectrum: Spectrum) -> float:
    """光谱在频率轴上的 FWHM（PHz）"""
    frequencies = C_NM_PER_FS / spectrum.wavelengths[::-1]
    return half_maximum_width(frequencies, spectrum.density[::-1])


# ======== 色散展宽 ========
def gdd_for_duration(pulse: PulseModel, target_fwhm: float, xtol: float = 1e-3) -> float:
    """
    求使变换极限脉冲展宽到目标强度 FWHM 所需的 GDD（fs²，取正值）

    参数:
        pulse: 脉冲模型（忽略其自身 gdd）
        target_fwhm: 目标强度 FWHM（fs）
        xtol: GDD 的绝对容差（fs²）

    返回:
        float: GDD
    """
    base = pulse.with_gdd(0.0)
    limit = intensity_fwhm(base)
    if target_fwhm < limit * (1.0 - 1e-9):
        raise ValidationError(f"目标 FWHM {target_fwhm:.3f} fs 短于变换极限 {limit:.3f} fs")
    if target_fwhm <= limit:
        return 0.0

    dt = base.delta_t / 10.0

    def broadened(gdd: float) -> float:
        half = MIN_WINDOW_DELTA_T * base.delta_t + 10.0 * abs(gdd) / base.delta_t
        n_samples = int(np.ceil(2.0 * half / dt)) + 1
        sampled = sample_field(base.with_gdd(gdd), -half, dt, n_samples)
        return field_fwhm(sampled) - target_fwhm

    upper = base.delta_t ** 2
    while broadened(upper) <= 0:
        upper *= 2.0
    gdd = brentq(broadened, 0.0, upper, xtol=xtol)
    logger.debug("GDD 求解: %.3f fs → %.3f fs 需要 %.1f fs²", limit, target_fwhm, gdd)
    return float(gdd)
