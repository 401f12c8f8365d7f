#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
运行配置与迹线文件读写
负责解析 key=value 配置文件、读写计数/模拟量 CSV、报告文本与元数据
"""

import io
import json
import logging
import math
from dataclasses import asdict, dataclass
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from dotenv import dotenv_values

from src.correlator import CorrelationTrace, InterferencePair, b_from_visibility
from src.errors import ConfigError, TraceFormatError, ValidationError
from src.pulse import SECH_FWHM_FACTOR, PulseModel, Spectrum
from src.spdc import CountRecord, SpdcSource, poisson_sigma

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# 常量定义
DEFAULT_RUN_CONFIG = {
    "center_wavelength_nm": 390.0,
    "gdd_fs2": 0.0,
    "efficiency": 0.3,
    "num_modes": 6,
    "rep_rate_hz": 8e7,
    "exposure_s": 8.0,
    "orders": "1,2,3",
    "seed": 0,
    "workers": 1,
    # 缺省延迟网格：±6·Δt，120 点
    "grid_half_width_delta_t": 6.0,
    "grid_points": 120,
}

CONFIG_KEYS = {
    "delta_t_fs", "pulse_fwhm_fs", "center_wavelength_nm", "gdd_fs2",
    "b", "visibility", "gain", "background_counts", "calibration_order", "efficiency", "num_modes", "rep_rate_hz",
    "tau_min_fs", "tau_max_fs", "tau_step_fs", "exposure_s", "orders", "seed", "workers",
}
SUPPORTED_ORDERS = {1, 2, 3}

COUNTS_COLUMNS = ["tau_fs", "counts", "exposure_s"]
VALUE_COLUMNS = ["tau_fs", "value", "sigma"]
PLOT_COLUMNS = ["tau_fs", "data", "sigma", "model"]
SPECTRUM_COLUMNS = ["wavelength_nm", "density"]
FLOAT_FORMAT = "%.15g"


# ======== 运行配置 ========
@dataclass(frozen=True)
class RunConfig:
    """
    解析并校验后的运行配置

    Δt 与 b 已由 pulse_fwhm_fs / visibility 换算；gain 与 background_counts 二选一，
    后者在模拟时按 calibration_order 阶反解 gain
    """

    delta_t_fs: float
    center_wavelength_nm: float
    gdd_fs2: float
    b: float
    gain: Optional[float]
    background_counts: Optional[float]
    calibration_order: Optional[int]
    efficiency: float
    num_modes: int
    rep_rate_hz: float
    tau_min_fs: float
    tau_max_fs: float
    tau_step_fs: float
    exposure_s: float
    orders: Tuple[int, ...]
    seed: int
    workers: int

    def __post_init__(self):
        if not self.tau_min_fs < self.tau_max_fs:
            raise ConfigError("tau_min_fs", f"必须小于 tau_max_fs（{self.tau_min_fs} ≥ {self.tau_max_fs}）")
        if not self.tau_step_fs > 0:
            raise ConfigError("tau_step_fs", f"必须为正数，当前为 {self.tau_step_fs}")
        if not self.orders:
            raise ConfigError("orders", "至少需要一个阶数")

    @property
    def delays(self) -> np.ndarray:
        n_points = int(math.floor((self.tau_max_fs - self.tau_min_fs) / self.tau_step_fs + 1e-9)) + 1
        return self.tau_min_fs + self.tau_step_fs * np.arange(n_points)

    def pulse(self) -> PulseModel:
        return PulseModel(delta_t=self.delta_t_fs, center_wavelength=self.center_wavelength_nm,
                          gdd=self.gdd_fs2)

    def pair(self) -> InterferencePair:
        return InterferencePair(pulse=self.pulse(), a=1.0, b=self.b)

    def source(self) -> SpdcSource:
        return SpdcSource(gain=self.gain if self.gain is not None else 0.0, efficiency=self.efficiency,
                          num_modes=self.num_modes, rep_rate=self.rep_rate_hz)

    def to_dict(self) -> Dict[str, Any]:
        values = asdict(self)
        values["orders"] = list(self.orders)
        return values


def _number(values: Mapping[str, Optional[str]], key: str, default: Any = None) -> Optional[float]:
    raw = values.get(key)
    if raw is None or raw.strip() == "":
        if key in values and default is None:
            raise ConfigError(key, "值为空")
        return None if default is None else float(default)
    try:
        number = float(raw)
    except ValueError:
        raise ConfigError(key, f"无法解析为数值: '{raw}'")
    if not math.isfinite(number):
        raise ConfigError(key, f"必须为有限值: '{raw}'")
    return number


def _integer(values: Mapping[str, Optional[str]], key: str, default: Any = None) -> Optional[int]:
    number = _number(values, key, default)
    if number is None:
        return None
    if number != int(number):
        raise ConfigError(key, f"必须为整数，当前为 {number}")
    return int(number)


def _exactly_one(values: Mapping[str, Optional[str]], first: str, second: str) -> str:
    given = [key for key in (first, second) if key in values]
    if len(given) != 1:
        key = second if first in given else first
        raise ConfigError(key, f"'{first}' 与 '{second}' 必须且只能给出一个")
    return given[0]


def _positive(key: str, value: Optional[float]) -> None:
    if value is not None and not value > 0:
        raise ConfigError(key, f"必须为正数，当前为 {value}")


def _parse_orders(raw: Optional[str]) -> Tuple[int, ...]:
    if raw is None or raw.strip() == "":
        raise ConfigError("orders", "至少需要一个阶数")
    orders = set()
    for item in raw.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            order = int(item)
        except ValueError:
            raise ConfigError("orders", f"无法解析阶数 '{item}'")
        if order not in SUPPORTED_ORDERS:
            raise ConfigError("orders", f"阶数必须取自 {sorted(SUPPORTED_ORDERS)}，当前为 {order}")
        orders.add(order)
    if not orders:
        raise ConfigError("orders", "至少需要一个阶数")
    return tuple(sorted(orders))


def parse_run_config(values: Mapping[str, Optional[str]]) -> RunConfig:
    """
    校验并转换原始 key=value 映射

    参数:
        values: 键到字符串值的映射（键名不区分大小写）

    返回:
        RunConfig
    """
    values = {key.strip().lower(): value for key, value in values.items()}
    unknown = sorted(set(values) - CONFIG_KEYS)
    if unknown:
        raise ConfigError(unknown[0], "未知配置项")
    defaults = DEFAULT_RUN_CONFIG

    if _exactly_one(values, "delta_t_fs", "pulse_fwhm_fs") == "delta_t_fs":
        delta_t = _number(values, "delta_t_fs")
        _positive("delta_t_fs", delta_t)
    else:
        fwhm = _number(values, "pulse_fwhm_fs")
        _positive("pulse_fwhm_fs", fwhm)
        delta_t = fwhm / SECH_FWHM_FACTOR

    if _exactly_one(values, "b", "visibility") == "b":
        b = _number(values, "b")
        if b < 0:
            raise ConfigError("b", f"不能为负，当前为 {b}")
    else:
        v = _number(values, "visibility")
        if not 0 <= v <= 1:
            raise ConfigError("visibility", f"必须位于 [0, 1]，当前为 {v}")
        b = b_from_visibility(v)

    gain = background_counts = None
    if _exactly_one(values, "gain", "background_counts") == "gain":
        gain = _number(values, "gain")
        if gain < 0:
            raise ConfigError("gain", f"不能为负，当前为 {gain}")
    else:
        background_counts = _number(values, "background_counts")
        _positive("background_counts", background_counts)

    center_wavelength = _number(values, "center_wavelength_nm", defaults["center_wavelength_nm"])
    _positive("center_wavelength_nm", center_wavelength)
    efficiency = _number(values, "efficiency", defaults["efficiency"])
    if not 0 < efficiency <= 1:
        raise ConfigError("efficiency", f"必须位于 (0, 1]，当前为 {efficiency}")
    num_modes = _integer(values, "num_modes", defaults["num_modes"])
    _positive("num_modes", num_modes)
    rep_rate = _number(values, "rep_rate_hz", defaults["rep_rate_hz"])
    _positive("rep_rate_hz", rep_rate)
    exposure = _number(values, "exposure_s", defaults["exposure_s"])
    _positive("exposure_s", exposure)
    seed = _integer(values, "seed", defaults["seed"])
    if seed < 0:
        raise ConfigError("seed", f"不能为负，当前为 {seed}")
    workers = _integer(values, "workers", defaults["workers"])
    _positive("workers", workers)

    orders = _parse_orders(values.get("orders", defaults["orders"]))
    calibration_order = _integer(values, "calibration_order")
    if background_counts is None and calibration_order is not None:
        raise ConfigError("calibration_order", "只在给出 background_counts 时有效")
    if background_counts is not None:
        if calibration_order is None:
            calibration_order = 2 if 2 in orders else max(orders)
        if calibration_order not in orders:
            raise ConfigError("calibration_order", f"必须是 orders 中的阶数，当前为 {calibration_order}")

    grid_keys = ("tau_min_fs", "tau_max_fs", "tau_step_fs")
    given = [key for key in grid_keys if key in values]
    if given and len(given) != len(grid_keys):
        missing = next(key for key in grid_keys if key not in values)
        raise ConfigError(missing, "延迟网格的三个键必须同时给出")
    if given:
        tau_min, tau_max, tau_step = (_number(values, key) for key in grid_keys)
    else:
        half = defaults["grid_half_width_delta_t"] * delta_t
        tau_min, tau_max = -half, half
        tau_step = 2.0 * half / (defaults["grid_points"] - 1)

    return RunConfig(
        delta_t_fs=delta_t,
        center_wavelength_nm=center_wavelength,
        gdd_fs2=_number(values, "gdd_fs2", defaults["gdd_fs2"]),
        b=b,
        gain=gain,
        background_counts=background_counts,
        calibration_order=calibration_order,
        efficiency=efficiency,
        num_modes=num_modes,
        rep_rate_hz=rep_rate,
        tau_min_fs=tau_min,
        tau_max_fs=tau_max,
        tau_step_fs=tau_step,
        exposure_s=exposure,
        orders=orders,
        seed=seed,
        workers=workers,
    )


def load_run_config(path: PathLike) -> RunConfig:
    """读取 key=value 配置文件（# 开头为注释）"""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"配置文件不存在: {path}")
    values = dotenv_values(path)
    logger.info("已读取配置文件 %s（%d 项）", path, len(values))
    return parse_run_config(values)


# ======== CSV 读取 ========
def _data_lines(path: Path) -> Tuple[List[int], List[str]]:
    """去掉空行与 # 注释行，保留原始行号"""
    numbers, lines = [], []
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            stripped = line.strip()
            if stripped and not stripped.startswith("#"):
                numbers.append(number)
                lines.append(stripped)
    return numbers, lines


def _read_table(path: PathLike) -> Tuple[List[str], pd.DataFrame, List[int]]:
    path = Path(path)
    numbers, lines = _data_lines(path)
    if not lines:
        raise TraceFormatError("文件中没有表头")
    header = [name.strip() for name in lines[0].split(",")]
    for number, line in zip(numbers[1:], lines[1:]):
        if len(line.split(",")) != len(header):
            raise TraceFormatError(f"应有 {len(header)} 列，实际为 {len(line.split(','))} 列", line=number)
    frame = pd.read_csv(io.StringIO("\n".join(lines)), dtype=str, skipinitialspace=True)
    frame.columns = header
    numeric = frame.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().any(axis=1) | ~np.isfinite(numeric.to_numpy(dtype=float)).all(axis=1)
    if bad.any():
        row = int(np.argmax(bad.to_numpy()))
        raise TraceFormatError(f"无法解析的数值: '{lines[row + 1]}'", line=numbers[row + 1])
    return header, numeric, numbers[1:]


def read_trace_csv(path: PathLike, order: int) -> CorrelationTrace:
    """
    读取迹线 CSV，阶数由调用者指定

    支持两种表头：`tau_fs,counts,exposure_s`（计数，泊松误差）与 `tau_fs,value,sigma`（模拟量，给定误差）
    """
    header, frame, numbers = _read_table(path)
    if header not in (COUNTS_COLUMNS, VALUE_COLUMNS):
        raise TraceFormatError(f"表头必须为 {','.join(COUNTS_COLUMNS)} 或 {','.join(VALUE_COLUMNS)}",
                               line=None)
    if frame.empty:
        raise TraceFormatError("文件中没有数据行")
    delays = frame["tau_fs"].to_numpy(dtype=float)
    decreasing = np.nonzero(np.diff(delays) <= 0)[0]
    if decreasing.size:
        raise TraceFormatError("延迟必须严格递增", line=numbers[decreasing[0] + 1])

    if header == COUNTS_COLUMNS:
        counts = frame["counts"].to_numpy(dtype=float)
        exposures = frame["exposure_s"].to_numpy(dtype=float)
        invalid = np.nonzero((counts < 0) | (counts != np.round(counts)) | (exposures <= 0))[0]
        if invalid.size:
            raise TraceFormatError("计数必须为非负整数，曝光时间必须为正", line=numbers[invalid[0]])
        exposure = float(exposures[0]) if np.all(exposures == exposures[0]) else None
        trace = CorrelationTrace(order=order, delays=delays, values=counts,
                                 errors=poisson_sigma(counts), exposure_s=exposure)
    else:
        values = frame["value"].to_numpy(dtype=float)
        sigma = frame["sigma"].to_numpy(dtype=float)
        invalid = np.nonzero((values < 0) | (sigma <= 0))[0]
        if invalid.size:
            raise TraceFormatError("迹线值不能为负，sigma 必须为正", line=numbers[invalid[0]])
        trace = CorrelationTrace(order=order, delays=delays, values=values, errors=sigma)
    logger.info("已读取迹线 %s：%d 个点，按 g%d 处理", path, len(trace), order)
    return trace


# ======== CSV 写出 ========
def _write_frame(path: PathLike, frame: pd.DataFrame) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def write_counts_csv(path: PathLike, records: Sequence[CountRecord]) -> Path:
    """写出原始计数（不做归一化）"""
    frame = pd.DataFrame({
        "tau_fs": [r.tau for r in records],
        "counts": [r.counts for r in records],
        "exposure_s": [r.exposure_s for r in records],
    }, columns=COUNTS_COLUMNS)
    return _write_frame(path, frame)


def write_value_csv(path: PathLike, trace: CorrelationTrace) -> Path:
    if trace.errors is None:
        raise ValidationError("写出模拟量迹线需要误差列")
    frame = pd.DataFrame({"tau_fs": trace.delays, "value": trace.values, "sigma": trace.errors})
    return _write_frame(path, frame)


def write_plot_csv(path: PathLike, trace: CorrelationTrace, model: np.ndarray) -> Path:
    frame = pd.DataFrame({
        "tau_fs": trace.delays,
        "data": trace.values,
        "sigma": trace.errors if trace.errors is not None else np.full(len(trace), np.nan),
        "model": model,
    }, columns=PLOT_COLUMNS)
    return _write_frame(path, frame)


def write_spectrum_csv(path: PathLike, spectrum: Spectrum) -> Path:
    frame = pd.DataFrame({"wavelength_nm": spectrum.wavelengths, "density": spectrum.density})
    return _write_frame(path, frame)


def write_envelope_csv(path: PathLike, trace: CorrelationTrace) -> Path:
    """模型包络，列为 tau_fs,g{n}"""
    frame = pd.DataFrame({"tau_fs": trace.delays, f"g{trace.order}": trace.values})
    return _write_frame(path, frame)


# ======== 报告与元数据 ========
def format_report(report: Mapping[str, Any]) -> str:
    lines = []
    for key, value in report.items():
        if isinstance(value, str):
            lines.append(f'{key}="{value}"')
        elif isinstance(value, (float, np.floating)):
            lines.append(f"{key}={float(value):.10g}")
        else:
            lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def write_report(path: PathLike, report: Mapping[str, Any]) -> Path:
    """key=value 文本报告，字符串值加双引号"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_report(report))
    return path


def read_report(path: PathLike) -> Dict[str, Optional[str]]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"报告文件不存在: {path}")
    return dict(dotenv_values(path))


def write_metadata(path: PathLike, config: RunConfig, extra: Optional[Mapping[str, Any]] = None) -> Path:
    """模拟运行的元数据：完整配置、种子与时间戳"""
    metadata = {
        "config": config.to_dict(),
        "seed": config.seed,
        "created_at": datetime.now().isoformat(timespec="seconds"),
    }
    if extra:
        metadata.update(extra)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(metadata, f, ensure_ascii=False, indent=2)
    return path
