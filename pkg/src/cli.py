#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
命令行前端
子命令：simulate（合成计数）、fit（包络拟合）、gamma（γ 换算表）、spectrum（g1 光谱恢复）、verify（验收检查）
"""

import argparse
import functools
import logging
import math
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from src.analysis import (
    FitResult,
    estimate_background,
    fit_g1,
    fit_g2,
    fit_spectrum_sech,
    predict_g3,
    sech_spectrum_fwhm,
    spectrum_from_g1,
)
from src.correlator import CorrelationTrace, gamma_factor
from src.errors import DegenerateDataError, NonUniformGridError, NumericalError, ValidationError
from src.pulse import SECH_FWHM_FACTOR, spectrum_fwhm
from src.spdc import calibrate_gain, simulate_scan
from src.trace_io import (
    format_report,
    load_run_config,
    read_trace_csv,
    write_counts_csv,
    write_envelope_csv,
    write_metadata,
    write_plot_csv,
    write_report,
    write_spectrum_csv,
)
from src.verify import AcceptanceSuite
from src.visualize import visualize_fit

logger = logging.getLogger(__name__)

# ======== 退出码 ========
EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4


def exit_status(func: Callable[..., int]) -> Callable[..., int]:
    """把工具包异常映射为退出码，并在标准错误输出诊断信息"""

    @functools.wraps(func)
    def wrapper(*args, **kwargs) -> int:
        try:
            return func(*args, **kwargs)
        except ValidationError as e:
            print(f"错误: 输入校验失败: {e}", file=sys.stderr)
            return EXIT_VALIDATION
        except OSError as e:
            print(f"错误: 文件读写失败: {e}", file=sys.stderr)
            return EXIT_IO
        except NumericalError as e:
            print(f"错误: 数值计算失败: {e}", file=sys.stderr)
            return EXIT_NUMERICAL

    return wrapper


def _banner(title: str) -> None:
    print("\n" + "=" * 50)
    print(title)
    print("=" * 50)


# ======== simulate ========
@exit_status
def cmd_simulate(config_path: str, output_dir: str) -> int:
    """
    按配置文件生成合成计数，每个阶数一个 CSV，并写出 metadata.json

    参数:
        config_path: key=value 配置文件
        output_dir: 输出目录

    返回:
        int: 退出码
    """
    config = load_run_config(config_path)
    pair = config.pair()
    source = config.source()
    if config.background_counts is not None:
        source = calibrate_gain(source, pair, config.calibration_order, config.background_counts, config.exposure_s)

    records = simulate_scan(source, pair, config.delays, config.orders, config.exposure_s,
                            config.seed, workers=config.workers)

    _banner("合成计数扫描")
    out = Path(output_dir)
    written = []
    for n in config.orders:
        path = write_counts_csv(out / f"g{n}_counts.csv", [r for r in records if r.order == n])
        written.append(path)
        print(f"✓ g{n} 计数已保存到: {path}")
    metadata = write_metadata(out / "metadata.json", config,
                              extra={"gain": source.gain, "files": [p.name for p in written]})
    print(f"✓ 元数据已保存到: {metadata}")
    return EXIT_OK


# ======== fit ========
def fit_report(fit: FitResult, center_wavelength: float) -> Dict[str, Any]:
    """拟合结果的 key=value 报告内容"""
    report = {
        "order": fit.order,
        "delta_t_fs": fit.delta_t,
        "delta_t_err_fs": fit.delta_t_err,
        "b": fit.b,
        "b_err": fit.b_err,
        "visibility": fit.visibility,
        "visibility_err": fit.visibility_err,
        "scale": fit.scale,
        "scale_err": fit.scale_err,
        "trace_fwhm_fs": fit.trace_fwhm,
        "trace_fwhm_err_fs": fit.trace_fwhm_err,
        "pulse_fwhm_fs": fit.pulse_fwhm,
        "pulse_fwhm_err_fs": fit.pulse_fwhm_err,
        "conversion": fit.conversion,
        "chi2_reduced": fit.chi2_reduced,
        "n_points": fit.n_points,
        "center_wavelength_nm": center_wavelength,
    }
    try:
        report["ft_limit_bandwidth_nm"] = sech_spectrum_fwhm(fit.pulse_fwhm / SECH_FWHM_FACTOR, center_wavelength)
    except ValidationError:
        logger.warning("脉宽 %.3f fs 对应的光谱超出正波长范围，不写出带宽", fit.pulse_fwhm)
    return report


@exit_status
def cmd_fit(trace_csv: str, order: int, center_wavelength: float = 390.0, output_dir: Optional[str] = None,
            html: bool = False, with_g3: bool = False) -> int:
    """
    拟合迹线 CSV，阶数由 order 指定（不检查文件来源）

    写出 <stem>_fit_report.txt、<stem>_fit_plot.csv，可选 HTML 报告与 g3 预测
    """
    if order not in (1, 2):
        raise ValidationError(f"拟合阶数必须为 1 或 2，当前为 {order}")
    trace = read_trace_csv(trace_csv, order)
    fit = fit_g1(trace) if order == 1 else fit_g2(trace)
    report = fit_report(fit, center_wavelength)

    _banner(f"g{order} 包络拟合结果")
    print(format_report(report), end="")

    stem = Path(trace_csv).stem
    out = Path(output_dir) if output_dir else Path(trace_csv).parent
    report_path = write_report(out / f"{stem}_fit_report.txt", report)
    plot_path = write_plot_csv(out / f"{stem}_fit_plot.csv", trace, fit.model(trace.delays))
    print("-" * 50)
    print(f"✓ 报告已保存到: {report_path}")
    print(f"✓ 绘图数据已保存到: {plot_path}")
    if html:
        visualize_fit(fit, trace, str(out / f"{stem}_fit_report.html"))
    if with_g3 and order == 2:
        g3_path = write_envelope_csv(out / f"{stem}_g3_prediction.csv", predict_g3(fit, trace.delays))
        print(f"✓ g3 预测已保存到: {g3_path}")
    return EXIT_OK


# ======== gamma ========
@exit_status
def cmd_gamma(v_min: float, v_max: float, step: float) -> int:
    """在标准输出打印 CSV 表 visibility,gamma"""
    if not 0 < v_min <= v_max <= 1:
        raise ValidationError(f"可见度范围必须满足 0 < v_min ≤ v_max ≤ 1，当前为 [{v_min}, {v_max}]")
    if not step > 0:
        raise ValidationError(f"步长必须为正数，当前为 {step}")
    n_rows = int(math.floor((v_max - v_min) / step + 1e-9)) + 1
    visibilities = np.minimum(v_min + step * np.arange(n_rows), 1.0)
    table = pd.DataFrame({
        "visibility": visibilities,
        "gamma": [gamma_factor(float(v)) for v in visibilities],
    })
    table.to_csv(sys.stdout, index=False, float_format="%.6f", lineterminator="\n")
    return EXIT_OK


# ======== spectrum ========
@exit_status
def cmd_spectrum(trace_csv: str, center_wavelength: float = 390.0, output_dir: Optional[str] = None) -> int:
    """
    由一阶迹线 CSV 恢复光谱，写出 <stem>_spectrum.csv 与 <stem>_spectrum_report.txt

    迹线先除以 g1 拟合得到的背景；没有对比度时改用两端背景估计，常数迹线（包括全零计数）给出全零光谱
    """
    trace = read_trace_csv(trace_csv, 1)
    if not trace.is_uniform():
        raise NonUniformGridError("光谱恢复需要均匀延迟网格")
    if np.ptp(trace.values) == 0:
        logger.warning("迹线各点相同（%g），没有干涉信号", trace.values[0])
        normalized = CorrelationTrace(order=1, delays=trace.delays, values=np.ones(len(trace)))
    else:
        try:
            background = fit_g1(trace).scale
        except DegenerateDataError as e:
            logger.warning("%s，改用两端背景估计", e)
            background = estimate_background(trace)
        if not background > 0:
            raise ValidationError("背景估计不为正，无法归一化迹线")
        normalized = CorrelationTrace(order=1, delays=trace.delays, values=trace.values / background,
                                      errors=trace.errors / background)
    spectrum = spectrum_from_g1(normalized, center_wavelength)

    stem = Path(trace_csv).stem
    out = Path(output_dir) if output_dir else Path(trace_csv).parent
    spectrum_path = write_spectrum_csv(out / f"{stem}_spectrum.csv", spectrum)

    _banner("g1 傅里叶变换光谱")
    report: Dict[str, Any] = {"center_wavelength_nm": center_wavelength}
    if spectrum.is_empty:
        print("警告: 迹线没有高于背景的信号，光谱全为零")
        report["status"] = "zero_spectrum"
    else:
        delta_t, sech_fwhm = fit_spectrum_sech(spectrum, center_wavelength)
        report.update({
            "status": "ok",
            "delta_lambda_fwhm_nm": spectrum_fwhm(spectrum),
            "sech_delta_t_fs": delta_t,
            "sech_fwhm_nm": sech_fwhm,
            "ft_limited_pulse_fwhm_fs": SECH_FWHM_FACTOR * delta_t,
        })
    print(format_report(report), end="")
    report_path = write_report(out / f"{stem}_spectrum_report.txt", report)
    print("-" * 50)
    print(f"✓ 光谱已保存到: {spectrum_path}")
    print(f"✓ 报告已保存到: {report_path}")
    return EXIT_OK


# ======== verify ========
@exit_status
def cmd_verify(gamma_fn: Callable[[float], float] = gamma_factor, selected: Optional[List[str]] = None) -> int:
    """运行验收套件，全部通过时返回 0，否则返回 1"""
    results = AcceptanceSuite(gamma_fn=gamma_fn).run_all_tests(selected)
    return EXIT_OK if results["all_passed"] else EXIT_VERIFY_FAILED


# ======== 参数解析 ========
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="main.py",
        description="SPDC 多光子干涉相关测量工具：模拟、拟合、光谱恢复与验收检查",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--verbose", action="store_true", help="输出详细的日志信息")
    subparsers = parser.add_subparsers(dest="command", required=True)

    simulate = subparsers.add_parser("simulate", help="生成合成计数扫描",
                                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    simulate.add_argument("config", type=str, help="key=value 配置文件")
    simulate.add_argument("--output", "-o", type=str, default="simulation", help="输出目录")
    simulate.set_defaults(handler=lambda args: cmd_simulate(args.config, args.output))

    fit = subparsers.add_parser("fit", help="拟合 g1/g2 包络",
                                formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    fit.add_argument("trace", type=str, help="迹线 CSV（tau_fs,counts,exposure_s 或 tau_fs,value,sigma）")
    fit_group = fit.add_argument_group('拟合选项')
    fit_group.add_argument("--order", type=int, choices=[1, 2], required=True, help="相关阶数")
    fit_group.add_argument("--wavelength", type=float, default=390.0, help="中心波长（nm）")
    output_group = fit.add_argument_group('输出选项')
    output_group.add_argument("--output", "-o", type=str, default=None, help="输出目录，默认与迹线文件相同")
    output_group.add_argument("--html", action="store_true", help="同时生成 HTML 拟合报告")
    output_group.add_argument("--predict-g3", action="store_true", help="由 g2 拟合参数写出 g3 预测")
    fit.set_defaults(handler=lambda args: cmd_fit(args.trace, args.order, args.wavelength, args.output,
                                                  args.html, args.predict_g3))

    gamma = subparsers.add_parser("gamma", help="打印 γ(V) 换算表",
                                  formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    gamma.add_argument("--v-min", type=float, default=0.05, help="最小可见度")
    gamma.add_argument("--v-max", type=float, default=1.0, help="最大可见度")
    gamma.add_argument("--step", type=float, default=0.05, help="可见度步长")
    gamma.set_defaults(handler=lambda args: cmd_gamma(args.v_min, args.v_max, args.step))

    spectrum = subparsers.add_parser("spectrum", help="由 g1 迹线恢复光谱",
                                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    spectrum.add_argument("trace", type=str, help="一阶迹线 CSV")
    spectrum.add_argument("--wavelength", type=float, default=390.0, help="中心波长（nm）")
    spectrum.add_argument("--output", "-o", type=str, default=None, help="输出目录，默认与迹线文件相同")
    spectrum.set_defaults(handler=lambda args: cmd_spectrum(args.trace, args.wavelength, args.output))

    verify = subparsers.add_parser("verify", help="运行验收检查 A1–A10")
    verify.add_argument("--only", type=str, default="", help="只运行指定检查，逗号分隔，如 A1,A9")
    verify.set_defaults(handler=lambda args: cmd_verify(selected=args.only.split(",") if args.only else None))

    return parser


def run(argv: Optional[List[str]] = None) -> int:
    """解析参数并执行子命令，返回退出码"""
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    return args.handler(args)
