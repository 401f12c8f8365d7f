"""
验收检查脚本，逐条验证换算常数、相关函数峰值、统计性质与拟合器完整性
"""

import time
from typing import Callable, Dict, Iterable, Optional

import numpy as np

from src.analysis import fit_g2, predict_g3, residual_jacobian, residuals, spectrum_from_g1
from src.correlator import (
    CorrelationTrace,
    InterferencePair,
    analytic_envelope,
    analytic_trace,
    envelope_fwhm,
    gamma_factor,
    gn_numeric,
)
from src.pulse import (
    PulseModel,
    field_fwhm,
    field_spectrum,
    sample_field,
    spectrum_bandwidth,
    spectrum_fwhm,
)
from src.spdc import (
    SpdcSource,
    acceptance,
    calibrate_gain,
    coincidence_rate,
    keyed_poisson,
    monte_carlo_acceptance,
    poisson_sigma,
    simulate_scan,
)


class AcceptanceSuite:
    """验收检查类，封装 A1–A10 的检查逻辑"""

    def __init__(self, gamma_fn: Callable[[float], float] = gamma_factor, seed: int = 0,
                 repetitions: int = 100, mc_trials: int = 1_000_000):
        """
        初始化验收套件

        参数:
            gamma_fn: γ(V) 换算函数，可替换以做变异检查
            seed: 随机检查的基础种子
            repetitions: A5 的重复次数
            mc_trials: A9 的蒙特卡罗试验次数
        """
        self.gamma_fn = gamma_fn
        self.seed = seed
        self.repetitions = repetitions
        self.mc_trials = mc_trials

    def _run(self, label: str, check: Callable[[], bool]) -> bool:
        print(f"\n检查 {label}...")
        start_time = time.time()
        try:
            passed = bool(check())
        except Exception as e:
            print(f"检查过程中出错: {e}")
            passed = False
        print(f"耗时: {time.time() - start_time:.2f} 秒 -> {'通过' if passed else '失败'}")
        return passed

    def check_a1(self) -> bool:
        """γ 端点：γ(1) = 0.5895 ± 0.0005，γ(0.75) = 0.582 ± 0.001"""
        perfect, reduced = self.gamma_fn(1.0), self.gamma_fn(0.75)
        print(f"γ(1.00) = {perfect:.5f}，γ(0.75) = {reduced:.5f}")
        return abs(perfect - 0.5895) <= 0.0005 and abs(reduced - 0.582) <= 0.001

    def check_a2(self) -> bool:
        """数值 g1 宽度与强度 FWHM 之比为 0.4048 ± 0.0005"""
        pulse = PulseModel(delta_t=100.0)
        step = pulse.delta_t / 50.0
        field = sample_field(pulse, -20.0 * pulse.delta_t, step, 2001)
        delays = np.arange(-400, 401) * step
        values = gn_numeric(InterferencePair(pulse=pulse), 1, delays)
        ratio = field_fwhm(field) / envelope_fwhm(CorrelationTrace(order=1, delays=delays, values=values))
        print(f"τ_FT/Δτ_g1 = {ratio:.5f}")
        return abs(ratio - 0.4048) <= 0.0005

    def check_a3(self) -> bool:
        """峰值 2^(2n−1)，以及 g3 预测关于 τ 对称"""
        pair = InterferencePair(pulse=PulseModel(delta_t=100.0))
        passed = True
        for n in (1, 2, 3):
            peak = gn_numeric(pair, n, 0.0)
            expected = 2.0 ** (2 * n - 1)
            print(f"g{n}(0) = {peak:.8f}（期望 {expected:g}）")
            passed &= abs(peak / expected - 1.0) <= 1e-6

        truth = InterferencePair(pulse=PulseModel(delta_t=99.85), b=0.4514)
        delays = np.linspace(-600.0, 600.0, 121)
        fit = fit_g2(_noiseless(truth, 2, delays))
        g3 = predict_g3(fit, delays)
        asymmetry = np.max(np.abs(g3.values - g3.values[::-1]))
        print(f"g3 预测峰值 {g3.values.max():.4f}，最大不对称 {asymmetry:.2e}")
        return passed and asymmetry <= 1e-9

    def check_a4(self) -> bool:
        """闭式包络与定义积分的最大相对偏差 < 1e-6"""
        pulse = PulseModel(delta_t=100.0)
        delays = np.linspace(-6.0, 6.0, 121) * pulse.delta_t
        worst = 0.0
        for b in (0.2, 0.5, 1.0):
            pair = InterferencePair(pulse=pulse, b=b)
            for n in (1, 2):
                closed = analytic_envelope(pair, n, delays)
                numeric = gn_numeric(pair, n, delays)
                worst = max(worst, float(np.max(np.abs(numeric / closed - 1.0))))
        print(f"最大相对偏差 {worst:.2e}")
        return worst < 1e-6

    def check_a5(self) -> bool:
        """176 fs、V=0.75、8 s/点的 g2 计数，≥ 68% 的重复拟合落在 ±14 fs 内"""
        truth_fwhm, exposure = 176.0, 8.0
        pulse = PulseModel.from_fwhm(truth_fwhm)
        pair = InterferencePair.from_visibility(pulse, 0.75)
        source = calibrate_gain(SpdcSource(gain=0.0), pair, 2, background_counts=300.0, exposure_s=exposure)
        delays = np.linspace(-6.0, 6.0, 120) * pulse.delta_t
        means = coincidence_rate(source, pair, 2, delays) * exposure

        within = 0
        for repetition in range(self.repetitions):
            seed = self.seed + repetition
            counts = np.array([keyed_poisson(m, seed, i, 2) for i, m in enumerate(means)], dtype=float)
            trace = CorrelationTrace(order=2, delays=delays, values=counts, errors=poisson_sigma(counts),
                                     exposure_s=exposure)
            fit = fit_g2(trace)
            within += abs(fit.pulse_fwhm - truth_fwhm) <= 14.0
        print(f"{within}/{self.repetitions} 次拟合落在 176 ± 14 fs 内")
        return within >= 0.68 * self.repetitions

    def check_a6(self) -> bool:
        """由 g1 恢复光谱：126 fs → 1.26 ± 0.02 nm，150 fs → 1.05–1.08 nm"""
        widths = {}
        for fwhm in (126.0, 150.0):
            pulse = PulseModel.from_fwhm(fwhm, center_wavelength=390.0)
            delays = np.linspace(-12.0, 12.0, 241) * pulse.delta_t
            spectrum = spectrum_from_g1(analytic_trace(InterferencePair(pulse=pulse), 1, delays), 390.0)
            widths[fwhm] = spectrum_fwhm(spectrum)
            print(f"{fwhm:g} fs → Δλ = {widths[fwhm]:.4f} nm")
        return abs(widths[126.0] - 1.26) <= 0.02 and 1.05 <= widths[150.0] <= 1.08

    def check_a7(self) -> bool:
        """sech 时间带宽积 0.3148 ± 0.0005"""
        pulse = PulseModel(delta_t=100.0)
        field = sample_field(pulse, -40.0 * pulse.delta_t, pulse.delta_t / 20.0, 1601)
        product = spectrum_bandwidth(field_spectrum(field, pulse.center_wavelength)) * field_fwhm(field)
        print(f"Δν·Δτ = {product:.5f}")
        return abs(product - 0.3148) <= 0.0005

    def check_a8(self) -> bool:
        """λ=100 的 10⁴ 次抽样 Fano 因子位于 [0.9, 1.1]，且结果与线程数无关"""
        draws = np.array([keyed_poisson(100.0, self.seed, i, 1) for i in range(10_000)], dtype=float)
        fano = draws.var(ddof=1) / draws.mean()
        print(f"Fano 因子 {fano:.4f}")

        pair = InterferencePair(pulse=PulseModel(delta_t=100.0), b=0.8)
        source = SpdcSource(gain=0.15)
        delays = np.linspace(-500.0, 500.0, 41)
        serial = simulate_scan(source, pair, delays, {1, 2}, 8.0, self.seed, workers=1)
        parallel = simulate_scan(source, pair, delays, {1, 2}, 8.0, self.seed, workers=4)
        same = [r.counts for r in serial] == [r.counts for r in parallel]
        print(f"单线程与多线程结果{'一致' if same else '不一致'}")
        return 0.9 <= fano <= 1.1 and same

    def check_a9(self) -> bool:
        """acceptance(2, 6) = (5/6)²，与蒙特卡罗估计在 3σ 内一致"""
        exact = acceptance(2, 6)
        estimate, std_error = monte_carlo_acceptance(2, 6, trials=self.mc_trials, seed=self.seed)
        print(f"解析值 {exact:.6f}，蒙特卡罗 {estimate:.6f} ± {std_error:.6f}")
        return abs(exact - (5.0 / 6.0) ** 2) <= 1e-12 and abs(estimate - exact) <= 3.0 * std_error

    def check_a10(self) -> bool:
        """雅可比与中心差分一致（20 个随机点），无噪声数据 3×3×3 网格往返恢复到 1e-6"""
        rng = np.random.default_rng(self.seed)
        worst_jacobian = 0.0
        for k in range(20):
            order = 1 + k % 2
            params = np.array([rng.uniform(50.0, 200.0), rng.uniform(0.1, 0.95), rng.uniform(10.0, 1000.0)])
            delays = np.linspace(-6.0, 6.0, 60) * params[0]
            trace = CorrelationTrace(order=order, delays=delays, values=np.ones(60), errors=np.ones(60))
            worst_jacobian = max(worst_jacobian, jacobian_mismatch(params, trace))
        print(f"雅可比最大相对偏差 {worst_jacobian:.2e}")

        worst_round_trip = 0.0
        for delta_t in (60.0, 100.0, 150.0):
            for b in (0.3, 0.55, 0.8):
                for scale in (10.0, 300.0, 5000.0):
                    truth = InterferencePair(pulse=PulseModel(delta_t=delta_t), b=b)
                    delays = np.linspace(-6.0, 6.0, 120) * delta_t
                    fit = fit_g2(_noiseless(truth, 2, delays, scale))
                    deviation = np.abs(fit.params / np.array([delta_t, b, scale]) - 1.0)
                    worst_round_trip = max(worst_round_trip, float(deviation.max()))
        print(f"往返恢复最大相对偏差 {worst_round_trip:.2e}")
        return worst_jacobian < 1e-5 and worst_round_trip < 1e-6

    def run_all_tests(self, selected: Optional[Iterable[str]] = None) -> Dict[str, bool]:
        """
        运行所有检查

        参数:
            selected: 只运行给定的检查（如 ["A1", "A9"]），默认全部

        返回:
            Dict[str, bool]: 检查结果字典，含 all_passed
        """
        print("开始验收检查...")
        checks = {f"A{i}": getattr(self, f"check_a{i}") for i in range(1, 11)}
        if selected is not None:
            wanted = {name.upper() for name in selected}
            checks = {name: check for name, check in checks.items() if name in wanted}

        results = {}
        for name, check in checks.items():
            results[name] = self._run(f"{name}: {check.__doc__}", check)

        print("\n验收检查结果总结:")
        for name, passed in results.items():
            print(f"- {name}: {'✓ 通过' if passed else '✗ 失败'}")

        results["all_passed"] = all(results.values())

        if results["all_passed"]:
            print("\n所有验收检查通过!")
        else:
            print("\n部分验收检查失败!")

        return results


def jacobian_mismatch(params: np.ndarray, trace: CorrelationTrace, rel_step: float = 1e-6) -> float:
    """解析雅可比与中心差分的最大偏差（逐列相对该列最大值）"""
    analytic = residual_jacobian(params, trace)
    worst = 0.0
    for k in range(params.size):
        h = rel_step * abs(params[k])
        up, down = params.copy(), params.copy()
        up[k] += h
        down[k] -= h
        numeric = (residuals(up, trace) - residuals(down, trace)) / (2.0 * h)
        column = np.max(np.abs(analytic[:, k]))
        worst = max(worst, float(np.max(np.abs(analytic[:, k] - numeric)) / column))
    return worst


def _noiseless(pair: InterferencePair, order: int, delays: np.ndarray, scale: float = 1000.0) -> CorrelationTrace:
    values = scale * np.atleast_1d(analytic_envelope(pair, order, delays))
    return CorrelationTrace(order=order, delays=delays, values=values, errors=np.sqrt(values))
