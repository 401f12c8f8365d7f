import logging

import numpy as np
import pytest

from src.analysis import (
    FitResult,
    estimate_background,
    fit_g1,
    fit_g2,
    fit_spectrum_sech,
    predict_g3,
    residual_jacobian,
    residuals,
    sech_spectrum,
    sech_spectrum_fwhm,
    spectrum_from_g1,
)
from src.correlator import CorrelationTrace, InterferencePair, analytic_envelope, analytic_trace
from src.errors import DegenerateDataError, NoPeakError, NonUniformGridError, ValidationError
from src.pulse import (
    C_NM_PER_FS,
    SECH_TIME_BANDWIDTH,
    PulseModel,
    Spectrum,
    field_spectrum,
    sample_field,
    spectrum_fwhm,
)
from src.spdc import SpdcSource, calibrate_gain, poisson_sigma, records_to_trace, simulate_scan
from src.verify import jacobian_mismatch


def _noiseless(delta_t, b, order, scale=1000.0, points=120, reach=6.0):
    pair = InterferencePair(pulse=PulseModel(delta_t=delta_t), b=b)
    delays = np.linspace(-reach, reach, points) * delta_t
    values = scale * analytic_envelope(pair, order, delays)
    return CorrelationTrace(order=order, delays=delays, values=values, errors=np.sqrt(values))


def _g2_fit_result(delta_t, b):
    return FitResult(
        order=2, delta_t=delta_t, delta_t_err=0.0, b=b, b_err=0.0, scale=1.0, scale_err=0.0,
        covariance=np.zeros((3, 3)), chi2_reduced=0.0, visibility=0.0, visibility_err=0.0,
        trace_fwhm=0.0, trace_fwhm_err=0.0, pulse_fwhm=0.0, pulse_fwhm_err=0.0,
        conversion="", n_points=0, n_evaluations=0,
    )


def test_noiseless_g1_fit_recovers_parameters():
    fit = fit_g1(_noiseless(100.0, 0.7, 1))
    np.testing.assert_allclose(fit.params, [100.0, 0.7, 1000.0], rtol=1e-6)
    assert fit.visibility == pytest.approx(2 * 0.7 / 1.49, rel=1e-6)
    assert fit.trace_fwhm == pytest.approx(435.46, abs=0.01)
    assert fit.pulse_fwhm == pytest.approx(0.4048 * fit.trace_fwhm, rel=1e-12)
    assert fit.chi2_reduced < 1e-6
    assert fit.n_points == 120


def test_noiseless_g2_fit_recovers_pulse_duration():
    fit = fit_g2(_noiseless(99.85, 0.4514, 2))
    assert fit.delta_t == pytest.approx(99.85, rel=1e-6)
    assert fit.b == pytest.approx(0.4514, rel=1e-6)
    assert fit.visibility == pytest.approx(0.75, abs=1e-4)
    assert fit.pulse_fwhm == pytest.approx(176.0, abs=0.05)
    assert fit.model([0.0])[0] / fit.scale == pytest.approx(4.26, abs=0.01)
    assert "gamma" in fit.conversion


@pytest.mark.parametrize("delta_t", [60.0, 100.0, 150.0])
def test_noiseless_g1_round_trip_grid(delta_t):
    for b in (0.3, 0.55, 0.8):
        for scale in (10.0, 300.0, 5000.0):
            fit = fit_g1(_noiseless(delta_t, b, 1, scale=scale))
            np.testing.assert_allclose(fit.params, [delta_t, b, scale], rtol=1e-6)


def test_parameter_errors_follow_square_root_law():
    pair = InterferencePair.from_visibility(PulseModel.from_fwhm(176.0), 0.75)
    delays = np.linspace(-6.0, 6.0, 120) * pair.pulse.delta_t
    low = calibrate_gain(SpdcSource(gain=0.2), pair, 2, background_counts=300.0, exposure_s=8.0)
    high = calibrate_gain(SpdcSource(gain=0.2), pair, 2, background_counts=30000.0, exposure_s=8.0)
    ratios = []
    for seed in range(5):
        fits = [fit_g2(records_to_trace(simulate_scan(source, pair, delays, [2], exposure_s=8.0, seed=seed)))
                for source in (low, high)]
        ratios.append([fits[0].delta_t_err / fits[1].delta_t_err, fits[0].b_err / fits[1].b_err])
    median = np.median(ratios, axis=0)
    assert np.all(median > 10.0 / 1.3)
    assert np.all(median < 10.0 * 1.3)


def test_fit_result_summary_fields():
    fit = fit_g2(_noiseless(99.85, 0.4514, 2))
    assert set(fit.derived) == {"visibility", "pulse_fwhm_fs", "trace_fwhm_fs"}
    assert fit.covariance.shape == (3, 3)
    np.testing.assert_allclose(fit.covariance, fit.covariance.T)
    assert fit.n_evaluations >= 1


def test_fit_without_contrast_is_degenerate():
    delays = np.linspace(-600.0, 600.0, 40)
    trace = CorrelationTrace(order=2, delays=delays, values=np.full(40, 100.0), errors=np.full(40, 10.0))
    with pytest.raises(DegenerateDataError):
        fit_g2(trace)


def test_all_zero_counts_are_degenerate():
    delays = np.linspace(-600.0, 600.0, 40)
    trace = CorrelationTrace(order=1, delays=delays, values=np.zeros(40), errors=np.ones(40))
    with pytest.raises(DegenerateDataError):
        fit_g1(trace)


def test_single_arm_data_is_degenerate():
    with pytest.raises(DegenerateDataError):
        fit_g1(_noiseless(100.0, 0.0, 1))


def test_fit_input_validation():
    trace = _noiseless(100.0, 0.7, 1, points=7)
    with pytest.raises(ValidationError):
        fit_g1(trace)
    full = _noiseless(100.0, 0.7, 1)
    with pytest.raises(ValidationError):
        fit_g2(full)
    bare = CorrelationTrace(order=1, delays=full.delays, values=full.values)
    with pytest.raises(ValidationError):
        fit_g1(bare)


@pytest.mark.parametrize("order", [1, 2])
def test_residual_jacobian_matches_finite_differences(order):
    trace = _noiseless(100.0, 0.7, order, points=60)
    for params in ([100.0, 0.7, 1000.0], [80.0, 0.3, 700.0], [140.0, 0.95, 1300.0]):
        assert jacobian_mismatch(np.array(params), trace) < 1e-5


def test_residuals_vanish_at_truth():
    trace = _noiseless(100.0, 0.7, 2)
    np.testing.assert_allclose(residuals([100.0, 0.7, 1000.0], trace), 0.0, atol=1e-9)
    assert residual_jacobian([100.0, 0.7, 1000.0], trace).shape == (120, 3)


def test_estimate_background_uses_scan_edges():
    values = np.array([2.0, 2.0, 9.0, 9.0, 9.0, 4.0, 4.0])
    trace = CorrelationTrace(order=1, delays=np.arange(7.0), values=values)
    assert estimate_background(trace) == pytest.approx(3.0)


def test_noisy_g1_fit_is_consistent():
    pair = InterferencePair.from_visibility(PulseModel.from_fwhm(126.0), 0.9)
    delays = np.linspace(-6.0, 6.0, 121) * pair.pulse.delta_t
    source = calibrate_gain(SpdcSource(gain=0.05), pair, 1, background_counts=1e4, exposure_s=8.0)
    trace = records_to_trace(simulate_scan(source, pair, delays, [1], exposure_s=8.0, seed=3))
    fit = fit_g1(trace)
    assert abs(fit.delta_t - pair.pulse.delta_t) < 5.0 * fit.delta_t_err
    assert abs(fit.visibility - 0.9) < 5.0 * fit.visibility_err
    assert fit.pulse_fwhm == pytest.approx(0.4048 * 4.354636 * pair.pulse.delta_t, rel=0.05)
    assert 0.5 < fit.chi2_reduced < 2.0
    np.testing.assert_array_equal(trace.errors, poisson_sigma(trace.values))


def test_predict_g3_perfect_visibility():
    delays = np.linspace(-400.0, 400.0, 41)
    prediction = predict_g3(_g2_fit_result(100.0, 1.0), delays)
    assert prediction.order == 3
    assert prediction.values[20] == pytest.approx(32.0, rel=1e-6)
    np.testing.assert_allclose(prediction.values, prediction.values[::-1], rtol=1e-10)
    assert np.all(prediction.values[:20] < 32.0)


def test_predict_g3_without_interference_is_flat():
    prediction = predict_g3(_g2_fit_result(100.0, 0.0), np.linspace(-300.0, 300.0, 7))
    np.testing.assert_allclose(prediction.values, 1.0, rtol=1e-12)


def test_predict_g3_requires_g2_fit():
    fit = fit_g1(_noiseless(100.0, 0.7, 1))
    with pytest.raises(ValidationError):
        predict_g3(fit, [0.0])


def _g1_trace(fwhm, reach=30.0, points=1201):
    pair = InterferencePair(pulse=PulseModel.from_fwhm(fwhm))
    delays = np.linspace(-reach, reach, points) * pair.pulse.delta_t
    return pair, analytic_trace(pair, 1, delays)


def test_spectrum_from_g1_126_fs():
    _, trace = _g1_trace(126.0)
    spectrum = spectrum_from_g1(trace, 390.0)
    assert spectrum_fwhm(spectrum) == pytest.approx(1.26, abs=0.02)
    assert spectrum.wavelengths[np.argmax(spectrum.density)] == pytest.approx(390.0, abs=0.01)


def test_spectrum_from_g1_150_fs():
    _, trace = _g1_trace(150.0)
    assert spectrum_fwhm(spectrum_from_g1(trace, 390.0)) == pytest.approx(1.065, abs=0.01)


@pytest.mark.parametrize("fwhm", [80.0, 126.0, 150.0])
def test_spectrum_from_g1_matches_field_spectrum(fwhm):
    pair, trace = _g1_trace(fwhm)
    pulse = pair.pulse
    from_g1 = spectrum_from_g1(trace, 390.0)
    direct = field_spectrum(sample_field(pulse, -40.0 * pulse.delta_t, pulse.delta_t / 20.0, 1601), 390.0)
    assert spectrum_fwhm(from_g1) == pytest.approx(spectrum_fwhm(direct), rel=0.02)
    near = np.abs(direct.wavelengths - 390.0) < 3.0 * spectrum_fwhm(direct)
    interpolated = np.interp(direct.wavelengths[near], from_g1.wavelengths, from_g1.density)
    assert np.max(np.abs(interpolated - direct.density[near])) < 0.02


def test_spectrum_round_trip_through_sech_fit():
    pair, trace = _g1_trace(126.0)
    delta_t, fwhm = fit_spectrum_sech(spectrum_from_g1(trace, 390.0), 390.0)
    assert delta_t == pytest.approx(pair.pulse.delta_t, rel=1e-4)
    assert fwhm == pytest.approx(sech_spectrum_fwhm(pair.pulse.delta_t, 390.0), rel=1e-4)


def test_constant_trace_gives_zero_spectrum(caplog):
    trace = CorrelationTrace(order=1, delays=np.linspace(-500.0, 500.0, 101), values=np.ones(101))
    with caplog.at_level(logging.WARNING):
        spectrum = spectrum_from_g1(trace, 390.0)
    assert spectrum.is_empty
    assert np.all(spectrum.density == 0.0)
    assert caplog.records


def test_truncated_scan_warns(caplog):
    _, trace = _g1_trace(126.0, reach=2.0, points=201)
    with caplog.at_level(logging.WARNING):
        spectrum_from_g1(trace, 390.0)
    assert any("衰减不足" in record.getMessage() for record in caplog.records)


def test_spectrum_requires_uniform_grid_and_first_order():
    delays = np.array([-300.0, -100.0, 0.0, 50.0, 300.0])
    trace = CorrelationTrace(order=1, delays=delays, values=np.array([1.0, 1.5, 2.0, 1.6, 1.0]))
    with pytest.raises(NonUniformGridError):
        spectrum_from_g1(trace, 390.0)
    with pytest.raises(ValidationError):
        spectrum_from_g1(_noiseless(100.0, 1.0, 2), 390.0)


def test_fit_spectrum_sech_on_exact_spectrum():
    wavelengths = np.linspace(385.0, 395.0, 2001)
    spectrum = Spectrum(wavelengths=wavelengths, density=sech_spectrum(wavelengths, 100.0, 390.0))
    delta_t, fwhm = fit_spectrum_sech(spectrum, 390.0)
    assert delta_t == pytest.approx(100.0, rel=1e-6)
    assert fwhm == pytest.approx(spectrum_fwhm(spectrum), rel=1e-4)


def test_sech_spectrum_time_bandwidth_identity():
    delta_t = 100.0
    fwhm = sech_spectrum_fwhm(delta_t, 390.0)
    # exact FWHM in frequency: 2·asinh(1)/(π²Δt)
    lower, upper = C_NM_PER_FS / (390.0 + 0.5 * fwhm), C_NM_PER_FS / (390.0 - 0.5 * fwhm)
    assert 1.762747 * delta_t * (upper - lower) == pytest.approx(SECH_TIME_BANDWIDTH, rel=1e-3)
    with pytest.raises(ValidationError):
        sech_spectrum_fwhm(1e-6, 390.0)


def test_fit_spectrum_sech_rejects_empty_spectrum():
    spectrum = Spectrum(wavelengths=[389.0, 390.0, 391.0], density=[0.0, 0.0, 0.0])
    with pytest.raises(NoPeakError):
        fit_spectrum_sech(spectrum, 390.0)


@pytest.mark.slow
def test_g2_duration_coverage_over_repetitions():
    pair = InterferencePair.from_visibility(PulseModel.from_fwhm(176.0), 0.75)
    delays = np.linspace(-6.0, 6.0, 120) * pair.pulse.delta_t
    source = calibrate_gain(SpdcSource(gain=0.2), pair, 2, background_counts=300.0, exposure_s=8.0)
    hits = 0
    for seed in range(100):
        trace = records_to_trace(simulate_scan(source, pair, delays, [2], exposure_s=8.0, seed=seed))
        fit = fit_g2(trace)
        hits += abs(fit.pulse_fwhm - 176.0) <= 14.0
    assert hits >= 68


@pytest.mark.slow
def test_median_reduced_chi_square_over_seeds():
    pair = InterferencePair.from_visibility(PulseModel.from_fwhm(176.0), 0.75)
    delays = np.linspace(-6.0, 6.0, 120) * pair.pulse.delta_t
    source = calibrate_gain(SpdcSource(gain=0.2), pair, 2, background_counts=300.0, exposure_s=8.0)
    chi2 = [fit_g2(records_to_trace(simulate_scan(source, pair, delays, [2], exposure_s=8.0, seed=seed))).chi2_reduced
            for seed in range(50)]
    assert 0.7 <= np.median(chi2) <= 1.3
