import json

import numpy as np
import pytest

from src.correlator import CorrelationTrace
from src.errors import ConfigError, TraceFormatError
from src.pulse import SECH_FWHM_FACTOR, Spectrum
from src.spdc import CountRecord
from src.trace_io import (
    format_report,
    load_run_config,
    parse_run_config,
    read_report,
    read_trace_csv,
    write_counts_csv,
    write_envelope_csv,
    write_metadata,
    write_plot_csv,
    write_report,
    write_spectrum_csv,
    write_value_csv,
)

BASE = {"delta_t_fs": "100", "b": "0.7", "gain": "0.2"}


def _config(**overrides):
    values = dict(BASE)
    values.update({key: str(value) for key, value in overrides.items()})
    return values


def test_parse_minimal_config_uses_defaults():
    config = parse_run_config(BASE)
    assert config.delta_t_fs == 100.0
    assert config.center_wavelength_nm == 390.0
    assert config.orders == (1, 2, 3)
    assert config.exposure_s == 8.0
    assert config.num_modes == 6
    assert config.calibration_order is None
    delays = config.delays
    assert delays.size == 120
    assert delays[0] == pytest.approx(-600.0)
    assert delays[-1] == pytest.approx(600.0)


def test_parse_converts_fwhm_and_visibility():
    config = parse_run_config({"pulse_fwhm_fs": "176", "visibility": "0.75", "gain": "0.2"})
    assert config.delta_t_fs == pytest.approx(176.0 / SECH_FWHM_FACTOR)
    assert config.b == pytest.approx(0.451416, abs=1e-6)
    assert config.pair().visibility == pytest.approx(0.75)


def test_parse_explicit_grid():
    config = parse_run_config(_config(tau_min_fs=-100, tau_max_fs=100, tau_step_fs=25))
    np.testing.assert_allclose(config.delays, [-100, -75, -50, -25, 0, 25, 50, 75, 100])


@pytest.mark.parametrize("values, key", [
    ({"b": "0.7", "gain": "0.2"}, "delta_t_fs"),
    (_config(pulse_fwhm_fs=176), "pulse_fwhm_fs"),
    ({"delta_t_fs": "100", "gain": "0.2"}, "b"),
    (_config(visibility=0.5), "visibility"),
    ({"delta_t_fs": "100", "b": "0.7"}, "gain"),
    (_config(background_counts=300), "background_counts"),
    (_config(orders=""), "orders"),
    (_config(orders="1,4"), "orders"),
    (_config(delta_t_fs=-1), "delta_t_fs"),
    (_config(efficiency=1.5), "efficiency"),
    (_config(num_modes=2.5), "num_modes"),
    (_config(exposure_s="abc"), "exposure_s"),
    (_config(tau_min_fs=0, tau_max_fs=100), "tau_step_fs"),
    (_config(tau_min_fs=100, tau_max_fs=0, tau_step_fs=10), "tau_min_fs"),
    (_config(calibration_order=2), "calibration_order"),
    (_config(colour="blue"), "colour"),
])
def test_config_errors_name_the_key(values, key):
    with pytest.raises(ConfigError) as excinfo:
        parse_run_config(values)
    assert excinfo.value.key == key
    assert key in str(excinfo.value)


def test_background_counts_select_calibration_order():
    values = {"delta_t_fs": "100", "b": "0.7", "background_counts": "300"}
    assert parse_run_config(values).calibration_order == 2
    assert parse_run_config({**values, "orders": "1,3"}).calibration_order == 3
    assert parse_run_config({**values, "calibration_order": "1"}).calibration_order == 1
    with pytest.raises(ConfigError):
        parse_run_config({**values, "orders": "1", "calibration_order": "2"})


def test_load_run_config(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("# 176 fs scan\nPULSE_FWHM_FS=176\nvisibility=0.75\ngain=0.2\nseed=7\n", encoding="utf-8")
    config = load_run_config(path)
    assert config.seed == 7
    assert config.to_dict()["orders"] == [1, 2, 3]
    with pytest.raises(FileNotFoundError):
        load_run_config(tmp_path / "missing.env")


def test_counts_csv_round_trip(tmp_path):
    taus = [-123.456789012345, 0.1, 98.7654321098765]
    records = [CountRecord(tau=t, order=2, counts=c, exposure_s=8.0) for t, c in zip(taus, [3, 0, 12])]
    path = write_counts_csv(tmp_path / "g2_counts.csv", records)
    assert path.read_text(encoding="utf-8").splitlines()[0] == "tau_fs,counts,exposure_s"
    trace = read_trace_csv(path, 2)
    np.testing.assert_array_equal(trace.delays, taus)
    np.testing.assert_array_equal(trace.values, [3.0, 0.0, 12.0])
    np.testing.assert_allclose(trace.errors, [np.sqrt(3.0), 1.0, np.sqrt(12.0)])
    assert trace.exposure_s == 8.0


def test_value_csv_round_trip(tmp_path):
    trace = CorrelationTrace(order=1, delays=[-1.0 / 3.0, 0.0, 2.0 / 7.0],
                             values=[1.2345678901234567, 1.9, np.pi / 2.0], errors=[0.01, 0.02, 0.03])
    back = read_trace_csv(write_value_csv(tmp_path / "g1.csv", trace), 1)
    np.testing.assert_allclose(back.delays, trace.delays, rtol=1e-14)
    np.testing.assert_allclose(back.values, trace.values, rtol=1e-14)
    np.testing.assert_allclose(back.errors, trace.errors, rtol=1e-14)


def test_reader_skips_comments_and_blank_lines(tmp_path):
    path = tmp_path / "trace.csv"
    path.write_text("# exported scan\ntau_fs,value,sigma\n\n-10,1.0,0.1\n# midpoint\n0, 2.0, 0.1\n10,1.0,0.1\n",
                    encoding="utf-8")
    trace = read_trace_csv(path, 1)
    np.testing.assert_array_equal(trace.values, [1.0, 2.0, 1.0])


@pytest.mark.parametrize("body, line", [
    ("tau_fs,counts,exposure_s\n0,5,8\n10,abc,8\n", 3),
    ("tau_fs,counts,exposure_s\n0,5,8\n10,6\n", 3),
    ("tau_fs,counts,exposure_s\n# note\n0,5,8\n10,6,8\n5,2,8\n", 5),
    ("tau_fs,counts,exposure_s\n0,5,8\n10,-1,8\n", 3),
    ("tau_fs,counts,exposure_s\n0,5.5,8\n", 2),
    ("tau_fs,value,sigma\n0,1.0,0\n", 2),
])
def test_malformed_rows_report_line_numbers(tmp_path, body, line):
    path = tmp_path / "bad.csv"
    path.write_text(body, encoding="utf-8")
    with pytest.raises(TraceFormatError) as excinfo:
        read_trace_csv(path, 2)
    assert excinfo.value.line == line
    assert f"第 {line} 行" in str(excinfo.value)


@pytest.mark.parametrize("body", ["", "# only a comment\n", "time,counts\n0,1\n", "tau_fs,counts,exposure_s\n"])
def test_unusable_files(tmp_path, body):
    path = tmp_path / "bad.csv"
    path.write_text(body, encoding="utf-8")
    with pytest.raises(TraceFormatError):
        read_trace_csv(path, 1)


def test_missing_trace_file(tmp_path):
    with pytest.raises(OSError):
        read_trace_csv(tmp_path / "absent.csv", 1)


def test_plot_spectrum_and_envelope_writers(tmp_path):
    trace = CorrelationTrace(order=2, delays=[-1.0, 0.0, 1.0], values=[1.0, 8.0, 1.0], errors=[1.0, 1.0, 1.0])
    plot = write_plot_csv(tmp_path / "plot.csv", trace, np.array([1.0, 7.5, 1.0]))
    assert plot.read_text(encoding="utf-8").splitlines()[:2] == ["tau_fs,data,sigma,model", "-1,1,1,1"]
    spectrum = write_spectrum_csv(tmp_path / "spectrum.csv",
                                  Spectrum(wavelengths=[389.5, 390.0], density=[0.5, 1.0]))
    assert spectrum.read_text(encoding="utf-8").splitlines() == ["wavelength_nm,density", "389.5,0.5", "390,1"]
    envelope = write_envelope_csv(tmp_path / "g3.csv", CorrelationTrace(order=3, delays=[0.0], values=[32.0]))
    assert envelope.read_text(encoding="utf-8").splitlines() == ["tau_fs,g3", "0,32"]


def test_report_round_trip(tmp_path):
    report = {"order": 2, "pulse_fwhm_fs": 176.01234, "conversion": "tau_pulse = gamma(V) * trace_fwhm"}
    text = format_report(report)
    assert 'conversion="tau_pulse = gamma(V) * trace_fwhm"' in text
    values = read_report(write_report(tmp_path / "report.txt", report))
    assert values["order"] == "2"
    assert float(values["pulse_fwhm_fs"]) == pytest.approx(176.01234)
    assert values["conversion"] == report["conversion"]


def test_write_metadata(tmp_path):
    config = parse_run_config(_config(seed=11))
    path = write_metadata(tmp_path / "out" / "metadata.json", config, extra={"gain": 0.2})
    metadata = json.loads(path.read_text(encoding="utf-8"))
    assert metadata["seed"] == 11
    assert metadata["config"]["delta_t_fs"] == 100.0
    assert metadata["gain"] == 0.2
    assert "created_at" in metadata
