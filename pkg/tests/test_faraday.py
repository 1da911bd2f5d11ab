import math

import numpy as np
import pytest

from stripemag.ensemble import ConfigError
from stripemag.faraday import (
    FaradayTrace,
    extract_frequency,
    load_trace_csv,
    spectrum_peak,
    synthesize_trace,
)
from stripemag.model import RB85, FieldVector

TWO_PI = 2.0 * math.pi


def test_zero_field_constant_signal():
    trace = synthesize_trace(FieldVector(0, 0, 0), RB85, offset=0.3)
    assert np.all(trace.signal == 0.3)


def test_oscillation_frequency_follows_field():
    # 214.3 mG -> very nearly 100 kHz
    trace = synthesize_trace(FieldVector(0, 0, 0.2143), RB85)
    assert trace.omega_larmor == pytest.approx(RB85.gyromag * 0.2143, rel=1e-12)
    assert trace.omega_larmor / TWO_PI == pytest.approx(100e3, rel=5e-4)


def test_amplitude_linearity():
    b = FieldVector(0, 0, 0.1)
    t1 = synthesize_trace(b, RB85, amplitude=1.0, offset=0.5)
    t2 = synthesize_trace(b, RB85, amplitude=2.0, offset=0.5)
    assert np.allclose(t2.signal - 0.5, 2.0 * (t1.signal - 0.5))


def test_nyquist_violation_rejected():
    with pytest.raises(ConfigError):
        synthesize_trace(FieldVector(0, 0, 3.0), RB85, sample_rate=2e6)


def test_deterministic_noise():
    b = FieldVector(0, 0, 0.1)
    t1 = synthesize_trace(b, RB85, noise_sigma=0.1, seed=5)
    t2 = synthesize_trace(b, RB85, noise_sigma=0.1, seed=5)
    assert np.array_equal(t1.signal, t2.signal)


def test_noiseless_extraction_exact():
    b = FieldVector(0, 0, 0.2143)
    trace = synthesize_trace(b, RB85, phase=0.7, offset=0.2)
    fit = extract_frequency(trace)
    assert fit.status == "ok"
    assert fit.omega == pytest.approx(trace.omega_larmor, rel=1e-6)
    assert fit.offset == pytest.approx(0.2, abs=1e-6)


def test_extraction_invariant_under_phase_and_offset():
    b = FieldVector(0, 0, 0.15)
    omegas = []
    for phase, offset in ((0.0, 0.0), (1.2, 0.5), (-2.0, -3.0)):
        trace = synthesize_trace(b, RB85, phase=phase, offset=offset,
                                 noise_sigma=0.02, seed=9)
        omegas.append(extract_frequency(trace).omega)
    assert max(omegas) - min(omegas) < 1e-3 * omegas[0]


def test_snr10_fifty_periods_within_tenth_percent():
    # SNR 10 (amplitude / noise), 50 oscillation periods
    b = FieldVector(0, 0, 0.2143)
    omega = RB85.gyromag * b.magnitude
    duration = 50 * TWO_PI / omega
    for seed in range(5):
        trace = synthesize_trace(b, RB85, noise_sigma=0.1, duration=duration, seed=seed)
        fit = extract_frequency(trace)
        assert fit.status == "ok"
        assert abs(fit.omega - omega) / omega < 1e-3


def test_no_precession_result_on_flat_trace():
    trace = synthesize_trace(FieldVector(0, 0, 0), RB85, noise_sigma=0.05, seed=3)
    fit = extract_frequency(trace)
    assert fit.status == "no-precession"


def test_extraction_across_field_range():
    # round trip over [10 mG, 1 G] at default settings
    for b_gauss in (0.01, 0.05, 0.2, 0.5, 1.0):
        b = FieldVector(0, 0, b_gauss)
        trace = synthesize_trace(b, RB85, sample_rate=4e6)
        fit = extract_frequency(trace)
        omega = RB85.gyromag * b_gauss
        assert fit.omega == pytest.approx(omega, rel=1e-5)


def test_spectrum_peak_locates_line():
    trace = synthesize_trace(FieldVector(0, 0, 0.2143), RB85)
    omega_peak, ratio = spectrum_peak(trace)
    assert ratio > 5
    assert omega_peak == pytest.approx(trace.omega_larmor, rel=0.02)


def test_csv_round_trip(tmp_path):
    trace = synthesize_trace(FieldVector(0, 0, 0.1), RB85, noise_sigma=0.01, seed=1)
    path = trace.save_csv(tmp_path / "trace.csv")
    back = load_trace_csv(path)
    assert np.array_equal(back.times, trace.times)
    assert np.array_equal(back.signal, trace.signal)
    fit_a = extract_frequency(trace)
    fit_b = extract_frequency(back)
    assert fit_a.omega == fit_b.omega
