"""Faraday-rotation polarimeter channel: independent precession readout.

The polarimeter signal is modeled phenomenologically as a decaying
sinusoid at the Larmor frequency; extraction fits that model after
locating the spectral peak, giving a second field measurement to check
the stripe technique against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ensemble import ConfigError
from .fitting import FitResult, levenberg_marquardt
from .model import AtomSpecies, FieldVector


@dataclass
class FaradayTrace:
    times: np.ndarray            # s, strictly increasing
    signal: np.ndarray
    sample_rate: float           # Hz
    omega_larmor: float          # rad/s used in synthesis (0 if unknown)
    amplitude: float
    decay_time: float            # s
    phase: float                 # rad
    offset: float
    noise_sigma: float

    def save_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with open(path, "w") as f:
            f.write("t_seconds,signal\n")
            for t, s in zip(self.times, self.signal):
                f.write(f"{float(t)!r},{float(s)!r}\n")
        return path


def load_trace_csv(path: str | Path, sample_rate: float | None = None) -> FaradayTrace:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    times = data[:, 0]
    rate = sample_rate or (1.0 / float(np.median(np.diff(times))))
    return FaradayTrace(
        times=times, signal=data[:, 1], sample_rate=rate,
        omega_larmor=0.0, amplitude=0.0, decay_time=0.0, phase=0.0,
        offset=0.0, noise_sigma=0.0,
    )


def synthesize_trace(
    b: FieldVector,
    species: AtomSpecies,
    amplitude: float = 1.0,
    decay_time: float = 2e-3,
    phase: float = 0.0,
    offset: float = 0.0,
    sample_rate: float = 2e6,
    duration: float = 5e-3,
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> FaradayTrace:
    """signal(t) = A exp(-t/tau) sin(omega_L t + phi) + offset (+ noise)."""
    if decay_time <= 0:
        raise ConfigError(f"faraday.decay_time must be > 0, got {decay_time}")
    if duration <= 0:
        raise ConfigError(f"faraday.duration must be > 0, got {duration}")
    omega = species.gyromag * b.magnitude
    if sample_rate <= 2.0 * omega / (2.0 * math.pi):
        raise ConfigError(
            f"faraday.sample_rate {sample_rate} Hz violates Nyquist for "
            f"precession at {omega / (2.0 * math.pi):.3g} Hz"
        )
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    signal = amplitude * np.exp(-t / decay_time) * np.sin(omega * t + phase) + offset
    if noise_sigma > 0:
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        signal = signal + rng.normal(0.0, noise_sigma, size=n)
    return FaradayTrace(
        times=t, signal=signal, sample_rate=sample_rate, omega_larmor=omega,
        amplitude=amplitude, decay_time=decay_time, phase=phase, offset=offset,
        noise_sigma=noise_sigma,
    )


@dataclass
class PrecessionFit:
    status: str                  # ok | no-precession
    omega: float                 # rad/s
    omega_err: float
    amplitude: float
    decay_time: float
    phase: float
    offset: float
    fit: FitResult | None = None

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "omega_rad_s": self.omega,
            "omega_err_rad_s": self.omega_err,
            "frequency_hz": self.omega / (2.0 * math.pi),
            "amplitude": self.amplitude,
            "decay_time_s": self.decay_time,
            "phase_rad": self.phase,
            "offset": self.offset,
        }


def spectrum_peak(trace: FaradayTrace) -> tuple[float, float]:
    """(omega_peak, peak-to-floor ratio) of the mean-removed magnitude spectrum."""
    y = trace.signal - np.mean(trace.signal)
    mag = np.abs(np.fft.rfft(y))
    freqs = np.fft.rfftfreq(len(y), d=1.0 / trace.sample_rate)
    mag[0] = 0.0
    k = int(np.argmax(mag))
    floor = float(np.median(mag[1:])) or 1e-300
    return 2.0 * math.pi * float(freqs[k]), float(mag[k]) / floor


def extract_frequency(trace: FaradayTrace, peak_floor_ratio: float = 5.0) -> PrecessionFit:
    """Fit the decaying sinusoid, initialized from the spectral peak.

    Returns a "no-precession" result when no spectral line stands above
    the noise floor (e.g. zero field).
    """
    t = trace.times
    y = trace.signal
    omega0, ratio = spectrum_peak(trace)
    if ratio < peak_floor_ratio or omega0 <= 0.0:
        return PrecessionFit(
            status="no-precession", omega=0.0, omega_err=float("inf"),
            amplitude=0.0, decay_time=0.0, phase=0.0, offset=float(np.mean(y)),
        )

    span = t[-1] - t[0]
    amp0 = float(np.sqrt(2.0) * np.std(y - np.mean(y)))
    # in-phase/quadrature projection at omega0 for the phase guess
    s_proj = float(np.sum((y - np.mean(y)) * np.sin(omega0 * t)))
    c_proj = float(np.sum((y - np.mean(y)) * np.cos(omega0 * t)))
    phi0 = math.atan2(c_proj, s_proj)
    p0 = [amp0, max(span, 1e-6), phi0, float(np.mean(y)), omega0]

    def parts(p):
        a, tau, phi, off, w = p[0], abs(p[1]), p[2], p[3], p[4]
        env = np.exp(-t / tau)
        arg = w * t + phi
        return a, tau, phi, off, w, env, np.sin(arg), np.cos(arg)

    def resid(p):
        a, tau, phi, off, w, env, s, c = parts(p)
        return a * env * s + off - y

    def jac(p):
        a, tau, phi, off, w, env, s, c = parts(p)
        d_a = env * s
        d_tau = a * env * s * t / tau**2 * np.sign(p[1])
        d_phi = a * env * c
        d_off = np.ones_like(t)
        d_w = a * env * c * t
        return np.column_stack([d_a, d_tau, d_phi, d_off, d_w])

    res = levenberg_marquardt(resid, jac, p0)
    a, tau, phi, off, w = res.params[0], abs(res.params[1]), res.params[2], res.params[3], res.params[4]
    if a < 0:  # fold the sign ambiguity into the phase
        a, phi = -a, phi + math.pi
    return PrecessionFit(
        status="ok",
        omega=abs(w),
        omega_err=float(res.param_errors[4]),
        amplitude=a,
        decay_time=tau,
        phase=math.remainder(phi, 2.0 * math.pi),
        offset=off,
        fit=res,
    )
