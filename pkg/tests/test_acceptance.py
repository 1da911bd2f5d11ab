"""Acceptance suite: every release criterion at its stated tolerance.

Run with `pytest tests/test_acceptance.py -v -s` to see one PASS/FAIL line
per criterion.  All runs are seeded and deterministic.
"""

import json
import math
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy.linalg import expm

from stripemag.analysis import (
    calibrate_with_sidebands,
    fit_pair_with_template,
    noise_sigma,
    separation_to_field,
    smooth,
)
from stripemag.cli import main as cli_main
from stripemag.config import ExperimentConfig
from stripemag.ensemble import EnsembleConfig
from stripemag.faraday import extract_frequency, synthesize_trace
from stripemag.imaging import Frame, cross_section
from stripemag.model import RB85, FieldVector, field_at
from stripemag.pipeline import (
    auto_null,
    averaged_difference_profile,
    measure_field,
    run_calibration,
    scan_axis,
    simulate_pair,
    timing_sweep,
)
from stripemag.raman import transfer_probability

TWO_PI = 2.0 * math.pi


def report(num: int, name: str, ok: bool, detail: str) -> None:
    print(f"\nACCEPTANCE {num} [{name}]: {'PASS' if ok else 'FAIL'} ({detail})")


def base_config() -> ExperimentConfig:
    return ExperimentConfig()


@pytest.fixture(scope="module")
def calibration():
    return run_calibration(base_config(), atom_count=2_000_000, n_runs=3)


@pytest.fixture(scope="module")
def scan_b120():
    """10-point z scan straddling I0 with B_perp = 120 mG (shared by 2 and 7)."""
    cfg = base_config()
    cfg = replace(
        cfg,
        ensemble=EnsembleConfig(atom_count=200_000),
        seed=777,
        coils=replace(cfg.coils, current=(0.0, 0.0, 0.2431), background=(0.0, 0.12, 0.0)),
    )
    currents = np.linspace(0.2431 - 0.12, 0.2431 + 0.12, 10)
    return scan_axis(cfg, "z", currents, n_shots=10)


def test_criterion_1_field_round_trip(calibration):
    """Sub-mG recovery across [20 mG, 1 G], B perpendicular to the beam."""
    cfg0 = base_config()
    gam = cfg0.species.gyromag
    fields_mg = [20, 40, 60, 85, 110, 140, 170, 200, 230, 260, 290,
                 340, 400, 470, 550, 640, 730, 820, 910, 1000]
    assert len(fields_mg) == 20
    failures = []
    max_abs_low = 0.0
    max_rel_high = 0.0
    max_wall = 0.0
    for b_mg in fields_mg:
        bz = b_mg * 1e-3
        iz = cfg0.coils.i_comp[2] + bz / cfg0.coils.alpha[2]
        cfg = replace(
            cfg0,
            coils=cfg0.coils.with_current((0.0, 0.0, iz)),
            seed=300_000 + b_mg,
            ensemble=replace(cfg0.ensemble, atom_count=200_000),
        )
        if b_mg <= 130:
            n_shots = 30
        elif b_mg <= 360:
            n_shots = 18
        elif b_mg <= 510:
            n_shots = 10
        else:
            n_shots = 6
        t0 = time.perf_counter()
        m = measure_field(cfg, calibration=calibration, omega_hint=gam * bz, n_shots=n_shots)
        wall = time.perf_counter() - t0
        max_wall = max(max_wall, wall)
        err = m.b_gauss - bz
        if b_mg <= 300:
            max_abs_low = max(max_abs_low, abs(err))
            if abs(err) > 0.5e-3:
                failures.append(f"{b_mg} mG: {err * 1e3:+.3f} mG")
        else:
            rel = abs(err) / bz
            max_rel_high = max(max_rel_high, rel)
            if rel > 0.01:
                failures.append(f"{b_mg} mG: {rel * 100:+.2f}%")
        if wall > 10.0:
            failures.append(f"{b_mg} mG: runtime {wall:.1f} s")
    ok = not failures
    report(1, "field round trip", ok,
           f"max abs err <=300 mG: {max_abs_low * 1e3:.3f} mG (<=0.5); "
           f"max rel err >300 mG: {max_rel_high * 100:.3f}% (<=1); "
           f"max runtime {max_wall:.1f} s (<=10)")
    assert ok, "; ".join(failures)


def test_criterion_2_hyperbola_scan(scan_b120):
    """Coil slope and compensation current from a 10-point scan."""
    fit1 = scan_b120.fit
    assert fit1 is not None

    cfg = base_config()
    cfg = replace(
        cfg,
        ensemble=EnsembleConfig(atom_count=200_000),
        seed=777,
        coils=replace(cfg.coils, current=(0.0, 0.0, 0.2431), background=(0.0, 0.24, 0.0)),
    )
    currents = np.linspace(0.2431 - 0.12, 0.2431 + 0.12, 10)
    fit2 = scan_axis(cfg, "z", currents, n_shots=10).fit
    assert fit2 is not None

    alpha_rel = abs(fit1.alpha - 1.524) / 1.524
    i0_abs = abs(fit1.i_comp - 0.2431)
    shift = abs(fit1.i_comp - fit2.i_comp)
    ok = alpha_rel <= 5e-3 and i0_abs <= 0.5e-3 and shift < 0.2e-3
    report(2, "hyperbola scan", ok,
           f"alpha err {alpha_rel * 100:.3f}% (<=0.5); I0 err {i0_abs * 1e3:.3f} mA (<=0.5); "
           f"I0 shift on doubling B_perp {shift * 1e3:.3f} mA (<0.2)")
    assert ok


def test_criterion_3_timing_contrast():
    """Contrast peaks at T_r = T_i/2; lobe splitting recovered at T_i/4."""
    cfg = base_config()
    cfg = replace(
        cfg,
        ensemble=EnsembleConfig(atom_count=400_000, position_sigma=60e-6),
        seed=2024,
        coils=replace(cfg.coils, current=cfg.coils.i_comp),
        pulse=replace(cfg.pulse, rabi_freq=TWO_PI * 2500.0, duration=200e-6),
    )
    t_i = cfg.imaging.image_time
    fracs = [0.2, 0.3, 0.4, 0.5, 0.6, 0.7]
    points = timing_sweep(cfg, [f * t_i for f in fracs])
    contrasts = [p.contrast for p in points]
    k_peak = contrasts.index(max(contrasts))
    monotone = all(contrasts[i] < contrasts[i + 1] for i in range(k_peak)) and all(
        contrasts[i] > contrasts[i + 1] for i in range(k_peak, len(contrasts) - 1)
    )
    peak_at_half = fracs[k_peak] == 0.5

    quarter = timing_sweep(cfg, [0.25 * t_i], float_splitting=True)[0]
    want = 4.0 * RB85.recoil_velocity * abs(0.25 * t_i - 0.5 * t_i)
    got = quarter.timing_fit.positive_lobe_splitting
    split_rel = abs(got - want) / want

    ok = peak_at_half and monotone and split_rel <= 0.05
    report(3, "timing contrast", ok,
           f"contrast max at {fracs[k_peak]:.1f} T_i, monotone={monotone}, "
           f"splitting {got * 1e6:.1f} um vs {want * 1e6:.1f} um ({split_rel * 100:+.2f}%, <=5%)")
    assert ok, contrasts


def test_criterion_4_rabi_oracle():
    """Closed-form transfer probability versus the two-level propagator."""
    omega = 1.0
    worst = 0.0
    for ratio in np.linspace(0.0, 20.0, 21):
        delta = ratio * omega
        h = 0.5 * np.array([[delta, omega], [omega, -delta]], dtype=complex)
        for area in np.linspace(0.0, 4.0 * math.pi, 17):
            t = area / omega
            u = expm(-1j * h * t)
            p_ref = float(np.abs((u @ np.array([0.0, 1.0], dtype=complex))[0]) ** 2)
            p = transfer_probability(delta, omega, t)
            worst = max(worst, abs(p - p_ref))
    ok = worst <= 1e-6
    report(4, "Rabi oracle", ok, f"max |closed form - propagator| = {worst:.2e} (<=1e-6)")
    assert ok


def _central_marker(cos2: float, seed: int) -> tuple[float, float]:
    b_mag = 0.250
    bx = b_mag * math.sqrt(cos2)
    bz = b_mag * math.sqrt(1.0 - cos2)
    cfg = base_config()
    cfg = replace(
        cfg,
        ensemble=EnsembleConfig(atom_count=200_000),
        seed=seed,
        coils=replace(cfg.coils, current=cfg.coils.i_comp, background=(bx, 0.0, bz)),
    )
    sim = simulate_pair(cfg)
    prof = sim.profile_diff
    sm = smooth(prof.counts, 5)
    floor = noise_sigma(prof.counts) / math.sqrt(5)
    central = float(np.max(sm[np.abs(prof.x) < 0.5e-3]))
    return central, floor


def test_criterion_5_central_marker():
    """The v = 0 stripe appears with a longitudinal field component only."""
    amp_long, floor_long = _central_marker(0.2, seed=31)
    amp_perp, floor_perp = _central_marker(0.0, seed=31)
    ratio_long = amp_long / floor_long
    ratio_perp = amp_perp / floor_perp
    ok = ratio_long > 5.0 and ratio_perp < 2.0
    report(5, "central stripe marker", ok,
           f"cos^2=0.2: amplitude/floor = {ratio_long:.1f} (>5); "
           f"B perp: {ratio_perp:.1f} (<2)")
    assert ok


def _scaled(frame: Frame, factor: float) -> Frame:
    return Frame(
        counts=frame.counts,
        pixel_size=frame.pixel_size * factor,
        center=(frame.center[0] * factor, frame.center[1] * factor),
        metadata=dict(frame.metadata),
    )


def test_criterion_6_calibration_closure():
    """A corrupted pixel scale drops out of sideband-calibrated estimates."""
    cfg0 = base_config()
    # comb exposure at the compensation point
    cal_cfg = replace(
        cfg0,
        coils=replace(cfg0.coils, current=cfg0.coils.i_comp),
        pulse=replace(cfg0.pulse, sidebands=((-2, 1.0), (0, 1.0), (2, 1.0)), delta12=0.0),
        ensemble=replace(cfg0.ensemble, atom_count=1_000_000),
        seed=606,
    )
    comb = simulate_pair(cal_cfg).frame_diff
    # measurement exposure at 214.3 mG
    bz = 0.2143
    mcfg = replace(
        cfg0,
        coils=cfg0.coils.with_current((0.0, 0.0, cfg0.coils.i_comp[2] + bz / 1.524)),
        ensemble=replace(cfg0.ensemble, atom_count=600_000),
        seed=607,
    )
    meas = simulate_pair(mcfg).frame_diff

    def recover(scale: float) -> float:
        cal = calibrate_with_sidebands(
            cross_section(_scaled(comb, scale)),
            cfg0.pulse.modulation_freq, cfg0.t_map(), cfg0.species,
            line_orders=(-2, 0, 2),
        )
        s_init = cfg0.species.gyromag * bz * cfg0.t_map() / cfg0.species.wavenumber * scale
        pair = fit_pair_with_template(
            cross_section(_scaled(meas, scale)), cal, separation_init=s_init
        )
        _, b = separation_to_field(pair.separation, cfg0.t_map(), cfg0.species, calibration=cal)
        return b

    b_clean = recover(1.0)
    b_corrupt = recover(1.05)
    rel = abs(b_corrupt - b_clean) / b_clean
    ok = rel <= 0.002
    report(6, "sideband calibration closure", ok,
           f"|B| with +5% pixel-scale corruption differs by {rel * 100:.4f}% (<=0.2%)")
    assert ok


def test_criterion_7_faraday_cross_method(scan_b120):
    """Stripe-scan and Faraday-scan coil slopes agree; precision extraction."""
    alpha_stripe = scan_b120.fit.alpha

    cfg = base_config()
    currents = np.linspace(0.2431 - 0.12, 0.2431 + 0.12, 10)
    points = []
    for k, cur in enumerate(currents):
        coils = replace(cfg.coils, current=(0.0, 0.0, float(cur)),
                        background=(0.0, 0.12, 0.0))
        trace = synthesize_trace(
            field_at(coils), cfg.species, noise_sigma=0.05, duration=5e-3, seed=900 + k,
        )
        fit = extract_frequency(trace)
        points.append((float(cur), fit.omega, max(fit.omega_err, 1e-9)))
    from stripemag.analysis import fit_hyperbola

    far = fit_hyperbola([p[0] for p in points], [p[1] for p in points], cfg.species,
                        sigmas=[p[2] for p in points])
    method_rel = abs(alpha_stripe - far.alpha) / far.alpha

    # precision: SNR 10, 50 periods
    b = FieldVector(0, 0, 0.2143)
    omega_true = cfg.species.gyromag * b.magnitude
    duration = 50.0 * TWO_PI / omega_true
    worst = 0.0
    for seed in range(6):
        trace = synthesize_trace(b, cfg.species, noise_sigma=0.1, duration=duration, seed=seed)
        fit = extract_frequency(trace)
        worst = max(worst, abs(fit.omega - omega_true) / omega_true)

    ok = method_rel <= 0.02 and worst <= 1e-3
    report(7, "Faraday cross-method", ok,
           f"alpha: stripes {alpha_stripe:.4f} vs Faraday {far.alpha:.4f} G/A "
           f"({method_rel * 100:.3f}%, <=2%); worst frequency error at SNR 10, "
           f"50 periods: {worst * 100:.4f}% (<=0.1%)")
    assert ok


def test_criterion_8_conservation_and_determinism(tmp_path):
    """Difference frames sum to zero; identical runs are byte-identical."""
    # containment config: the whole cloud stays inside the frame
    worst_rel = 0.0
    for seed in range(1, 6):
        cfg = base_config()
        cfg = replace(
            cfg,
            ensemble=EnsembleConfig(atom_count=200_000, temperature=50e-6),
            imaging=replace(cfg.imaging, pixel_size=96e-6),
            seed=seed,
        )
        sim = simulate_pair(cfg)
        assert sim.frame_on.metadata["outside_count"] == 0
        total = cfg.ensemble.atom_count * cfg.imaging.photon_scale
        worst_rel = max(worst_rel, abs(sim.frame_diff.counts.sum()) / total)

    cfg_text = (
        "ensemble.atom_count = 50000\nensemble.temperature_k = 5e-5\n"
        "imaging.pixel_size_m = 96e-6\nseed = 99\n"
    )
    cfg_path = tmp_path / "det.cfg"
    cfg_path.write_text(cfg_text)
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert cli_main(["simulate", "--config", str(cfg_path), "--out", str(out1)]) == 0
    assert cli_main(["simulate", "--config", str(cfg_path), "--out", str(out2)]) == 0
    identical = all(
        (out1 / name).read_bytes() == (out2 / name).read_bytes()
        for name in ("stripes.json", "manifest.json", "frame_diff.csv")
    )

    ok = worst_rel <= 1e-9 and identical
    report(8, "conservation and determinism", ok,
           f"worst |sum(diff)|/total = {worst_rel:.2e} (<=1e-9); "
           f"byte-identical rerun: {identical}")
    assert ok


def test_criterion_9_automated_nulling():
    """`null` walks 100 mA offsets back to the stored compensation currents."""
    cfg = base_config()
    start = tuple(i + 0.1 for i in cfg.coils.i_comp)
    cfg = replace(cfg, seed=42, coils=cfg.coils.with_current(start))
    result = auto_null(cfg, sweeps=3)
    errs = [abs(g - w) for g, w in zip(result.final_currents, cfg.coils.i_comp)]
    ok = all(e <= 2e-3 for e in errs)
    report(9, "automated nulling", ok,
           "per-axis error " + ", ".join(f"{e * 1e3:.2f}" for e in errs) + " mA (<=2)")
    assert ok
