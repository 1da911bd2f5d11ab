import math
from dataclasses import replace

import numpy as np
import pytest

from stripemag.config import ExperimentConfig
from stripemag.ensemble import ConfigError, Ensemble, EnsembleConfig, sample_ensemble
from stripemag.imaging import (
    Frame,
    ImagingConfig,
    cross_section,
    difference_frame,
    load_frame_csv,
    load_pgm,
    load_profile_csv,
    propagate,
    run_sequence,
    save_frame_csv,
    save_pgm,
    save_profile_csv,
)
from stripemag.model import RB85, CoilModel
from stripemag.pipeline import simulate_pair
from stripemag.raman import PulseConfig


def still_atom(x=0.0, v=0.0):
    return Ensemble(
        positions=np.array([[x, 0.0, 0.0]]),
        velocities=np.array([[v, 0.0, 0.0]]),
        channel=np.zeros(1, dtype=np.int8),
        flipped_population=np.zeros(1),
    )


class TestPropagate:
    def test_zero_interval_is_identity(self):
        ens = still_atom(x=1e-3, v=0.039)
        propagate(ens, 0.0, 0.0, (0, 0, -9.81))
        assert ens.positions[0, 0] == 1e-3
        assert ens.velocities[0, 0] == 0.039

    def test_drift(self):
        ens = still_atom(v=0.039)
        propagate(ens, 0.0, 40e-3, (0, 0, 0))
        assert ens.positions[0, 0] == pytest.approx(1.56e-3, rel=1e-12)

    def test_free_fall(self):
        ens = still_atom()
        propagate(ens, 0.0, 40e-3, (0, 0, -9.81))
        assert ens.positions[0, 2] == pytest.approx(-7.848e-3, rel=1e-12)
        assert ens.velocities[0, 2] == pytest.approx(-9.81 * 40e-3, rel=1e-12)

    def test_backwards_time_rejected(self):
        with pytest.raises(ValueError):
            propagate(still_atom(), 1e-3, 0.0, (0, 0, 0))


def small_cfg(**overrides):
    cfg = ExperimentConfig()
    cfg = replace(
        cfg,
        ensemble=EnsembleConfig(atom_count=20_000, temperature=50e-6, rng_seed=321),
        imaging=replace(cfg.imaging, extent=(256, 256), pixel_size=96e-6),
    )
    return replace(cfg, **overrides)


class TestRunSequence:
    def test_atom_number_conserved(self):
        cfg = small_cfg()
        sim = simulate_pair(cfg)
        assert sim.frame_on.metadata["outside_count"] == 0
        total = sim.frame_on.counts.sum()
        assert total == pytest.approx(
            cfg.ensemble.atom_count * cfg.imaging.photon_scale, rel=1e-12
        )

    def test_difference_frame_sums_to_zero(self):
        sim = simulate_pair(small_cfg())
        assert sim.frame_diff.counts.sum() == pytest.approx(0.0, abs=1e-9)

    def test_zero_rabi_equals_pulse_off_bitwise(self):
        cfg = small_cfg()
        cfg = replace(cfg, pulse=replace(cfg.pulse, rabi_freq=0.0))
        sim = simulate_pair(cfg)
        assert np.array_equal(sim.frame_on.counts, sim.frame_off.counts)

    def test_photon_scale_linearity(self):
        cfg = small_cfg()
        sim1 = simulate_pair(cfg)
        cfg2 = replace(cfg, imaging=replace(cfg.imaging, photon_scale=20.0))
        sim2 = simulate_pair(cfg2)
        assert np.allclose(sim2.frame_on.counts, 2.0 * sim1.frame_on.counts)

    def test_field_ignored_with_pulse_off(self):
        cfg = small_cfg()
        a = simulate_pair(cfg).frame_off
        cfg2 = replace(cfg, coils=cfg.coils.with_current((0.05, 0.1, 0.9)))
        b = simulate_pair(cfg2).frame_off
        assert np.array_equal(a.counts, b.counts)

    def test_stripe_pattern_invariant_under_field_reversal(self):
        cfg = small_cfg()
        cfg = replace(cfg, coils=replace(
            cfg.coils, current=cfg.coils.i_comp, background=(0.02, 0.0, 0.08)))
        a = simulate_pair(cfg).frame_diff
        flipped = replace(cfg, coils=replace(
            cfg.coils, current=cfg.coils.i_comp, background=(-0.02, 0.0, -0.08)))
        b = simulate_pair(flipped).frame_diff
        assert np.array_equal(a.counts, b.counts)

    def test_pulse_past_imaging_time_rejected(self):
        cfg = small_cfg()
        bad = replace(cfg, pulse=replace(cfg.pulse, start_time=39e-3, duration=5e-3))
        with pytest.raises(ConfigError):
            run_sequence(
                sample_ensemble(bad.ensemble, bad.species),
                bad.coils, bad.pulse, bad.imaging, bad.species,
            )

    def test_poisson_noise_changes_counts(self):
        cfg = small_cfg()
        noisy = replace(cfg, imaging=replace(cfg.imaging, noise="poisson"))
        sim_n = simulate_pair(noisy)
        sim_c = simulate_pair(cfg)
        assert not np.array_equal(sim_n.frame_on.counts, sim_c.frame_on.counts)
        # noise draws differ between the on and off exposures
        assert not np.array_equal(sim_n.frame_on.counts, sim_n.frame_off.counts)

    def test_recoil_separation_resolved_at_zero_temperature(self):
        # point cloud at T = 0: after long enough flight the kicked and
        # unkicked momentum classes separate by >= 2 sigma in the image
        cfg = ExperimentConfig()
        cfg = replace(
            cfg,
            ensemble=EnsembleConfig(atom_count=50_000, temperature=0.0,
                                    position_sigma=20e-6, rng_seed=5),
            pulse=replace(cfg.pulse, rabi_freq=2 * math.pi * 10e3,
                          duration=50e-6, start_time=1e-3),
            imaging=replace(cfg.imaging, image_time=60e-3, pixel_size=12e-6),
        )
        # T_i >= sigma_position / v_r
        assert cfg.imaging.image_time >= cfg.ensemble.position_sigma / RB85.recoil_velocity
        sim = simulate_pair(cfg)
        prof = sim.profile_diff
        # kicked atoms landed at +-2 v_r (T_i - T_r): two enhancement lobes
        x_lobe = 2 * RB85.recoil_velocity * (cfg.imaging.image_time - cfg.pulse.start_time)
        sigma_img = cfg.ensemble.position_sigma
        sel_pos = np.abs(prof.x - x_lobe) < 4 * sigma_img
        sel_neg = np.abs(prof.x + x_lobe) < 4 * sigma_img
        assert prof.counts[sel_pos].max() > 0
        assert prof.counts[sel_neg].max() > 0
        assert 2 * x_lobe > 2 * sigma_img


class TestFrames:
    def test_difference_requires_same_geometry(self):
        a = Frame(np.zeros((16, 16)), 1e-5, (0.0, 0.0))
        b = Frame(np.zeros((16, 16)), 2e-5, (0.0, 0.0))
        with pytest.raises(ValueError):
            difference_frame(a, b)

    def test_self_difference_is_zero(self):
        sim = simulate_pair(small_cfg())
        d = difference_frame(sim.frame_on, sim.frame_on)
        assert np.all(d.counts == 0.0)

    def test_cross_section_sums_rows(self):
        counts = np.arange(12.0).reshape(3, 4)
        f = Frame(counts, 1e-5, (0.0, 0.0))
        p = cross_section(f)
        assert p.counts == pytest.approx(counts.sum(axis=0))
        p2 = cross_section(f, band=(1, 2))
        assert p2.counts == pytest.approx(counts[1])

    def test_cross_section_empty_band_rejected(self):
        f = Frame(np.zeros((8, 8)), 1e-5, (0.0, 0.0))
        with pytest.raises(ValueError):
            cross_section(f, band=(3, 3))

    def test_single_atom_single_column(self):
        ens = still_atom(x=0.0)
        cfg = ImagingConfig(extent=(32, 32), pixel_size=1e-4, center=(0.0, 0.0))
        coils = CoilModel((1.0,) * 3, (0.0,) * 3, (0.0,) * 3)
        frame = run_sequence(
            ens, coils, PulseConfig(rabi_freq=0.0, duration=0.0, start_time=1e-3),
            replace(cfg, image_time=2e-3, gravity=(0.0, 0.0, 0.0)), RB85,
        )
        prof = cross_section(frame)
        assert np.count_nonzero(prof.counts) == 1

    def test_x_coords_center_and_spacing(self):
        f = Frame(np.zeros((8, 8)), 2e-5, (1e-3, 0.0))
        x = f.x_coords()
        assert np.diff(x) == pytest.approx(np.full(7, 2e-5))
        assert x.mean() == pytest.approx(1e-3)


class TestSerialization:
    def test_pgm_round_trip(self, tmp_path):
        sim = simulate_pair(small_cfg())
        path = save_pgm(sim.frame_on, tmp_path / "on.pgm")
        assert path.with_suffix(".pgm.json").exists()
        back = load_pgm(path)
        assert back.counts.shape == sim.frame_on.counts.shape
        assert back.pixel_size == sim.frame_on.pixel_size
        # quantized to 16 bits of the dynamic range
        span = sim.frame_on.counts.max() - sim.frame_on.counts.min()
        assert np.max(np.abs(back.counts - sim.frame_on.counts)) <= span / 65535.0

    def test_csv_round_trip_lossless(self, tmp_path):
        sim = simulate_pair(small_cfg())
        path = save_frame_csv(sim.frame_diff, tmp_path / "diff.csv")
        back = load_frame_csv(path)
        assert np.array_equal(back.counts, sim.frame_diff.counts)

    def test_profile_csv_round_trip(self, tmp_path):
        sim = simulate_pair(small_cfg())
        prof = sim.profile_diff
        path = save_profile_csv(prof, tmp_path / "prof.csv")
        back = load_profile_csv(path)
        assert np.array_equal(back.x, prof.x)
        assert np.array_equal(back.counts, prof.counts)
