import json
import math
from pathlib import Path

import numpy as np
import pytest

from stripemag.cli import main

FAST_CFG = """
ensemble.atom_count = 30000
seed = 4242
"""


@pytest.fixture()
def fast_config(tmp_path):
    path = tmp_path / "fast.cfg"
    path.write_text(FAST_CFG)
    return path


def test_simulate_writes_run_directory(tmp_path, fast_config):
    out = tmp_path / "run"
    rc = main(["simulate", "--config", str(fast_config), "--out", str(out)])
    assert rc == 0
    for name in ("manifest.json", "config.normalized.txt", "frame_on.pgm",
                 "frame_diff.csv", "profile_diff.csv", "stripes.json"):
        assert (out / name).exists(), name
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    assert manifest["seed"] == 4242
    stripes = json.loads((out / "stripes.json").read_text())
    assert stripes["status"] in ("resolved", "unresolved")


def test_simulate_reproducible_json(tmp_path, fast_config):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", str(fast_config), "--out", str(out1)]) == 0
    assert main(["simulate", "--config", str(fast_config), "--out", str(out2)]) == 0
    for name in ("stripes.json", "manifest.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_simulate_zero_rabi_zero_difference(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("ensemble.atom_count = 5000\npulse.rabi_freq_hz = 0\n")
    out = tmp_path / "run"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    counts = np.loadtxt(out / "frame_diff.csv", delimiter=",")
    assert np.all(counts == 0.0)


def test_fit_consumes_simulate_output(tmp_path, fast_config):
    sim_out = tmp_path / "sim"
    assert main(["simulate", "--config", str(fast_config), "--out", str(sim_out)]) == 0
    fit_out = tmp_path / "fit"
    rc = main(["fit", "--config", str(fast_config), "--out", str(fit_out),
               str(sim_out / "frame_diff.csv")])
    assert rc == 0
    results = json.loads((fit_out / "stripes.json").read_text())
    assert "frame_diff.csv" in results


def test_fit_batch_directory(tmp_path, fast_config):
    sim_out = tmp_path / "sim"
    main(["simulate", "--config", str(fast_config), "--out", str(sim_out)])
    fit_out = tmp_path / "fit"
    rc = main(["fit", "--config", str(fast_config), "--out", str(fit_out), str(sim_out)])
    assert rc == 0
    results = json.loads((fit_out / "stripes.json").read_text())
    assert len(results) >= 1


def test_scan_recovers_slope(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("ensemble.atom_count = 60000\nseed = 31\n"
                   "coils.background_g = 0.0, 0.1, 0.0\n"
                   "coils.current_a = 0.0, 0.0, 0.2431\n")
    out = tmp_path / "scan"
    rc = main(["scan", "--config", str(cfg), "--out", str(out), "--axis", "z",
               "--scan-from", "0.15", "--scan-to", "0.34", "--scan-steps", "6"])
    assert rc == 0
    result = json.loads((out / "scan.json").read_text())
    assert result["fit"]["alpha_g_per_a"] == pytest.approx(1.524, rel=0.05)
    assert result["fit"]["i_comp_a"] == pytest.approx(0.2431, abs=3e-3)


def test_faraday_runs_and_reports_frequency(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("coils.current_a = 0.0, 0.0, 0.330\n")
    out = tmp_path / "faraday"
    rc = main(["faraday", "--config", str(cfg), "--out", str(out)])
    assert rc == 0
    res = json.loads((out / "faraday.json").read_text())
    assert res["status"] == "ok"
    # 0.13244 G configured -> 61.8 kHz
    assert res["frequency_hz"] == pytest.approx(61813, rel=1e-4)
    assert (out / "trace.csv").exists()


def test_calibrate_writes_factor(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("ensemble.atom_count = 150000\nseed = 8\n")
    out = tmp_path / "cal"
    rc = main(["calibrate", "--config", str(cfg), "--out", str(out),
               "--cal-atoms", "200000", "--runs", "1"])
    assert rc == 0
    cal = json.loads((out / "calibration.json").read_text())
    ideal = 40e-3 / (2 * (2 * math.pi / 780.24e-9))
    assert cal["meters_per_rad_per_s"] == pytest.approx(ideal, rel=0.02)


def test_timing_sweep_outputs_curve(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(
        "ensemble.atom_count = 40000\nseed = 6\n"
        "coils.current_a = 0.0, 0.0, 0.2431\n"
        "pulse.rabi_freq_hz = 2500\npulse.duration_s = 200e-6\n"
    )
    out = tmp_path / "tsweep"
    rc = main(["timing-sweep", "--config", str(cfg), "--out", str(out),
               "--tr-list", "0.012,0.02,0.028"])
    assert rc == 0
    curve = json.loads((out / "timing.json").read_text())
    assert len(curve) == 3
    contrasts = [p["contrast"] for p in curve]
    assert contrasts[1] == max(contrasts)


def test_config_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("pulse.start_time_s = 0.050\n")
    rc = main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "x")])
    assert rc == 2
    assert "configuration error" in capsys.readouterr().err


def test_bad_currents_flag(tmp_path):
    rc = main(["simulate", "--currents", "1,2", "--out", str(tmp_path / "x")])
    assert rc == 2
