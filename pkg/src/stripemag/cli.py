"""Command-line interface: seeded simulation runs with file outputs.

Every subcommand writes into a run directory: frames as 16-bit PGM with
JSON sidecars (difference frames also as lossless CSV), profiles as
two-column CSV, results as JSON, plus a machine-readable manifest.  Runs
are reproducible: the same config and seed give byte-identical JSON.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, analysis, pipeline
from .config import ExperimentConfig, config_to_text, load_config
from .ensemble import ConfigError
from .faraday import extract_frequency, load_trace_csv, synthesize_trace
from .fitting import FitFailedError
from .imaging import (
    cross_section,
    load_frame_csv,
    load_pgm,
    save_frame_csv,
    save_pgm,
    save_profile_csv,
)
from .model import field_at, larmor_frequency


def _json_text(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"


def write_json(path: Path, obj) -> Path:
    path.write_text(_json_text(obj))
    return path


def build_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "atoms", None) is not None:
        cfg = replace(cfg, ensemble=replace(cfg.ensemble, atom_count=args.atoms))
    if getattr(args, "currents", None) is not None:
        parts = [float(v) for v in args.currents.split(",")]
        if len(parts) != 3:
            raise ConfigError(f"--currents expects ix,iy,iz in amperes, got {args.currents!r}")
        cfg = replace(cfg, coils=cfg.coils.with_current(tuple(parts)))
    return cfg.validate()


def make_run_dir(args, command: str) -> Path:
    out = Path(args.out) if args.out else Path("runs") / command
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(out: Path, command: str, cfg: ExperimentConfig, outputs: list[str],
                   summary: dict) -> None:
    manifest = {
        "command": command,
        "package_version": __version__,
        "seed": cfg.seed,
        "config": config_to_text(cfg),
        "outputs": sorted(outputs),
        "summary": summary,
    }
    write_json(out / "manifest.json", manifest)


def _save_sim(out: Path, sim, outputs: list[str]) -> None:
    save_pgm(sim.frame_on, out / "frame_on.pgm")
    save_pgm(sim.frame_off, out / "frame_off.pgm")
    save_pgm(sim.frame_diff, out / "frame_diff.pgm")
    save_frame_csv(sim.frame_diff, out / "frame_diff.csv")
    save_profile_csv(sim.profile_diff, out / "profile_diff.csv")
    save_profile_csv(sim.profile_off, out / "profile_off.csv")
    outputs += [
        "frame_on.pgm", "frame_off.pgm", "frame_diff.pgm",
        "frame_diff.csv", "profile_diff.csv", "profile_off.csv",
    ]


def cmd_simulate(args) -> int:
    cfg = build_config(args)
    out = make_run_dir(args, "simulate")
    (out / "config.normalized.txt").write_text(config_to_text(cfg))
    sim = pipeline.simulate_pair(cfg)
    outputs = ["config.normalized.txt", "stripes.json"]
    _save_sim(out, sim, outputs)
    stripes = pipeline.analyze_stripes(cfg, sim)
    write_json(out / "stripes.json", stripes.to_dict())
    b = field_at(cfg.coils)
    write_manifest(out, "simulate", cfg, outputs, {
        "status": stripes.status,
        "b_configured_gauss": b.magnitude,
        "b_estimate_gauss": stripes.b_gauss,
        "atom_count": cfg.ensemble.atom_count,
    })
    print(f"simulate: status={stripes.status} "
          f"B_est={stripes.b_gauss if stripes.b_gauss is not None else 'n/a'} G -> {out}")
    return 0


def cmd_fit(args) -> int:
    cfg = build_config(args)
    out = make_run_dir(args, "fit")
    frames = []
    for src in args.frames:
        path = Path(src)
        if path.is_dir():
            # frames carry geometry sidecars; plain profile CSVs do not
            frames += sorted(p for p in path.glob("*.csv")
                             if p.with_suffix(p.suffix + ".json").exists())
            frames += sorted(p for p in path.glob("*.pgm")
                             if not p.with_suffix(".csv").exists())
        else:
            frames.append(path)
    if not frames:
        print("fit: no input frames found", file=sys.stderr)
        return 2
    results = {}
    failed = False
    for path in frames:
        frame = load_frame_csv(path) if path.suffix == ".csv" else load_pgm(path)
        profile = cross_section(frame)
        t_map = cfg.analysis.t_map_or(frame.metadata.get("t_image", cfg.imaging.image_time))
        try:
            res = analysis.fit_stripes_zero_area(
                profile, cfg.species, t_map,
                threshold_sigma=cfg.analysis.threshold_sigma,
                boxcar=cfg.analysis.boxcar,
            )
            results[path.name] = res.to_dict()
        except FitFailedError as exc:
            results[path.name] = {"status": "failed", "error": str(exc)}
            failed = True
    write_json(out / "stripes.json", results)
    write_manifest(out, "fit", cfg, ["stripes.json"], {
        "frames": len(results),
        "failed": failed,
    })
    for name, res in results.items():
        print(f"fit: {name}: {res['status']}")
    return 1 if failed else 0


def _scan_currents(args) -> np.ndarray:
    return np.linspace(args.scan_from, args.scan_to, args.scan_steps)


def cmd_scan(args) -> int:
    cfg = build_config(args)
    out = make_run_dir(args, "scan")
    currents = _scan_currents(args)
    scan = pipeline.scan_axis(cfg, args.axis, currents)
    outputs = ["scan.json"]
    write_json(out / "scan.json", scan.to_dict())
    if scan.fit is None:
        print("scan: hyperbola fit failed (too few resolved points)", file=sys.stderr)
        write_manifest(out, "scan", cfg, outputs, {"status": "failed"})
        return 1
    write_manifest(out, "scan", cfg, outputs, {
        "alpha_g_per_a": scan.fit.alpha,
        "i_comp_a": scan.fit.i_comp,
        "b_perp_gauss": scan.fit.b_perp,
    })
    print(f"scan[{args.axis}]: alpha={scan.fit.alpha:.4f} G/A "
          f"I0={scan.fit.i_comp * 1e3:.2f} mA B_perp={scan.fit.b_perp * 1e3:.2f} mG -> {out}")
    return 0


def cmd_timing_sweep(args) -> int:
    cfg = build_config(args)
    out = make_run_dir(args, "timing-sweep")
    tr_list = [float(v) for v in args.tr_list.split(",")]
    points = pipeline.timing_sweep(cfg, tr_list, float_splitting=args.float_splitting)
    write_json(out / "timing.json", [p.to_dict() for p in points])
    best = max(points, key=lambda p: p.contrast)
    write_manifest(out, "timing-sweep", cfg, ["timing.json"], {
        "best_t_pulse_s": best.t_pulse,
        "best_contrast": best.contrast,
    })
    for p in points:
        print(f"timing-sweep: T_r={p.t_pulse * 1e3:.2f} ms contrast={p.contrast:.4f}")
    return 0


def cmd_calibrate(args) -> int:
    cfg = build_config(args)
    out = make_run_dir(args, "calibrate")
    orders = tuple(int(v) for v in args.orders.split(","))
    try:
        cal = pipeline.run_calibration(cfg, orders=orders, atom_count=args.cal_atoms,
                                       n_runs=args.runs)
    except FitFailedError as exc:
        print(f"calibrate: {exc}", file=sys.stderr)
        return 1
    write_json(out / "calibration.json", cal.to_dict())
    write_manifest(out, "calibrate", cfg, ["calibration.json"], {
        "meters_per_rad_per_s": cal.meters_per_rad_per_s,
        "relative_uncertainty": cal.uncertainty / cal.meters_per_rad_per_s,
    })
    print(f"calibrate: factor={cal.meters_per_rad_per_s:.6e} m/(rad/s) "
          f"(+- {cal.uncertainty / cal.meters_per_rad_per_s * 100:.3f}%) -> {out}")
    return 0


def cmd_faraday(args) -> int:
    cfg = build_config(args)
    out = make_run_dir(args, "faraday")
    outputs = []
    summary = {}
    if args.trace_in:
        trace = load_trace_csv(args.trace_in)
    else:
        trace = synthesize_trace(
            field_at(cfg.coils), cfg.species,
            amplitude=cfg.faraday.amplitude, decay_time=cfg.faraday.decay_time,
            phase=cfg.faraday.phase, offset=cfg.faraday.offset,
            sample_rate=cfg.faraday.sample_rate, duration=cfg.faraday.duration,
            noise_sigma=cfg.faraday.noise_sigma, seed=cfg.seed,
        )
        trace.save_csv(out / "trace.csv")
        outputs.append("trace.csv")
    fit = extract_frequency(trace)
    write_json(out / "faraday.json", fit.to_dict())
    outputs.append("faraday.json")
    summary["status"] = fit.status
    summary["frequency_hz"] = fit.omega / (2 * np.pi)
    print(f"faraday: {fit.status} f={fit.omega / (2 * np.pi):.2f} Hz")

    if args.scan_steps:
        currents = _scan_currents(args)
        points = []
        for cur in currents:
            scfg = replace(cfg, coils=cfg.coils.with_current(
                (cfg.coils.current[0], cfg.coils.current[1], float(cur))))
            tr = synthesize_trace(
                field_at(scfg.coils), cfg.species,
                amplitude=cfg.faraday.amplitude, decay_time=cfg.faraday.decay_time,
                phase=cfg.faraday.phase, offset=cfg.faraday.offset,
                sample_rate=cfg.faraday.sample_rate, duration=cfg.faraday.duration,
                noise_sigma=cfg.faraday.noise_sigma, seed=cfg.seed + int(cur * 1e6),
            )
            pf = extract_frequency(tr)
            points.append({"current_a": float(cur), "omega_rad_s": pf.omega,
                           "omega_err_rad_s": pf.omega_err, "status": pf.status})
        usable = [p for p in points if p["status"] == "ok"]
        scan_fit = None
        if len(usable) >= 4:
            scan_fit = analysis.fit_hyperbola(
                [p["current_a"] for p in usable],
                [p["omega_rad_s"] for p in usable],
                cfg.species,
            )
        write_json(out / "faraday_scan.json", {
            "points": points,
            "fit": scan_fit.to_dict() if scan_fit else None,
        })
        outputs.append("faraday_scan.json")
        if scan_fit:
            summary["alpha_g_per_a"] = scan_fit.alpha
            summary["i_comp_a"] = scan_fit.i_comp
            print(f"faraday scan: alpha={scan_fit.alpha:.4f} G/A "
                  f"I0={scan_fit.i_comp * 1e3:.2f} mA")
    write_manifest(out, "faraday", cfg, outputs, summary)
    return 0


def cmd_null(args) -> int:
    cfg = build_config(args)
    out = make_run_dir(args, "null")
    result = pipeline.auto_null(cfg, sweeps=args.sweeps, bracket=args.bracket)
    write_json(out / "null.json", result.to_dict())
    write_manifest(out, "null", cfg, ["null.json"], {
        "final_currents_a": list(result.final_currents),
        "b_upper_bound_gauss": result.b_upper_bound,
    })
    ix, iy, iz = (v * 1e3 for v in result.final_currents)
    bound = result.b_upper_bound
    print(f"null: currents=({ix:.2f}, {iy:.2f}, {iz:.2f}) mA "
          f"|B| bound={bound * 1e3 if bound is not None else float('nan'):.3f} mG -> {out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    cfg = build_config(args)
    ui_dir = Path(args.ui) if args.ui else Path("frontend") / "dist"
    app = create_app(cfg, frontend_dir=ui_dir if ui_dir.is_dir() else None)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stripemag",
        description="Raman stripe magnetometry simulator",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--seed", type=int, help="run seed override")
        p.add_argument("--atoms", type=int, help="atom count override")
        p.add_argument("--currents", help="coil currents ix,iy,iz in amperes")
        if out:
            p.add_argument("--out", help="run directory (default runs/<command>)")

    p = sub.add_parser("simulate", help="frames + cross sections + stripe fit")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit stripes in stored frames")
    common(p)
    p.add_argument("frames", nargs="+", help="frame CSV/PGM files or directories")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("scan", help="current scan + hyperbola fit")
    common(p)
    p.add_argument("--axis", choices=("x", "y", "z"), default="z")
    p.add_argument("--scan-from", type=float, required=True, help="A")
    p.add_argument("--scan-to", type=float, required=True, help="A")
    p.add_argument("--scan-steps", type=int, default=10)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("timing-sweep", help="stripe contrast versus pulse time")
    common(p)
    p.add_argument("--tr-list", required=True, help="comma-separated pulse times, s")
    p.add_argument("--float-splitting", action="store_true",
                   help="fit the positive-lobe splitting instead of fixing it")
    p.set_defaults(func=cmd_timing_sweep)

    p = sub.add_parser("calibrate", help="sideband comb scale calibration")
    common(p)
    p.add_argument("--orders", default="-2,0,2", help="comma-separated sideband orders")
    p.add_argument("--cal-atoms", type=int, default=600_000)
    p.add_argument("--runs", type=int, default=3, help="averaged comb exposures")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("faraday", help="precession trace synthesis + extraction")
    common(p)
    p.add_argument("--trace-in", help="existing trace CSV instead of synthesis")
    p.add_argument("--scan-from", type=float, help="A (enables a z-current scan)")
    p.add_argument("--scan-to", type=float)
    p.add_argument("--scan-steps", type=int)
    p.set_defaults(func=cmd_faraday)

    p = sub.add_parser("null", help="automated field nulling")
    common(p)
    p.add_argument("--sweeps", type=int, default=3)
    p.add_argument("--bracket", type=float, default=0.15, help="per-axis search half-range, A")
    p.set_defaults(func=cmd_null)

    p = sub.add_parser("serve", help="HTTP service for the live nulling UI")
    common(p, out=False)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8077)
    p.add_argument("--ui", help="directory with the built web UI (default frontend/dist)")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except FitFailedError as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
