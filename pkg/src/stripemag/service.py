"""HTTP service steering a live simulation session (the nulling workflow).

Single-writer session state: every mutation is assigned a strictly
increasing version under a lock, the recompute runs on a config snapshot,
and results are applied only if no newer mutation has landed since
(last-writer-wins).  Reads never block on recomputes.
"""

from __future__ import annotations

import io
import math
import threading
import time
from dataclasses import dataclass, field, replace

import numpy as np
from fastapi import FastAPI, HTTPException, Request, Response
from fastapi.responses import JSONResponse

from . import analysis, pipeline
from .analysis import StripeFitResult
from .config import ExperimentConfig
from .ensemble import ConfigError
from .imaging import Frame, pgm_bytes
from .model import field_at
from .pipeline import SimulationResult

SYNC_ATOM_LIMIT = 200_000  # above this, PUTs return 202 and recompute in background


@dataclass
class SessionState:
    config: ExperimentConfig
    version: int = 0             # bumped per accepted mutation
    result_version: int = -1     # version the current results correspond to
    sim: SimulationResult | None = None
    stripes: StripeFitResult | None = None
    history: list[dict] = field(default_factory=list)

    @property
    def busy(self) -> bool:
        return self.result_version < self.version


class Session:
    def __init__(self, cfg: ExperimentConfig):
        self.state = SessionState(config=cfg)
        self.lock = threading.Lock()

    # -- mutation ----------------------------------------------------------

    def mutate(self, new_cfg: ExperimentConfig) -> tuple[int, bool]:
        """Accept a new config; returns (version, synchronous)."""
        with self.lock:
            self.state.config = new_cfg
            self.state.version += 1
            version = self.state.version
        sync = new_cfg.ensemble.atom_count <= SYNC_ATOM_LIMIT
        if sync:
            self._recompute(version)
        else:
            threading.Thread(target=self._recompute, args=(version,), daemon=True).start()
        return version, sync

    def _recompute(self, version: int) -> None:
        with self.lock:
            cfg = self.state.config
        sim = pipeline.simulate_pair(cfg)
        stripes = pipeline.analyze_stripes(cfg, sim)
        with self.lock:
            if self.state.result_version >= version:
                return  # a newer mutation already produced results
            self.state.sim = sim
            self.state.stripes = stripes
            self.state.result_version = version
            self.state.history.append({
                "version": version,
                "timestamp": time.time(),
                "currents_a": list(cfg.coils.current),
                "status": stripes.status,
                "separation_m": stripes.separation,
                "omega_rad_s": stripes.omega_larmor,
                "b_gauss": stripes.b_gauss,
                "b_upper_bound_gauss": stripes.b_upper_bound,
                "feature_width_m": stripes.feature_width,
            })

    # -- views -------------------------------------------------------------

    def snapshot(self) -> SessionState:
        with self.lock:
            return replace(self.state, history=list(self.state.history))


def _analysis_payload(state: SessionState) -> dict:
    if state.stripes is None:
        return {"status": "none"}
    payload = state.stripes.to_dict()
    payload["version"] = state.result_version
    return payload


def create_app(cfg: ExperimentConfig, frontend_dir=None) -> FastAPI:
    app = FastAPI(title="stripemag service")
    session = Session(cfg)
    app.state.session = session

    def state_payload() -> dict:
        st = session.snapshot()
        b = field_at(st.config.coils)
        return {
            "version": st.version,
            "result_version": st.result_version,
            "busy": st.busy,
            "currents_a": list(st.config.coils.current),
            "i_comp_a": list(st.config.coils.i_comp),
            "atom_count": st.config.ensemble.atom_count,
            "pulse": {
                "rabi_freq_hz": st.config.pulse.rabi_freq / (2 * math.pi),
                "duration_s": st.config.pulse.duration,
                "start_time_s": st.config.pulse.start_time,
                "delta12_hz": st.config.pulse.delta12 / (2 * math.pi),
            },
            "b_configured_gauss": b.magnitude,
            "has_frames": st.sim is not None,
            "analysis": _analysis_payload(st),
            "history_length": len(st.history),
        }

    @app.get("/api/state")
    def get_state():
        return state_payload()

    async def _json_body(request: Request) -> dict:
        try:
            body = await request.json()
        except Exception:
            raise HTTPException(status_code=400, detail="body must be a JSON object")
        if not isinstance(body, dict):
            raise HTTPException(status_code=400, detail="body must be a JSON object")
        return body

    @app.put("/api/currents")
    async def put_currents(request: Request):
        body = await _json_body(request)
        missing = [k for k in ("ix", "iy", "iz") if k not in body]
        if missing:
            raise HTTPException(status_code=400, detail=f"missing fields: {missing}")
        try:
            currents = tuple(float(body[k]) for k in ("ix", "iy", "iz"))
        except (TypeError, ValueError):
            raise HTTPException(status_code=400, detail="ix, iy, iz must be numbers (amperes)")
        st = session.snapshot()
        new_cfg = replace(st.config, coils=st.config.coils.with_current(currents))
        version, sync = session.mutate(new_cfg)
        if not sync:
            return JSONResponse(status_code=202, content={"status": "pending", "version": version})
        return state_payload()

    @app.put("/api/pulse")
    async def put_pulse(request: Request):
        body = await _json_body(request)
        allowed = {"rabi_freq_hz", "duration_s", "start_time_s", "delta12_hz"}
        unknown = set(body) - allowed
        if unknown:
            raise HTTPException(status_code=400, detail=f"unknown fields: {sorted(unknown)}")
        st = session.snapshot()
        pulse = st.config.pulse
        try:
            if "rabi_freq_hz" in body:
                pulse = replace(pulse, rabi_freq=2 * math.pi * float(body["rabi_freq_hz"]))
            if "duration_s" in body:
                pulse = replace(pulse, duration=float(body["duration_s"]))
            if "start_time_s" in body:
                pulse = replace(pulse, start_time=float(body["start_time_s"]))
            if "delta12_hz" in body:
                pulse = replace(pulse, delta12=2 * math.pi * float(body["delta12_hz"]))
        except (TypeError, ValueError):
            raise HTTPException(status_code=400, detail="pulse fields must be numbers")
        try:
            new_cfg = replace(st.config, pulse=pulse).validate()
        except ConfigError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        version, sync = session.mutate(new_cfg)
        if not sync:
            return JSONResponse(status_code=202, content={"status": "pending", "version": version})
        return state_payload()

    def _current_frame(kind: str) -> Frame:
        st = session.snapshot()
        if st.sim is None:
            raise HTTPException(status_code=404, detail="no simulation yet")
        if kind == "raw":
            return st.sim.frame_on
        if kind == "diff":
            return st.sim.frame_diff
        raise HTTPException(status_code=400, detail="kind must be raw or diff")

    @app.get("/api/frame")
    def get_frame(kind: str = "diff", format: str = "png"):
        frame = _current_frame(kind)
        if format == "pgm":
            data, _, _ = pgm_bytes(frame)
            return Response(content=data, media_type="image/x-portable-graymap")
        if format != "png":
            raise HTTPException(status_code=400, detail="format must be png or pgm")
        from PIL import Image

        lo, hi = float(frame.counts.min()), float(frame.counts.max())
        scale = 255.0 / (hi - lo) if hi > lo else 1.0
        img8 = np.flipud(np.rint((frame.counts - lo) * scale).clip(0, 255).astype(np.uint8))
        buf = io.BytesIO()
        Image.fromarray(img8, mode="L").save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    @app.get("/api/profile")
    def get_profile(which: str = "diff", format: str = "json"):
        st = session.snapshot()
        if st.sim is None:
            raise HTTPException(status_code=404, detail="no simulation yet")
        if which == "diff":
            prof = st.sim.profile_diff
        elif which == "off":
            prof = st.sim.profile_off
        else:
            raise HTTPException(status_code=400, detail="which must be diff or off")
        if format == "csv":
            lines = ["x_meters,counts"]
            lines += [f"{float(x)!r},{float(c)!r}" for x, c in zip(prof.x, prof.counts)]
            return Response(content="\n".join(lines) + "\n", media_type="text/csv")
        if format != "json":
            raise HTTPException(status_code=400, detail="format must be json or csv")
        payload = {
            "version": st.result_version,
            "x_meters": prof.x.tolist(),
            "counts": prof.counts.tolist(),
        }
        if st.stripes is not None and st.stripes.stripes:
            model = np.zeros_like(prof.x)
            for s in st.stripes.stripes:
                model += analysis.zero_area_stripe(
                    prof.x, s.center, s.sigma_pos, s.sigma_neg, s.amplitude
                )
            payload["fit_counts"] = model.tolist()
        return payload

    @app.get("/api/analysis")
    def get_analysis():
        st = session.snapshot()
        if st.stripes is None:
            raise HTTPException(status_code=404, detail="no analysis yet")
        return _analysis_payload(st)

    @app.get("/api/history")
    def get_history():
        st = session.snapshot()
        return {"version": st.version, "history": st.history}

    @app.post("/api/null")
    async def post_null(request: Request):
        body = {}
        if await request.body():
            body = await _json_body(request)
        sweeps = int(body.get("sweeps", 2))
        atoms = int(body.get("atoms", min(cfg.ensemble.atom_count, 40_000)))
        bracket = float(body.get("bracket", 0.15))
        st = session.snapshot()
        result = pipeline.auto_null(st.config, sweeps=sweeps, bracket=bracket,
                                    atom_count=atoms)
        new_cfg = replace(
            st.config, coils=st.config.coils.with_current(result.final_currents)
        )
        version, sync = session.mutate(new_cfg)
        return {
            "final_currents_a": list(result.final_currents),
            "b_upper_bound_gauss": result.b_upper_bound,
            "evaluations": len(result.history),
            "version": version,
            "pending": not sync,
        }

    if frontend_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(frontend_dir), html=True), name="ui")

    return app
