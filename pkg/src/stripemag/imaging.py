"""Ballistic flight, camera projection, and frame arithmetic.

The camera looks along y; frames are histograms of atom positions in the
x (beam axis) - z (vertical) plane, in counts = atoms * photon_scale.
Pulse-on and pulse-off runs share the ensemble seed and traverse identical
propagation steps so their difference isolates the pulse.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ensemble import ConfigError, Ensemble
from .model import AtomSpecies, CoilModel, FieldVector, field_at
from .raman import PulseConfig, apply_pulse, assign_channels


@dataclass(frozen=True)
class ImagingConfig:
    image_time: float = 40e-3                     # s after release
    gravity: tuple[float, float, float] = (0.0, 0.0, -9.81)
    pixel_size: float = 24e-6                     # m
    extent: tuple[int, int] = (512, 512)          # (nx, nz) pixels
    photon_scale: float = 10.0                    # counts per atom
    noise: str = "none"                           # none | poisson
    center: tuple[float, float] | None = None     # (x, z) m; None -> track free fall

    def validate(self) -> None:
        if self.image_time <= 0:
            raise ConfigError(f"imaging.image_time must be > 0, got {self.image_time}")
        if self.pixel_size <= 0:
            raise ConfigError(f"imaging.pixel_size must be > 0, got {self.pixel_size}")
        if self.extent[0] < 16 or self.extent[1] < 16:
            raise ConfigError(f"imaging.extent must be at least 16x16, got {self.extent}")
        if self.photon_scale <= 0:
            raise ConfigError(f"imaging.photon_scale must be > 0, got {self.photon_scale}")
        if self.noise not in ("none", "poisson"):
            raise ConfigError(f"imaging.noise must be none or poisson, got {self.noise!r}")

    def frame_center(self) -> tuple[float, float]:
        if self.center is not None:
            return self.center
        # follow the freely falling cloud so it stays in frame
        return (0.0, 0.5 * self.gravity[2] * self.image_time**2)


@dataclass
class Frame:
    """Pixelated camera image.  counts[iz, ix]; z and x increase with index."""

    counts: np.ndarray
    pixel_size: float
    center: tuple[float, float]
    metadata: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape

    def x_coords(self) -> np.ndarray:
        """Pixel-center x positions, m."""
        nx = self.counts.shape[1]
        return self.center[0] + (np.arange(nx) - (nx - 1) / 2.0) * self.pixel_size

    def z_coords(self) -> np.ndarray:
        nz = self.counts.shape[0]
        return self.center[1] + (np.arange(nz) - (nz - 1) / 2.0) * self.pixel_size

    def same_geometry(self, other: "Frame") -> bool:
        return (
            self.counts.shape == other.counts.shape
            and self.pixel_size == other.pixel_size
            and self.center == other.center
        )


@dataclass
class Profile:
    """1-D cross-section: summed counts per column versus x in meters."""

    x: np.ndarray
    counts: np.ndarray
    metadata: dict = field(default_factory=dict)


def propagate(ens: Ensemble, from_t: float, to_t: float, gravity) -> Ensemble:
    """Ballistic free flight: r += v dt + g dt^2 / 2, v += g dt.  In place."""
    if to_t < from_t:
        raise ValueError(f"to_t ({to_t}) must be >= from_t ({from_t})")
    dt = to_t - from_t
    g = np.asarray(gravity, dtype=float)
    ens.positions += ens.velocities * dt + 0.5 * g * dt**2
    ens.velocities += g * dt
    ens.time = to_t
    return ens


def _histogram_frame(ens: Ensemble, img: ImagingConfig, noise_rng: np.random.Generator | None,
                     metadata: dict) -> Frame:
    nx, nz = img.extent
    cx, cz = img.frame_center()
    half_x = nx * img.pixel_size / 2.0
    half_z = nz * img.pixel_size / 2.0
    x = ens.positions[:, 0]
    z = ens.positions[:, 2]
    counts, _, _ = np.histogram2d(
        z, x, bins=[nz, nx], range=[[cz - half_z, cz + half_z], [cx - half_x, cx + half_x]]
    )
    counts *= img.photon_scale
    inside = int(counts.sum() / img.photon_scale + 0.5)
    outside = ens.atom_count - inside
    if img.noise == "poisson" and noise_rng is not None:
        counts = noise_rng.poisson(counts).astype(float)
    metadata = dict(metadata)
    metadata.update(
        {
            "outside_count": outside,
            "warning_all_outside": outside == ens.atom_count,
            "photon_scale": img.photon_scale,
            "atom_count": ens.atom_count,
            "noise": img.noise,
        }
    )
    return Frame(counts=counts, pixel_size=img.pixel_size, center=(cx, cz), metadata=metadata)


def run_sequence(
    ens: Ensemble,
    coils: CoilModel,
    pulse: PulseConfig,
    img: ImagingConfig,
    species: AtomSpecies,
    pulse_on: bool = True,
    pulse_seed: int = 0,
) -> Frame:
    """Release -> free flight -> pulse window -> free flight -> camera frame.

    The pulse-off path runs the same steps with the Rabi frequency forced to
    zero, so the two frames are bitwise-identical except for pulse effects.
    Mutates ens; pass a copy to keep the initial state.
    """
    pulse.validate()
    img.validate()
    if img.image_time <= pulse.start_time + pulse.duration:
        raise ConfigError(
            "pulse extends past imaging time: "
            f"image_time={img.image_time} <= start_time+duration="
            f"{pulse.start_time + pulse.duration}"
        )
    b = field_at(coils)
    active = pulse if pulse_on else PulseConfig(
        rabi_freq=0.0,
        duration=pulse.duration,
        start_time=pulse.start_time,
        delta12=pulse.delta12,
        sidebands=pulse.sidebands,
        modulation_freq=pulse.modulation_freq,
        light_shift=pulse.light_shift,
        mode=pulse.mode,
        channel_weight_scale=pulse.channel_weight_scale,
    )
    rng = np.random.default_rng(np.random.SeedSequence(pulse_seed))
    noise_rng = np.random.default_rng(np.random.SeedSequence([pulse_seed, 1 if pulse_on else 2]))

    propagate(ens, 0.0, active.start_time, img.gravity)
    assign_channels(ens, b, active, rng)
    apply_pulse(ens, b, active, species, rng)
    # apply_pulse advances positions with the (kick-averaged) velocities only;
    # add the gravity contribution over the window
    g = np.asarray(img.gravity, dtype=float)
    ens.positions += 0.5 * g * active.duration**2
    ens.velocities += g * active.duration
    propagate(ens, active.start_time + active.duration, img.image_time, img.gravity)

    meta = {
        "t_image": img.image_time,
        "pulse_on": pulse_on,
        "currents": list(coils.current),
        "pulse_seed": pulse_seed,
    }
    return _histogram_frame(ens, img, noise_rng, meta)


def difference_frame(with_pulse: Frame, without_pulse: Frame) -> Frame:
    """Pixelwise (pulse on) - (pulse off)."""
    if not with_pulse.same_geometry(without_pulse):
        raise ValueError("difference_frame requires identical frame geometry")
    meta = {
        "kind": "difference",
        "parent_on": with_pulse.metadata,
        "parent_off": without_pulse.metadata,
    }
    return Frame(
        counts=with_pulse.counts - without_pulse.counts,
        pixel_size=with_pulse.pixel_size,
        center=with_pulse.center,
        metadata=meta,
    )


def cross_section(frame: Frame, band: tuple[int, int] | None = None) -> Profile:
    """Sum counts over a band of pixel rows; abscissa is x in meters."""
    nz = frame.counts.shape[0]
    if band is None:
        band = (0, nz)
    lo, hi = band
    if not (0 <= lo < hi <= nz):
        raise ValueError(f"empty or out-of-range row band {band} for {nz} rows")
    return Profile(
        x=frame.x_coords(),
        counts=frame.counts[lo:hi, :].sum(axis=0),
        metadata={"band": [lo, hi], **frame.metadata},
    )


# ---------------------------------------------------------------------------
# frame / profile serialization


def pgm_bytes(frame: Frame) -> tuple[bytes, float, float]:
    """16-bit big-endian PGM image; returns (bytes, scale, offset)."""
    lo = float(frame.counts.min())
    hi = float(frame.counts.max())
    scale = 65535.0 / (hi - lo) if hi > lo else 1.0
    raw = np.rint((frame.counts - lo) * scale).clip(0, 65535).astype(">u2")
    nz, nx = frame.counts.shape
    header = f"P5\n{nx} {nz}\n65535\n".encode("ascii")
    return header + np.flipud(raw).tobytes(), scale, lo  # top row = max z


def save_pgm(frame: Frame, path: str | Path) -> Path:
    """16-bit big-endian PGM plus a JSON sidecar with the linear scaling."""
    path = Path(path)
    data, scale, lo = pgm_bytes(frame)
    path.write_bytes(data)
    _write_sidecar(frame, path, {"scale": scale, "offset": lo, "format": "pgm16"})
    return path


def save_frame_csv(frame: Frame, path: str | Path) -> Path:
    """Raw float counts as CSV (lossless) plus a JSON sidecar."""
    path = Path(path)
    np.savetxt(path, frame.counts, delimiter=",", fmt="%.17g")
    _write_sidecar(frame, path, {"format": "csv"})
    return path


def _write_sidecar(frame: Frame, data_path: Path, extra: dict) -> None:
    sidecar = {
        "pixel_size_m": frame.pixel_size,
        "center_m": list(frame.center),
        "shape": list(frame.counts.shape),
        "metadata": frame.metadata,
        **extra,
    }
    data_path.with_suffix(data_path.suffix + ".json").write_text(
        json.dumps(sidecar, sort_keys=True, indent=2, default=_json_default) + "\n"
    )


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


def load_frame_csv(path: str | Path) -> Frame:
    path = Path(path)
    counts = np.loadtxt(path, delimiter=",", ndmin=2)
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    return Frame(
        counts=counts,
        pixel_size=sidecar["pixel_size_m"],
        center=tuple(sidecar["center_m"]),
        metadata=sidecar.get("metadata", {}),
    )


def load_pgm(path: str | Path) -> Frame:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P5":
            raise ValueError(f"not a binary PGM file: {path}")
        dims = f.readline().split()
        nx, nz = int(dims[0]), int(dims[1])
        maxval = int(f.readline())
        raw = np.frombuffer(f.read(), dtype=">u2" if maxval > 255 else "u1")
    raw = np.flipud(raw.reshape(nz, nx)).astype(float)
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    counts = raw / sidecar.get("scale", 1.0) + sidecar.get("offset", 0.0)
    return Frame(
        counts=counts,
        pixel_size=sidecar["pixel_size_m"],
        center=tuple(sidecar["center_m"]),
        metadata=sidecar.get("metadata", {}),
    )


def save_profile_csv(profile: Profile, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w") as f:
        f.write("x_meters,counts\n")
        for xi, ci in zip(profile.x, profile.counts):
            f.write(f"{float(xi)!r},{float(ci)!r}\n")
    return path


def load_profile_csv(path: str | Path) -> Profile:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return Profile(x=data[:, 0], counts=data[:, 1])
