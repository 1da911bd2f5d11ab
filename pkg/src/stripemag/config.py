"""Plain-text key = value experiment configuration.

Keys are dotted with a section prefix (pulse.rabi_freq_hz = 10000).
Frequencies are Hz in the file and rad/s everywhere inside; unit suffixes
on the key names make the boundary explicit.  Unknown keys and bad values
raise ConfigError naming the offending field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from .ensemble import ConfigError, EnsembleConfig
from .imaging import ImagingConfig
from .model import RB85, AtomSpecies, CoilModel
from .raman import PulseConfig

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class AnalysisConfig:
    t_map: float | None = None        # s; None -> use imaging.image_time
    threshold_sigma: float = 5.0
    boxcar: int = 5

    def t_map_or(self, image_time: float) -> float:
        return self.t_map if self.t_map is not None else image_time


@dataclass(frozen=True)
class FaradayConfig:
    amplitude: float = 1.0
    decay_time: float = 2e-3
    phase: float = 0.0
    offset: float = 0.0
    sample_rate: float = 2e6
    duration: float = 5e-3
    noise_sigma: float = 0.0

    def validate(self) -> None:
        if self.decay_time <= 0:
            raise ConfigError(f"faraday.decay_time_s must be > 0, got {self.decay_time}")
        if self.sample_rate <= 0:
            raise ConfigError(f"faraday.sample_rate_hz must be > 0, got {self.sample_rate}")
        if self.duration <= 0:
            raise ConfigError(f"faraday.duration_s must be > 0, got {self.duration}")


def default_coils() -> CoilModel:
    # z compensation current matches the reference apparatus; the applied
    # z current is offset from it so the out-of-the-box run shows stripes
    return CoilModel(
        alpha=(1.524, 1.524, 1.524),
        i_comp=(0.0, 0.0, 0.2431),
        current=(0.0, 0.0, 0.330),
        background=(0.0, 0.0, 0.0),
    )


@dataclass
class ExperimentConfig:
    species: AtomSpecies = field(default_factory=lambda: RB85)
    coils: CoilModel = field(default_factory=default_coils)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    pulse: PulseConfig = field(default_factory=PulseConfig)
    imaging: ImagingConfig = field(default_factory=ImagingConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    faraday: FaradayConfig = field(default_factory=FaradayConfig)
    seed: int = 12345

    def validate(self) -> "ExperimentConfig":
        self.ensemble.validate()
        self.pulse.validate()
        self.imaging.validate()
        self.faraday.validate()
        if self.imaging.image_time <= self.pulse.start_time + self.pulse.duration:
            raise ConfigError(
                "imaging.image_time_s must exceed pulse.start_time_s + pulse.duration_s "
                f"({self.imaging.image_time} <= {self.pulse.start_time + self.pulse.duration})"
            )
        if self.analysis.t_map is not None and self.analysis.t_map <= 0:
            raise ConfigError(f"analysis.t_map_s must be > 0, got {self.analysis.t_map}")
        return self

    def t_map(self) -> float:
        return self.analysis.t_map_or(self.imaging.image_time)


def _parse_float(key, raw):
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {raw!r}") from None


def _parse_int(key, raw):
    try:
        return int(raw, 0)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None


def _parse_vec3(key, raw):
    parts = [p.strip() for p in raw.split(",")]
    if len(parts) != 3:
        raise ConfigError(f"{key}: expected three comma-separated numbers, got {raw!r}")
    return tuple(_parse_float(key, p) for p in parts)


def _parse_extent(key, raw):
    parts = [p.strip() for p in raw.split(",")]
    if len(parts) != 2:
        raise ConfigError(f"{key}: expected nx,nz, got {raw!r}")
    return (_parse_int(key, parts[0]), _parse_int(key, parts[1]))


def _parse_sidebands(key, raw):
    """Lines as order:amplitude pairs separated by semicolons, e.g. -1:0.5;0:1;1:0.5."""
    lines = []
    for chunk in raw.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        if ":" not in chunk:
            raise ConfigError(f"{key}: expected order:amplitude pairs, got {chunk!r}")
        n, amp = chunk.split(":", 1)
        lines.append((_parse_int(key, n.strip()), _parse_float(key, amp.strip())))
    if not lines:
        raise ConfigError(f"{key}: no sideband lines given")
    return tuple(lines)


def _parse_center(key, raw):
    if raw.strip().lower() == "auto":
        return None
    parts = [p.strip() for p in raw.split(",")]
    if len(parts) != 2:
        raise ConfigError(f"{key}: expected 'auto' or x,z in meters, got {raw!r}")
    return (_parse_float(key, parts[0]), _parse_float(key, parts[1]))


def _parse_t_map(key, raw):
    if raw.strip().lower() == "auto":
        return None
    return _parse_float(key, raw)


def config_from_pairs(pairs: dict[str, str], base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base or ExperimentConfig()
    sp, co, en, pu, im, an, fa = (
        cfg.species, cfg.coils, cfg.ensemble, cfg.pulse, cfg.imaging, cfg.analysis, cfg.faraday
    )
    seed = cfg.seed

    for key, raw in pairs.items():
        if key == "seed":
            seed = _parse_int(key, raw)
        elif key == "species.name":
            sp = replace(sp, name=raw)
        elif key == "species.mass_kg":
            sp = replace(sp, mass=_parse_float(key, raw))
        elif key == "species.wavelength_m":
            sp = replace(sp, wavelength=_parse_float(key, raw))
        elif key == "species.gyromag_hz_per_gauss":
            sp = replace(sp, gyromag=TWO_PI * _parse_float(key, raw))
        elif key == "coils.alpha_g_per_a":
            co = replace(co, alpha=_parse_vec3(key, raw))
        elif key == "coils.i_comp_a":
            co = replace(co, i_comp=_parse_vec3(key, raw))
        elif key == "coils.current_a":
            co = replace(co, current=_parse_vec3(key, raw))
        elif key == "coils.background_g":
            co = replace(co, background=_parse_vec3(key, raw))
        elif key == "ensemble.atom_count":
            en = replace(en, atom_count=_parse_int(key, raw))
        elif key == "ensemble.position_sigma_m":
            en = replace(en, position_sigma=_parse_float(key, raw))
        elif key == "ensemble.temperature_k":
            en = replace(en, temperature=_parse_float(key, raw))
        elif key == "pulse.rabi_freq_hz":
            pu = replace(pu, rabi_freq=TWO_PI * _parse_float(key, raw))
        elif key == "pulse.duration_s":
            pu = replace(pu, duration=_parse_float(key, raw))
        elif key == "pulse.start_time_s":
            pu = replace(pu, start_time=_parse_float(key, raw))
        elif key == "pulse.delta12_hz":
            pu = replace(pu, delta12=TWO_PI * _parse_float(key, raw))
        elif key == "pulse.sidebands":
            pu = replace(pu, sidebands=_parse_sidebands(key, raw))
        elif key == "pulse.modulation_freq_hz":
            pu = replace(pu, modulation_freq=TWO_PI * _parse_float(key, raw))
        elif key == "pulse.light_shift_hz":
            pu = replace(pu, light_shift=TWO_PI * _parse_float(key, raw))
        elif key == "pulse.mode":
            pu = replace(pu, mode=raw.strip())
        elif key == "pulse.channel_weight_scale":
            pu = replace(pu, channel_weight_scale=_parse_float(key, raw))
        elif key == "imaging.image_time_s":
            im = replace(im, image_time=_parse_float(key, raw))
        elif key == "imaging.gravity_m_s2":
            im = replace(im, gravity=_parse_vec3(key, raw))
        elif key == "imaging.pixel_size_m":
            im = replace(im, pixel_size=_parse_float(key, raw))
        elif key == "imaging.extent_px":
            im = replace(im, extent=_parse_extent(key, raw))
        elif key == "imaging.photon_scale":
            im = replace(im, photon_scale=_parse_float(key, raw))
        elif key == "imaging.noise":
            im = replace(im, noise=raw.strip())
        elif key == "imaging.center_m":
            im = replace(im, center=_parse_center(key, raw))
        elif key == "analysis.t_map_s":
            an = replace(an, t_map=_parse_t_map(key, raw))
        elif key == "analysis.threshold_sigma":
            an = replace(an, threshold_sigma=_parse_float(key, raw))
        elif key == "analysis.boxcar_px":
            an = replace(an, boxcar=_parse_int(key, raw))
        elif key == "faraday.amplitude":
            fa = replace(fa, amplitude=_parse_float(key, raw))
        elif key == "faraday.decay_time_s":
            fa = replace(fa, decay_time=_parse_float(key, raw))
        elif key == "faraday.phase_rad":
            fa = replace(fa, phase=_parse_float(key, raw))
        elif key == "faraday.offset":
            fa = replace(fa, offset=_parse_float(key, raw))
        elif key == "faraday.sample_rate_hz":
            fa = replace(fa, sample_rate=_parse_float(key, raw))
        elif key == "faraday.duration_s":
            fa = replace(fa, duration=_parse_float(key, raw))
        elif key == "faraday.noise_sigma":
            fa = replace(fa, noise_sigma=_parse_float(key, raw))
        else:
            raise ConfigError(f"unknown configuration key: {key!r}")

    out = ExperimentConfig(
        species=sp, coils=co, ensemble=en, pulse=pu,
        imaging=im, analysis=an, faraday=fa, seed=seed,
    )
    return out.validate()


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value, got {line.strip()!r}")
        key, raw = stripped.split("=", 1)
        pairs[key.strip()] = raw.strip()
    return config_from_pairs(pairs, base)


def load_config(path: str | Path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text(), base)


def config_to_text(cfg: ExperimentConfig) -> str:
    """Normalized dump; parsing it back reproduces the configuration."""
    sb = ";".join(f"{n}:{a!r}" for n, a in cfg.pulse.sidebands)
    center = "auto" if cfg.imaging.center is None else f"{cfg.imaging.center[0]!r}, {cfg.imaging.center[1]!r}"
    t_map = "auto" if cfg.analysis.t_map is None else repr(cfg.analysis.t_map)
    vec = lambda v: ", ".join(repr(float(c)) for c in v)
    lines = [
        f"seed = {cfg.seed}",
        f"species.name = {cfg.species.name}",
        f"species.mass_kg = {cfg.species.mass!r}",
        f"species.wavelength_m = {cfg.species.wavelength!r}",
        f"species.gyromag_hz_per_gauss = {cfg.species.gyromag / TWO_PI!r}",
        f"coils.alpha_g_per_a = {vec(cfg.coils.alpha)}",
        f"coils.i_comp_a = {vec(cfg.coils.i_comp)}",
        f"coils.current_a = {vec(cfg.coils.current)}",
        f"coils.background_g = {vec(cfg.coils.background)}",
        f"ensemble.atom_count = {cfg.ensemble.atom_count}",
        f"ensemble.position_sigma_m = {cfg.ensemble.position_sigma!r}",
        f"ensemble.temperature_k = {cfg.ensemble.temperature!r}",
        f"pulse.rabi_freq_hz = {cfg.pulse.rabi_freq / TWO_PI!r}",
        f"pulse.duration_s = {cfg.pulse.duration!r}",
        f"pulse.start_time_s = {cfg.pulse.start_time!r}",
        f"pulse.delta12_hz = {cfg.pulse.delta12 / TWO_PI!r}",
        f"pulse.sidebands = {sb}",
        f"pulse.modulation_freq_hz = {cfg.pulse.modulation_freq / TWO_PI!r}",
        f"pulse.light_shift_hz = {cfg.pulse.light_shift / TWO_PI!r}",
        f"pulse.mode = {cfg.pulse.mode}",
        f"pulse.channel_weight_scale = {cfg.pulse.channel_weight_scale!r}",
        f"imaging.image_time_s = {cfg.imaging.image_time!r}",
        f"imaging.gravity_m_s2 = {vec(cfg.imaging.gravity)}",
        f"imaging.pixel_size_m = {cfg.imaging.pixel_size!r}",
        f"imaging.extent_px = {cfg.imaging.extent[0]}, {cfg.imaging.extent[1]}",
        f"imaging.photon_scale = {cfg.imaging.photon_scale!r}",
        f"imaging.noise = {cfg.imaging.noise}",
        f"imaging.center_m = {center}",
        f"analysis.t_map_s = {t_map}",
        f"analysis.threshold_sigma = {cfg.analysis.threshold_sigma!r}",
        f"analysis.boxcar_px = {cfg.analysis.boxcar}",
        f"faraday.amplitude = {cfg.faraday.amplitude!r}",
        f"faraday.decay_time_s = {cfg.faraday.decay_time!r}",
        f"faraday.phase_rad = {cfg.faraday.phase!r}",
        f"faraday.offset = {cfg.faraday.offset!r}",
        f"faraday.sample_rate_hz = {cfg.faraday.sample_rate!r}",
        f"faraday.duration_s = {cfg.faraday.duration!r}",
        f"faraday.noise_sigma = {cfg.faraday.noise_sigma!r}",
    ]
    return "\n".join(lines) + "\n"
