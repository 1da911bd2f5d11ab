"""Velocity-selective two-photon Raman pulse applied to the falling cloud.

The counterpropagating beam pair (along x, lin-perp-lin) couples magnetic
sublevels with Delta_m in {0, +-1, +-2}.  For a channel Delta_m the
two-photon detuning of an atom at velocity v_x is

    delta = 2 k v_x + 4 delta_r + delta_LS - Delta_m * omega_L - delta12

which vanishes for the velocity class 2 k v = Delta_m omega_L + delta12
(up to recoil and light shift).  Resonant atoms Rabi-cycle between the two
momentum states separated by 2 hbar k; the end-of-pulse state is sampled,
which converges to the coherent mixture at the atom numbers used for
imaging.

Each channel addresses a symmetric pair of classes v0 -+ v_r whose +-2hbar k
kicks map one onto the other, so the stripe pattern is symmetric about the
class center v0 and invariant under B -> -B.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ensemble import CHANNEL_UNSET, ConfigError, Ensemble
from .model import ALLOWED_DELTA_M, AtomSpecies, FieldVector


@dataclass(frozen=True)
class PulseConfig:
    """Raman pulse parameters.  All frequencies in rad/s.

    sidebands lists every drive line as (order, relative amplitude),
    including the carrier (0, 1.0); line n sits at delta12 + n * modulation_freq.
    channel_weight_scale sets the relative strength of the |Delta_m| = 2
    channels (two orders of magnitude below 0/+-1 in practice, default off).
    """

    rabi_freq: float = 2.0 * math.pi * 10e3
    duration: float = 5e-3
    start_time: float = 15e-3
    delta12: float = 0.0
    sidebands: tuple[tuple[int, float], ...] = ((0, 1.0),)
    modulation_freq: float = 2.0 * math.pi * 100e3
    light_shift: float = 0.0
    mode: str = "rabi_cycling"          # or "instantaneous_pi"
    channel_weight_scale: float = 0.0

    def validate(self) -> None:
        if self.rabi_freq < 0:
            raise ConfigError(f"pulse.rabi_freq must be >= 0, got {self.rabi_freq}")
        if self.duration < 0:
            raise ConfigError(f"pulse.duration must be >= 0, got {self.duration}")
        if self.start_time < 0:
            raise ConfigError(f"pulse.start_time must be >= 0, got {self.start_time}")
        if self.mode not in ("rabi_cycling", "instantaneous_pi"):
            raise ConfigError(f"pulse.mode must be rabi_cycling or instantaneous_pi, got {self.mode!r}")
        if not self.sidebands:
            raise ConfigError("pulse.sidebands must contain at least one line")
        orders = [n for n, _ in self.sidebands]
        if len(set(orders)) != len(orders):
            raise ConfigError(f"pulse.sidebands orders must be distinct, got {orders}")
        if self.channel_weight_scale < 0:
            raise ConfigError("pulse.channel_weight_scale must be >= 0")


def two_photon_detuning(
    v_x: float | np.ndarray,
    delta_m: int,
    omega_larmor: float,
    cfg: PulseConfig,
    species: AtomSpecies,
) -> float | np.ndarray:
    """Net detuning from two-photon resonance for the carrier line.

    delta_eff = 2 k v_x + 4 delta_r + delta_LS - Delta_m omega_L - delta12;
    zero means resonant.
    """
    if delta_m not in ALLOWED_DELTA_M:
        raise ValueError(f"delta_m must be in {ALLOWED_DELTA_M}, got {delta_m}")
    k = species.wavenumber
    return (
        2.0 * k * v_x
        + 4.0 * species.recoil_freq
        + cfg.light_shift
        - delta_m * omega_larmor
        - cfg.delta12
    )


def transfer_probability(
    delta_eff: float | np.ndarray,
    rabi_freq: float | np.ndarray,
    t: float | np.ndarray,
) -> float | np.ndarray:
    """Two-level Rabi transfer P = Omega^2/(Omega^2+delta^2) sin^2(sqrt(Omega^2+delta^2) t/2)."""
    omega2 = np.square(rabi_freq)
    gen2 = omega2 + np.square(delta_eff)
    gen = np.sqrt(gen2)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(gen2 > 0.0, omega2 / np.where(gen2 > 0.0, gen2, 1.0), 0.0)
    p = frac * np.square(np.sin(0.5 * gen * t))
    if np.isscalar(delta_eff) and np.isscalar(rabi_freq) and np.isscalar(t):
        return float(p)
    return p


def channel_weights(b: FieldVector, cfg: PulseConfig) -> np.ndarray:
    """Probabilities of the Delta_m = -2..+2 channels for field direction B.

    With theta the angle between B and the beam axis x: w0 = cos^2(theta),
    w(+-1) = sin^2(theta)/2, w(+-2) = scale * sin^2(theta)/2, renormalized.
    Degenerate |B| below epsilon: equal weights (the limit has no direction).
    """
    if not b.has_direction:
        return np.full(5, 0.2)
    cos2 = (b.bx / b.magnitude) ** 2
    sin2_half = 0.5 * (1.0 - cos2)
    q = cfg.channel_weight_scale
    w = np.array([q * sin2_half, sin2_half, cos2, sin2_half, q * sin2_half])
    return w / w.sum()


def assign_channels(
    ens: Ensemble, b: FieldVector, cfg: PulseConfig, rng: np.random.Generator
) -> None:
    """Draw a Delta_m channel per atom from the field-direction weights."""
    w = channel_weights(b, cfg)
    edges = np.cumsum(w)
    edges[-1] = 1.0  # guard round-off
    u = rng.random(ens.atom_count)
    ens.channel = (np.searchsorted(edges, u, side="right") - 2).astype(np.int8)


def _line_selection(
    v_x: np.ndarray,
    delta_m: np.ndarray,
    omega_larmor: float,
    cfg: PulseConfig,
    species: AtomSpecies,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Resolve, per atom, the nearest drive line and momentum-kick branch.

    Returns (delta, rabi_scale, kick_sign).  Lines are far apart compared
    with the Rabi width at the defaults, so each atom interacts with the
    single line closest to its own resonance; ties go to the stronger line.
    kick_sign is +1/-1 for a +-2 v_r kick along x, pointing from the atom's
    class toward its 2 hbar k partner (i.e. toward the class center).
    """
    k = species.wavenumber
    four_dr = 4.0 * species.recoil_freq
    # sort lines strongest-first so argmin ties resolve to the larger amplitude
    lines = sorted(cfg.sidebands, key=lambda na: -abs(na[1]))
    orders = np.array([n for n, _ in lines], dtype=float)
    amps = np.array([a for _, a in lines], dtype=float)

    # D[i, j] = 2k (v_i - v0_j) for line j's class center v0_j
    line_shift = cfg.delta12 + orders * cfg.modulation_freq  # (L,)
    d0 = (
        2.0 * k * v_x[:, None]
        + cfg.light_shift
        - delta_m[:, None] * omega_larmor
        - line_shift[None, :]
    )
    kick = np.where(d0 <= 0.0, 1.0, -1.0)
    delta = d0 + kick * four_dr
    j = np.argmin(np.abs(delta), axis=1)
    rows = np.arange(v_x.shape[0])
    return delta[rows, j], np.abs(amps[j]), kick[rows, j]


def apply_pulse(
    ens: Ensemble,
    b: FieldVector,
    cfg: PulseConfig,
    species: AtomSpecies,
    rng: np.random.Generator,
) -> None:
    """Advance the ensemble through the pulse window [T_r, T_r + duration].

    Channels must be assigned.  Velocity changes are exactly +-2 v_r along x.
    In rabi_cycling mode the final momentum state is sampled from the
    end-of-pulse transfer probability and positions advance with the
    population-time-averaged velocity; in instantaneous_pi mode atoms within
    a Rabi width of resonance get their momentum reversed at T_r.
    Gravity over the window is applied by the caller.
    """
    cfg.validate()
    if np.any(ens.channel == CHANNEL_UNSET):
        raise ValueError("channels must be assigned before apply_pulse")

    omega_l = species.gyromag * b.magnitude
    v_r = species.recoil_velocity
    tau = cfg.duration
    v_x = ens.velocities[:, 0]

    delta, amp, kick = _line_selection(v_x, ens.channel.astype(float), omega_l, cfg, species)
    rabi = cfg.rabi_freq * amp

    if cfg.mode == "instantaneous_pi":
        selected = np.abs(delta) < rabi
        ens.velocities[selected, 0] += kick[selected] * 2.0 * v_r
        ens.flipped_population = selected.astype(float)
        ens.positions += ens.velocities * tau
    else:
        p_end = transfer_probability(delta, rabi, tau)
        gen = np.sqrt(rabi**2 + delta**2)
        # time-averaged flipped population over the window:
        # (Omega^2/gen^2) * (1 - sinc(gen tau)) / 2
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(gen > 0.0, rabi**2 / np.where(gen > 0.0, gen**2, 1.0), 0.0)
        p_avg = 0.5 * frac * (1.0 - np.sinc(gen * tau / np.pi))
        drift = ens.velocities * tau
        drift[:, 0] += kick * 2.0 * v_r * p_avg * tau
        ens.positions += drift
        flipped = rng.random(ens.atom_count) < p_end
        ens.velocities[flipped, 0] += kick[flipped] * 2.0 * v_r
        ens.flipped_population = np.asarray(p_end, dtype=float)

    ens.time += tau
