"""Initial atom cloud released from the point trap.

Atoms are stored as arrays (one row per atom) rather than per-atom objects;
all downstream physics is vectorized over them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.constants import k as k_boltzmann

from .model import AtomSpecies

#: Channel value meaning "no pulse channel assigned yet".
CHANNEL_UNSET = np.int8(-128)


class ConfigError(ValueError):
    """Invalid configuration value or cross-field constraint violation."""


@dataclass(frozen=True)
class EnsembleConfig:
    atom_count: int = 100_000
    position_sigma: float = 125e-6   # m, isotropic Gaussian cloud
    temperature: float = 200e-6      # K
    rng_seed: int = 12345

    def validate(self) -> None:
        if self.atom_count < 1:
            raise ConfigError(f"ensemble.atom_count must be >= 1, got {self.atom_count}")
        if self.position_sigma <= 0:
            raise ConfigError(f"ensemble.position_sigma must be > 0, got {self.position_sigma}")
        if self.temperature < 0:
            raise ConfigError(f"ensemble.temperature must be >= 0, got {self.temperature}")


@dataclass
class Ensemble:
    """State of the released cloud: positions/velocities in m, m/s.

    channel holds the assigned Delta-m per atom (CHANNEL_UNSET before the
    pulse stage); flipped_population is the end-of-pulse transfer
    probability recorded by the pulse model, in [0, 1].
    """

    positions: np.ndarray            # (N, 3) float64
    velocities: np.ndarray           # (N, 3) float64
    channel: np.ndarray              # (N,) int8
    flipped_population: np.ndarray   # (N,) float64
    time: float = 0.0                # s since release

    @property
    def atom_count(self) -> int:
        return self.positions.shape[0]

    def copy(self) -> "Ensemble":
        return Ensemble(
            self.positions.copy(),
            self.velocities.copy(),
            self.channel.copy(),
            self.flipped_population.copy(),
            self.time,
        )


def velocity_sigma(cfg: EnsembleConfig, species: AtomSpecies) -> float:
    """Per-axis Maxwell-Boltzmann velocity spread sqrt(k_B T / M), m/s."""
    return float(np.sqrt(k_boltzmann * cfg.temperature / species.mass))


def sample_ensemble(cfg: EnsembleConfig, species: AtomSpecies) -> Ensemble:
    """Draw the initial cloud: isotropic Gaussian positions, thermal velocities.

    Deterministic for a given rng_seed: positions then velocities are drawn
    from a single PCG64 stream in fixed order, so identical seeds give
    bitwise-identical ensembles.
    """
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence(cfg.rng_seed))
    n = cfg.atom_count
    positions = rng.normal(0.0, cfg.position_sigma, size=(n, 3))
    sigma_v = velocity_sigma(cfg, species)
    if sigma_v == 0.0:
        velocities = np.zeros((n, 3))
    else:
        velocities = rng.normal(0.0, sigma_v, size=(n, 3))
    return Ensemble(
        positions=positions,
        velocities=velocities,
        channel=np.full(n, CHANNEL_UNSET, dtype=np.int8),
        flipped_population=np.zeros(n),
    )
