"""Atom species constants, the coil-to-field model, and Larmor/velocity relations.

Everything downstream (pulse physics, imaging, analysis) consumes these
types.  Unit conventions: Gauss for magnetic fields, amperes for coil
currents, SI for everything else.  All angular frequencies are rad/s
internally; Hz appears only at I/O boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.constants import hbar

#: |B| below this (Gauss) is treated as directionless (quantization axis undefined).
FIELD_EPSILON_G = 1e-9

ALLOWED_DELTA_M = (-2, -1, 0, 1, 2)


@dataclass(frozen=True)
class AtomSpecies:
    """Physical constants of the atom and the velocity-selection light.

    mass        : kg
    wavelength  : m, wavelength of the Raman beams
    gyromag     : rad/s per Gauss (g_F mu_B / hbar)
    """

    mass: float
    wavelength: float
    gyromag: float
    name: str = "atom"

    def __post_init__(self):
        if self.mass <= 0:
            raise ValueError(f"mass must be > 0, got {self.mass}")
        if self.wavelength <= 0:
            raise ValueError(f"wavelength must be > 0, got {self.wavelength}")
        if self.gyromag <= 0:
            raise ValueError(f"gyromag must be > 0, got {self.gyromag}")

    @property
    def wavenumber(self) -> float:
        """k = 2 pi / lambda, rad/m."""
        return 2.0 * math.pi / self.wavelength

    @property
    def recoil_velocity(self) -> float:
        """Single-photon recoil v_r = hbar k / M, m/s."""
        return hbar * self.wavenumber / self.mass

    @property
    def recoil_freq(self) -> float:
        """Recoil frequency hbar k^2 / (2 M), rad/s.  Equals k v_r / 2."""
        return hbar * self.wavenumber**2 / (2.0 * self.mass)


#: Default species: Rb-85 driven at 780.24 nm, 466.74 kHz/G Zeeman slope.
RB85 = AtomSpecies(
    mass=1.40999e-25,
    wavelength=780.24e-9,
    gyromag=2.0 * math.pi * 466.74e3,
    name="Rb85",
)


@dataclass(frozen=True)
class CoilModel:
    """Three orthogonal Helmholtz pairs: B_i = alpha_i (I_i - I0_i) + b_i.

    alpha      : G/A slope per axis (x, y, z)
    i_comp     : compensation currents I0_i, A
    current    : applied currents I_i, A
    background : residual field b_i not nulled by the coils, G
    """

    alpha: tuple[float, float, float]
    i_comp: tuple[float, float, float]
    current: tuple[float, float, float]
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def with_current(self, current: tuple[float, float, float]) -> "CoilModel":
        return CoilModel(self.alpha, self.i_comp, tuple(current), self.background)


@dataclass(frozen=True)
class FieldVector:
    """Static magnetic field at the cloud, Gauss components."""

    bx: float
    by: float
    bz: float
    epsilon: float = FIELD_EPSILON_G

    @property
    def magnitude(self) -> float:
        return math.sqrt(self.bx**2 + self.by**2 + self.bz**2)

    @property
    def has_direction(self) -> bool:
        """False when |B| is below epsilon and the quantization axis is undefined."""
        return self.magnitude >= self.epsilon

    @property
    def unit(self) -> np.ndarray | None:
        """Unit quantization axis, or None in the degenerate near-zero case."""
        m = self.magnitude
        if m < self.epsilon:
            return None
        return np.array([self.bx, self.by, self.bz]) / m

    def as_array(self) -> np.ndarray:
        return np.array([self.bx, self.by, self.bz])


def field_at(coils: CoilModel) -> FieldVector:
    """Field produced by the coil settings: B_i = alpha_i (I_i - I0_i) + b_i."""
    b = [
        a * (i - i0) + bg
        for a, i, i0, bg in zip(coils.alpha, coils.current, coils.i_comp, coils.background)
    ]
    return FieldVector(*b)


def larmor_frequency(b: FieldVector, species: AtomSpecies) -> float:
    """Zeeman splitting between adjacent sublevels, rad/s.  Scalar: uses |B|."""
    return species.gyromag * b.magnitude


def resonant_velocity(delta_m: int, omega_larmor: float, delta12: float, species: AtomSpecies) -> float:
    """Center of the velocity class addressed by a Delta-m channel.

    v0 = (Delta_m * omega_L + delta12) / (2k).  The recoil and light-shift
    offsets are handled by the pulse model; this is the class the stripe
    maps to in the expanded cloud.
    """
    if delta_m not in ALLOWED_DELTA_M:
        raise ValueError(f"delta_m must be in {ALLOWED_DELTA_M}, got {delta_m}")
    return (delta_m * omega_larmor + delta12) / (2.0 * species.wavenumber)
