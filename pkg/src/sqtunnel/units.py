"""Unit systems.

Two modes are supported. ``dimensionless`` sets hbar = m = 1. ``spectroscopic``
stores energies in cm^-1, lengths in Angstrom, times in ps and accepts masses
in atomic mass units; hbar and the mass are then expressed in the internal
(cm^-1, Angstrom, ps) system so that hbar**2 / (2 m) carries units of
cm^-1 Angstrom^2 and hbar / m units of Angstrom^2 / ps.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .errors import DomainError

# exact SI values
SPEED_OF_LIGHT = 299792458.0  # m / s
PLANCK = 6.62607015e-34  # J s
HBAR_SI = PLANCK / (2.0 * math.pi)
# CODATA 2018
ATOMIC_MASS_UNIT = 1.66053906660e-27  # kg
# energy of one wavenumber, hc, in J cm
HC_J_CM = PLANCK * SPEED_OF_LIGHT * 100.0

ANGSTROM = 1e-10  # m
PICOSECOND = 1e-12  # s
C_CM_PER_PS = SPEED_OF_LIGHT * 100.0 * PICOSECOND


class Mode(str, enum.Enum):
    DIMENSIONLESS = "dimensionless"
    SPECTROSCOPIC = "spectroscopic"


@dataclass(frozen=True)
class UnitSystem:
    """Physical constants and scales for one calculation.

    ``length_scale``, ``energy_scale`` and ``time_scale`` give the SI value of
    one internal unit (1.0 throughout for dimensionless mode).
    """

    mode: Mode
    hbar: float
    mass: float
    length_scale: float = 1.0
    energy_scale: float = 1.0
    time_scale: float = 1.0

    def __post_init__(self):
        if not (self.hbar > 0 and self.mass > 0):
            raise DomainError("hbar and mass must be positive")
        if self.mode is Mode.DIMENSIONLESS and (self.hbar != 1.0 or self.mass != 1.0):
            raise DomainError("dimensionless mode requires hbar = m = 1")

    @classmethod
    def dimensionless(cls) -> "UnitSystem":
        return cls(Mode.DIMENSIONLESS, 1.0, 1.0)

    @classmethod
    def spectroscopic(cls, mass_u: float) -> "UnitSystem":
        """Units of cm^-1, Angstrom and ps for a particle of ``mass_u`` daltons."""
        if not mass_u > 0:
            raise DomainError("mass must be positive")
        energy = HC_J_CM  # J per cm^-1
        # one internal mass unit: (cm^-1) ps^2 / Angstrom^2 expressed in kg
        mass_unit = energy * PICOSECOND**2 / ANGSTROM**2
        return cls(
            Mode.SPECTROSCOPIC,
            hbar=HBAR_SI / (energy * PICOSECOND),
            mass=mass_u * ATOMIC_MASS_UNIT / mass_unit,
            length_scale=ANGSTROM,
            energy_scale=energy,
            time_scale=PICOSECOND,
        )

    @property
    def hbar_over_m(self) -> float:
        """Diffusion scale sigma**2 = hbar / m."""
        return self.hbar / self.mass

    @property
    def kinetic(self) -> float:
        """hbar**2 / (2 m)."""
        return self.hbar**2 / (2.0 * self.mass)

    @property
    def mass_u(self) -> float:
        return self.mass * self.energy_scale * self.time_scale**2 / self.length_scale**2 / ATOMIC_MASS_UNIT

    # conversions to and from SI
    def energy_to_si(self, e):
        return e * self.energy_scale

    def energy_from_si(self, e):
        return e / self.energy_scale

    def length_to_si(self, x):
        return x * self.length_scale

    def length_from_si(self, x):
        return x / self.length_scale

    def time_to_si(self, t):
        return t * self.time_scale

    def time_from_si(self, t):
        return t / self.time_scale

    def frequency_ghz(self, t):
        """Frequency 1/t in GHz for a time ``t`` in internal units."""
        return 1.0 / self.time_to_si(t) / 1e9

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "hbar": self.hbar,
            "mass": self.mass,
            "length_scale": self.length_scale,
            "energy_scale": self.energy_scale,
            "time_scale": self.time_scale,
        }


def wavenumber_to_ghz(e_cm: float) -> float:
    """Frequency of a transition of ``e_cm`` wavenumbers, c * e, in GHz."""
    return e_cm * SPEED_OF_LIGHT * 100.0 / 1e9


def mev_to_wavenumber(e_mev: float) -> float:
    return e_mev * 1e-3 * 1.602176634e-19 / HC_J_CM
