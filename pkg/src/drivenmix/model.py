"""Two-species bosonic mixture in a 1D harmonic trap with a shaken impurity trap.

Everything is expressed in harmonic-oscillator units of the transverse
confinement: hbar = 1, lengths in units of the transverse oscillator length,
energies in units of the transverse level spacing.  Default parameters are a
bath of 100 atoms (g_BB = 0.5) and two impurities (g_II = 0.4) with
interspecies repulsion g_BI = 0.2, all trapped at frequency 0.3.

The impurity trap may be displaced periodically, a(t) = A sin(omega_d t),
either for exactly ``n_periods`` driving periods (pulse) or for the whole
evolution (continuous).  The bath trap is never driven.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import zeta

from .errors import CouplingSingularityError, ProtocolModeError

HBAR = 1.0

BATH = "bath"
IMPURITY = "impurity"

#: |zeta(1/2)| entering the transverse-confinement coupling formula.
ABS_ZETA_HALF = abs(float(zeta(0.5)))


@dataclass(frozen=True)
class GridSpec:
    """Interior nodes of a hard-wall box, x_j = x_min + j*dx for j = 1..n.

    The wavefunction is implicitly zero at both walls; dx counts the n+1
    intervals between the walls, so no node sits on a wall.
    """

    x_min: float = -50.0
    x_max: float = 50.0
    n: int = 500

    def __post_init__(self) -> None:
        if self.n < 2:
            raise ValueError(f"grid needs at least 2 points, got n={self.n}")
        if not self.x_min < self.x_max:
            raise ValueError(f"empty box: [{self.x_min}, {self.x_max}]")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n + 1)

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    def nodes(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(1, self.n + 1)


@dataclass(frozen=True)
class SpeciesParams:
    label: str
    count: int
    mass: float = 1.0
    trap_freq: float = 0.3
    g_intra: float = 0.0

    def __post_init__(self) -> None:
        if self.label not in (BATH, IMPURITY):
            raise ValueError(f"unknown species label {self.label!r}")
        if self.count < 0:
            raise ValueError("particle count must be >= 0")
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        if self.trap_freq < 0:
            raise ValueError("trap frequency must be >= 0")


@dataclass(frozen=True)
class DrivingProtocol:
    """Trap-displacement schedule a(t) = amplitude * sin(frequency * t)."""

    mode: str = "none"  # none | pulse | continuous
    amplitude: float = 0.0
    frequency: float = 0.0
    n_periods: int = 2

    def __post_init__(self) -> None:
        if self.mode not in ("none", "pulse", "continuous"):
            raise ValueError(f"unknown driving mode {self.mode!r}")
        if self.mode != "none" and self.frequency <= 0:
            raise ValueError("driving frequency must be positive when driving")
        if self.amplitude < 0:
            raise ValueError("driving amplitude must be >= 0")
        if self.n_periods < 1:
            raise ValueError("pulse length must be >= 1 period")

    def pulse_end(self) -> float:
        """End of the shaking window, 2*pi*n_periods / omega_d."""
        if self.mode != "pulse":
            raise ProtocolModeError(f"pulse_end undefined for mode {self.mode!r}")
        return 2.0 * math.pi * self.n_periods / self.frequency

    def is_active(self, t: float) -> bool:
        if self.mode == "continuous":
            return True
        if self.mode == "pulse":
            return t < self.pulse_end()
        return False

    def offset(self, t: float) -> float:
        """Instantaneous trap displacement a(t); zero outside the drive window."""
        if not self.is_active(t):
            return 0.0
        return self.amplitude * math.sin(self.frequency * t)


def _default_bath() -> SpeciesParams:
    return SpeciesParams(BATH, count=100, g_intra=0.5)


def _default_impurity() -> SpeciesParams:
    return SpeciesParams(IMPURITY, count=2, g_intra=0.4)


@dataclass(frozen=True)
class MixtureModel:
    """Full system definition: two species, their couplings, grid and drive.

    Only the impurity species feels the driven trap; the bath potential is
    static at all times.
    """

    bath: SpeciesParams = field(default_factory=_default_bath)
    impurity: SpeciesParams = field(default_factory=_default_impurity)
    g_bi: float = 0.2
    grid: GridSpec = field(default_factory=GridSpec)
    driving: DrivingProtocol = field(default_factory=DrivingProtocol)

    def species(self, label: str) -> SpeciesParams:
        if label == BATH:
            return self.bath
        if label == IMPURITY:
            return self.impurity
        raise ValueError(f"unknown species label {label!r}")

    def with_driving(self, driving: DrivingProtocol) -> MixtureModel:
        return replace(self, driving=driving)


def trap_potential(model: MixtureModel, label: str, x, t: float):
    """External potential of one species at position(s) x and time t.

    Bath: 0.5*M*w^2*x^2 always.  Impurity: 0.5*M*w^2*(x - a(t))^2 with the
    displacement a(t) active only inside the driving window.
    """
    sp = model.species(label)
    a = model.driving.offset(t) if label == IMPURITY else 0.0
    return 0.5 * sp.mass * sp.trap_freq**2 * (np.asarray(x, dtype=float) - a) ** 2


def pulse_end(protocol: DrivingProtocol) -> float:
    return protocol.pulse_end()


def olshanii_g1d(a_s: float, a_perp: float, mu: float) -> float:
    """Effective 1D contact coupling from the 3D scattering length.

    g = 2*hbar^2*a_s/(mu*a_perp^2) / (1 - |zeta(1/2)|*a_s/(sqrt(2)*a_perp)).
    Raises at the confinement-induced resonance where the denominator
    vanishes.
    """
    if a_perp <= 0:
        raise ValueError("transverse length must be positive")
    if mu <= 0:
        raise ValueError("reduced mass must be positive")
    den = 1.0 - ABS_ZETA_HALF * a_s / (math.sqrt(2.0) * a_perp)
    if abs(den) < 1e-12:
        raise CouplingSingularityError(
            f"confinement-induced resonance at a_s = {a_s!r}"
        )
    return 2.0 * HBAR**2 * a_s / (mu * a_perp**2) / den


def miscibility_check(g_bb: float, g_ii: float, g_bi: float) -> str:
    """Classify the ground state: miscible iff g_bi^2 < g_bb*g_ii.

    Equality counts as immiscible.
    """
    if g_bb < 0 or g_ii < 0:
        raise ValueError("intraspecies couplings must be >= 0")
    return "miscible" if g_bi**2 < g_bb * g_ii else "immiscible"
