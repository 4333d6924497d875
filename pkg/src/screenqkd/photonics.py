"""Linear-polarization photon model.

Polarization states are axis-like: an angle and the same angle plus pi
describe the same state, so every angle is kept canonical in [0, pi).
Measurement follows the Born rule for a two-outcome polarization analyzer:
a photon at angle s measured against an axis a collapses onto the axis
with probability cos^2(s - a) (outcome bit 0) and onto the orthogonal
axis a + pi/2 otherwise (outcome bit 1).

Multi-photon pulses are products of identical independent photons; photon
number is Poissonian with configurable mean. All values here are immutable
after construction and safe to share across threads. Random number
generators are single-owner and must be passed in explicitly.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

PI = math.pi

# Absolute tolerance for angle comparisons after canonicalization.
ANGLE_TOL = 1e-9


def canon(radians: float) -> float:
    """Canonicalize a polarization angle into [0, pi)."""
    return radians % PI


def rotate(state: float, delta: float) -> float:
    """Rotate a polarization angle; composes additively modulo pi."""
    return canon(state + delta)


def angles_close(a: float, b: float, tol: float = ANGLE_TOL) -> bool:
    """Compare two angles modulo pi (handles wrap-around at 0/pi)."""
    d = canon(a - b)
    return d < tol or PI - d < tol


class Origin(enum.Enum):
    """Diagnostic provenance tag for a photon.

    Bookkeeping only: it must never influence a measurement probability or
    a routing decision made by Alice or Bob.
    """

    LEGITIMATE = "legitimate"
    TROJAN_INJECTED = "trojan_injected"
    EVE_REPLAYED = "eve_replayed"


@dataclass(frozen=True, slots=True)
class Photon:
    polarization: float
    origin: Origin = Origin.LEGITIMATE

    def __post_init__(self) -> None:
        object.__setattr__(self, "polarization", canon(self.polarization))

    def rotated(self, delta: float) -> Photon:
        return Photon(canon(self.polarization + delta), self.origin)


@dataclass(frozen=True, slots=True)
class Pulse:
    """A multiset of photons transmitted as one unit on the quantum channel.

    An empty pulse models loss/vacuum.
    """

    photons: tuple[Photon, ...] = ()
    round_id: int = 0

    @property
    def count(self) -> int:
        return len(self.photons)

    @property
    def is_empty(self) -> bool:
        return not self.photons

    def rotated(self, delta: float) -> Pulse:
        return Pulse(tuple(p.rotated(delta) for p in self.photons), self.round_id)

    def with_photons(self, photons: tuple[Photon, ...]) -> Pulse:
        return Pulse(photons, self.round_id)


@dataclass(frozen=True, slots=True)
class MeasurementBasis:
    """Two-outcome analyzer: outcome axes are `axis` and `axis + pi/2`."""

    axis: float = field(default=0.0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "axis", canon(self.axis))


# The (+pi/4, -pi/4) analyzer used by Bob's detector pair and Alice's AD.
DIAGONAL = MeasurementBasis(PI / 4)


def born_probability(state: float, axis: float) -> float:
    """Probability of collapsing onto `axis` (outcome bit 0)."""
    return math.cos(state - axis) ** 2


def measure(photon: Photon, basis: MeasurementBasis, rng: np.random.Generator) -> int:
    """Projectively measure one photon; returns the outcome bit.

    Bit 0 means collapse onto the basis axis, bit 1 onto the orthogonal
    axis. The input photon is consumed: callers must not measure it again.
    """
    p0 = born_probability(photon.polarization, basis.axis)
    return 0 if rng.random() < p0 else 1


def make_pulse(
    polarization: float,
    mean_photons: float,
    rng: np.random.Generator,
    round_id: int = 0,
) -> Pulse:
    """Prepare a pulse with Poissonian photon number, all at one polarization."""
    if mean_photons < 0:
        raise ParameterError(f"mean_photons must be >= 0, got {mean_photons}")
    n = int(rng.poisson(mean_photons))
    pol = canon(polarization)
    return Pulse(tuple(Photon(pol) for _ in range(n)), round_id)


def single_photon_pulse(polarization: float, round_id: int = 0) -> Pulse:
    """Prepare a pulse containing exactly one photon."""
    return Pulse((Photon(canon(polarization)),), round_id)


def beam_split(
    pulse: Pulse, tap_fraction: float, rng: np.random.Generator
) -> tuple[Pulse, Pulse]:
    """Split a pulse on a beam splitter; returns (tapped, passed).

    Each photon independently moves to the tapped output with probability
    `tap_fraction`. Polarizations and origins are untouched and the two
    outputs partition the input.
    """
    if not 0.0 <= tap_fraction <= 1.0:
        raise ParameterError(f"tap_fraction must be in [0, 1], got {tap_fraction}")
    if tap_fraction == 0.0 or pulse.is_empty:
        return pulse.with_photons(()), pulse
    if tap_fraction == 1.0:
        return pulse, pulse.with_photons(())
    tapped: list[Photon] = []
    passed: list[Photon] = []
    for photon in pulse.photons:
        (tapped if rng.random() < tap_fraction else passed).append(photon)
    return pulse.with_photons(tuple(tapped)), pulse.with_photons(tuple(passed))
