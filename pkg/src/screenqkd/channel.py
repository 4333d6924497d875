"""Quantum channel legs, the interception hook, and the public board.

A round crosses the channel three times (Alice -> Bob -> Alice -> Bob).
An adversary is modeled as an :class:`Interceptor` that may transform the
pulse on each leg. The hook receives only physically available data: the
pulse itself, which leg it is on, the round id, and (after the session)
the public announcement. Round secrets (theta, phi, k, screening indices)
are never handed to it.

The classical channel is public and authentic: the adversary can read the
announcement but cannot forge it.
"""

from __future__ import annotations

import enum
from typing import TYPE_CHECKING, Optional

import numpy as np

from .errors import ParameterError, ProtocolError
from .photonics import Photon, Pulse

if TYPE_CHECKING:
    from .protocol import Announcement


class Leg(enum.Enum):
    ALICE_TO_BOB_1 = 1
    BOB_TO_ALICE = 2
    ALICE_TO_BOB_2 = 3


class Interceptor:
    """Base adversary: passes every pulse through untouched.

    Subclasses override :meth:`intercept` per leg, may observe the public
    announcement once the session is over, and may emit per-round key-bit
    guesses afterwards. ``rng`` is the adversary's own generator, handed
    in by the channel on every call; it is never shared with the parties.
    """

    def intercept(
        self, leg: Leg, pulse: Pulse, round_id: int, rng: np.random.Generator
    ) -> Pulse:
        return pulse

    def observe_announcement(self, announcement: "Announcement") -> None:
        pass

    def produce_guesses(self) -> dict[int, int]:
        """Per-round key-bit guesses, keyed by round id."""
        return {}

    def metrics(self) -> dict[str, int]:
        """Strategy-specific counters (e.g. conclusive relays)."""
        return {}


def transmit(
    pulse: Pulse,
    leg: Leg,
    round_id: int,
    interceptor: Optional[Interceptor] = None,
    loss: float = 0.0,
    rng_channel: Optional[np.random.Generator] = None,
    rng_eve: Optional[np.random.Generator] = None,
) -> Pulse:
    """Carry a pulse across one leg: interception hook first, then loss.

    Each photon is dropped independently with probability `loss`.
    """
    if not 0.0 <= loss <= 1.0:
        raise ParameterError(f"loss must be in [0, 1], got {loss}")
    if interceptor is not None:
        pulse = interceptor.intercept(leg, pulse, round_id, rng_eve)
    if loss == 0.0 or pulse.is_empty:
        return pulse
    if loss == 1.0:
        return pulse.with_photons(())
    kept: list[Photon] = []
    for photon in pulse.photons:
        if rng_channel.random() >= loss:
            kept.append(photon)
    return pulse.with_photons(tuple(kept))


class PublicBoard:
    """Authenticated public bulletin board for the end-of-session announcement."""

    def __init__(self) -> None:
        self._announcement: Optional["Announcement"] = None

    def publish(self, announcement: "Announcement") -> None:
        if self._announcement is not None:
            raise ProtocolError("announcement already published")
        self._announcement = announcement

    def read_public(self) -> Optional["Announcement"]:
        return self._announcement
