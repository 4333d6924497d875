"""Eavesdropping strategies, each as a channel interceptor.

Eve is deliberately idealized (lossless taps, nondemolition photon
counting, perfect quantum storage measured only after the announcement)
so that the detection claims are tested against the strongest modeled
adversary. Probe capture on the final leg targets her own injected photon
only; legitimate photons are never altered by the probe-based strategies.

Strategies:

* ``impersonation`` - full three-leg intercept-resend, single-photon mode.
* ``pulse_beamsplit`` - same storyline in pulse mode; the returning pulse
  is split into N sub-pulses measured against the N candidate screening
  bases, and Eve relays a corrected pulse only on conclusive readouts.
* ``pns_trojan`` - removes one photon from multi-photon pulses, re-injects
  it on the return leg so Alice's unitary imprints k and alpha_a on it,
  then recaptures it.
* ``standard_state`` - injects a fixed-angle probe instead of the removed photon.
* ``simple_trojan`` - injects an independent probe at a chosen angle.
* ``passive_pns`` - silently stores one photon per leg from multi-photon
  pulses and estimates key bits after the announcement.

Every strategy honors ``attack_probability``: at 0 it never touches a
pulse, reproducing honest statistics exactly for the same seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .channel import Interceptor, Leg
from .errors import ConfigError
from .photonics import (
    PI,
    MeasurementBasis,
    Origin,
    Photon,
    Pulse,
    born_probability,
    canon,
    measure,
)
from .protocol import Announcement, ProtocolParams, MODE_PULSE, MODE_SINGLE

STRATEGY_NONE = "none"
STRATEGY_IMPERSONATION = "impersonation"
STRATEGY_PULSE_BEAMSPLIT = "pulse_beamsplit"
STRATEGY_PNS_TROJAN = "pns_trojan"
STRATEGY_STANDARD_STATE = "standard_state"
STRATEGY_SIMPLE_TROJAN = "simple_trojan"
STRATEGY_PASSIVE_PNS = "passive_pns"

STRATEGIES = (
    STRATEGY_NONE,
    STRATEGY_IMPERSONATION,
    STRATEGY_PULSE_BEAMSPLIT,
    STRATEGY_PNS_TROJAN,
    STRATEGY_STANDARD_STATE,
    STRATEGY_SIMPLE_TROJAN,
    STRATEGY_PASSIVE_PNS,
)


@dataclass(frozen=True)
class AttackConfig:
    """Strategy selector plus its knobs.

    ``eve_tap_fraction`` is the per-round probability that Eve recovers
    her own probe photon on the final leg; ``trojan_angle`` is the probe
    polarization for the simple Trojan; ``theta_oracle`` enables the
    counterfactual estimator validation mode of the standard-state strategy, in
    which the harness feeds Eve the true theta values after the fact.
    """

    strategy: str = STRATEGY_NONE
    eve_tap_fraction: float = 1.0
    trojan_angle: float = 0.0
    attack_probability: float = 1.0
    theta_oracle: bool = False
    # Impersonation basis-guess distribution over the screening set;
    # None means uniform. Length must equal the screening-set size.
    guess_weights: Optional[tuple[float, ...]] = None

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"attack: unknown strategy {self.strategy!r}")
        if not 0.0 <= self.eve_tap_fraction <= 1.0:
            raise ConfigError(
                f"eve_tap_fraction: must be in [0, 1], got {self.eve_tap_fraction}"
            )
        if not 0.0 <= self.attack_probability <= 1.0:
            raise ConfigError(
                f"attack_probability: must be in [0, 1], got {self.attack_probability}"
            )
        if self.guess_weights is not None:
            object.__setattr__(self, "guess_weights", tuple(self.guess_weights))
            if any(w < 0 for w in self.guess_weights) or sum(self.guess_weights) <= 0:
                raise ConfigError(
                    f"guess_weights: need nonnegative weights with a positive sum, "
                    f"got {self.guess_weights}"
                )


@dataclass
class EveStorage:
    """Per-round quantum storage sets and emitted guesses.

    Stored photons are retrieved with pop semantics so each can be
    measured at most once.
    """

    e1: dict[int, tuple[Photon, ...]] = field(default_factory=dict)
    e2: dict[int, tuple[Photon, ...]] = field(default_factory=dict)
    guesses: dict[int, int] = field(default_factory=dict)

    def pop_e1(self, round_id: int) -> tuple[Photon, ...]:
        return self.e1.pop(round_id, ())

    def pop_e2(self, round_id: int) -> tuple[Photon, ...]:
        return self.e2.pop(round_id, ())


def _normalized_guess_probs(
    config: AttackConfig, params: ProtocolParams
) -> Optional[tuple[float, ...]]:
    """Validate and normalize a basis-guess distribution (None = uniform)."""
    if config.guess_weights is None:
        return None
    if len(config.guess_weights) != params.n_screening:
        raise ConfigError(
            f"guess_weights: expected {params.n_screening} weights, "
            f"got {len(config.guess_weights)}"
        )
    total = sum(config.guess_weights)
    return tuple(w / total for w in config.guess_weights)


def _draw_guess_index(
    probs: Optional[tuple[float, ...]], n: int, rng: np.random.Generator
) -> int:
    if probs is None:
        return int(rng.integers(0, n))
    u = rng.random()
    acc = 0.0
    for i, p in enumerate(probs):
        acc += p
        if u < acc:
            return i
    return n - 1


class _BaseAttack(Interceptor):
    """Shared plumbing: per-round activation and the announcement cache."""

    def __init__(self, config: AttackConfig, params: ProtocolParams) -> None:
        self.config = config
        self.params = params
        self.angles = params.angles
        self.storage = EveStorage()
        self.announcement: Optional[Announcement] = None
        self._active: dict[int, bool] = {}
        self._rng: Optional[np.random.Generator] = None

    def _is_active(self, round_id: int, rng: np.random.Generator) -> bool:
        active = self._active.get(round_id)
        if active is None:
            p = self.config.attack_probability
            if p == 0.0:
                active = False
            elif p == 1.0:
                active = True
            else:
                active = rng.random() < p
            self._active[round_id] = active
        return active

    def intercept(
        self, leg: Leg, pulse: Pulse, round_id: int, rng: np.random.Generator
    ) -> Pulse:
        self._rng = rng
        if not self._is_active(round_id, rng):
            return pulse
        return self._act(leg, pulse, round_id, rng)

    def _act(
        self, leg: Leg, pulse: Pulse, round_id: int, rng: np.random.Generator
    ) -> Pulse:
        raise NotImplementedError

    def observe_announcement(self, announcement: Announcement) -> None:
        self.announcement = announcement

    def produce_guesses(self) -> dict[int, int]:
        return dict(self.storage.guesses)


class _ImpersonationBase(_BaseAttack):
    """Common first two legs of the intercept-resend storyline.

    Leg 1: store Alice's pulse, substitute one at a random theta'.
    Leg 2: compensate theta' on Bob's reply and store it; return the
    stored original so Alice encodes onto her own photons. What happens
    on the final leg distinguishes the variants.
    """

    def __init__(self, config: AttackConfig, params: ProtocolParams) -> None:
        super().__init__(config, params)
        self._theta_prime: dict[int, float] = {}

    def _act(
        self, leg: Leg, pulse: Pulse, round_id: int, rng: np.random.Generator
    ) -> Pulse:
        if leg is Leg.ALICE_TO_BOB_1:
            self.storage.e1[round_id] = pulse.photons
            theta_prime = rng.random() * PI
            self._theta_prime[round_id] = theta_prime
            substitute = tuple(
                Photon(theta_prime, Origin.EVE_REPLAYED) for _ in pulse.photons
            )
            return pulse.with_photons(substitute)
        if leg is Leg.BOB_TO_ALICE:
            compensated = pulse.rotated(-self._theta_prime.get(round_id, 0.0))
            self.storage.e2[round_id] = compensated.photons
            return pulse.with_photons(self.storage.pop_e1(round_id))
        return self._act_final_leg(pulse, round_id, rng)

    def _act_final_leg(
        self, pulse: Pulse, round_id: int, rng: np.random.Generator
    ) -> Pulse:
        raise NotImplementedError


class ImpersonationSinglePhoton(_ImpersonationBase):
    """Intercept-resend against all three legs, single-photon mode.

    On the final leg the returning state is (-1)^k pi/4 + alpha_a (theta
    cancelled): Eve guesses a screening angle, measures in the guessed
    basis (alpha_g +/- pi/4), and re-encodes the readout onto the stored
    reply with the same sign convention Alice uses for k.
    """

    def __init__(self, config: AttackConfig, params: ProtocolParams) -> None:
        super().__init__(config, params)
        self._guess_probs = _normalized_guess_probs(config, params)

    def _act_final_leg(
        self, pulse: Pulse, round_id: int, rng: np.random.Generator
    ) -> Pulse:
        if pulse.is_empty:
            return pulse
        guess_index = _draw_guess_index(self._guess_probs, len(self.angles), rng)
        basis = MeasurementBasis(self.angles[guess_index] + PI / 4)
        readout = measure(pulse.photons[0], basis, rng)
        self.storage.guesses[round_id] = readout
        sign = 1.0 if readout == 0 else -1.0
        relay = tuple(
            p.rotated(sign * PI / 4) for p in self.storage.pop_e2(round_id)
        )
        return pulse.with_photons(relay)


class PulseBeamSplit(_ImpersonationBase):
    """Pulse-mode impersonation with an N-way measurement on the final leg.

    The returning pulse is split into N equal sub-pulses and sub-pulse i
    is measured in the basis (alpha_i + pi/4, alpha_i - pi/4). A readout
    is conclusive iff exactly one hypothesis (alpha_a, k) assigns nonzero
    probability to every observed outcome; only then does Eve know how to
    re-encode her stored reply exactly, otherwise she relays it untouched
    and unavoidably injects errors.
    """

    def __init__(self, config: AttackConfig, params: ProtocolParams) -> None:
        super().__init__(config, params)
        self.reported_rounds = 0
        self.conclusive_rounds = 0

    def _act_final_leg(
        self, pulse: Pulse, round_id: int, rng: np.random.Generator
    ) -> Pulse:
        if pulse.is_empty:
            return pulse
        self.reported_rounds += 1
        n = len(self.angles)
        consistent = {(i, k) for i in range(n) for k in (0, 1)}
        for photon in pulse.photons:
            i = int(rng.integers(0, n))
            bit = measure(photon, MeasurementBasis(self.angles[i] + PI / 4), rng)
            # Outcome bit b in basis i has zero Born probability only under
            # the hypothesis (alpha_i, 1 - b), which it therefore excludes.
            consistent.discard((i, 1 - bit))
        stored = self.storage.pop_e2(round_id)
        if len(consistent) == 1:
            self.conclusive_rounds += 1
            a_i, k_hat = next(iter(consistent))
            self.storage.guesses[round_id] = k_hat
            sign = 1.0 if k_hat == 0 else -1.0
            relay = tuple(
                p.rotated(sign * PI / 4 + self.angles[a_i]) for p in stored
            )
            return pulse.with_photons(relay)
        return pulse.with_photons(stored)

    def metrics(self) -> dict[str, int]:
        return {
            "reported_rounds": self.reported_rounds,
            "conclusive_rounds": self.conclusive_rounds,
        }


class _ProbeCaptureAttack(_BaseAttack):
    """Shared final-leg recapture: Eve pulls back her own probe photon.

    The probe is identified by its injection tag (the idealized stand-in
    for physical marking) and always separated out of the pulse, so it
    never reaches Bob's detectors; with probability ``eve_tap_fraction``
    Eve recovers it into storage, otherwise it is lost. Legitimate
    photons pass untouched either way, which keeps these strategies
    exactly invisible in QBER.
    """

    def __init__(self, config: AttackConfig, params: ProtocolParams) -> None:
        super().__init__(config, params)
        self.captured_rounds = 0

    def _capture_probe(
        self, pulse: Pulse, round_id: int, rng: np.random.Generator
    ) -> Pulse:
        for idx, photon in enumerate(pulse.photons):
            if photon.origin is Origin.TROJAN_INJECTED:
                remaining = pulse.photons[:idx] + pulse.photons[idx + 1 :]
                recovered = (
                    self.config.eve_tap_fraction == 1.0
                    or (
                        self.config.eve_tap_fraction > 0.0
                        and rng.random() < self.config.eve_tap_fraction
                    )
                )
                if recovered:
                    self.storage.e2[round_id] = (photon,)
                    self.captured_rounds += 1
                return pulse.with_photons(remaining)
        return pulse

    def _alpha_a(self, round_id: int) -> float:
        return self.angles[self.announcement.a_indices[round_id] - 1]

    def metrics(self) -> dict[str, int]:
        return {"captured_rounds": self.captured_rounds}


class PnsTrojanComposite(_ProbeCaptureAttack):
    """Photon-number splitting combined with a Trojan re-injection.

    Leg 1: nondemolition count; if the pulse has two or more photons, one
    is split off and stored (state theta).
    Leg 2: the stored photon is attached to Bob's reply, so Alice's
    unitary cancels theta on it and leaves (-1)^k pi/4 + alpha_a.
    Leg 3: the probe is recaptured; once alpha_a is announced, measuring
    it in (alpha_a + pi/4, alpha_a - pi/4) reads k without error.
    """

    def _act(
        self, leg: Leg, pulse: Pulse, round_id: int, rng: np.random.Generator
    ) -> Pulse:
        if leg is Leg.ALICE_TO_BOB_1:
            if pulse.count >= 2:
                split = pulse.photons[0]
                self.storage.e1[round_id] = (split,)
                return pulse.with_photons(pulse.photons[1:])
            return pulse
        if leg is Leg.BOB_TO_ALICE:
            stored = self.storage.pop_e1(round_id)
            if stored:
                probe = Photon(stored[0].polarization, Origin.TROJAN_INJECTED)
                return pulse.with_photons(pulse.photons + (probe,))
            return pulse
        return self._capture_probe(pulse, round_id, rng)

    def produce_guesses(self) -> dict[int, int]:
        if self.announcement is None:
            return {}
        for round_id in sorted(self.storage.e2):
            probe = self.storage.pop_e2(round_id)[0]
            basis = MeasurementBasis(self._alpha_a(round_id) + PI / 4)
            self.storage.guesses[round_id] = measure(probe, basis, self._rng)
        return dict(self.storage.guesses)


class StandardStateProbe(_ProbeCaptureAttack):
    """Trojan variant injecting a fixed standard state instead of a split photon.

    The probe enters at angle 0 on the return leg, so Alice's unitary
    leaves it at -theta + (-1)^k pi/4 + alpha_a: the unknown theta
    randomizes it completely and the post-announcement estimate of k is a
    coin flip. With ``theta_oracle`` the harness hands Eve the true theta
    values afterwards, which degenerates the estimator to a perfect one
    and validates its implementation.
    """

    def __init__(self, config: AttackConfig, params: ProtocolParams) -> None:
        super().__init__(config, params)
        self._counterfactual_thetas: Optional[list[float]] = None

    def _act(
        self, leg: Leg, pulse: Pulse, round_id: int, rng: np.random.Generator
    ) -> Pulse:
        if leg is Leg.BOB_TO_ALICE:
            probe = Photon(0.0, Origin.TROJAN_INJECTED)
            return pulse.with_photons(pulse.photons + (probe,))
        if leg is Leg.ALICE_TO_BOB_2:
            return self._capture_probe(pulse, round_id, rng)
        return pulse

    def set_counterfactual_thetas(self, thetas: list[float]) -> None:
        """Counterfactual validation hook; only used when theta_oracle is set."""
        self._counterfactual_thetas = list(thetas)

    def produce_guesses(self) -> dict[int, int]:
        if self.announcement is None:
            return {}
        for round_id in sorted(self.storage.e2):
            probe = self.storage.pop_e2(round_id)[0]
            polarization = probe.polarization
            if self.config.theta_oracle and self._counterfactual_thetas is not None:
                polarization = canon(polarization + self._counterfactual_thetas[round_id])
            basis = MeasurementBasis(self._alpha_a(round_id) + PI / 4)
            p0 = born_probability(polarization, basis.axis)
            self.storage.guesses[round_id] = 0 if self._rng.random() < p0 else 1
        return dict(self.storage.guesses)


class SimpleTrojan(_ProbeCaptureAttack):
    """Independent Trojan probe at a fixed angle eta.

    Alice's theta compensation leaves the recaptured probe at
    eta - theta + (-1)^k pi/4 + alpha_a, uniformly random for uniform
    theta, so the probe carries zero information for every eta.
    """

    def _act(
        self, leg: Leg, pulse: Pulse, round_id: int, rng: np.random.Generator
    ) -> Pulse:
        if leg is Leg.BOB_TO_ALICE:
            probe = Photon(self.config.trojan_angle, Origin.TROJAN_INJECTED)
            return pulse.with_photons(pulse.photons + (probe,))
        if leg is Leg.ALICE_TO_BOB_2:
            return self._capture_probe(pulse, round_id, rng)
        return pulse

    def produce_guesses(self) -> dict[int, int]:
        if self.announcement is None:
            return {}
        for round_id in sorted(self.storage.e2):
            probe = self.storage.pop_e2(round_id)[0]
            basis = MeasurementBasis(self._alpha_a(round_id) + PI / 4)
            self.storage.guesses[round_id] = measure(probe, basis, self._rng)
        return dict(self.storage.guesses)


class PassivePns(_BaseAttack):
    """Pure photon-number splitting: store one photon per leg, never relay.

    Quantum storage is read only after the announcement. On analyzing
    rounds phi equals the published phi*, so a stored final-leg photon can
    be measured in a basis where its state depends only on k; on all other
    rounds theta and phi stay uniform and the estimate is a coin flip.
    """

    def __init__(self, config: AttackConfig, params: ProtocolParams) -> None:
        super().__init__(config, params)
        self._stored: dict[Leg, dict[int, Photon]] = {leg: {} for leg in Leg}
        # Which legs each guessed round had a stored photon on, kept for
        # offline reporting after the storage itself has been consumed.
        self.guess_sources: dict[int, frozenset[Leg]] = {}

    def _act(
        self, leg: Leg, pulse: Pulse, round_id: int, rng: np.random.Generator
    ) -> Pulse:
        if pulse.count >= 2:
            self._stored[leg][round_id] = pulse.photons[0]
            return pulse.with_photons(pulse.photons[1:])
        return pulse

    def produce_guesses(self) -> dict[int, int]:
        if self.announcement is None:
            return {}
        ann = self.announcement
        guessed_rounds = sorted(
            set().union(*(table.keys() for table in self._stored.values()))
        )
        for round_id in guessed_rounds:
            self.guess_sources[round_id] = frozenset(
                leg for leg, table in self._stored.items() if round_id in table
            )
            final = self._stored[Leg.ALICE_TO_BOB_2].pop(round_id, None)
            alpha_sum = (
                self.angles[ann.a_indices[round_id] - 1]
                + self.angles[ann.b_indices[round_id] - 1]
            )
            if final is not None and ann.analyzing_flags[round_id]:
                # State phi* + (-1)^k pi/4 + alpha_a + alpha_b with every
                # term except k public: the readout is deterministic in k.
                axis = ann.phi_star_values[round_id] + alpha_sum + PI / 4
                bit = measure(final, MeasurementBasis(axis), self._rng)
            elif final is not None:
                bit = measure(final, MeasurementBasis(alpha_sum + PI / 4), self._rng)
            else:
                bit = int(self._rng.integers(0, 2))
            self.storage.guesses[round_id] = bit
        return dict(self.storage.guesses)

    def metrics(self) -> dict[str, int]:
        return {
            "stored_leg1": len(self._stored[Leg.ALICE_TO_BOB_1]),
            "stored_leg2": len(self._stored[Leg.BOB_TO_ALICE]),
        }


# passive_pns is not listed pulse-only: in single-photon mode it simply
# never finds a multi-photon pulse to split and emits zero guesses.
_SINGLE_ONLY = {STRATEGY_IMPERSONATION}
_PULSE_ONLY = {STRATEGY_PULSE_BEAMSPLIT, STRATEGY_PNS_TROJAN}

_CLASSES = {
    STRATEGY_IMPERSONATION: ImpersonationSinglePhoton,
    STRATEGY_PULSE_BEAMSPLIT: PulseBeamSplit,
    STRATEGY_PNS_TROJAN: PnsTrojanComposite,
    STRATEGY_STANDARD_STATE: StandardStateProbe,
    STRATEGY_SIMPLE_TROJAN: SimpleTrojan,
    STRATEGY_PASSIVE_PNS: PassivePns,
}


def build_interceptor(
    config: AttackConfig, params: ProtocolParams
) -> Optional[Interceptor]:
    """Instantiate the configured strategy, validating mode compatibility."""
    if config.strategy == STRATEGY_NONE:
        return None
    if config.strategy in _SINGLE_ONLY and params.mode != MODE_SINGLE:
        raise ConfigError(
            f"attack: {config.strategy} requires single-photon mode, got {params.mode!r}"
        )
    if config.strategy in _PULSE_ONLY and params.mode != MODE_PULSE:
        raise ConfigError(
            f"attack: {config.strategy} requires pulse mode, got {params.mode!r}"
        )
    return _CLASSES[config.strategy](config, params)
