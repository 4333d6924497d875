import dataclasses
import hashlib
import math

import numpy as np
import pytest
from scipy.stats import kstest

from screenqkd.errors import ParameterError, ProtocolError
from screenqkd.photonics import PI, Pulse, single_photon_pulse
from screenqkd.protocol import (
    Announcement,
    ProtocolParams,
    Verdict,
    alice_encode,
    alice_prepare,
    bob_decode,
    bob_transform,
    derive_rng,
    expected_ad_bit,
    is_matched,
    key_digest,
    pack_key_bits,
    run_session,
    screening_angles,
    sift_and_verify,
)

from conftest import binom_sigma


class TestScreeningAngles:
    def test_n2_matches_published_set(self):
        assert screening_angles(2) == pytest.approx([PI / 6, PI / 3], abs=1e-12)

    def test_n1(self):
        assert screening_angles(1) == pytest.approx([PI / 4], abs=1e-12)

    def test_n3(self):
        assert screening_angles(3) == pytest.approx(
            [PI / 8, PI / 4, 3 * PI / 8], abs=1e-12
        )

    @pytest.mark.parametrize("n", [1, 2, 5, 17])
    def test_strictly_increasing_inside_open_interval(self, n):
        angles = screening_angles(n)
        assert all(0.0 < a < PI / 2 for a in angles)
        assert all(b > a for a, b in zip(angles, angles[1:]))
        assert len(set(angles)) == n

    def test_matched_pairs_sum_to_quarter_turn(self):
        angles = screening_angles(5)
        for i in range(5):
            assert angles[i] + angles[4 - i] == pytest.approx(PI / 2, abs=1e-12)

    def test_rejects_nonpositive(self):
        with pytest.raises(ParameterError):
            screening_angles(0)


class TestParams:
    def test_rejects_bad_values(self):
        with pytest.raises(ParameterError):
            ProtocolParams(n_screening=0)
        with pytest.raises(ParameterError):
            ProtocolParams(rounds=0)
        with pytest.raises(ParameterError):
            ProtocolParams(p_analyzing=1.5)
        with pytest.raises(ParameterError):
            ProtocolParams(transmission=-0.1)
        with pytest.raises(ParameterError):
            ProtocolParams(mode="coherent")
        with pytest.raises(ParameterError):
            ProtocolParams(mean_photons=-1.0)
        with pytest.raises(ParameterError):
            ProtocolParams(digest="not-a-hash")


class TestAlicePrepare:
    def test_single_mode_one_photon(self):
        params = ProtocolParams(mode="single")
        rng = np.random.default_rng(0)
        theta, pulse = alice_prepare(params, rng, 0)
        assert pulse.count == 1
        assert pulse.photons[0].polarization == pytest.approx(theta)

    def test_distinct_thetas(self):
        params = ProtocolParams()
        rng = np.random.default_rng(1)
        t1, _ = alice_prepare(params, rng, 0)
        t2, _ = alice_prepare(params, rng, 1)
        assert t1 != t2

    def test_theta_uniform(self):
        params = ProtocolParams()
        rng = np.random.default_rng(2)
        thetas = [alice_prepare(params, rng, i)[0] / PI for i in range(100_000)]
        result = kstest(thetas, "uniform")
        assert result.pvalue > 0.01


class TestBobTransform:
    def test_rotation_arithmetic(self):
        params = ProtocolParams(n_screening=2, p_analyzing=0.0)
        rng = np.random.default_rng(3)
        theta = 0.37
        pulse, phi, b_index, is_analyzing, phi_star = bob_transform(
            single_photon_pulse(theta), params, rng
        )
        alpha_b = params.angles[b_index - 1]
        assert not is_analyzing and phi_star is None
        assert pulse.photons[0].polarization == pytest.approx(
            (theta + phi + alpha_b) % PI, abs=1e-12
        )

    def test_never_analyzing_at_zero(self):
        params = ProtocolParams(p_analyzing=0.0)
        rng = np.random.default_rng(4)
        for _ in range(500):
            _, _, _, is_analyzing, _ = bob_transform(single_photon_pulse(0.1), params, rng)
            assert not is_analyzing

    def test_always_analyzing_at_one(self):
        params = ProtocolParams(p_analyzing=1.0)
        rng = np.random.default_rng(5)
        seen = set()
        for _ in range(500):
            _, phi, _, is_analyzing, phi_star = bob_transform(
                single_photon_pulse(0.1), params, rng
            )
            assert is_analyzing
            assert phi == phi_star
            assert phi_star in (0.0, PI / 2)
            seen.add(phi_star)
        assert seen == {0.0, PI / 2}


class TestAliceEncode:
    def test_rotation_arithmetic_no_tap(self):
        params = ProtocolParams(n_screening=2, transmission=1.0)
        rng = np.random.default_rng(6)
        theta, phi, alpha_b = 0.81, 1.1, params.angles[1]
        incoming = single_photon_pulse(theta + phi + alpha_b)
        for k in (0, 1):
            to_bob, ad_outcomes, _ = alice_encode(incoming, theta, k, 1, params, rng)
            assert ad_outcomes == ()
            assert to_bob.count == 1
            expected = (phi + (-1) ** k * PI / 4 + params.angles[0] + alpha_b) % PI
            assert to_bob.photons[0].polarization == pytest.approx(expected, abs=1e-12)

    def test_full_tap_consumes_pulse(self):
        params = ProtocolParams(n_screening=2, transmission=0.0)
        rng = np.random.default_rng(7)
        to_bob, ad_outcomes, origins = alice_encode(
            single_photon_pulse(0.4), 0.4, 0, 1, params, rng
        )
        assert to_bob.is_empty
        assert len(ad_outcomes) == 1 and len(origins) == 1

    def test_matched_analyzing_ad_bit_all_cases(self):
        # exhaustive (k, phi*) x matched pair check of the integrity relation
        params = ProtocolParams(n_screening=2, transmission=0.0)
        rng = np.random.default_rng(8)
        theta = 1.234
        for a_index, b_index in ((1, 2), (2, 1)):
            alpha_b = params.angles[b_index - 1]
            for k in (0, 1):
                for phi_star in (0.0, PI / 2):
                    incoming = single_photon_pulse(theta + phi_star + alpha_b)
                    _, ad_outcomes, _ = alice_encode(
                        incoming, theta, k, a_index, params, rng
                    )
                    assert ad_outcomes == (expected_ad_bit(k, phi_star),)

    def test_rejects_bad_arguments(self):
        params = ProtocolParams(n_screening=2)
        rng = np.random.default_rng(9)
        with pytest.raises(ParameterError):
            alice_encode(single_photon_pulse(0.0), 0.0, 2, 1, params, rng)
        with pytest.raises(ParameterError):
            alice_encode(single_photon_pulse(0.0), 0.0, 0, 3, params, rng)


class TestBobDecode:
    def test_matched_round_outcomes(self):
        rng = np.random.default_rng(10)
        phi = 0.77
        for k, expected in ((0, 1), (1, 0)):
            state = phi + (-1) ** k * PI / 4 + PI / 2
            outcome, conclusive, received = bob_decode(
                single_photon_pulse(state), phi, rng
            )
            assert conclusive and received == 1
            assert outcome == expected == (k ^ 1)

    def test_vacuum_absent(self):
        rng = np.random.default_rng(11)
        outcome, conclusive, received = bob_decode(Pulse(), 0.3, rng)
        assert outcome is None and not conclusive and received == 0

    def test_multi_photon_agreement(self):
        rng = np.random.default_rng(12)
        phi = 0.2
        state = phi + PI / 4 + PI / 2  # k = 0 on a matched round
        pulse = Pulse(tuple(single_photon_pulse(state).photons * 4))
        outcome, conclusive, received = bob_decode(pulse, phi, rng)
        assert conclusive and received == 4 and outcome == 1


class TestKeyDigest:
    def test_big_endian_packing(self):
        assert pack_key_bits([]) == b""
        assert pack_key_bits([1]) == b"\x80"
        assert pack_key_bits([1, 0, 0, 0, 0, 0, 0, 0]) == b"\x80"
        assert pack_key_bits([0, 1]) == b"\x40"
        assert pack_key_bits([1] * 8 + [1]) == b"\xff\x80"

    def test_digest_matches_hashlib(self):
        bits = [1, 0, 1, 1, 0, 0, 1, 0, 1]
        assert key_digest(bits) == hashlib.sha256(pack_key_bits(bits)).digest()
        assert len(key_digest(bits)) == 32


def _honest_session(**overrides):
    defaults = dict(
        n_screening=2, rounds=5000, p_analyzing=0.2, transmission=0.9,
        mode="single", seed=42,
    )
    defaults.update(overrides)
    return run_session(ProtocolParams(**defaults))


class TestHonestSession:
    def test_keys_identical_and_accepted(self):
        transcript = _honest_session()
        assert transcript.alice_key == transcript.bob_key
        assert len(transcript.alice_key) > 0
        assert transcript.alice_hash == transcript.bob_hash
        assert transcript.verdict is Verdict.ACCEPTED
        assert transcript.ad_violations == 0

    def test_end_to_end_outcome_identity(self):
        # O_b = k ^ 1 on every matched detected round, analyzing or not
        transcript = _honest_session(seed=43)
        checked = 0
        for rec in transcript.rounds:
            if is_matched(rec.a_index, rec.b_index, 2) and rec.bob_outcome is not None:
                assert rec.bob_outcome == rec.k ^ 1
                checked += 1
        assert checked > 1000

    def test_integrity_condition_exact(self):
        transcript = _honest_session(seed=44, p_analyzing=0.5, transmission=0.5)
        checked = 0
        for rec in transcript.rounds:
            if is_matched(rec.a_index, rec.b_index, 2) and rec.is_analyzing:
                expected = expected_ad_bit(rec.k, rec.phi_star)
                for bit in rec.ad_outcomes:
                    assert bit == expected
                    checked += 1
        assert checked > 100

    def test_analyzing_phi_equals_phi_star(self):
        transcript = _honest_session(seed=45, p_analyzing=0.5)
        for rec in transcript.rounds:
            if rec.is_analyzing:
                assert rec.phi == rec.phi_star
            else:
                assert rec.phi_star is None

    def test_bob_outcome_present_iff_detected(self):
        transcript = _honest_session(seed=46)
        for rec in transcript.rounds:
            assert (rec.bob_outcome is not None) == (rec.bob_received_photons >= 1)

    @pytest.mark.parametrize("n", [1, 2, 3, 5, 10])
    def test_matching_probability(self, n):
        rounds = 20_000
        transcript = run_session(
            ProtocolParams(n_screening=n, rounds=rounds, seed=47, mode="single")
        )
        matched = sum(
            is_matched(r.a_index, r.b_index, n) for r in transcript.rounds
        )
        p = 1.0 / n
        assert abs(matched / rounds - p) <= 3 * binom_sigma(p, rounds) + 1e-12

    def test_sifted_key_length(self):
        n, rounds, p_a, t = 2, 40_000, 0.2, 0.9
        transcript = run_session(
            ProtocolParams(
                n_screening=n, rounds=rounds, p_analyzing=p_a,
                transmission=t, mode="single", seed=48,
            )
        )
        expected = rounds * (1 / n) * (1 - p_a) * t
        p = (1 / n) * (1 - p_a) * t
        assert abs(len(transcript.alice_key) - expected) <= 3 * math.sqrt(
            rounds * p * (1 - p)
        )

    def test_non_analyzing_ad_outcomes_uncorrelated_with_key(self):
        transcript = _honest_session(seed=49, rounds=30_000, transmission=0.5)
        pairs = [
            (bit, rec.k)
            for rec in transcript.rounds
            if not rec.is_analyzing
            for bit in rec.ad_outcomes
        ]
        n = len(pairs)
        assert n > 5000
        bits = np.array([p[0] for p in pairs], dtype=float)
        ks = np.array([p[1] for p in pairs], dtype=float)
        corr = np.corrcoef(bits, ks)[0, 1]
        assert abs(corr) <= 4 / math.sqrt(n)

    def test_session_deterministic(self):
        params = ProtocolParams(n_screening=2, rounds=2000, seed=50)
        t1 = run_session(params)
        t2 = run_session(params)
        assert t1.rounds == t2.rounds
        assert t1.alice_key == t2.alice_key
        assert t1.alice_hash == t2.alice_hash

    def test_lossy_channel_shrinks_key_but_stays_clean(self):
        rounds, loss, t = 30_000, 0.2, 0.9
        params = ProtocolParams(
            n_screening=2, rounds=rounds, p_analyzing=0.2,
            transmission=t, mode="single", seed=54,
        )
        transcript = run_session(params, channel_loss=loss)
        assert transcript.alice_key == transcript.bob_key
        assert transcript.verdict is Verdict.ACCEPTED
        # the photon must survive three lossy legs and the AD tap
        p_detect = (1 - loss) ** 3 * t
        p_key = 0.5 * 0.8 * p_detect
        assert abs(len(transcript.alice_key) - rounds * p_key) <= 3 * math.sqrt(
            rounds * p_key * (1 - p_key)
        )

    def test_honest_pulse_mode_stays_clean(self):
        # multi-photon pulses agree deterministically on matched rounds,
        # so pulse mode is as error-free as single-photon mode
        params = ProtocolParams(
            n_screening=2, rounds=20_000, p_analyzing=0.3, transmission=0.8,
            mode="pulse", mean_photons=3.0, seed=56,
        )
        transcript = run_session(params)
        assert len(transcript.alice_key) > 5000
        assert transcript.alice_key == transcript.bob_key
        assert transcript.ad_violations == 0 and transcript.ad_checked > 500
        assert transcript.verdict is Verdict.ACCEPTED
        inconclusive_matched = sum(
            1
            for r in transcript.rounds
            if is_matched(r.a_index, r.b_index, 2)
            and r.bob_received_photons >= 1
            and not r.bob_conclusive
        )
        assert inconclusive_matched == 0

    def test_vacuum_source_produces_empty_accepted_session(self):
        params = ProtocolParams(
            n_screening=2, rounds=300, mode="pulse", mean_photons=0.0, seed=55,
        )
        transcript = run_session(params)
        assert transcript.alice_key == ()
        assert transcript.alice_hash == transcript.bob_hash
        assert transcript.verdict is Verdict.ACCEPTED


class TestSiftAndVerify:
    def test_flipped_bob_bit_gives_hash_mismatch(self):
        transcript = _honest_session(seed=51)
        rounds = list(transcript.rounds)
        for i, rec in enumerate(rounds):
            if (
                is_matched(rec.a_index, rec.b_index, 2)
                and not rec.is_analyzing
                and rec.bob_outcome is not None
            ):
                rounds[i] = dataclasses.replace(rec, bob_outcome=rec.bob_outcome ^ 1)
                break
        tampered = sift_and_verify(
            transcript.params, rounds, Announcement.from_rounds(rounds)
        )
        assert tampered.verdict is Verdict.HASH_MISMATCH
        assert tampered.alice_key != tampered.bob_key

    def test_announcement_length_mismatch_aborts(self):
        transcript = _honest_session(seed=52, rounds=100)
        bad = Announcement(
            a_indices=transcript.announcement.a_indices[:-1],
            b_indices=transcript.announcement.b_indices,
            analyzing_flags=transcript.announcement.analyzing_flags,
            phi_star_values=transcript.announcement.phi_star_values,
        )
        with pytest.raises(ProtocolError):
            sift_and_verify(transcript.params, transcript.rounds, bad)

    def test_analyzing_rounds_excluded_from_key(self):
        transcript = _honest_session(seed=53, p_analyzing=1.0)
        assert transcript.alice_key == ()
        assert transcript.verdict is Verdict.ACCEPTED


def test_derive_rng_reproducible():
    a = derive_rng(7, 0, 1).random(4)
    b = derive_rng(7, 0, 1).random(4)
    c = derive_rng(7, 0, 2).random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
