"""Experiment harness: run trials, aggregate metrics, emit reports.

Aggregation is a pure fold over per-trial counters, so the result is
independent of trial completion order. Reports are fully deterministic:
identical (config, seed) produce byte-identical output files, which is
why they carry no timestamps.

Two AD violation rates are reported. ``ad_violation_rate`` is the
statistic the parties themselves can compute: violating outcomes over all
AD outcomes on matched analyzing rounds. ``ad_violation_rate_injected``
restricts the denominator to outcomes caused by adversary-injected
photons (known from the diagnostic origin tags); it is the quantity the
closed-form per-probe predictions refer to, undiluted by the legitimate
photons that satisfy the integrity condition deterministically.

Similarly, ``eve_accuracy`` scores every guess Eve emits against the true
key bit of that round, while ``eve_key_accuracy`` restricts scoring to
rounds that actually contributed key bits; the latter is the measure of
information leaked about the key.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

from .adversary import AttackConfig, build_interceptor
from .errors import ParameterError
from .photonics import PI, Origin
from .protocol import (
    ProtocolParams,
    SessionTranscript,
    Verdict,
    expected_ad_bit,
    is_matched,
    pack_key_bits,
    run_session,
    screening_angles,
)

SCHEMA_VERSION = "1"

FLAT_COLUMNS = (
    "trial",
    "N",
    "mode",
    "attack",
    "rounds",
    "sifted_bits",
    "matched_rate",
    "qber",
    "ad_clicks",
    "ad_violations",
    "ad_violation_rate",
    "eve_guesses",
    "eve_correct",
    "eve_accuracy",
    "verdict",
)


def ie_sum(n: int) -> float:
    """Lower-bound impersonation error sum over the screening set.

    Sum of sin^2(alpha_i - pi/2) for i = 1..N; equals N/2 identically
    because paired screening angles sum to pi/2.
    """
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    return sum(math.sin(a - PI / 2) ** 2 for a in screening_angles(n))


def ie_mean(n: int) -> float:
    """Per-round average of the impersonation error sum (always 1/2)."""
    return ie_sum(n) / n


@dataclass
class TrialCounts:
    """Order-independent counters extracted from one session transcript."""

    rounds: int = 0
    matched: int = 0
    sifted_bits: int = 0
    qber_errors: int = 0
    ad_clicks: int = 0
    ad_violations: int = 0
    ad_injected_clicks: int = 0
    ad_injected_violations: int = 0
    eve_guesses: int = 0
    eve_correct: int = 0
    eve_key_guesses: int = 0
    eve_key_correct: int = 0
    eve_analyzing_guesses: int = 0
    eve_analyzing_correct: int = 0
    beamsplit_reported: int = 0
    beamsplit_conclusive: int = 0
    verdict: str = Verdict.ACCEPTED.value

    def add_into(self, total: "TrialCounts") -> None:
        for name in (
            "rounds", "matched", "sifted_bits", "qber_errors",
            "ad_clicks", "ad_violations",
            "ad_injected_clicks", "ad_injected_violations",
            "eve_guesses", "eve_correct",
            "eve_key_guesses", "eve_key_correct",
            "eve_analyzing_guesses", "eve_analyzing_correct",
            "beamsplit_reported", "beamsplit_conclusive",
        ):
            setattr(total, name, getattr(total, name) + getattr(self, name))


def _ratio(num: int, den: int) -> Optional[float]:
    return num / den if den else None


def _bits_hex(bits: Sequence[int]) -> str:
    return pack_key_bits(bits).hex()


@dataclass(frozen=True)
class SessionSummary:
    """Auditable per-session record carried inside the structured report.

    Keys and flag sequences are big-endian bit-packed hex;
    ``phi_star_flags`` has a set bit where the analyzing angle was pi/2
    and is only meaningful where ``analyzing_flags`` is set.
    """

    verdict: str
    key_bits: int
    alice_key: str
    bob_key: str
    alice_hash: str
    bob_hash: str
    a_indices: tuple[int, ...]
    b_indices: tuple[int, ...]
    analyzing_flags: str
    phi_star_flags: str

    @classmethod
    def from_transcript(cls, transcript: SessionTranscript) -> "SessionSummary":
        ann = transcript.announcement
        return cls(
            verdict=transcript.verdict.value,
            key_bits=len(transcript.alice_key),
            alice_key=_bits_hex(transcript.alice_key),
            bob_key=_bits_hex(transcript.bob_key),
            alice_hash=transcript.alice_hash.hex(),
            bob_hash=transcript.bob_hash.hex(),
            a_indices=ann.a_indices,
            b_indices=ann.b_indices,
            analyzing_flags=_bits_hex([int(f) for f in ann.analyzing_flags]),
            phi_star_flags=_bits_hex(
                [
                    1 if flag and value > PI / 4 else 0
                    for flag, value in zip(ann.analyzing_flags, ann.phi_star_values)
                ]
            ),
        )


def qber(transcript: SessionTranscript) -> Optional[float]:
    """Fraction of sifted key bits on which Alice and Bob disagree.

    Absent (None) when the sifted key is empty.
    """
    if not transcript.alice_key:
        return None
    errors = sum(a != b for a, b in zip(transcript.alice_key, transcript.bob_key))
    return errors / len(transcript.alice_key)


def ad_violation_rate(transcript: SessionTranscript) -> Optional[float]:
    """Violating fraction of all AD outcomes on matched analyzing rounds."""
    return _ratio(transcript.ad_violations, transcript.ad_checked)


def score_trial(
    transcript: SessionTranscript,
    guesses: dict[int, int],
    metrics: dict[str, int],
) -> TrialCounts:
    """Reduce one transcript plus Eve's guesses to aggregate counters."""
    params = transcript.params
    counts = TrialCounts(rounds=len(transcript.rounds), verdict=transcript.verdict.value)
    counts.sifted_bits = len(transcript.alice_key)
    counts.qber_errors = sum(
        a != b for a, b in zip(transcript.alice_key, transcript.bob_key)
    )
    for rec in transcript.rounds:
        matched = is_matched(rec.a_index, rec.b_index, params.n_screening)
        if matched:
            counts.matched += 1
        if matched and rec.is_analyzing:
            expected = expected_ad_bit(rec.k, rec.phi_star)
            for bit, origin in zip(rec.ad_outcomes, rec.ad_origins):
                counts.ad_clicks += 1
                violated = bit != expected
                if violated:
                    counts.ad_violations += 1
                if origin is not Origin.LEGITIMATE:
                    counts.ad_injected_clicks += 1
                    if violated:
                        counts.ad_injected_violations += 1
        guess = guesses.get(rec.round_id)
        if guess is not None:
            correct = guess == rec.k
            counts.eve_guesses += 1
            counts.eve_correct += correct
            if rec.is_analyzing:
                counts.eve_analyzing_guesses += 1
                counts.eve_analyzing_correct += correct
            if matched and not rec.is_analyzing and rec.bob_outcome is not None:
                counts.eve_key_guesses += 1
                counts.eve_key_correct += correct
    counts.beamsplit_reported = metrics.get("reported_rounds", 0)
    counts.beamsplit_conclusive = metrics.get("conclusive_rounds", 0)
    return counts


@dataclass
class ExperimentReport:
    """Aggregated result of `trials` sessions at one parameter point."""

    schema_version: str
    config: dict
    seed: int
    trials: int
    rounds_per_trial: int
    totals: TrialCounts
    per_trial: list[TrialCounts]
    sessions: list[SessionSummary]
    verdicts: dict[str, int]
    theory: dict[str, float]

    @property
    def sift_rate(self) -> float:
        """Matched-round fraction; the key-rate law says this is ~ 1/N."""
        return self.totals.matched / self.totals.rounds

    @property
    def qber(self) -> Optional[float]:
        return _ratio(self.totals.qber_errors, self.totals.sifted_bits)

    @property
    def ad_violation_rate(self) -> Optional[float]:
        return _ratio(self.totals.ad_violations, self.totals.ad_clicks)

    @property
    def ad_violation_rate_injected(self) -> Optional[float]:
        return _ratio(self.totals.ad_injected_violations, self.totals.ad_injected_clicks)

    @property
    def eve_accuracy(self) -> Optional[float]:
        return _ratio(self.totals.eve_correct, self.totals.eve_guesses)

    @property
    def eve_key_accuracy(self) -> Optional[float]:
        return _ratio(self.totals.eve_key_correct, self.totals.eve_key_guesses)

    @property
    def eve_accuracy_analyzing(self) -> Optional[float]:
        return _ratio(self.totals.eve_analyzing_correct, self.totals.eve_analyzing_guesses)

    @property
    def eve_accuracy_non_analyzing(self) -> Optional[float]:
        guesses = self.totals.eve_guesses - self.totals.eve_analyzing_guesses
        correct = self.totals.eve_correct - self.totals.eve_analyzing_correct
        return _ratio(correct, guesses)

    @property
    def conclusive_rate(self) -> Optional[float]:
        return _ratio(self.totals.beamsplit_conclusive, self.totals.beamsplit_reported)

    def validate(self) -> None:
        t = self.totals
        pairs = (
            (t.matched, t.rounds),
            (t.qber_errors, max(t.sifted_bits, t.qber_errors)),
            (t.ad_violations, t.ad_clicks),
            (t.ad_injected_violations, t.ad_injected_clicks),
            (t.ad_injected_clicks, t.ad_clicks),
            (t.eve_correct, t.eve_guesses),
            (t.eve_key_correct, t.eve_key_guesses),
            (t.beamsplit_conclusive, max(t.beamsplit_reported, t.beamsplit_conclusive)),
        )
        for num, den in pairs:
            if num < 0 or num > den:
                raise ValueError(f"inconsistent counts: {num} > {den}")
        for rate in (
            self.sift_rate, self.qber, self.ad_violation_rate,
            self.ad_violation_rate_injected, self.eve_accuracy,
            self.eve_key_accuracy, self.conclusive_rate,
        ):
            if rate is not None and not 0.0 <= rate <= 1.0:
                raise ValueError(f"rate out of [0, 1]: {rate}")

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "config": self.config,
            "seed": self.seed,
            "trials": self.trials,
            "rounds_per_trial": self.rounds_per_trial,
            "totals": asdict(self.totals),
            "per_trial": [asdict(c) for c in self.per_trial],
            "sessions": [
                {**asdict(s), "a_indices": list(s.a_indices),
                 "b_indices": list(s.b_indices)}
                for s in self.sessions
            ],
            "verdicts": self.verdicts,
            "theory": self.theory,
            "metrics": {
                "sift_rate": self.sift_rate,
                "qber": self.qber,
                "ad_violation_rate": self.ad_violation_rate,
                "ad_violation_rate_injected": self.ad_violation_rate_injected,
                "eve_accuracy": self.eve_accuracy,
                "eve_key_accuracy": self.eve_key_accuracy,
                "eve_accuracy_analyzing": self.eve_accuracy_analyzing,
                "eve_accuracy_non_analyzing": self.eve_accuracy_non_analyzing,
                "conclusive_rate": self.conclusive_rate,
            },
        }


def run_trial(
    params: ProtocolParams,
    attack: AttackConfig,
    trial: int,
    channel_loss: float = 0.0,
    keep_transcript: bool = False,
) -> tuple[TrialCounts, SessionSummary, Optional[SessionTranscript]]:
    """Run one session; reduce it to counters plus an audit summary."""
    interceptor = build_interceptor(attack, params)
    transcript = run_session(
        params, interceptor, channel_loss=channel_loss, trial=trial
    )
    guesses: dict[int, int] = {}
    metrics: dict[str, int] = {}
    if interceptor is not None:
        if attack.theta_oracle and hasattr(interceptor, "set_counterfactual_thetas"):
            interceptor.set_counterfactual_thetas([r.theta for r in transcript.rounds])
        guesses = interceptor.produce_guesses()
        metrics = interceptor.metrics()
    counts = score_trial(transcript, guesses, metrics)
    summary = SessionSummary.from_transcript(transcript)
    return counts, summary, (transcript if keep_transcript else None)


def run_experiment(
    params: ProtocolParams,
    attack: AttackConfig,
    trials: int = 1,
    channel_loss: float = 0.0,
    config_echo: Optional[dict] = None,
    keep_transcripts: bool = False,
) -> tuple[ExperimentReport, list[SessionTranscript]]:
    """Run `trials` independent sessions and aggregate them into a report."""
    if trials < 1:
        raise ParameterError(f"trials must be >= 1, got {trials}")
    totals = TrialCounts()
    per_trial: list[TrialCounts] = []
    sessions: list[SessionSummary] = []
    verdicts: dict[str, int] = {v.value: 0 for v in Verdict}
    transcripts: list[SessionTranscript] = []
    for trial in range(trials):
        counts, summary, transcript = run_trial(
            params, attack, trial, channel_loss, keep_transcript=keep_transcripts
        )
        counts.add_into(totals)
        verdicts[counts.verdict] += 1
        per_trial.append(counts)
        sessions.append(summary)
        if transcript is not None:
            transcripts.append(transcript)
    totals.verdict = ""  # not meaningful on the aggregate
    report = ExperimentReport(
        schema_version=SCHEMA_VERSION,
        config=config_echo or {},
        seed=params.seed,
        trials=trials,
        rounds_per_trial=params.rounds,
        totals=totals,
        per_trial=per_trial,
        sessions=sessions,
        verdicts=verdicts,
        theory={
            "matching_prob": 1.0 / params.n_screening,
            "ie_sum": ie_sum(params.n_screening),
            "ie_mean": ie_mean(params.n_screening),
        },
    )
    report.validate()
    return report, transcripts


@dataclass
class SecurityCurve:
    """Per-N metrics demonstrating the rate/security trade-off."""

    points: list[dict] = field(default_factory=list)

    def to_rows(self) -> list[dict]:
        return self.points


def security_curve(
    base_params: ProtocolParams,
    attack: AttackConfig,
    n_values: Sequence[int],
    trials: int = 1,
    channel_loss: float = 0.0,
    rate_law_epsilon: Optional[float] = None,
) -> tuple[SecurityCurve, dict[int, ExperimentReport]]:
    """Run the experiment for each screening-set size N.

    Checks sift_rate * N = 1 within `rate_law_epsilon` (default: 3-sigma
    binomial for the realized round count); a breach raises ValueError.
    """
    if sorted(set(n_values)) != list(n_values):
        raise ParameterError(f"n_values must be strictly increasing, got {n_values}")
    curve = SecurityCurve()
    reports: dict[int, ExperimentReport] = {}
    for n in n_values:
        params = replace(base_params, n_screening=n)
        report, _ = run_experiment(params, attack, trials, channel_loss)
        total_rounds = report.totals.rounds
        eps = rate_law_epsilon
        if eps is None:
            eps = 3.0 * math.sqrt(max(n - 1, 1) / total_rounds)
        scaled = report.sift_rate * n
        if abs(scaled - 1.0) > eps:
            raise ValueError(
                f"key-rate law violated at N={n}: sift_rate*N={scaled:.4f} "
                f"outside 1 +/- {eps:.4f}"
            )
        curve.points.append(
            {
                "N": n,
                "sift_rate": report.sift_rate,
                "qber_under_attack": report.qber,
                "conclusive_rate": report.conclusive_rate,
                "ad_violation_rate": report.ad_violation_rate,
            }
        )
        reports[n] = report
    return curve, reports


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def flat_rows(report: ExperimentReport, n: int, mode: str, attack: str) -> list[dict]:
    """One stable-schema row per trial."""
    rows = []
    for i, c in enumerate(report.per_trial):
        rows.append(
            {
                "trial": i,
                "N": n,
                "mode": mode,
                "attack": attack,
                "rounds": c.rounds,
                "sifted_bits": c.sifted_bits,
                "matched_rate": c.matched / c.rounds if c.rounds else None,
                "qber": _ratio(c.qber_errors, c.sifted_bits),
                "ad_clicks": c.ad_clicks,
                "ad_violations": c.ad_violations,
                "ad_violation_rate": _ratio(c.ad_violations, c.ad_clicks),
                "eve_guesses": c.eve_guesses,
                "eve_correct": c.eve_correct,
                "eve_accuracy": _ratio(c.eve_correct, c.eve_guesses),
                "verdict": c.verdict,
            }
        )
    return rows


def write_flat_table(rows: Sequence[dict], path: Path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(FLAT_COLUMNS)
        for row in rows:
            writer.writerow([_csv_cell(row[col]) for col in FLAT_COLUMNS])


def emit_report(report_doc: dict, rows: Sequence[dict], outdir: Path) -> dict[str, Path]:
    """Write the structured report and the flat per-trial table.

    Output is byte-identical for identical (config, seed).
    """
    outdir = Path(outdir)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        report_path = outdir / "report.json"
        with open(report_path, "w") as handle:
            json.dump(report_doc, handle, indent=2, sort_keys=True)
            handle.write("\n")
        table_path = outdir / "trials.csv"
        write_flat_table(rows, table_path)
    except OSError as exc:
        raise OSError(f"failed writing report under {outdir}: {exc}") from exc
    return {"report": report_path, "table": table_path}


def write_transcripts(
    transcripts: Sequence[SessionTranscript], outdir: Path
) -> list[Path]:
    """Dump each session transcript as line-delimited JSON, one round per line."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, transcript in enumerate(transcripts):
        path = outdir / f"transcript_{i:03d}.jsonl"
        with open(path, "w") as handle:
            for rec in transcript.rounds:
                handle.write(json.dumps(rec.to_dict(), sort_keys=True))
                handle.write("\n")
        paths.append(path)
    return paths
