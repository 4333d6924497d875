"""Experiment runner CLI.

A thin shell over the library: every run reachable here is reachable via
:func:`screenqkd.analysis.run_experiment` with identical results for
identical seeds. Configuration comes from an optional JSON file plus
flags; flags always win. Exit codes: 0 run complete and all enabled
assertions passed, 1 assertion failure, 2 configuration/usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .adversary import STRATEGIES, STRATEGY_NONE, AttackConfig
from .analysis import (
    ExperimentReport,
    emit_report,
    flat_rows,
    run_experiment,
    security_curve,
    write_transcripts,
)
from .errors import ConfigError, ParameterError
from .protocol import MODE_PULSE, MODE_SINGLE, ProtocolParams

OUTDIR_ENV = "SCREENQKD_OUTDIR"


@dataclass
class ExperimentConfig:
    """Everything one run needs; validated before any session starts."""

    n: int = 2
    sweep_n: Optional[list[int]] = None
    rounds: int = 100_000
    p_analyzing: float = 0.2
    transmission: float = 0.9
    mode: str = MODE_SINGLE
    mean_photons: float = 1.0
    loss: float = 0.0
    trials: int = 1
    seed: int = 1
    attack: str = STRATEGY_NONE
    eve_tap_fraction: float = 1.0
    trojan_angle: float = 0.0
    attack_probability: float = 1.0
    theta_oracle: bool = False
    guess_weights: Optional[list[float]] = None
    digest: str = "sha256"
    outdir: Optional[str] = None
    emit_transcript: bool = False
    rate_law_epsilon: Optional[float] = None

    def validate(self) -> None:
        if self.n < 1:
            raise ConfigError(f"N: must be >= 1, got {self.n}")
        if self.sweep_n is not None:
            if not self.sweep_n or sorted(set(self.sweep_n)) != self.sweep_n:
                raise ConfigError(
                    f"sweep-N: must be strictly increasing, got {self.sweep_n}"
                )
            if self.sweep_n[0] < 1:
                raise ConfigError(f"sweep-N: values must be >= 1, got {self.sweep_n}")
        if self.rounds < 1:
            raise ConfigError(f"rounds: must be >= 1, got {self.rounds}")
        if not 0.0 <= self.p_analyzing <= 1.0:
            raise ConfigError(f"p-analyzing: must be in [0, 1], got {self.p_analyzing}")
        if not 0.0 <= self.transmission <= 1.0:
            raise ConfigError(f"transmission: must be in [0, 1], got {self.transmission}")
        if self.mode not in (MODE_SINGLE, MODE_PULSE):
            raise ConfigError(f"mode: must be 'single' or 'pulse', got {self.mode!r}")
        if self.mean_photons < 0:
            raise ConfigError(f"mean-photons: must be >= 0, got {self.mean_photons}")
        if not 0.0 <= self.loss <= 1.0:
            raise ConfigError(f"loss: must be in [0, 1], got {self.loss}")
        if self.trials < 1:
            raise ConfigError(f"trials: must be >= 1, got {self.trials}")
        if self.attack not in STRATEGIES:
            raise ConfigError(f"attack: unknown strategy {self.attack!r}")
        # Delegate range checks shared with the library types.
        try:
            self.protocol_params()
            self.attack_config()
        except (ParameterError, ConfigError) as exc:
            raise ConfigError(str(exc)) from None

    def protocol_params(self, n: Optional[int] = None) -> ProtocolParams:
        return ProtocolParams(
            n_screening=self.n if n is None else n,
            rounds=self.rounds,
            p_analyzing=self.p_analyzing,
            transmission=self.transmission,
            mode=self.mode,
            mean_photons=self.mean_photons,
            seed=self.seed,
            digest=self.digest,
        )

    def attack_config(self) -> AttackConfig:
        return AttackConfig(
            strategy=self.attack,
            eve_tap_fraction=self.eve_tap_fraction,
            trojan_angle=self.trojan_angle,
            attack_probability=self.attack_probability,
            theta_oracle=self.theta_oracle,
            guess_weights=tuple(self.guess_weights) if self.guess_weights else None,
        )

    def echo(self) -> dict:
        # output-destination fields do not describe the experiment and would
        # break byte-identity of re-runs landing in different directories
        doc = dataclasses.asdict(self)
        doc.pop("outdir")
        doc.pop("emit_transcript")
        return doc

    def resolve_outdir(self) -> Optional[Path]:
        if self.outdir is not None:
            return Path(self.outdir)
        env = os.environ.get(OUTDIR_ENV)
        return Path(env) if env else None


def _parse_n_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _parse_float_list(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="screenqkd",
        description="Run screening-angle QKD sessions and report attack statistics.",
    )
    parser.add_argument("--config", type=str, help="JSON config file; flags override it")
    parser.add_argument("--N", dest="n", type=int, help="screening-set size")
    parser.add_argument(
        "--sweep-N", dest="sweep_n", type=_parse_n_list,
        help="comma-separated N values; runs a security curve sweep",
    )
    parser.add_argument("--rounds", type=int, help="rounds per session")
    parser.add_argument("--p-analyzing", dest="p_analyzing", type=float,
                        help="probability Bob uses an analyzing angle")
    parser.add_argument("--transmission", type=float,
                        help="AD transmission coefficient t (tap fraction is 1-t)")
    parser.add_argument("--mode", choices=(MODE_SINGLE, MODE_PULSE),
                        help="single-photon or Poissonian pulse source")
    parser.add_argument("--mean-photons", dest="mean_photons", type=float,
                        help="mean photon number in pulse mode")
    parser.add_argument("--loss", type=float, help="per-photon channel loss probability")
    parser.add_argument("--trials", type=int, help="independent sessions to run")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--attack", type=str, help=f"one of {', '.join(STRATEGIES)}")
    parser.add_argument("--eve-tap-fraction", dest="eve_tap_fraction", type=float,
                        help="Eve's probe recapture probability on the final leg")
    parser.add_argument("--trojan-angle", dest="trojan_angle", type=float,
                        help="probe polarization for the simple Trojan attack")
    parser.add_argument("--attack-probability", dest="attack_probability", type=float,
                        help="per-round probability the strategy acts at all")
    parser.add_argument("--guess-weights", dest="guess_weights", type=_parse_float_list,
                        help="impersonation basis-guess weights over the screening set "
                             "(comma-separated; default uniform)")
    parser.add_argument("--digest", type=str, help="key digest algorithm")
    parser.add_argument("--outdir", type=str,
                        help=f"report directory (default: ${OUTDIR_ENV} if set)")
    parser.add_argument("--emit-transcript", action="store_true", default=None,
                        help="also write per-round transcripts (JSONL; "
                             "single-point runs only)")
    parser.add_argument("--rate-law-epsilon", dest="rate_law_epsilon", type=float,
                        help="tolerance override for the sweep sift-rate check")
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    values: dict = {}
    if args.config:
        try:
            with open(args.config) as handle:
                file_values = json.load(handle)
        except OSError as exc:
            raise ConfigError(f"config: cannot read {args.config}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON in {args.config}: {exc}") from None
        known = {f.name for f in dataclasses.fields(ExperimentConfig)}
        for key, value in file_values.items():
            if key not in known:
                raise ConfigError(f"config: unknown field {key!r}")
            values[key] = value
    for name in (f.name for f in dataclasses.fields(ExperimentConfig)):
        flag_value = getattr(args, name, None)
        if flag_value is not None:
            values[name] = flag_value
    config = ExperimentConfig(**values)
    config.validate()
    return config


def _print_summary(label: str, report: ExperimentReport) -> None:
    def fmt(x: Optional[float]) -> str:
        return "absent" if x is None else f"{x:.6f}"

    print(f"[{label}] rounds={report.totals.rounds} trials={report.trials}")
    print(f"  sift_rate={report.sift_rate:.6f}  sifted_bits={report.totals.sifted_bits}")
    print(f"  qber={fmt(report.qber)}")
    print(
        f"  ad_clicks={report.totals.ad_clicks}"
        f"  ad_violation_rate={fmt(report.ad_violation_rate)}"
        f"  injected={fmt(report.ad_violation_rate_injected)}"
    )
    print(
        f"  eve_guesses={report.totals.eve_guesses}"
        f"  eve_accuracy={fmt(report.eve_accuracy)}"
        f"  key_accuracy={fmt(report.eve_key_accuracy)}"
    )
    if report.conclusive_rate is not None:
        print(f"  conclusive_rate={report.conclusive_rate:.6f}")
    print(f"  verdicts={report.verdicts}")


def _honest_assertions(report: ExperimentReport) -> list[str]:
    failures = []
    if report.qber not in (None, 0.0):
        failures.append(f"honest run produced nonzero QBER: {report.qber}")
    if report.totals.ad_violations:
        failures.append(
            f"honest run produced {report.totals.ad_violations} AD integrity violations"
        )
    bad = {k: v for k, v in report.verdicts.items() if k != "accepted" and v}
    if bad:
        failures.append(f"honest run produced non-accepted verdicts: {bad}")
    return failures


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    outdir = config.resolve_outdir()
    attack = config.attack_config()
    failures: list[str] = []
    try:
        if config.sweep_n:
            rows = []
            curve_points = []
            report_doc: dict = {"sweep": {}}
            base = config.protocol_params(config.sweep_n[0])
            try:
                curve, reports = security_curve(
                    base, attack, config.sweep_n,
                    trials=config.trials, channel_loss=config.loss,
                    rate_law_epsilon=config.rate_law_epsilon,
                )
            except ValueError as exc:
                print(f"assertion failed: {exc}", file=sys.stderr)
                return 1
            for n in config.sweep_n:
                report = reports[n]
                _print_summary(f"N={n}", report)
                doc = report.to_dict()
                doc["config"] = {**config.echo(), "n": n}
                report_doc["sweep"][str(n)] = doc
                rows.extend(flat_rows(report, n, config.mode, config.attack))
            report_doc["schema_version"] = reports[config.sweep_n[0]].schema_version
            report_doc["config"] = config.echo()
            report_doc["curve"] = curve.to_rows()
            curve_points = curve.to_rows()
            if outdir is not None:
                paths = emit_report(report_doc, rows, outdir)
                with open(Path(outdir) / "curve.csv", "w") as handle:
                    handle.write("N,sift_rate,qber_under_attack,conclusive_rate,ad_violation_rate\n")
                    for point in curve_points:
                        handle.write(
                            ",".join(
                                "" if point[key] is None else repr(point[key])
                                if isinstance(point[key], float) else str(point[key])
                                for key in (
                                    "N", "sift_rate", "qber_under_attack",
                                    "conclusive_rate", "ad_violation_rate",
                                )
                            )
                            + "\n"
                        )
                print(f"wrote {paths['report']} and {paths['table']}")
        else:
            params = config.protocol_params()
            report, transcripts = run_experiment(
                params, attack,
                trials=config.trials, channel_loss=config.loss,
                config_echo=config.echo(),
                keep_transcripts=config.emit_transcript,
            )
            _print_summary(f"N={config.n} attack={config.attack}", report)
            if outdir is not None:
                rows = flat_rows(report, config.n, config.mode, config.attack)
                paths = emit_report(report.to_dict(), rows, outdir)
                if config.emit_transcript:
                    write_transcripts(transcripts, outdir)
                print(f"wrote {paths['report']} and {paths['table']}")
            if config.attack == STRATEGY_NONE:
                failures = _honest_assertions(report)
    except (ConfigError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    for failure in failures:
        print(f"assertion failed: {failure}", file=sys.stderr)
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
