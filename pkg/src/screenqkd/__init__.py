"""Simulator for a three-pass polarization QKD protocol with screening
angles and an analyzing detector, plus the eavesdropping strategies it is
designed to expose."""

from .adversary import AttackConfig, EveStorage, build_interceptor
from .analysis import (
    ExperimentReport,
    SecurityCurve,
    SessionSummary,
    ad_violation_rate,
    emit_report,
    ie_mean,
    ie_sum,
    qber,
    run_experiment,
    run_trial,
    security_curve,
)
from .channel import Interceptor, Leg, PublicBoard, transmit
from .errors import ConfigError, ParameterError, ProtocolError
from .photonics import (
    DIAGONAL,
    MeasurementBasis,
    Origin,
    Photon,
    Pulse,
    beam_split,
    born_probability,
    canon,
    make_pulse,
    measure,
    rotate,
    single_photon_pulse,
)
from .protocol import (
    Announcement,
    ProtocolParams,
    RoundRecord,
    SessionTranscript,
    Verdict,
    alice_encode,
    alice_prepare,
    bob_decode,
    bob_transform,
    expected_ad_bit,
    run_session,
    screening_angles,
    sift_and_verify,
)

__version__ = "0.1.0"
