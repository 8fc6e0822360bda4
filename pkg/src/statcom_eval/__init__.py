"""STATCOM performance evaluation from fault-recorder playback."""

__version__ = "0.1.0"

from .records import (  # noqa: E402
    AnalogChannel,
    Phasor,
    PhasorSeries,
    Recording,
    compute_q,
    extract_phasors,
    parse_comtrade,
    positive_sequence,
    prepend_prelude,
    write_comtrade,
)
from .simcore import GridEquivalent, StatcomParams, StatcomState, simulate, step_metrics  # noqa: E402
from .gaintune import (  # noqa: E402
    TABLE1,
    CalibrationTable,
    PolyFit,
    ProbeConfig,
    auto_gain_adjust,
    calibrate,
    fit_gain_reactance,
    gain_from_dqdv,
    probe_dqdv,
    reactance_from_gain,
)
from .evalpipe import EmsSettings, EvalConfig, EvaluationReport, evaluate, load_ems_settings  # noqa: E402
from .synthgen import Dip, EventSpec, gen_event, synth_measured_q  # noqa: E402

__all__ = [
    "__version__",
    "noqa:",
    "E402",
    "AnalogChannel",
    "Phasor",
    "PhasorSeries",
    "Recording",
    "compute_q",
    "extract_phasors",
    "parse_comtrade",
    "positive_sequence",
    "prepend_prelude",
    "write_comtrade",
    "noqa:",
    "E402",
    "TABLE1",
    "CalibrationTable",
    "PolyFit",
    "ProbeConfig",
    "auto_gain_adjust",
    "calibrate",
    "fit_gain_reactance",
    "gain_from_dqdv",
    "probe_dqdv",
    "reactance_from_gain",
    "GridEquivalent",
    "StatcomParams",
    "StatcomState",
    "simulate",
    "step_metrics",
    "EmsSettings",
    "EvalConfig",
    "EvaluationReport",
    "evaluate",
    "load_ems_settings",
    "Dip",
    "EventSpec",
    "gen_event",
    "synth_measured_q",
]
