"""End-to-end evaluation of a recorded event against the STATCOM model.

Workflow: estimate the external reactance from the operator gain, run a
steady Thevenin prelude during which automatic gain adjustment fires,
then drive the model with the recorded positive-sequence voltage and
compare its reactive output with the Q computed from recorded V and I.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, fields, replace
from typing import Sequence

import numpy as np

from .errors import (
    LengthMismatch,
    NotSettled,
    PreludeUnstable,
    RangeError,
    SchemaError,
)
from .gaintune import (
    TABLE1,
    CalibrationTable,
    PolyFit,
    ProbeConfig,
    auto_gain_adjust,
    fit_gain_reactance,
    reactance_from_gain,
)
from .records import Orientation, Recording, compute_q_array, extract_phasors
from .simcore import (
    GainHook,
    GridEquivalent,
    SimTrace,
    StatcomParams,
    StatcomState,
    simulate,
)

log = logging.getLogger(__name__)

PASS, FAIL = "PASS", "FAIL"


@dataclass(frozen=True)
class EmsSettings:
    gain: float
    v_ref: float = 1.0
    q_ref: float = 0.0
    slope: float = 0.01
    q_nominal: float = 125.0
    v_base_kv: float = 230.0
    f0: float = 60.0


_EMS_RANGES = {
    "gain": (0.0, None),
    "v_ref": (0.5, 1.5),
    "slope": (0.0, 1.0),
    "q_nominal": (0.0, None),
    "v_base_kv": (0.0, None),
    "f0": (0.0, None),
}


def load_ems_settings(doc: str) -> EmsSettings:
    """Parse EMS settings JSON. ``gain`` is required; the rest default to
    the 125 MVAR / 230 kV / 1% slope configuration."""
    try:
        data = json.loads(doc)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"EMS settings are not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise SchemaError("EMS settings must be a JSON object")
    if "gain" not in data:
        raise SchemaError("EMS settings must include 'gain'")
    known = {f.name for f in fields(EmsSettings)}
    extra = sorted(set(data) - known)
    if extra:
        log.warning("ignoring unknown EMS fields: %s", ", ".join(extra))
    values = {}
    for key in known & set(data):
        v = data[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise SchemaError(f"EMS field {key!r} must be a finite number, got {v!r}")
        values[key] = float(v)
    for key, (lo, hi) in _EMS_RANGES.items():
        if key in values and not ((values[key] > lo) and (hi is None or values[key] < hi)):
            raise RangeError(f"EMS field {key!r} = {values[key]} is out of range")
    return EmsSettings(**values)


@dataclass(frozen=True)
class EvalConfig:
    prelude_s: float = 10.0
    gain_adjust_at_s: float = 1.0
    initial_gain: float = 12.75
    gain_scale: float = 1.0            # applied to the adjusted gain; 1.0 in normal use
    probe: ProbeConfig = ProbeConfig()
    model: StatcomParams = StatcomParams()   # non-EMS controller constants
    nrmse_max: float = 0.05
    maxq_rel_max: float = 0.05
    orientation: Orientation = "out_of_device"
    v_channels: tuple[str, str, str] | None = None
    i_channels: tuple[str, str, str] | None = None

    def __post_init__(self):
        if self.prelude_s < 0:
            raise ValueError("prelude_s must be non-negative")
        if self.prelude_s > 0 and not 0 <= self.gain_adjust_at_s < self.prelude_s:
            raise ValueError("gain adjustment must fire inside the prelude")


@dataclass(frozen=True)
class SeriesMetrics:
    max_q_meas: float
    max_q_sim: float
    max_q_abs_diff: float
    max_q_rel_diff: float
    rmse: float
    nrmse: float
    pearson_r: float
    max_abs_error: float


def compare_series(q_meas: Sequence[float], q_sim: Sequence[float]) -> SeriesMetrics:
    """Agreement metrics between measured and simulated Q on a shared
    time base. Relative figures are normalised by the peak |q_meas|."""
    a = np.asarray(q_meas, dtype=float)
    b = np.asarray(q_sim, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise LengthMismatch(f"series lengths differ: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise LengthMismatch("cannot compare empty series")
    err = b - a
    rmse = float(np.sqrt(np.mean(err**2)))
    peak = float(np.max(np.abs(a)))
    max_meas, max_sim = float(np.max(a)), float(np.max(b))
    abs_diff = abs(max_sim - max_meas)

    def rel(x):
        if peak > 0:
            return x / peak
        return 0.0 if x == 0 else math.inf

    sa, sb = np.std(a), np.std(b)
    if sa == 0 or sb == 0:
        r = 1.0 if (sa == 0 and sb == 0) else 0.0
    else:
        r = float(np.clip(np.corrcoef(a, b)[0, 1], -1.0, 1.0))
    return SeriesMetrics(max_meas, max_sim, abs_diff, rel(abs_diff), rmse, rel(rmse), r,
                         float(np.max(np.abs(err))))


@dataclass(frozen=True, eq=False)
class EvaluationReport:
    station_id: str
    max_q_meas: float
    max_q_sim: float
    max_q_abs_diff: float
    max_q_rel_diff: float
    rmse: float
    nrmse: float
    pearson_r: float
    estimated_l: float
    gain_trace: tuple[tuple[float, float, float], ...]
    verdict: str
    nrmse_max: float
    maxq_rel_max: float
    times: np.ndarray
    q_meas: np.ndarray
    q_sim: np.ndarray

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["gain_trace"] = [{"t": t, "old_gain": a, "new_gain": b} for t, a, b in self.gain_trace]
        for key in ("times", "q_meas", "q_sim"):
            d[key] = d[key].tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationReport":
        d = dict(d)
        d["gain_trace"] = tuple((e["t"], e["old_gain"], e["new_gain"]) for e in d["gain_trace"])
        for key in ("times", "q_meas", "q_sim"):
            d[key] = np.asarray(d[key], dtype=float)
        return cls(**d)

    def __eq__(self, other):
        if not isinstance(other, EvaluationReport):
            return NotImplemented
        for f in fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if isinstance(a, np.ndarray):
                if not np.array_equal(a, b):
                    return False
            elif a != b:
                return False
        return True

    __hash__ = None


def model_params(ems: EmsSettings, cfg: EvalConfig = EvalConfig()) -> StatcomParams:
    return replace(
        cfg.model,
        v_ref=ems.v_ref,
        q_ref=ems.q_ref,
        slope=ems.slope,
        q_nominal=ems.q_nominal,
        q_max=min(cfg.model.q_max, 1.2 * ems.q_nominal),
        gain=cfg.initial_gain,
    )


def run_prelude(
    ems: EmsSettings,
    fit: PolyFit,
    table: CalibrationTable = TABLE1,
    cfg: EvalConfig = EvalConfig(),
    dt: float = 1.0 / 9600.0,
) -> tuple[float, SimTrace]:
    """Estimate the external reactance from the EMS gain and run the steady
    nominal-voltage prelude with automatic gain adjustment.

    Returns the reactance estimate and the prelude trace; its
    ``final_params`` and ``final_state`` seed the playback run.
    """
    l_hat = reactance_from_gain(ems.gain, fit)
    params = model_params(ems, cfg)
    grid = GridEquivalent("thevenin", l_henry=l_hat, v_src=1.0, v_base_kv=ems.v_base_kv, f0=ems.f0)

    def adjust(state: StatcomState, p: StatcomParams, g: GridEquivalent) -> float:
        try:
            gain, _ = auto_gain_adjust(p, g, table, replace(cfg.probe, dt=dt), state)
        except NotSettled as exc:
            raise PreludeUnstable(str(exc)) from exc
        return gain * cfg.gain_scale

    hooks = [GainHook(cfg.gain_adjust_at_s, adjust)] if cfg.prelude_s > 0 else []
    trace = simulate(params, grid, cfg.prelude_s, dt, hooks=hooks)
    return l_hat, trace


def evaluate(
    rec: Recording,
    ems: EmsSettings,
    fit: PolyFit | None = None,
    table: CalibrationTable = TABLE1,
    cfg: EvalConfig = EvalConfig(),
) -> EvaluationReport:
    if fit is None:
        fit = fit_gain_reactance(table)
    dt = 1.0 / rec.sample_rate
    l_hat, prelude = run_prelude(ems, fit, table, cfg, dt)

    v_names = cfg.v_channels or rec.phase_channels("kV")
    i_names = cfg.i_channels or rec.phase_channels("kA")
    v_series = extract_phasors(rec, v_names, ems.f0)
    i_series = extract_phasors(rec, i_names, ems.f0)

    grid = GridEquivalent("playback", v_base_kv=ems.v_base_kv, f0=ems.f0)
    start = replace(prelude.final_state, t=float(v_series.times[0]))
    trace = simulate(prelude.final_params, grid, len(v_series) * dt, dt, playback=v_series, state=start)

    q_meas = compute_q_array(v_series.positive_sequence(), i_series.positive_sequence(), cfg.orientation)
    q_sim = trace.q_act
    # playback runs on the recording's own sample grid, so the series align
    # unless the recorder clock drifted by more than a fraction of a step
    if len(trace) != len(v_series) or not np.allclose(trace.times, v_series.times, rtol=0, atol=0.05 * dt):
        q_sim = np.interp(v_series.times, trace.times, trace.q_act)
    m = compare_series(q_meas, q_sim)
    ok = m.nrmse <= cfg.nrmse_max and m.max_q_rel_diff <= cfg.maxq_rel_max
    return EvaluationReport(
        station_id=rec.station_id,
        max_q_meas=m.max_q_meas,
        max_q_sim=m.max_q_sim,
        max_q_abs_diff=m.max_q_abs_diff,
        max_q_rel_diff=m.max_q_rel_diff,
        rmse=m.rmse,
        nrmse=m.nrmse,
        pearson_r=m.pearson_r,
        estimated_l=l_hat,
        gain_trace=prelude.gain_events,
        verdict=PASS if ok else FAIL,
        nrmse_max=cfg.nrmse_max,
        maxq_rel_max=cfg.maxq_rel_max,
        times=np.asarray(v_series.times),
        q_meas=q_meas,
        q_sim=np.asarray(q_sim),
    )


def reference_model(
    ems: EmsSettings,
    fit: PolyFit | None = None,
    table: CalibrationTable = TABLE1,
    cfg: EvalConfig = EvalConfig(),
    dt: float = 1.0 / 9600.0,
) -> tuple[StatcomParams, StatcomState]:
    """Controller settings and state the evaluation hands to playback.

    Synthesizing "field" currents from these gives recordings that a
    healthy device evaluated with the same settings reproduces exactly.
    """
    if fit is None:
        fit = fit_gain_reactance(table)
    _, prelude = run_prelude(ems, fit, table, cfg, dt)
    return prelude.final_params, prelude.final_state


# ---------------------------------------------------------------------------
# rendering


def render_report(rep: EvaluationReport, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(rep.to_dict(), indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "q_meas", "q_sim"])
        for row in zip(rep.times.tolist(), rep.q_meas.tolist(), rep.q_sim.tolist()):
            w.writerow([repr(x) for x in row])
        return buf.getvalue()
    if fmt == "svg":
        return _render_svg(rep)
    raise ValueError(f"unknown report format {fmt!r}")


def report_from_json(text: str) -> EvaluationReport:
    return EvaluationReport.from_dict(json.loads(text))


def _render_svg(rep: EvaluationReport) -> str:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "statcom-eval"
    matplotlib.rcParams["svg.fonttype"] = "none"
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.plot(rep.times, rep.q_meas, label="Q recorded", color="tab:blue", lw=1.2, gid="q_meas")
    ax.plot(rep.times, rep.q_sim, label="Q simulated", color="tab:orange", lw=1.0, ls="--", gid="q_sim")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("Q (MVAR)")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="upper right")
    color = "tab:green" if rep.verdict == PASS else "tab:red"
    ax.set_title(
        f"{rep.station_id}: {rep.verdict}   nrmse {rep.nrmse:.2%}   "
        f"max Q {rep.max_q_meas:.2f} / {rep.max_q_sim:.2f} MVAR",
        color=color,
    )
    fig.tight_layout()
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buf.getvalue()
