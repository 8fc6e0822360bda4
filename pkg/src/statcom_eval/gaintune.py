"""Gain scheduling against grid strength.

A dQ/dV probe measures the short-circuit level seen at the bus, a
calibration table maps dQ/dV to controller gain, and a polynomial
gain(L) fitted over a reactance sweep lets an operator-set gain be turned
back into the external reactance that would produce it.
"""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import (
    GainOutOfRange,
    IllConditioned,
    InputError,
    NoRootInBracket,
    NonMonotonic,
    NotSettled,
    ZeroDeltaV,
)
from .simcore import (
    DEFAULT_DT,
    GridEquivalent,
    StatcomParams,
    StatcomState,
    simulate,
)

log = logging.getLogger(__name__)

MAX_VALID_GAIN = 25.0
DEFAULT_BRACKET = (0.005, 0.05)


@dataclass(frozen=True)
class CalibrationPoint:
    l_henry: float
    dqdv: float   # GVAR per pu volt
    gain: float

    def __post_init__(self):
        if not (self.l_henry > 0 and self.dqdv > 0 and self.gain > 0):
            raise InputError(f"calibration point fields must be positive: {self}")


@dataclass(frozen=True)
class CalibrationTable:
    points: tuple[CalibrationPoint, ...]

    def __post_init__(self):
        pts = tuple(sorted(self.points, key=lambda pt: pt.l_henry))
        object.__setattr__(self, "points", pts)
        if len(pts) < 3:
            raise InputError("a calibration table needs at least 3 points")
        for a, b in zip(pts, pts[1:]):
            if not b.l_henry > a.l_henry:
                raise NonMonotonic(f"duplicate reactance {a.l_henry} in calibration table")
            if not b.dqdv < a.dqdv:
                raise NonMonotonic(f"dqdv does not decrease between L={a.l_henry} and L={b.l_henry}")
            if not b.gain < a.gain:
                raise NonMonotonic(f"gain does not decrease between L={a.l_henry} and L={b.l_henry}")

    @property
    def l_values(self) -> np.ndarray:
        return np.array([pt.l_henry for pt in self.points])

    @property
    def dqdv_values(self) -> np.ndarray:
        return np.array([pt.dqdv for pt in self.points])

    @property
    def gains(self) -> np.ndarray:
        return np.array([pt.gain for pt in self.points])

    def to_dict(self) -> dict:
        return {"points": [asdict(pt) for pt in self.points]}

    @classmethod
    def from_dict(cls, doc: dict) -> "CalibrationTable":
        try:
            return cls(tuple(CalibrationPoint(float(p["l_henry"]), float(p["dqdv"]), float(p["gain"]))
                             for p in doc["points"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"bad calibration table document: {exc}") from None


# Three-point sweep of the vendor model at 230 kV with 1% slope. The gain
# column is what the simulated controller settles on; the vendor lookup
# intervals are kept for reference only and are not used.
TABLE1 = CalibrationTable((
    CalibrationPoint(0.01, 14.3, 23.35),
    CalibrationPoint(0.02, 7.0, 16.25),
    CalibrationPoint(0.025, 5.342857143, 14.06),
))
VENDOR_LOOKUP_INTERVALS = {0.01: (22.44, 23.10), 0.02: (15.69, 16.28), 0.025: (12.64, 14.26)}


@dataclass(frozen=True)
class PolyFit:
    """Least-squares polynomial gain(L), coefficients highest power first."""

    coeffs: tuple[float, ...]
    degree: int
    valid_gain_range: tuple[float, float]
    residual_rms: float
    l_span: tuple[float, float]
    bracket: tuple[float, float] = DEFAULT_BRACKET

    def __call__(self, l_henry):
        return np.polyval(self.coeffs, l_henry)

    def monotone_branch(self, bracket: tuple[float, float] | None = None) -> tuple[float, float]:
        """Widest sub-interval of ``bracket`` containing the calibration
        span on which gain(L) has no turning point."""
        lo, hi = bracket or self.bracket
        crit = np.roots(np.polyder(self.coeffs)) if self.degree > 1 else np.array([])
        crit = sorted(c.real for c in crit if abs(c.imag) < 1e-12 and lo < c.real < hi)
        mid = 0.5 * (self.l_span[0] + self.l_span[1])
        for c in crit:
            if c <= mid:
                lo = max(lo, c)
            else:
                hi = min(hi, c)
                break
        return lo, hi

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, doc: dict) -> "PolyFit":
        try:
            return cls(
                coeffs=tuple(float(c) for c in doc["coeffs"]),
                degree=int(doc["degree"]),
                valid_gain_range=tuple(float(x) for x in doc["valid_gain_range"]),
                residual_rms=float(doc["residual_rms"]),
                l_span=tuple(float(x) for x in doc["l_span"]),
                bracket=tuple(float(x) for x in doc.get("bracket", DEFAULT_BRACKET)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"bad polynomial fit document: {exc}") from None


def calibration_to_json(table: CalibrationTable, fit: PolyFit) -> str:
    return json.dumps({"table": table.to_dict(), "fit": fit.to_dict()}, indent=2, sort_keys=True) + "\n"


def calibration_from_json(text: str) -> tuple[CalibrationTable, PolyFit]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"calibration file is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or "table" not in doc or "fit" not in doc:
        raise InputError("calibration file needs 'table' and 'fit' objects")
    return CalibrationTable.from_dict(doc["table"]), PolyFit.from_dict(doc["fit"])


@dataclass(frozen=True)
class ProbeConfig:
    delta_q: float = 5.0         # MVAR
    hold_s: float = 0.5
    settle_s: float = 0.2        # closed-loop run used to check settling
    settle_tol: float = 1e-3     # pu/s
    dt: float = DEFAULT_DT


def _measure_window(x: np.ndarray, dt: float) -> float:
    # average over the last 20 ms to reject residual ripple
    n = max(1, int(round(0.02 / dt)))
    return float(np.mean(x[-n:]))


def probe_dqdv(
    p: StatcomParams,
    g: GridEquivalent,
    cfg: ProbeConfig = ProbeConfig(),
    state: StatcomState | None = None,
) -> float:
    """Measured dQ/dV in GVAR per pu volt.

    Runs the closed loop from ``state`` to confirm the bus is settled, then
    freezes the voltage regulator, steps the reactive command by
    ``cfg.delta_q`` and reads the settled voltage change.
    """
    if g.mode != "thevenin":
        raise ValueError("the dQ/dV probe needs a Thevenin grid to push against")
    dt = cfg.dt
    pre = simulate(p, g, cfg.settle_s, dt, state=state)
    n = max(2, int(round(0.01 / dt)))
    slope = abs(pre.v_meas[-1] - pre.v_meas[-n]) / ((n - 1) * dt)
    if slope > cfg.settle_tol:
        raise NotSettled(f"bus voltage still moving at {slope:.3g} pu/s before the probe")
    s = pre.final_state
    v0 = _measure_window(pre.v_meas, dt)

    # open-loop hold: the converter lag tracks a fixed command
    q_cmd = s.q_cmd + cfg.delta_q
    q_act = s.q_act
    n_hold = int(round(cfg.hold_s / dt))
    v = np.empty(n_hold)
    for k in range(n_hold):
        q_act = q_act + (q_cmd - q_act) * dt / p.tau_conv
        v[k] = g.v_src + q_act / g.s_scc
    dv = _measure_window(v, dt) - v0
    if dv == 0 or not math.isfinite(dv):
        raise ZeroDeltaV("probe produced no measurable voltage change")
    return cfg.delta_q / dv / 1000.0


def _quadratic_through(x: np.ndarray, y: np.ndarray, at: float) -> float:
    """Lagrange interpolation through three nodes."""
    total = 0.0
    for i in range(3):
        term = y[i]
        for j in range(3):
            if j != i:
                term *= (at - x[j]) / (x[i] - x[j])
        total += term
    return total


def gain_from_dqdv(dqdv: float, table: CalibrationTable = TABLE1) -> float:
    """Controller gain for a measured dQ/dV.

    Quadratic interpolation through the three table nodes nearest
    ``dqdv``. Outside the table span the end quadratic is extrapolated
    (with a warning) up to its turning point, where it is held.
    """
    x = table.dqdv_values[::-1]   # ascending dqdv
    y = table.gains[::-1]
    if x[0] <= dqdv <= x[-1]:
        idx = np.argsort(np.abs(x - dqdv), kind="stable")[:3]
        idx = np.sort(idx)
        return float(_quadratic_through(x[idx], y[idx], dqdv))

    idx = np.arange(3) if dqdv < x[0] else np.arange(len(x) - 3, len(x))
    xs, ys = x[idx], y[idx]
    warnings.warn(
        f"dQ/dV {dqdv:.4g} is outside the calibration span [{x[0]:.4g}, {x[-1]:.4g}]; extrapolating",
        stacklevel=2,
    )
    coeffs = np.polyfit(xs, ys, 2)
    at = dqdv
    if coeffs[0] != 0:
        vertex = -coeffs[1] / (2 * coeffs[0])
        # hold at the turning point so the law stays monotone
        if dqdv > x[-1] and x[-1] < vertex < dqdv:
            at = vertex
        elif dqdv < x[0] and dqdv < vertex < x[0]:
            at = vertex
    return float(max(_quadratic_through(xs, ys, at), 1e-3))


def calibrate(
    l_values: Sequence[float],
    p: StatcomParams = StatcomParams(),
    cfg: ProbeConfig = ProbeConfig(),
    seed_table: CalibrationTable = TABLE1,
    v_base_kv: float = 230.0,
    f0: float = 60.0,
) -> CalibrationTable:
    """Sweep the external reactance, probing dQ/dV and assigning gains."""
    ls = sorted({float(x) for x in l_values})
    if len(ls) < 3:
        raise InputError("calibration needs at least 3 distinct reactance values")
    if ls[0] <= 0:
        raise InputError("reactance values must be positive")
    points = []
    for l_henry in ls:
        g = GridEquivalent("thevenin", l_henry=l_henry, v_base_kv=v_base_kv, f0=f0)
        dqdv = probe_dqdv(p, g, cfg)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            gain = gain_from_dqdv(dqdv, seed_table)
        points.append(CalibrationPoint(l_henry, dqdv, gain))
    return CalibrationTable(tuple(points))


def fit_gain_reactance(
    table: CalibrationTable, degree: int = 2, bracket: tuple[float, float] = DEFAULT_BRACKET
) -> PolyFit:
    if degree < 1:
        raise ValueError("degree must be at least 1")
    l_vals, gains = table.l_values, table.gains
    if len(l_vals) < degree + 1:
        raise InputError(f"{len(l_vals)} points cannot determine a degree-{degree} polynomial")
    span = l_vals[-1] - l_vals[0]
    if np.min(np.diff(l_vals)) < 1e-6 * span:
        raise IllConditioned("calibration reactances are nearly coincident")

    # centre and scale the abscissa before solving
    centre, scale = 0.5 * (l_vals[0] + l_vals[-1]), 0.5 * span
    u = (l_vals - centre) / scale
    vander = np.vander(u, degree + 1)
    if np.linalg.cond(vander) > 1e10:
        raise IllConditioned("calibration design matrix is ill-conditioned")
    c_scaled, *_ = np.linalg.lstsq(vander, gains, rcond=None)
    coeffs = np.poly1d(c_scaled)(np.poly1d([1.0 / scale, -centre / scale])).coeffs
    coeffs = np.concatenate([np.zeros(degree + 1 - len(coeffs)), coeffs])
    residual = gains - np.polyval(coeffs, l_vals)
    rms = float(np.sqrt(np.mean(residual**2)))

    fit = PolyFit(tuple(float(c) for c in coeffs), degree, (0.0, 0.0), rms,
                  (float(l_vals[0]), float(l_vals[-1])), tuple(bracket))
    lo, hi = fit.monotone_branch()
    g_lo, g_hi = sorted((float(fit(lo)), float(fit(hi))))
    return replace(fit, valid_gain_range=(g_lo, min(g_hi, MAX_VALID_GAIN)))


def reactance_from_gain(
    gain: float, fit: PolyFit, bracket: tuple[float, float] | None = None
) -> float:
    """External reactance (H) at which the fitted gain curve equals ``gain``."""
    g_min, g_max = fit.valid_gain_range
    if not g_min <= gain <= g_max:
        raise GainOutOfRange(f"gain {gain} outside the calibrated range [{g_min:.3f}, {g_max:.3f}]")
    lo, hi = fit.monotone_branch(bracket)
    f_lo, f_hi = float(fit(lo)) - gain, float(fit(hi)) - gain
    if f_lo == 0:
        return lo
    if f_hi == 0:
        return hi
    if f_lo * f_hi > 0:
        raise NoRootInBracket(f"gain {gain} is not reached on L in [{lo:.5f}, {hi:.5f}] H")
    return float(brentq(lambda x: float(fit(x)) - gain, lo, hi, xtol=1e-12, rtol=1e-12))


@dataclass(frozen=True)
class GainEvent:
    t: float
    old_gain: float
    new_gain: float
    dqdv: float


def auto_gain_adjust(
    p: StatcomParams,
    g: GridEquivalent,
    table: CalibrationTable = TABLE1,
    cfg: ProbeConfig = ProbeConfig(),
    state: StatcomState | None = None,
) -> tuple[float, GainEvent]:
    """Probe the grid and pick the tabulated gain for its strength."""
    dqdv = probe_dqdv(p, g, cfg, state)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        new_gain = gain_from_dqdv(dqdv, table)
    t = state.t if state is not None else 0.0
    log.info("auto gain: dQ/dV %.3f GVAR/pu -> gain %.3f (was %.3f)", dqdv, new_gain, p.gain)
    return new_gain, GainEvent(t, p.gain, new_gain, dqdv)


@dataclass(frozen=True)
class PassiveConfig:
    reversal_count: int = 5
    step_frac: float = 0.2
    floor_frac: float = 0.4
    window_s: float = 0.5
    restore_after_s: float = 5.0
    dt: float = DEFAULT_DT


def passive_gain_adjust(
    signal: Sequence[float],
    gain: float,
    cfg: PassiveConfig = PassiveConfig(),
    gain_default: float | None = None,
) -> float:
    """Step the gain down while the signal keeps reversing direction.

    A trigger fires when ``reversal_count`` sign reversals of the first
    difference fall inside ``window_s``. Each trigger cuts the gain by
    ``step_frac``, never below ``floor_frac`` of the default; a quiet
    period of ``restore_after_s`` restores the default.
    """
    default = gain if gain_default is None else gain_default
    floor = default * cfg.floor_frac
    current = min(gain, default)
    diffs = np.diff(np.asarray(signal, dtype=float))
    signs = np.sign(diffs)

    window_n = cfg.window_s / cfg.dt
    restore_n = cfg.restore_after_s / cfg.dt
    reversals: list[int] = []
    last_trigger = None
    prev = 0.0
    for k, sgn in enumerate(signs):
        if last_trigger is not None and k - last_trigger >= restore_n:
            current = default
            last_trigger = None
        if sgn == 0:
            continue
        if prev != 0 and sgn != prev:
            reversals.append(k)
            reversals = [r for r in reversals if k - r <= window_n]
            if len(reversals) >= cfg.reversal_count:
                current = max(current * (1 - cfg.step_frac), floor)
                reversals.clear()
                last_trigger = k
        prev = sgn
    if last_trigger is not None and len(signs) - last_trigger >= restore_n:
        current = default
    return current
