"""Average-value STATCOM model on a quasi-static grid.

The controller is an integral voltage regulator with droop (the voltage
target falls by ``slope`` per unit of nominal reactive output), a slow Q
control loop that shifts the voltage reference back towards ``q_ref``, and
a first-order converter lag. The bus voltage seen by the controller is
averaged over a one-cycle window, as a phasor-based measurement would be.

The grid is either a Thevenin equivalent linearised around the operating
point (voltage rises by Q/SCC per unit) or an infinite bus driven by a
recorded voltage magnitude.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from collections import deque
from dataclasses import dataclass, replace
from typing import Callable, Literal, Sequence

import numpy as np

from .errors import MissingPlaybackSample, StepTooLarge
from .records import PhasorSeries

log = logging.getLogger(__name__)

DEFAULT_DT = 1.0 / 9600.0


@dataclass(frozen=True)
class StatcomParams:
    v_ref: float = 1.0          # pu
    q_ref: float = 0.0          # MVAR
    slope: float = 0.01         # pu voltage per unit of q_nominal
    gain: float = 12.75
    q_nominal: float = 125.0    # MVAR
    q_max: float = 125.0        # MVAR
    t_resp: float = 0.012       # s, integrator base time
    tau_conv: float = 0.010     # s, converter lag
    t_qcm: float = 30.0         # s
    t_meas: float = 1.0 / 60.0  # s, voltage averaging window; 0 disables
    qcm_enabled: bool = True

    def __post_init__(self):
        if not self.slope > 0:
            raise ValueError("slope must be positive")
        if not self.q_nominal > 0:
            raise ValueError("q_nominal must be positive")
        if not 0 <= self.q_max <= 1.2 * self.q_nominal:
            raise ValueError("q_max must lie in [0, 1.2 * q_nominal]")
        if not self.gain > 0:
            raise ValueError("gain must be positive")
        if not (self.t_resp > 0 and self.tau_conv > 0 and self.t_qcm > 0):
            raise ValueError("time constants must be positive")
        if self.t_meas < 0:
            raise ValueError("t_meas must be non-negative")

    def window_length(self, dt: float) -> int:
        return max(1, round(self.t_meas / dt))


@dataclass(frozen=True)
class StatcomState:
    q_cmd: float = 0.0
    q_act: float = 0.0
    v_ref_adj: float = 1.0
    t: float = 0.0
    # measurement window (oldest first) and its running sum; empty until
    # the first controller step fills it with the measured voltage
    v_window: tuple[float, ...] = ()
    v_sum: float = 0.0

    @classmethod
    def initial(
        cls, p: StatcomParams, v_src: float = 1.0, s_scc: float = math.inf, t: float = 0.0
    ) -> "StatcomState":
        """Droop equilibrium against a source ``v_src`` behind ``s_scc`` MVA
        (infinite bus by default).

        The measurement window is left empty so it fills on the first step.
        """
        q = (p.v_ref - v_src) / (p.slope / p.q_nominal + 1.0 / s_scc)
        q = min(max(q, -p.q_max), p.q_max)
        return cls(q_cmd=q, q_act=q, v_ref_adj=p.v_ref, t=t)


@dataclass(frozen=True)
class GridEquivalent:
    mode: Literal["thevenin", "playback"] = "thevenin"
    l_henry: float | None = None
    r_ohm: float = 0.1
    v_src: float = 1.0
    v_base_kv: float = 230.0
    f0: float = 60.0

    def __post_init__(self):
        if self.mode not in ("thevenin", "playback"):
            raise ValueError(f"unknown grid mode {self.mode!r}")
        if self.mode == "thevenin":
            if self.l_henry is None or not self.l_henry > 0:
                raise ValueError("thevenin grid needs l_henry > 0")
            if self.r_ohm > 0.1 * self.reactance_ohm:
                warnings.warn(
                    f"grid resistance {self.r_ohm} ohm exceeds 10% of reactance "
                    f"{self.reactance_ohm:.3f} ohm; the quasi-static model ignores it",
                    stacklevel=2,
                )

    @property
    def reactance_ohm(self) -> float:
        return 2 * math.pi * self.f0 * self.l_henry

    @property
    def s_scc(self) -> float:
        """Short-circuit capacity in MVA."""
        return self.v_base_kv**2 / self.reactance_ohm

    @property
    def v_base_phase_kv(self) -> float:
        return self.v_base_kv / math.sqrt(3)


@dataclass(frozen=True)
class GainHook:
    """Calls ``adjust(state, params, grid)`` once the simulation reaches
    ``t``. A float return value replaces the controller gain."""

    t: float
    adjust: Callable[[StatcomState, StatcomParams, GridEquivalent], float | None]


@dataclass(frozen=True, eq=False)
class SimTrace:
    times: np.ndarray
    v_meas: np.ndarray
    q_act: np.ndarray
    q_cmd: np.ndarray
    gain_events: tuple[tuple[float, float, float], ...] = ()
    final_state: StatcomState | None = None
    final_params: StatcomParams | None = None

    def __len__(self):
        return len(self.times)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "v_meas", "q_act", "q_cmd"])
        for row in zip(self.times.tolist(), self.v_meas.tolist(), self.q_act.tolist(), self.q_cmd.tolist()):
            w.writerow([repr(x) for x in row])
        return buf.getvalue()

    def __eq__(self, other):
        if not isinstance(other, SimTrace):
            return NotImplemented
        return (
            np.array_equal(self.times, other.times)
            and np.array_equal(self.v_meas, other.v_meas)
            and np.array_equal(self.q_act, other.q_act)
            and np.array_equal(self.q_cmd, other.q_cmd)
            and self.gain_events == other.gain_events
            and self.final_state == other.final_state
        )

    __hash__ = None


def droop_target(p: StatcomParams, q_act: float, v_ref_adj: float | None = None) -> float:
    v_ref = p.v_ref if v_ref_adj is None else v_ref_adj
    return v_ref - p.slope * q_act / p.q_nominal


def _integrate(q_cmd: float, dq: float, q_max: float) -> float:
    # conditional anti-windup: never integrate further into saturation
    if (q_cmd >= q_max and dq > 0) or (q_cmd <= -q_max and dq < 0):
        return q_cmd
    return min(max(q_cmd + dq, -q_max), q_max)


def controller_step(s: StatcomState, p: StatcomParams, v_meas: float, dt: float) -> StatcomState:
    if not dt > 0:
        raise ValueError("dt must be positive")
    if dt > p.tau_conv / 2:
        raise StepTooLarge(f"dt={dt:g} s exceeds tau_conv/2={p.tau_conv / 2:g} s")
    n = p.window_length(dt)
    if len(s.v_window) != n:
        window = (v_meas,) * n
        v_sum = v_meas * n
    else:
        v_sum = s.v_sum + v_meas - s.v_window[0]
        window = s.v_window[1:] + (v_meas,)
    v_avg = v_sum / n

    e = droop_target(p, s.q_act, s.v_ref_adj) - v_avg
    q_cmd = _integrate(s.q_cmd, p.gain * e * p.q_nominal * dt / p.t_resp, p.q_max)
    q_act = s.q_act + (q_cmd - s.q_act) * dt / p.tau_conv
    return replace(s, q_cmd=q_cmd, q_act=q_act, t=s.t + dt, v_window=window, v_sum=v_sum)


def qcm_step(s: StatcomState, p: StatcomParams, dt: float) -> StatcomState:
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not p.qcm_enabled:
        return s
    v = s.v_ref_adj + (p.q_ref - s.q_act) / p.q_nominal * p.slope * dt / p.t_qcm
    return replace(s, v_ref_adj=min(max(v, 0.9), 1.1))


def grid_voltage(g: GridEquivalent, q_act: float, playback_v: float | None = None) -> float:
    if g.mode == "playback":
        if playback_v is None:
            raise MissingPlaybackSample("playback grid needs a recorded voltage sample")
        return playback_v
    return g.v_src + q_act / g.s_scc


def playback_magnitude(series: PhasorSeries, v_base_kv: float) -> np.ndarray:
    """Positive-sequence magnitude of a voltage phasor series in pu."""
    return np.abs(series.positive_sequence()) / (v_base_kv / math.sqrt(3))


def _sample_playback(times: np.ndarray, pb_times: np.ndarray, mags: np.ndarray, dt: float) -> np.ndarray:
    """Playback voltage at the step times.

    Steps that land within 5% of a step on a recorded sample take that
    sample exactly (recorder timestamps are rounded to whole microseconds);
    others are linearly interpolated.
    """
    v = np.interp(times, pb_times, mags)
    right = np.clip(np.searchsorted(pb_times, times), 0, len(pb_times) - 1)
    left = np.clip(right - 1, 0, None)
    nearest = np.where(np.abs(pb_times[left] - times) < np.abs(pb_times[right] - times), left, right)
    hit = np.abs(pb_times[nearest] - times) <= 0.05 * dt
    v[hit] = mags[nearest[hit]]
    return v


def simulate(
    p: StatcomParams,
    g: GridEquivalent,
    duration: float,
    dt: float = DEFAULT_DT,
    playback: PhasorSeries | None = None,
    hooks: Sequence[GainHook] = (),
    state: StatcomState | None = None,
) -> SimTrace:
    """Fixed-step run of the model.

    Each step evaluates the grid voltage from the state at the start of the
    step, advances the voltage controller, then the Q controller. Trace
    sample k is time ``t0 + k*dt`` together with the state after that step.
    In playback mode ``t0`` is the first playback time unless ``state``
    says otherwise, and the voltage is interpolated from the series.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if dt > p.tau_conv / 2:
        raise StepTooLarge(f"dt={dt:g} s exceeds tau_conv/2={p.tau_conv / 2:g} s")
    if (playback is not None) != (g.mode == "playback"):
        raise ValueError("a playback series is required in playback mode and only there")

    n_steps = int(round(duration / dt))
    if state is None:
        t0 = float(playback.times[0]) if playback is not None else 0.0
        if g.mode == "thevenin":
            state = StatcomState.initial(p, g.v_src, g.s_scc, t=t0)
        else:
            state = StatcomState.initial(p, float(playback_magnitude(playback, g.v_base_kv)[0]), t=t0)
    times = state.t + dt * np.arange(n_steps)

    v_play = None
    if playback is not None:
        mags = playback_magnitude(playback, g.v_base_kv)
        if times.size and (times[-1] > playback.times[-1] + 1e-9 or times[0] < playback.times[0] - 1e-9):
            warnings.warn("playback series does not cover the run; holding end values", stacklevel=2)
        v_play = _sample_playback(times, np.asarray(playback.times), mags, dt)

    pending = sorted(hooks, key=lambda h: h.t)
    v_out = np.empty(n_steps)
    qa_out = np.empty(n_steps)
    qc_out = np.empty(n_steps)
    events = []

    # local copies of the state; arithmetic mirrors controller_step/qcm_step
    q_cmd, q_act, v_ref_adj = state.q_cmd, state.q_act, state.v_ref_adj
    n_win = p.window_length(dt)
    window = deque(state.v_window) if len(state.v_window) == n_win else None
    v_sum = state.v_sum
    thevenin = g.mode == "thevenin"
    s_scc = g.s_scc if thevenin else math.inf

    k = 0
    while k < n_steps:
        t = float(times[k])
        while pending and pending[0].t <= t + 1e-12:
            hook = pending.pop(0)
            snapshot = StatcomState(q_cmd, q_act, v_ref_adj, t, tuple(window or ()), v_sum)
            new_gain = hook.adjust(snapshot, p, g)
            if new_gain is not None and new_gain != p.gain:
                events.append((t, p.gain, float(new_gain)))
                p = replace(p, gain=float(new_gain))
        stop = n_steps if not pending else min(n_steps, int(np.searchsorted(times, pending[0].t - 1e-12)))
        stop = max(stop, k + 1)

        gain, slope, qn, q_max = p.gain, p.slope, p.q_nominal, p.q_max
        t_resp, tau, t_qcm, q_ref, qcm = p.t_resp, p.tau_conv, p.t_qcm, p.q_ref, p.qcm_enabled
        v_src = g.v_src
        for j in range(k, stop):
            v = v_play[j] if v_play is not None else v_src + q_act / s_scc
            if window is None:
                window = deque((v,) * n_win)
                v_sum = v * n_win
            else:
                v_sum = v_sum + v - window.popleft()
                window.append(v)
            e = (v_ref_adj - slope * q_act / qn) - v_sum / n_win
            dq = gain * e * qn * dt / t_resp
            if not ((q_cmd >= q_max and dq > 0) or (q_cmd <= -q_max and dq < 0)):
                q_cmd = min(max(q_cmd + dq, -q_max), q_max)
            q_act = q_act + (q_cmd - q_act) * dt / tau
            if qcm:
                vr = v_ref_adj + (q_ref - q_act) / qn * slope * dt / t_qcm
                v_ref_adj = min(max(vr, 0.9), 1.1)
            v_out[j] = v
            qa_out[j] = q_act
            qc_out[j] = q_cmd
        k = stop

    t_end = state.t + dt * n_steps
    final = StatcomState(q_cmd, q_act, v_ref_adj, t_end, tuple(window or state.v_window), v_sum)
    return SimTrace(times, v_out, qa_out, qc_out, tuple(events), final, p)


def step_metrics(trace: SimTrace, q_start: float, band: float = 0.02) -> tuple[float, float]:
    """Settling time (s) and fractional overshoot of a step response.

    The final value is the last trace sample. Settling time is measured
    from the first sample to the last exit from a ``band`` fraction of the
    step around the final value.
    """
    q = trace.q_act
    step = q[-1] - q_start
    if step == 0:
        return 0.0, 0.0
    outside = np.nonzero(np.abs(q - q[-1]) > band * abs(step))[0]
    settle = 0.0 if outside.size == 0 else float(trace.times[outside[-1] + 1] - trace.times[0])
    overshoot = max(0.0, float(np.max((q - q[-1]) * np.sign(step))) / abs(step))
    return settle, overshoot
