"""Synthetic fault recordings for desk testing.

``gen_event`` builds three-phase voltage waveforms with fault dips and a
short overvoltage after the final clearing. ``synth_measured_q`` plays such
a recording through the STATCOM model and adds current channels whose
phasors reproduce the simulated reactive power.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from datetime import datetime
from typing import Sequence

import numpy as np

from .errors import InputError, OverlappingDips
from .records import (
    AnalogChannel,
    Recording,
    extract_phasors,
    samples_per_cycle,
    uniform_timestamps,
)
from .simcore import (
    GridEquivalent,
    StatcomParams,
    StatcomState,
    simulate,
)

PHASE_SHIFT = {"A": 0.0, "B": -2 * math.pi / 3, "C": 2 * math.pi / 3}


@dataclass(frozen=True)
class Dip:
    start_s: float              # measured from the end of the pre-fault section
    duration_s: float
    depth_pu: float             # fraction of nominal removed on affected phases
    phases: tuple[str, ...] = ("A", "B", "C")

    def __post_init__(self):
        object.__setattr__(self, "phases", tuple(self.phases))
        if not 0 < self.depth_pu < 1:
            raise InputError(f"dip depth must be in (0, 1), got {self.depth_pu}")
        if not self.duration_s > 0 or self.start_s < 0:
            raise InputError("dip needs start_s >= 0 and duration_s > 0")
        if not self.phases or any(ph not in PHASE_SHIFT for ph in self.phases):
            raise InputError(f"dip phases must be drawn from A, B, C: {self.phases}")

    @property
    def end_s(self) -> float:
        return self.start_s + self.duration_s


@dataclass(frozen=True)
class EventSpec:
    pre_s: float = 0.2
    dips: tuple[Dip, ...] = ()
    recovery_overshoot_pu: float = 0.02
    overshoot_s: float = 0.15
    v_nominal_pu: float = 1.0
    sample_rate: float = 9600.0
    f0: float = 60.0
    v_base_kv: float = 230.0
    station_id: str = "SYNTH"
    start_time: datetime = datetime(2018, 3, 12, 0, 0, 0)
    noise_std_pu: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dips", tuple(self.dips))
        if self.pre_s < 0 or self.overshoot_s < 0:
            raise InputError("pre_s and overshoot_s must be non-negative")
        if not self.v_nominal_pu > 0:
            raise InputError("v_nominal_pu must be positive")
        cycle = 1.0 / self.f0
        for a, b in zip(self.dips, self.dips[1:]):
            # ramps last one cycle past each edge
            if b.start_s < a.end_s + cycle:
                raise OverlappingDips(
                    f"dip at {b.start_s} s starts before the previous one has recovered ({a.end_s} s + 1 cycle)"
                )

    @property
    def total_s(self) -> float:
        last = self.dips[-1].end_s if self.dips else 0.0
        return self.pre_s + last + 0.5

    @classmethod
    def from_dict(cls, doc: dict) -> "EventSpec":
        doc = dict(doc)
        try:
            dips = tuple(Dip(float(d["start_s"]), float(d["duration_s"]), float(d["depth_pu"]),
                             tuple(d.get("phases", ("A", "B", "C"))))
                         for d in doc.pop("dips", ()))
            if "start_time" in doc:
                doc["start_time"] = datetime.fromisoformat(doc["start_time"])
            return cls(dips=dips, **doc)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InputError):
                raise
            raise InputError(f"bad event spec: {exc}") from None

    @classmethod
    def from_json(cls, text: str) -> "EventSpec":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InputError(f"event spec is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise InputError("event spec must be a JSON object")
        return cls.from_dict(doc)


def _ramp(tau: np.ndarray, length: float) -> np.ndarray:
    """0 before 0, raised-cosine rise over ``length``, 1 afterwards."""
    x = np.clip(tau / length, 0.0, 1.0)
    return 0.5 * (1.0 - np.cos(np.pi * x))


def envelopes(spec: EventSpec, t: np.ndarray) -> dict[str, np.ndarray]:
    """Per-phase amplitude multipliers (1.0 = nominal)."""
    cycle = 1.0 / spec.f0
    env = {ph: np.ones_like(t) for ph in PHASE_SHIFT}
    for dip in spec.dips:
        t0, t1 = spec.pre_s + dip.start_s, spec.pre_s + dip.end_s
        w = _ramp(t - t0, cycle) - _ramp(t - t1, cycle)
        for ph in dip.phases:
            env[ph] = env[ph] - dip.depth_pu * w
    if spec.dips and spec.recovery_overshoot_pu:
        t1 = spec.pre_s + spec.dips[-1].end_s
        bump = _ramp(t - t1, cycle) - _ramp(t - t1 - cycle - spec.overshoot_s, cycle)
        for ph in env:
            env[ph] = env[ph] + spec.recovery_overshoot_pu * bump
    return env


def gen_event(spec: EventSpec) -> Recording:
    samples_per_cycle(spec.sample_rate, spec.f0)
    n = int(round(spec.total_s * spec.sample_rate))
    k = np.arange(n)
    t = k / spec.sample_rate
    omega_t = 2 * np.pi * spec.f0 * t
    amplitude = math.sqrt(2) * spec.v_nominal_pu * spec.v_base_kv / math.sqrt(3)
    rng = np.random.default_rng(spec.seed)

    channels = []
    for ph, env in envelopes(spec, t).items():
        v = amplitude * env * np.cos(omega_t + PHASE_SHIFT[ph])
        if spec.noise_std_pu > 0:
            v = v + rng.normal(0.0, spec.noise_std_pu * amplitude, n)
        channels.append(AnalogChannel(f"V{ph}", "kV", ph, v))
    return Recording(spec.station_id, spec.sample_rate, spec.start_time, tuple(channels),
                     uniform_timestamps(n, spec.sample_rate), spec.f0)


def _inverse_window(target: np.ndarray, n_cycle: int) -> np.ndarray:
    """Complex envelope whose one-cycle running mean equals ``target``.

    ``target[j]`` is the desired mean of the window ending at sample
    ``j + n_cycle - 1``. The first window is filled with ``target[0]`` and
    every later sample follows from the change between successive windows.
    """
    m = len(target) + n_cycle - 1
    out = np.empty(m, dtype=np.complex128)
    out[:n_cycle] = target[0]
    step = np.diff(target) * n_cycle
    for j in range(n_cycle, m):
        out[j] = out[j - n_cycle] + step[j - n_cycle]
    return out


def synth_measured_q(
    rec: Recording,
    reference: StatcomParams,
    v_base_kv: float = 230.0,
    state: StatcomState | None = None,
    current_names: Sequence[str] = ("IA", "IB", "IC"),
) -> Recording:
    """Add balanced current channels carrying the model's reactive output.

    The model runs in playback on the recording's positive-sequence voltage
    starting from ``state`` (by default the equilibrium at nominal voltage).
    Currents lead or lag the positive-sequence voltage by 90 degrees, and
    their envelope is pre-shaped so that one-cycle phasor extraction returns
    exactly the simulated reactive power.
    """
    v_names = rec.phase_channels("kV")
    n_cyc = samples_per_cycle(rec.sample_rate, rec.fundamental_hz)
    series = extract_phasors(rec, v_names)
    dt = 1.0 / rec.sample_rate
    grid = GridEquivalent("playback", v_base_kv=v_base_kv, f0=rec.fundamental_hz)
    if state is None:
        state = StatcomState.initial(reference, 1.0, t=float(series.times[0]))
    trace = simulate(reference, grid, len(series) * dt, dt, playback=series, state=state)

    v1 = series.positive_sequence()
    v1_mag = np.abs(v1)
    amp = np.divide(trace.q_act, 3.0 * v1_mag, out=np.zeros_like(v1_mag), where=v1_mag > 1e-9)
    # Q = 3|V||I| sin(theta_v - theta_i): current lags the voltage for capacitive output
    target = amp * np.exp(1j * (np.angle(v1) - np.pi / 2))
    envelope = _inverse_window(target, n_cyc)

    k = np.arange(rec.n_samples)
    rot = np.exp(2j * np.pi * (k % n_cyc) / n_cyc)
    phase_tags = ("A", "B", "C")
    currents = []
    for name, ph in zip(current_names, phase_tags):
        shift = np.exp(1j * PHASE_SHIFT[ph])
        values = math.sqrt(2) * np.real(envelope * shift * rot)
        currents.append(AnalogChannel(name, "kA", ph, values))

    kept = [ch for ch in rec.channels if not (ch.unit == "kA" and ch.phase is not None)]
    return rec.with_channels(kept + currents)
