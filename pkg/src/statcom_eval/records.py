"""Fault-recorder waveform files: parsing, writing, phasors and reactive power.

The file format is an ASCII subset of COMTRADE-1999 with analog channels
only. See ``docs/formats.md`` for the exact cfg grammar.
"""
from __future__ import annotations

import cmath
import logging
import math
from dataclasses import dataclass, replace
from datetime import datetime, timedelta
from typing import Iterable, Literal, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    ChannelCountMismatch,
    ChannelNotFound,
    EmptyRecording,
    IncommensurateRate,
    InputError,
    MalformedConfig,
    MissingPhaseChannels,
    SampleCountMismatch,
)

log = logging.getLogger(__name__)

UNITS = ("kV", "kA")
PHASES = ("A", "B", "C")
TIME_FORMAT = "%d/%m/%Y,%H:%M:%S.%f"
DEFAULT_SAMPLE_RATE = 9600.0

# 1 at 120 degrees
A_OP = cmath.exp(2j * math.pi / 3)

Orientation = Literal["out_of_device", "into_device"]


class MalformedData(InputError):
    """A dat row could not be parsed."""


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class AnalogChannel:
    name: str
    unit: str
    phase: str | None
    values: np.ndarray

    def __post_init__(self):
        if self.unit not in UNITS:
            raise InputError(f"channel {self.name!r}: unit must be one of {UNITS}, got {self.unit!r}")
        if self.phase is not None and self.phase not in PHASES:
            raise InputError(f"channel {self.name!r}: phase must be A, B, C or None, got {self.phase!r}")
        if not self.name or "," in self.name:
            raise InputError(f"invalid channel name {self.name!r}")
        object.__setattr__(self, "values", _frozen_array(self.values, np.float64))
        if self.values.ndim != 1:
            raise InputError(f"channel {self.name!r}: values must be 1-D")

    def __eq__(self, other):
        if not isinstance(other, AnalogChannel):
            return NotImplemented
        return (
            self.name == other.name
            and self.unit == other.unit
            and self.phase == other.phase
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Recording:
    """A multi-channel sampled waveform set.

    ``timestamps_us`` holds one integer microsecond offset per sample and is
    the authoritative time base; ``sample_rate`` is the nominal rate declared
    by the recorder.
    """

    station_id: str
    sample_rate: float
    start_time: datetime
    channels: tuple[AnalogChannel, ...]
    timestamps_us: np.ndarray
    fundamental_hz: float = 60.0

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "timestamps_us", _frozen_array(self.timestamps_us, np.int64))
        if not self.sample_rate > 0:
            raise InputError("sample_rate must be positive")
        if not self.fundamental_hz > 0:
            raise InputError("fundamental_hz must be positive")
        if self.timestamps_us.ndim != 1 or len(self.timestamps_us) < 1:
            raise InputError("a recording needs at least one sample")
        if np.any(np.diff(self.timestamps_us) <= 0):
            raise InputError("timestamps must be strictly increasing")
        if not self.station_id or "\n" in self.station_id or "," in self.station_id:
            raise InputError(f"invalid station id {self.station_id!r}")
        names = [ch.name for ch in self.channels]
        if len(set(names)) != len(names):
            raise InputError(f"duplicate channel names in {names}")
        for ch in self.channels:
            if len(ch.values) != self.n_samples:
                raise InputError(
                    f"channel {ch.name!r} has {len(ch.values)} samples, expected {self.n_samples}"
                )

    @property
    def n_samples(self) -> int:
        return len(self.timestamps_us)

    @property
    def times(self) -> np.ndarray:
        """Sample times in seconds relative to ``start_time``."""
        return self.timestamps_us * 1e-6

    @property
    def channel_names(self) -> list[str]:
        return [ch.name for ch in self.channels]

    def channel(self, name: str) -> AnalogChannel:
        for ch in self.channels:
            if ch.name == name:
                return ch
        raise ChannelNotFound(f"no channel named {name!r} (have {self.channel_names})")

    def phase_channels(self, unit: str) -> tuple[str, str, str]:
        """Names of the A, B, C channels with the given unit."""
        found = {}
        for ch in self.channels:
            if ch.unit == unit and ch.phase is not None:
                if ch.phase in found:
                    raise MissingPhaseChannels(f"more than one {unit} channel on phase {ch.phase}")
                found[ch.phase] = ch.name
        missing = [p for p in PHASES if p not in found]
        if missing:
            raise MissingPhaseChannels(f"no {unit} channel for phase(s) {', '.join(missing)}")
        return found["A"], found["B"], found["C"]

    def with_channels(self, channels: Iterable[AnalogChannel]) -> "Recording":
        return replace(self, channels=tuple(channels))

    def __eq__(self, other):
        if not isinstance(other, Recording):
            return NotImplemented
        return (
            self.station_id == other.station_id
            and self.sample_rate == other.sample_rate
            and self.fundamental_hz == other.fundamental_hz
            and self.start_time == other.start_time
            and self.channels == other.channels
            and np.array_equal(self.timestamps_us, other.timestamps_us)
        )

    __hash__ = None


def uniform_timestamps(n: int, sample_rate: float) -> np.ndarray:
    return np.round(np.arange(n) * (1e6 / sample_rate)).astype(np.int64)


# ---------------------------------------------------------------------------
# cfg / dat


def _fields(line: str) -> list[str]:
    return [f.strip() for f in line.split(",")]


def _count(text: str, lineno: int) -> int:
    try:
        return int(text.rstrip("AaDd"))
    except ValueError:
        raise MalformedConfig(f"cfg line {lineno}: expected a count, got {text!r}") from None


def _float(text: str, lineno: int, what: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise MalformedConfig(f"cfg line {lineno}: bad {what} {text!r}") from None


def parse_comtrade(cfg_text: str, dat_text: str) -> Recording:
    lines = [ln.strip() for ln in cfg_text.splitlines()]
    while lines and not lines[-1]:
        lines.pop()
    if lines and lines[-1].upper() in ("ASCII", "ASC"):
        lines.pop()
    if len(lines) < 2:
        raise MalformedConfig("cfg is truncated before the channel count line")

    station_id = _fields(lines[0])[0]
    if not station_id:
        raise MalformedConfig("cfg line 1: empty station id")

    counts = _fields(lines[1])
    if len(counts) < 2:
        raise MalformedConfig(f"cfg line 2: expected 'N,NA', got {lines[1]!r}")
    n_total, n_analog = _count(counts[0], 2), _count(counts[1], 2)
    if len(counts) > 2 and _count(counts[2], 2) != 0:
        raise MalformedConfig("cfg line 2: digital channels are not supported")
    if n_total != n_analog:
        raise MalformedConfig(f"cfg line 2: {n_total} channels declared but {n_analog} analog")
    if n_analog < 1:
        raise EmptyRecording("cfg declares no analog channels")

    expected = 2 + n_analog + 4
    if len(lines) != expected:
        raise MalformedConfig(f"cfg has {len(lines)} lines, expected {expected} for {n_analog} channels")

    specs = []
    for k in range(n_analog):
        lineno = 3 + k
        f = _fields(lines[2 + k])
        if len(f) != 6:
            raise MalformedConfig(
                f"cfg line {lineno}: expected 'idx,name,phase,unit,multiplier,offset', got {lines[2 + k]!r}"
            )
        idx = _count(f[0], lineno)
        if idx != k + 1:
            raise MalformedConfig(f"cfg line {lineno}: channel index {idx}, expected {k + 1}")
        phase = f[2] or None
        if phase is not None and phase.lower() == "none":
            phase = None
        if phase is not None and phase not in PHASES:
            raise MalformedConfig(f"cfg line {lineno}: unknown phase {f[2]!r}")
        if f[3] not in UNITS:
            raise MalformedConfig(f"cfg line {lineno}: unknown unit {f[3]!r}")
        mult = _float(f[4], lineno, "multiplier")
        offset = _float(f[5], lineno, "offset")
        specs.append((f[1], phase, f[3], mult, offset))

    pos = 2 + n_analog
    fundamental = _float(lines[pos], pos + 1, "frequency")
    rate_fields = _fields(lines[pos + 1])
    if len(rate_fields) != 2:
        raise MalformedConfig(f"cfg line {pos + 2}: expected 'rate,endsample'")
    rate = _float(rate_fields[0], pos + 2, "sample rate")
    end_sample = _count(rate_fields[1], pos + 2)
    try:
        start_time = datetime.strptime(lines[pos + 2], TIME_FORMAT)
        datetime.strptime(lines[pos + 3], TIME_FORMAT)
    except ValueError:
        raise MalformedConfig(f"cfg lines {pos + 3}-{pos + 4}: bad timestamp") from None
    if rate <= 0:
        raise MalformedConfig(f"cfg line {pos + 2}: sample rate must be positive")

    rows = [ln for ln in dat_text.splitlines() if ln.strip()]
    if len(rows) != end_sample:
        raise SampleCountMismatch(f"cfg declares {end_sample} samples, dat has {len(rows)} rows")
    if not rows:
        raise SampleCountMismatch("dat file has no samples")

    raw = np.empty((len(rows), n_analog))
    stamps = np.empty(len(rows), dtype=np.int64)
    for r, row in enumerate(rows):
        f = row.split(",")
        if len(f) != n_analog + 2:
            raise ChannelCountMismatch(
                f"dat row {r + 1} carries {len(f) - 2} values, cfg declares {n_analog}"
            )
        try:
            int(f[0])
            stamps[r] = int(f[1])
            raw[r] = [float(x) for x in f[2:]]
        except ValueError:
            raise MalformedData(f"dat row {r + 1}: unparseable value in {row!r}") from None

    if np.any(np.diff(stamps) <= 0):
        raise MalformedData("dat timestamps are not strictly increasing")
    if len(stamps) > 1:
        measured = (len(stamps) - 1) * 1e6 / (stamps[-1] - stamps[0])
        if abs(measured / rate - 1.0) > 0.01:
            raise SampleCountMismatch(
                f"dat timestamps imply {measured:.1f} samples/s, cfg declares {rate:g}"
            )

    channels = tuple(
        AnalogChannel(name, unit, phase, raw[:, k] * mult + offset)
        for k, (name, phase, unit, mult, offset) in enumerate(specs)
    )
    return Recording(station_id, rate, start_time, channels, stamps, fundamental)


def write_comtrade(rec: Recording) -> tuple[str, str]:
    """Serialize ``rec`` to (cfg, dat) text. Values are written at full
    precision with unit multipliers, so parsing the output is lossless."""
    if not rec.channels:
        raise EmptyRecording("refusing to write a recording with no channels")
    n = len(rec.channels)
    stamp = rec.start_time.strftime(TIME_FORMAT)
    cfg = [rec.station_id, f"{n},{n}A"]
    for k, ch in enumerate(rec.channels, start=1):
        cfg.append(f"{k},{ch.name},{ch.phase or ''},{ch.unit},1.0,0.0")
    cfg += [repr(float(rec.fundamental_hz)), f"{float(rec.sample_rate)!r},{rec.n_samples}", stamp, stamp]

    columns = [ch.values.tolist() for ch in rec.channels]
    dat = []
    for r, ts in enumerate(rec.timestamps_us.tolist()):
        dat.append(",".join([str(r + 1), str(ts)] + [repr(col[r]) for col in columns]))
    return "\n".join(cfg) + "\n", "\n".join(dat) + "\n"


def read_comtrade(cfg_path, dat_path=None) -> Recording:
    from pathlib import Path

    cfg_path = Path(cfg_path)
    dat_path = Path(dat_path) if dat_path is not None else cfg_path.with_suffix(".dat")
    return parse_comtrade(cfg_path.read_text(), dat_path.read_text())


def save_comtrade(rec: Recording, prefix) -> tuple[str, str]:
    from pathlib import Path

    cfg, dat = write_comtrade(rec)
    prefix = Path(prefix)
    cfg_path, dat_path = prefix.with_suffix(".cfg"), prefix.with_suffix(".dat")
    cfg_path.write_text(cfg)
    dat_path.write_text(dat)
    return str(cfg_path), str(dat_path)


# ---------------------------------------------------------------------------
# phasors


@dataclass(frozen=True)
class Phasor:
    magnitude: float
    angle: float = 0.0

    def __post_init__(self):
        if self.magnitude < 0:
            raise ValueError("phasor magnitude must be non-negative")
        a = math.remainder(self.angle, 2 * math.pi)
        if a == -math.pi:
            a = math.pi
        object.__setattr__(self, "angle", a)

    @classmethod
    def from_complex(cls, z: complex) -> "Phasor":
        return cls(abs(z), cmath.phase(z) if z != 0 else 0.0)

    @property
    def value(self) -> complex:
        return cmath.rect(self.magnitude, self.angle)


@dataclass(frozen=True, eq=False)
class PhasorSeries:
    """Per-phase RMS phasors on a common time base.

    ``values`` holds three complex arrays (phases A, B, C in order).
    """

    times: np.ndarray
    values: tuple[np.ndarray, np.ndarray, np.ndarray]
    fundamental_hz: float = 60.0
    names: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "times", _frozen_array(self.times, np.float64))
        object.__setattr__(self, "values", tuple(_frozen_array(v, np.complex128) for v in self.values))
        if len(self.values) != 3:
            raise ValueError("a phasor series carries exactly three phases")
        if any(len(v) != len(self.times) for v in self.values):
            raise ValueError("phasor sequences must match the time base length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("phasor times must be strictly increasing")

    def __len__(self):
        return len(self.times)

    def phasor(self, phase: int, k: int) -> Phasor:
        return Phasor.from_complex(complex(self.values[phase][k]))

    def magnitudes(self, phase: int) -> np.ndarray:
        return np.abs(self.values[phase])

    def positive_sequence(self) -> np.ndarray:
        return positive_sequence_array(*self.values)


def samples_per_cycle(sample_rate: float, fundamental_hz: float) -> int:
    ratio = sample_rate / fundamental_hz
    n = round(ratio)
    if n < 2 or abs(ratio - n) > 1e-9 * ratio:
        raise IncommensurateRate(
            f"sample rate {sample_rate:g} is not an integer multiple of {fundamental_hz:g} Hz"
        )
    return n


def windowed_dft(x: np.ndarray, n_cycle: int) -> np.ndarray:
    """Sliding one-cycle DFT at the fundamental, scaled to RMS.

    Output k corresponds to the window ending at sample ``k + n_cycle - 1``.
    Angles are referenced to sample 0 of ``x``.
    """
    k = np.arange(len(x))
    rot = np.exp(-2j * np.pi * (k % n_cycle) / n_cycle)
    z = np.asarray(x, dtype=np.float64) * rot
    return sliding_window_view(z, n_cycle).sum(axis=1) * (math.sqrt(2) / n_cycle)


def extract_phasors(
    rec: Recording, channels: Sequence[str], fundamental_hz: float | None = None
) -> PhasorSeries:
    if len(channels) != 3:
        raise ValueError("extract_phasors needs exactly three channel names")
    f0 = rec.fundamental_hz if fundamental_hz is None else fundamental_hz
    n = samples_per_cycle(rec.sample_rate, f0)
    chans = [rec.channel(name) for name in channels]
    if rec.n_samples < n:
        raise InputError(f"recording has {rec.n_samples} samples, fewer than one cycle ({n})")
    values = tuple(windowed_dft(ch.values, n) for ch in chans)
    return PhasorSeries(rec.times[n - 1:], values, f0, tuple(channels))


def positive_sequence(pa: Phasor, pb: Phasor, pc: Phasor) -> Phasor:
    return Phasor.from_complex((pa.value + A_OP * pb.value + A_OP**2 * pc.value) / 3)


def positive_sequence_array(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    return (np.asarray(a) + A_OP * np.asarray(b) + A_OP**2 * np.asarray(c)) / 3


def _orientation_sign(orientation: str) -> float:
    if orientation == "out_of_device":
        return 1.0
    if orientation == "into_device":
        return -1.0
    raise ValueError(f"orientation must be 'out_of_device' or 'into_device', got {orientation!r}")


def compute_q(v: Phasor, i: Phasor, orientation: Orientation = "out_of_device") -> float:
    """Three-phase reactive power in MVAR from phase-RMS kV and RMS kA.

    Positive means capacitive injection into the grid.
    """
    sign = _orientation_sign(orientation)
    q = 3.0 * v.magnitude * i.magnitude * math.sin(v.angle - i.angle)
    return q if sign > 0 else -q


def compute_q_array(v: np.ndarray, i: np.ndarray, orientation: Orientation = "out_of_device") -> np.ndarray:
    sign = _orientation_sign(orientation)
    q = 3.0 * np.abs(v) * np.abs(i) * np.sin(np.angle(v) - np.angle(i))
    return q if sign > 0 else -q


# ---------------------------------------------------------------------------
# prelude


def prepend_prelude(
    rec: Recording,
    duration_s: float = 10.0,
    nominal_pu: float = 1.0,
    v_base_kv: float = 230.0,
) -> Recording:
    """Prepend a steady balanced nominal-voltage section to ``rec``.

    Each phase-voltage channel continues with the phase extracted from its
    first recorded cycle. Phase-current channels are padded with zeros and
    unphased channels (DC bus, control signals) hold their first value.
    """
    if duration_s < 0:
        raise ValueError("prelude duration must be non-negative")
    v_names = rec.phase_channels("kV")
    m = math.ceil(duration_s * rec.sample_rate - 1e-9)
    if m <= 0:
        return rec
    n_cyc = samples_per_cycle(rec.sample_rate, rec.fundamental_hz)
    if rec.n_samples < n_cyc:
        raise InputError("need at least one recorded cycle to splice a prelude")

    amplitude = math.sqrt(2) * nominal_pu * v_base_kv / math.sqrt(3)
    k = np.arange(-m, 0)
    omega_k = 2 * np.pi * rec.fundamental_hz / rec.sample_rate * k
    channels = []
    for ch in rec.channels:
        if ch.name in v_names:
            theta = np.angle(windowed_dft(ch.values[:n_cyc], n_cyc)[0])
            pad = amplitude * np.cos(omega_k + theta)
        elif ch.phase is not None:
            pad = np.zeros(m)
        else:
            pad = np.full(m, ch.values[0])
        channels.append(replace(ch, values=np.concatenate([pad, ch.values])))

    shift_us = int(round(m * 1e6 / rec.sample_rate))
    stamps = np.concatenate([
        uniform_timestamps(m, rec.sample_rate),
        rec.timestamps_us - rec.timestamps_us[0] + shift_us,
    ])
    start = rec.start_time - timedelta(microseconds=shift_us)
    return replace(rec, channels=tuple(channels), timestamps_us=stamps, start_time=start)
