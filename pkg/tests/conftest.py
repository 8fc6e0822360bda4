from dataclasses import replace

import numpy as np
import pytest

from statcom_eval.evalpipe import EmsSettings, reference_model
from statcom_eval.synthgen import Dip, EventSpec, gen_event, synth_measured_q

EMS = EmsSettings(gain=14.2)


def matched_recording(spec: EventSpec, ems: EmsSettings = EMS):
    """Synthetic recording whose currents come from the model evaluate builds for ``ems``."""
    rec = gen_event(spec)
    params, state = reference_model(ems, dt=1.0 / rec.sample_rate)
    n_cycle = round(rec.sample_rate / rec.fundamental_hz)
    state = replace(state, t=float(rec.times[n_cycle - 1]))
    return synth_measured_q(rec, params, v_base_kv=ems.v_base_kv, state=state)


def random_event(rng: np.random.Generator) -> EventSpec:
    """Dip depth 0.5-0.95 pu, duration 50-500 ms, one or two dips."""
    phases = [("A",), ("A", "B"), ("A", "B", "C")][rng.integers(3)]
    first = Dip(0.0, float(rng.uniform(0.05, 0.5)), float(rng.uniform(0.5, 0.95)), phases)
    dips = [first]
    if rng.random() < 0.5:
        gap = float(rng.uniform(0.2, 0.4))
        dips.append(Dip(first.end_s + gap, float(rng.uniform(0.05, 0.5)), float(rng.uniform(0.5, 0.95)), phases))
    return EventSpec(pre_s=0.2, dips=tuple(dips), seed=int(rng.integers(1 << 31)))


@pytest.fixture(scope="session")
def single_dip_event():
    spec = EventSpec(pre_s=0.2, dips=(Dip(0.0, 0.1, 0.7, ("A",)),))
    return matched_recording(spec)


# ---------------------------------------------------------------------------
# acceptance summary: one line per criterion

_criteria: dict[int, tuple[str, bool]] = {}


def record_criterion(number: int, title: str, passed: bool):
    prev = _criteria.get(number)
    _criteria[number] = (title, passed and (prev is None or prev[1]))


@pytest.fixture
def criterion(request):
    """Marks the test as acceptance criterion ``n`` and records its outcome."""
    marker = request.node.get_closest_marker("criterion")
    number, title = marker.args
    yield
    rep = getattr(request.node, "rep_call", None)
    record_criterion(number, title, rep is not None and rep.passed)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep
    elif rep.when == "setup" and rep.failed and item.get_closest_marker("criterion"):
        record_criterion(*item.get_closest_marker("criterion").args, False)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, passed = _criteria[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number}. {title}")

