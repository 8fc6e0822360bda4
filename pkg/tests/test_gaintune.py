import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from statcom_eval.errors import (
    GainOutOfRange,
    IllConditioned,
    InputError,
    NoRootInBracket,
    NonMonotonic,
    NotSettled,
)
from statcom_eval.gaintune import (
    TABLE1,
    CalibrationPoint,
    CalibrationTable,
    PassiveConfig,
    ProbeConfig,
    auto_gain_adjust,
    calibrate,
    calibration_from_json,
    calibration_to_json,
    fit_gain_reactance,
    gain_from_dqdv,
    passive_gain_adjust,
    probe_dqdv,
    reactance_from_gain,
)
from statcom_eval.simcore import GridEquivalent, StatcomParams, StatcomState, simulate

P = StatcomParams()


def analytic_dqdv(l_henry, v_base_kv=230.0, f0=60.0):
    return v_base_kv**2 / (2 * math.pi * f0 * l_henry) / 1000.0


def probe(l_henry):
    return probe_dqdv(P, GridEquivalent(l_henry=l_henry))


def settled_state(l_henry, t=1.0):
    g = GridEquivalent(l_henry=l_henry)
    return simulate(P, g, 0.5, state=StatcomState.initial(P, g.v_src, g.s_scc, t=t - 0.5)).final_state


# --- probe -----------------------------------------------------------------


def test_probe_at_0_02():
    dqdv = probe(0.02)
    assert dqdv == pytest.approx(7.0, rel=0.07)
    assert dqdv == pytest.approx(analytic_dqdv(0.02), rel=1e-3)


def test_probe_at_0_01():
    assert probe(0.01) == pytest.approx(14.3, rel=0.07)


def test_doubling_reactance_halves_dqdv():
    assert probe(0.024) / probe(0.012) == pytest.approx(0.5, rel=0.01)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.008, 0.03))
def test_probe_recovers_short_circuit_capacity(l_henry):
    ratio = probe(l_henry) / analytic_dqdv(l_henry)
    assert 0.93 <= ratio <= 1.07


def test_probe_refuses_unsettled_bus():
    g = GridEquivalent(l_henry=0.02, v_src=0.99)
    with pytest.raises(NotSettled):
        probe_dqdv(P, g, ProbeConfig(settle_s=0.03), state=StatcomState(t=0.0))


def test_probe_needs_thevenin():
    with pytest.raises(ValueError):
        probe_dqdv(P, GridEquivalent("playback"))


# --- gain law --------------------------------------------------------------


@pytest.mark.parametrize("dqdv,gain", [(14.3, 23.35), (7.0, 16.25), (5.342857143, 14.06)])
def test_gain_at_table_nodes(dqdv, gain):
    assert gain_from_dqdv(dqdv) == pytest.approx(gain, abs=1e-9)


def test_gain_for_field_event_probe():
    assert gain_from_dqdv(5.72) == pytest.approx(14.58, abs=0.3)


def lagrange_oracle(x):
    xs, ys = TABLE1.dqdv_values, TABLE1.gains
    return sum(
        ys[i] * np.prod([(x - xs[j]) / (xs[i] - xs[j]) for j in range(3) if j != i]) for i in range(3)
    )


@given(st.floats(5.342857143, 14.3))
def test_gain_law_is_the_interpolating_quadratic(x):
    assert gain_from_dqdv(x) == pytest.approx(lagrange_oracle(x), abs=1e-9)


@given(st.floats(5.342857143, 14.3), st.floats(5.342857143, 14.3))
def test_gain_law_is_monotone(a, b):
    lo, hi = sorted((a, b))
    assert gain_from_dqdv(lo) <= gain_from_dqdv(hi) + 1e-12


def test_extrapolation_warns_and_stays_monotone():
    with pytest.warns(UserWarning):
        below = gain_from_dqdv(4.5)
    assert below < 14.06
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        high = [gain_from_dqdv(x) for x in np.linspace(14.3, 40, 50)]
    assert np.all(np.diff(high) >= -1e-12)


# --- calibration -----------------------------------------------------------


def test_calibrate_reproduces_table():
    table = calibrate([0.01, 0.02, 0.025])
    for got, ref in zip(table.points, TABLE1.points):
        assert got.dqdv == pytest.approx(ref.dqdv, rel=0.07)
        assert abs(got.gain - ref.gain) <= 0.5


def test_calibrate_needs_three_distinct_values():
    with pytest.raises(InputError):
        calibrate([0.02, 0.02, 0.02])


def test_ten_point_sweep_is_monotone():
    table = calibrate(np.linspace(0.008, 0.03, 10))
    assert np.all(np.diff(table.dqdv_values) < 0)
    assert np.all(np.diff(table.gains) < 0)


def test_table_rejects_non_monotone_points():
    with pytest.raises(NonMonotonic):
        CalibrationTable((CalibrationPoint(0.01, 14, 20), CalibrationPoint(0.02, 15, 18),
                          CalibrationPoint(0.03, 5, 12)))
    with pytest.raises(InputError):
        CalibrationTable((CalibrationPoint(0.01, 14, 20), CalibrationPoint(0.02, 7, 18)))


# --- polynomial fit --------------------------------------------------------


def test_three_point_fit_interpolates():
    fit = fit_gain_reactance(TABLE1)
    assert fit.residual_rms < 1e-9
    np.testing.assert_allclose(fit(TABLE1.l_values), TABLE1.gains, atol=1e-9)
    assert fit(0.02) == pytest.approx(16.25, abs=1e-9)
    assert fit.valid_gain_range[1] <= 25.0


def test_least_squares_matches_normal_equations():
    ls = np.linspace(0.008, 0.03, 8)
    gains = 30 - 600 * ls + 3000 * ls**2 + np.array([0.05, -0.03, 0.02, -0.04, 0.01, 0.03, -0.02, 0.0])
    table = CalibrationTable(tuple(CalibrationPoint(l, 1 / l, g) for l, g in zip(ls, gains)))
    fit = fit_gain_reactance(table, degree=2)
    a = np.vander(ls, 3)
    oracle = np.linalg.solve(a.T @ a, a.T @ gains)
    np.testing.assert_allclose(fit.coeffs, oracle, rtol=1e-6)
    resid = gains - a @ oracle
    assert fit.residual_rms == pytest.approx(np.sqrt(np.mean(resid**2)), rel=1e-6)
    assert np.max(np.abs(fit(ls) - gains)) <= 3 * fit.residual_rms


def test_near_duplicate_reactances_are_ill_conditioned():
    table = CalibrationTable((CalibrationPoint(0.02, 7.1, 16.3), CalibrationPoint(0.02 + 1e-12, 7.0, 16.25),
                              CalibrationPoint(0.025, 5.3, 14.0)))
    with pytest.raises(IllConditioned):
        fit_gain_reactance(table)


# --- inverse ---------------------------------------------------------------

FIT = fit_gain_reactance(TABLE1)


def test_inverse_for_first_event_gain():
    assert reactance_from_gain(14.2, FIT) == pytest.approx(0.02454, rel=0.05)
    assert reactance_from_gain(14.2, FIT) == pytest.approx(0.02461, abs=5e-5)


def test_inverse_for_second_event_gain():
    assert reactance_from_gain(12.8, FIT) == pytest.approx(0.0289, rel=0.07)


def test_inverse_at_node():
    assert reactance_from_gain(16.25, FIT) == pytest.approx(0.02, abs=1e-6)


@given(st.floats(0.01, 0.025))
def test_inverse_consistency(l_henry):
    assert reactance_from_gain(float(FIT(l_henry)), FIT) == pytest.approx(l_henry, abs=1e-4)


def test_inverse_range_errors():
    with pytest.raises(GainOutOfRange):
        reactance_from_gain(30.0, FIT)
    with pytest.raises(GainOutOfRange):
        reactance_from_gain(5.0, FIT)
    with pytest.raises(NoRootInBracket):
        reactance_from_gain(14.0, FIT, bracket=(0.005, 0.02))


# --- automatic adjustment --------------------------------------------------


@pytest.mark.parametrize("l_henry,lo,hi", [(0.02454, 14.0, 15.1), (0.0289, 11.7, 13.7)])
def test_auto_gain_ranges(l_henry, lo, hi):
    state = settled_state(l_henry)
    new_gain, event = auto_gain_adjust(P, GridEquivalent(l_henry=l_henry), state=state)
    assert lo <= new_gain <= hi
    assert event.old_gain == 12.75 and event.new_gain == new_gain
    assert event.t == pytest.approx(1.0)


def test_auto_gain_is_idempotent():
    g = GridEquivalent(l_henry=0.02)
    first, _ = auto_gain_adjust(P, g)
    second, _ = auto_gain_adjust(P.__class__(gain=first), g)
    assert abs(first - second) <= 0.05


# --- passive adjustment ----------------------------------------------------


def test_passive_monotone_signal_keeps_gain():
    assert passive_gain_adjust(np.arange(100.0), 12.75) == 12.75


def test_passive_six_reversals_step_once():
    signal = [0, 1, 0, 1, 0, 1, 0, 1]   # 6 reversals of the first difference
    assert passive_gain_adjust(signal, 12.75) == pytest.approx(12.75 * 0.8)


def test_passive_sustained_oscillation_floors():
    signal = np.tile([0.0, 1.0], 500)
    assert passive_gain_adjust(signal, 12.75) == pytest.approx(12.75 * 0.4)


def test_passive_restores_after_quiet_period():
    cfg = PassiveConfig(restore_after_s=0.01)
    signal = np.concatenate([np.tile([0.0, 1.0], 10), np.linspace(1, 2, 200)])
    assert passive_gain_adjust(signal, 12.75, cfg) == 12.75


@given(st.lists(st.floats(-10, 10), max_size=200), st.floats(1, 30), st.floats(0.5, 1.5))
def test_passive_bounds(signal, default, ratio):
    out = passive_gain_adjust(signal, default * ratio, gain_default=default)
    assert default * 0.4 - 1e-12 <= out <= default


# --- serialisation ---------------------------------------------------------


def test_calibration_json_round_trip():
    text = calibration_to_json(TABLE1, FIT)
    table, fit = calibration_from_json(text)
    assert table == TABLE1
    assert fit == FIT
    assert calibration_to_json(table, fit) == text


def test_calibration_json_errors():
    with pytest.raises(InputError):
        calibration_from_json("[1, 2]")
    with pytest.raises(InputError):
        calibration_from_json("{not json")
