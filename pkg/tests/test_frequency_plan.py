import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thzsound.errors import FitFailed, InvalidArgument, PlanInfeasible
from thzsound.frequency_plan import (
    NOMINAL_COMPRESSION_DB,
    NOMINAL_POWER_POINTS,
    FrequencyPlan,
    PowerModel,
    check_spurs,
    derive_plan,
    fit_power_model,
    inband_spurs,
    power_sum_dbm,
    rf_output,
)

GHz = 1_000_000_000


@pytest.fixture(scope="module")
def nominal_plan():
    return derive_plan(12e9, 8e9, 8.15e9, 36, 2e9)


@pytest.fixture(scope="module")
def model():
    return fit_power_model(NOMINAL_POWER_POINTS, NOMINAL_COMPRESSION_DB)


def test_nominal_plan_exact(nominal_plan):
    assert nominal_plan.tx_rf_center_hz == 300 * GHz
    assert nominal_plan.rx_if_center_hz == 6_600_000_000
    assert nominal_plan.rx_lo_hz == 293_400_000_000
    assert isinstance(nominal_plan.rx_if_center_hz, int)


def test_equal_los_give_tx_if(nominal_plan):
    plan = derive_plan(12e9, 8e9, 8e9, 36, 2e9)
    assert plan.rx_if_center_hz == 12 * GHz


def test_spur_positions_by_hand(nominal_plan):
    rep = check_spurs(nominal_plan)
    assert rep.lo_leak_rx_if_hz == 5_400_000_000   # |288 - 293.4| GHz
    assert rep.image_rx_if_hz == 17_400_000_000    # |276 - 293.4| GHz
    assert rep.signal_band_rx_if == (5_600_000_000, 7_600_000_000)
    assert rep.margins_hz["lo_leak"] == 200_000_000
    assert rep.clear


def test_lower_tx_if_still_clear():
    rep = check_spurs(derive_plan(11.9e9, 8e9, 8.15e9, 36, 2e9))
    assert rep.margins_hz["lo_leak"] == 100_000_000
    assert rep.clear


def test_equal_los_overlap_image():
    rep = check_spurs(derive_plan(12e9, 8e9, 8e9, 36, 2e9))
    assert rep.margins_hz["image"] < 0
    assert not rep.clear


def test_plan_infeasible():
    with pytest.raises(PlanInfeasible):
        derive_plan(12e9, 8e9, 8.31e9, 36, 2e9)  # Rx IF 0.84 GHz < B/2
    with pytest.raises(PlanInfeasible):
        derive_plan(0.5e9, 8e9, 8e9, 36, 2e9)
    with pytest.raises(InvalidArgument):
        derive_plan(-1, 8e9, 8e9, 36, 2e9)


def test_plan_round_trip(nominal_plan):
    assert FrequencyPlan.from_dict(nominal_plan.to_dict()) == nominal_plan


@settings(max_examples=60, deadline=None)
@given(st.integers(2_000, 14_000), st.integers(7_700, 8_300), st.integers(7_600, 8_300))
def test_clear_iff_spurs_outside_band(tx_if_mhz, tx_lo_mhz, rx_lo_mhz):
    try:
        plan = derive_plan(tx_if_mhz * 1e6, tx_lo_mhz * 1e6, rx_lo_mhz * 1e6, 36, 2e9)
    except PlanInfeasible:
        return
    rep = check_spurs(plan)
    lo, hi = rep.signal_band_rx_if
    leak_in = lo <= rep.lo_leak_rx_if_hz <= hi
    assert (rep.margins_hz["lo_leak"] <= 0) == leak_in
    assert rep.clear == all(m > 0 for m in rep.margins_hz.values())


def test_power_fit_reproduces_points(model):
    for (x, y) in NOMINAL_POWER_POINTS:
        assert model.signal_dbm(x) == pytest.approx(y, abs=0.3)
    assert model.compression_db(-15.0) <= 0.3
    assert rf_output(-3.0, model).sum_dbm == pytest.approx(-4.2, abs=0.3)
    assert rf_output(0.0, model).sum_dbm == pytest.approx(-2.2, abs=0.3)


def test_power_fit_linear_points():
    pts = [(-20.0, -15.0), (-10.0, -5.0), (-5.0, 0.0)]
    m = fit_power_model(pts, small_signal_limit=None)
    for x, y in pts:
        assert m.signal_dbm(x) == pytest.approx(y, abs=1e-3)
    assert m.saturation_power_dbm > 30


def test_power_fit_degenerate():
    with pytest.raises(FitFailed):
        fit_power_model([(0.0, 1.0)])
    with pytest.raises(FitFailed):
        fit_power_model([(0.0, 1.0), (0.0, 2.0)])
    with pytest.raises(FitFailed):
        fit_power_model([(0.0, np.nan), (1.0, 2.0)])


def test_rf_output_without_drive(model):
    out = rf_output(-np.inf, model)
    assert out.sum_dbm == pytest.approx(-10.3)


@settings(max_examples=60, deadline=None)
@given(st.floats(-40, 10), st.floats(0.01, 5))
def test_power_model_monotone(x, dx):
    m = PowerModel(-0.9, 7.2, 0.6)
    assert m.signal_dbm(x + dx) >= m.signal_dbm(x)
    assert m.compression_db(x + dx) >= m.compression_db(x) - 1e-12
    assert m.signal_dbm(x) <= m.saturation_power_dbm


@settings(max_examples=60, deadline=None)
@given(st.floats(-40, 10), st.floats(-40, 10), st.floats(-40, 10))
def test_power_sum_bounds(a, b, c):
    s = power_sum_dbm(a, b, c)
    assert max(a, b, c) - 1e-9 <= s <= max(a, b, c) + 10 * np.log10(3) + 1e-9


def test_inband_spurs_only_when_overlapping(nominal_plan, model):
    assert inband_spurs(nominal_plan, model, -3.0) == []
    spurs = inband_spurs(derive_plan(12e9, 8e9, 8e9, 36, 2e9), model, -3.0)
    assert [s.kind for s in spurs] == ["image"]
    assert spurs[0].level_db == -15.0
    assert spurs[0].offset_hz == 0.0
