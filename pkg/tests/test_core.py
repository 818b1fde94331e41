import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gridweave.core import (
    BatteryParams,
    BatteryState,
    ConfigError,
    CostMode,
    DistributorBalance,
    EnergyBalance,
    HouseholdConfig,
    MicrogridBalance,
    PriceSet,
    action_grid,
    action_to_power,
    aggregate_distributor,
    aggregate_microgrid,
    battery_step,
    distributor_cost,
    household_cost,
    household_net,
    microgrid_cost,
)

ZERO_PRICES = PriceSet(r_sh=0, r_bh=0, r_sm=0, r_bm=0, r_sd=0, r_bd=0, c_t=0)


def prices(**kw):
    base = dict(r_sh=0.0, r_bh=0.0, r_sm=0.0, r_bm=0.0, r_sd=0.0, r_bd=0.0, c_t=0.0)
    base.update(kw)
    return PriceSet(**base)


# -- battery -----------------------------------------------------------------

def test_charge_clipped_at_soc_max():
    p = BatteryParams(capacity=1, efficiency=1, soc_min=0.1, soc_max=0.9)
    r = battery_step(BatteryState(0.5), p, 0.8)
    assert r.state.soc == pytest.approx(0.9, abs=1e-15)
    assert r.e_batt == pytest.approx(0.4, abs=1e-15)
    assert r.projected == pytest.approx(0.4, abs=1e-15)


def test_empty_battery_cannot_discharge():
    p = BatteryParams(soc_min=0.1)
    r = battery_step(BatteryState(0.1), p, -0.5)
    assert r.state.soc == 0.1
    assert r.e_batt == 0.0


def test_one_way_efficiency_on_charge():
    p = BatteryParams(capacity=1, efficiency=0.9)
    r = battery_step(BatteryState(0.5), p, 0.2)
    assert r.state.soc == pytest.approx(0.68, abs=1e-12)
    assert r.e_batt == pytest.approx(0.2, abs=1e-12)


def test_one_way_efficiency_on_discharge():
    p = BatteryParams(capacity=2, efficiency=0.8)
    r = battery_step(BatteryState(0.5), p, -0.25)
    # meter receives |cmd| * cap * eff; the cell gives up |cmd| * cap
    assert r.e_batt == pytest.approx(-0.4, abs=1e-12)
    assert r.state.soc == pytest.approx(0.25, abs=1e-12)


def test_command_clipped_to_power_limit():
    p = BatteryParams(p_charge_max=0.1)
    r = battery_step(BatteryState(0.5), p, 0.6)
    assert r.state.soc == pytest.approx(0.6)
    assert r.projected == pytest.approx(0.5)


def test_zero_capacity_is_inert():
    p = BatteryParams(capacity=0)
    r = battery_step(BatteryState(0.5), p, 0.8)
    assert (r.state.soc, r.e_batt) == (0.5, 0.0)
    assert not p.actionable


@pytest.mark.parametrize("kw", [
    dict(capacity=-1),
    dict(efficiency=0),
    dict(efficiency=1.1),
    dict(soc_min=0.5, soc_max=0.5),
    dict(soc_min=0.6, soc_max=0.4),
    dict(soc_max=1.2),
    dict(p_charge_max=-0.1),
])
def test_bad_battery_params(kw):
    with pytest.raises(ConfigError):
        BatteryParams(**kw)


def test_bad_household_config():
    with pytest.raises(ConfigError):
        HouseholdConfig(id="x", profile_peak_load=-1)
    with pytest.raises(ValueError):
        HouseholdConfig(id="x", profile_type="night-owl")


battery_params = st.builds(
    lambda cap, eff, lo, width, pc, pd: BatteryParams(cap, eff, lo, min(1.0, lo + width), pc, pd),
    st.floats(0, 5), st.floats(0.05, 1), st.floats(0, 0.9), st.floats(0.01, 1),
    st.floats(0, 1), st.floats(0, 1),
)


@given(battery_params, st.floats(0, 1), st.floats(-3, 3))
def test_soc_stays_in_bounds(p, u, cmd):
    soc = p.soc_min + u * (p.soc_max - p.soc_min)
    r = battery_step(BatteryState(soc), p, cmd)
    assert p.soc_min <= r.state.soc <= p.soc_max
    assert math.isfinite(r.e_batt)
    # meter energy has the sign of the command
    assert r.e_batt * cmd >= 0


@given(st.integers(0, 64), st.integers(0, 64))
def test_lossless_round_trip_is_exact(a, b):
    # dyadic SoC values keep the arithmetic exact
    lo, hi = 0.0, 1.0
    soc0, soc1 = a / 64, b / 64
    if soc1 <= soc0:
        return
    p = BatteryParams(capacity=1, efficiency=1, soc_min=lo, soc_max=hi,
                      p_charge_max=1, p_discharge_max=1)
    up = battery_step(BatteryState(soc0), p, soc1 - soc0)
    down = battery_step(up.state, p, -(soc1 - soc0))
    assert down.state.soc == soc0
    assert up.e_batt == -down.e_batt


@given(battery_params, st.floats(0, 1), st.floats(0, 1))
def test_lossless_round_trip_general(p, u, x):
    p = BatteryParams(p.capacity, 1.0, p.soc_min, p.soc_max, 1.0, 1.0)
    soc0 = p.soc_min + u * (p.soc_max - p.soc_min)
    amount = x * (p.soc_max - soc0)
    up = battery_step(BatteryState(soc0), p, amount)
    down = battery_step(up.state, p, -(up.state.soc - soc0))
    assert down.state.soc == pytest.approx(soc0, abs=1e-12)


# -- household ---------------------------------------------------------------

@pytest.mark.parametrize("args,expected", [((0.5, 0.3, 0.1), 0.3), ((0.2, 0.6, 0.0), -0.4),
                                           ((0, 0, 0), 0.0)])
def test_household_net(args, expected):
    assert household_net(*args) == pytest.approx(expected, abs=1e-15)


def test_balance_classification():
    short = EnergyBalance.from_channels(0.5, 0.3, 0.1, [0.1, 0.1, 0.1], [0, 0, 0])
    assert short.e_shortage == pytest.approx(0.3) and short.e_surplus == 0
    surplus = EnergyBalance.from_channels(0.2, 0.6, 0.0, [0, 0, 0], [0.0, 0.0, 0.4])
    assert surplus.e_surplus == pytest.approx(0.4) and surplus.e_shortage == 0
    assert short.violations() == []
    assert surplus.violations() == []


def test_violations_reported():
    bad = EnergyBalance.from_channels(0.5, 0.0, 0.0, [0.1, 0.0, 0.0], [0, 0, 0])
    assert "shortage != imp1 + imp2 + imp3" in bad.violations()


def test_household_cost_shortage():
    bal = EnergyBalance.from_channels(1.0, 0.0, 0.0, [0, 0, 1.0], [0, 0, 0])
    price, emission = household_cost(bal, prices(r_sd=0.5, c_t=0.1))
    assert (price, emission) == (0.5, 0.1)
    assert price + emission == pytest.approx(0.6)


def test_household_cost_surplus_modes():
    bal = EnergyBalance.from_channels(0.0, 2.0, 0.0, [0, 0, 0], [0, 2.0, 0])
    p = prices(r_bm=0.2)
    assert sum(household_cost(bal, p, CostMode.ECONOMIC)) == pytest.approx(-0.4)
    assert sum(household_cost(bal, p, "literal")) == pytest.approx(0.4)


def test_household_cost_zero():
    assert household_cost(EnergyBalance(), prices(r_sd=1, c_t=1)) == (0.0, 0.0)


def test_household_cost_uses_each_layer_price():
    bal = EnergyBalance.from_channels(0.6, 0.0, 0.0, [0.1, 0.2, 0.3], [0, 0, 0])
    p = prices(r_sh=1.0, r_sm=10.0, r_sd=100.0, c_t=1000.0)
    assert household_cost(bal, p) == pytest.approx((0.1 + 2.0 + 30.0, 300.0))


price_sets = st.builds(
    lambda xs: PriceSet(*xs),
    st.lists(st.floats(0, 10), min_size=7, max_size=7),
)
amounts = st.floats(0, 5)


@given(price_sets, st.lists(amounts, min_size=3, max_size=3), st.integers(0, 2), amounts)
def test_cost_monotone_in_imports(p, imps, k, extra):
    more = list(imps)
    more[k] += extra
    a = EnergyBalance.from_channels(sum(imps), 0.0, 0.0, imps, [0, 0, 0])
    b = EnergyBalance.from_channels(sum(more), 0.0, 0.0, more, [0, 0, 0])
    assert sum(household_cost(b, p)) >= sum(household_cost(a, p))


@given(price_sets, st.lists(amounts, min_size=3, max_size=3), st.integers(0, 2), amounts)
def test_cost_monotone_in_exports(p, exps, k, extra):
    more = list(exps)
    more[k] += extra
    a = EnergyBalance.from_channels(0.0, sum(exps), 0.0, [0, 0, 0], exps)
    b = EnergyBalance.from_channels(0.0, sum(more), 0.0, [0, 0, 0], more)
    assert sum(household_cost(b, p)) <= sum(household_cost(a, p))


# -- aggregation -------------------------------------------------------------

def test_aggregate_microgrid_sums():
    a = EnergyBalance.from_channels(0.2, 0, 0, [0, 0, 0.2], [0, 0, 0])
    b = EnergyBalance.from_channels(0.3, 0, 0, [0, 0, 0.3], [0, 0, 0])
    mg = aggregate_microgrid([a, b])
    assert mg.imp3 == pytest.approx(0.5) and mg.e_net == pytest.approx(0.5)


def test_aggregate_microgrid_empty():
    assert aggregate_microgrid([]) == MicrogridBalance()


def test_aggregate_microgrid_mixed():
    a = EnergyBalance.from_channels(0.1, 0, 0, [0, 0.1, 0], [0, 0, 0])
    b = EnergyBalance.from_channels(0, 0.1, 0, [0, 0, 0], [0, 0.1, 0])
    mg = aggregate_microgrid([a, b])
    assert (mg.imp2, mg.exp2, mg.e_net) == (0.1, 0.1, 0.0)


def test_microgrid_cost_cases():
    p = prices(r_sd=0.5, c_t=0.1, r_sm=0.4, r_bm=0.2, r_bd=0.1)
    assert microgrid_cost(MicrogridBalance(), p) == 0.0
    short = MicrogridBalance(e_shortage=1.0, e_net=1.0, imp3=1.0)
    assert microgrid_cost(short, p) == pytest.approx(0.6)
    surplus = MicrogridBalance(e_surplus=2.0, e_net=-2.0, exp2=2.0)
    assert microgrid_cost(surplus, p) == pytest.approx(-0.4)
    assert microgrid_cost(surplus, p, "literal") == pytest.approx(0.4)


def test_distributor_cases():
    p = prices(r_sd=0.4, c_t=0.1, r_bd=0.2)
    assert distributor_cost(DistributorBalance(), p) == 0.0
    one = aggregate_distributor([MicrogridBalance(e_shortage=1.0, e_net=1.0, imp3=1.0)])
    assert distributor_cost(one, p) == pytest.approx(0.5)
    two = aggregate_distributor([
        MicrogridBalance(e_shortage=0.5, e_net=0.5, imp3=0.5),
        MicrogridBalance(e_surplus=0.2, e_net=-0.2, exp3=0.2),
    ])
    assert two.e_net == pytest.approx(0.3)
    assert (two.imp3, two.exp3) == (0.5, 0.2)


def test_price_set_rejects_negative():
    with pytest.raises(ValueError):
        prices(r_sd=-0.1)


def test_price_ordering_check():
    ok = PriceSet(r_sh=0.4, r_bh=0.3, r_sm=0.5, r_bm=0.2, r_sd=0.5, r_bd=0.1, c_t=0.1)
    assert ok.ordering_ok()
    assert not PriceSet(r_sh=0.1, r_bh=0.3, r_sm=0.5, r_bm=0.2, r_sd=0.5, r_bd=0.1,
                        c_t=0.1).ordering_ok()


# -- actions -----------------------------------------------------------------

def test_action_endpoints():
    b = BatteryParams(p_charge_max=0.8, p_discharge_max=0.8)
    assert action_to_power(0, b) == -0.8
    assert action_to_power(39, b) == pytest.approx(0.8, abs=1e-15)
    assert action_to_power(19, b) == pytest.approx(-0.8 + 19 * 1.6 / 39)
    assert action_to_power(19, b) == pytest.approx(-0.0205, abs=5e-4)


def test_action_grid_matches_indexing():
    b = BatteryParams(p_charge_max=0.3, p_discharge_max=0.7)
    grid = action_grid(b)
    assert len(grid) == 40
    for i in range(40):
        assert action_to_power(i, b) == pytest.approx(grid[i], abs=1e-15)


def test_odd_symmetric_grid_contains_zero():
    b = BatteryParams(p_charge_max=0.5, p_discharge_max=0.5)
    assert 0.0 in action_grid(b, 41)


@pytest.mark.parametrize("index", [-1, 40])
def test_action_index_out_of_range(index):
    with pytest.raises(IndexError):
        action_to_power(index, BatteryParams())


def test_cost_mode_is_string_enum():
    assert CostMode("economic") is CostMode.ECONOMIC
    assert np.isclose(household_cost(EnergyBalance(), ZERO_PRICES, "literal")[0], 0.0)
