import math

import numpy as np
import pytest

import gridmargin as gm
from gridmargin import (Branch, Bus, BusKind, Generator, SystemCase, ZipLoad,
                        ZipLoadParams, build_admittance,
                        continuation_loadability, solve_power_flow)
from gridmargin.errors import PowerFlowDivergedError, StructuralError
from gridmargin.margins import StressSchedule, stress_direction


# ---------------------------------------------------------------------------
# Admittance assembly
# ---------------------------------------------------------------------------

def test_ybus_line_with_charging_and_tap():
    """Hand-computed 2x2 Ybus for one tapped line with charging."""
    case = SystemCase(name="y")
    case.buses = [Bus(id=1, kind=BusKind.SLACK, area="a"),
                  Bus(id=2, area="a", b_shunt=0.5)]
    case.branches = [Branch(id="L", from_bus=1, to_bus=2, r=0.01, x=0.1,
                            b_shunt=0.2, tap=1.05)]
    y = build_admittance(case).dense()
    ys = 1.0 / complex(0.01, 0.1)
    bc = 1j * 0.1
    a = 1.05
    assert y[0, 0] == pytest.approx((ys + bc) / (a * a))
    assert y[1, 1] == pytest.approx(ys + bc + 0.5j)
    assert y[0, 1] == pytest.approx(-ys / a)
    assert y[1, 0] == pytest.approx(-ys / a)


def test_ybus_skips_out_of_service_branches():
    case = SystemCase(name="y")
    case.buses = [Bus(id=1, kind=BusKind.SLACK, area="a"), Bus(id=2, area="a")]
    case.branches = [Branch(id="L", from_bus=1, to_bus=2, r=0.0, x=0.1,
                            status=False)]
    y = build_admittance(case).dense()
    assert np.all(y == 0)


def test_ybus_rejects_dangling_branch():
    case = SystemCase(name="y")
    case.buses = [Bus(id=1, kind=BusKind.SLACK, area="a")]
    case.branches = [Branch(id="L", from_bus=1, to_bus=9, r=0.0, x=0.1)]
    with pytest.raises(StructuralError):
        build_admittance(case)


# ---------------------------------------------------------------------------
# Newton power flow
# ---------------------------------------------------------------------------

def test_twobus_voltage_matches_closed_form(twobus):
    """Lossless line, constant-P load: V2 solves V^4 - V^2 + (Px)^2 = 0."""
    sol = solve_power_flow(twobus)
    p, x = 1.0, 0.1  # 100 MW on a 100 MVA base over x = 0.1
    v2 = math.sqrt((1 + math.sqrt(1 - 4 * (p * x) ** 2)) / 2)
    assert sol.v_at(2) == pytest.approx(v2, abs=1e-8)
    assert sol.gen_p_mw["G1"] == pytest.approx(100.0, abs=1e-6)


def test_power_flow_diverges_beyond_nose(twobus):
    over = twobus.copy()
    over.loads[0].params.z = 6.0  # 600 MW > 500 MW maximum
    with pytest.raises(PowerFlowDivergedError):
        solve_power_flow(over)


def test_voltage_dependent_load_relieves_the_flow(twobus):
    """Constant-current load draws less at depressed voltage than constant-P."""
    ci = gm.with_zip_composition(twobus, b_p=1.0, c_p=0.0, c_q=1.0)
    ci.loads[0].params.z = 4.5
    cp = twobus.copy()
    cp.loads[0].params.z = 4.5
    v_ci = solve_power_flow(ci).v_at(2)
    v_cp = solve_power_flow(cp).v_at(2)
    assert v_ci > v_cp


def test_pv_bus_q_limit_switching():
    """A PV bus pinned at Qmax can no longer hold its setpoint voltage."""
    case = SystemCase(name="qlim")
    case.buses = [Bus(id=1, kind=BusKind.SLACK, area="a", v=1.0),
                  Bus(id=2, kind=BusKind.PV, area="a"),
                  Bus(id=3, area="a")]
    case.branches = [Branch(id="L12", from_bus=1, to_bus=2, r=0.0, x=0.15),
                     Branch(id="L23", from_bus=2, to_bus=3, r=0.0, x=0.15)]
    case.generators = [
        Generator(id="S", bus=1, p_dispatch_mw=0.0, v_set=1.0),
        Generator(id="G", bus=2, p_dispatch_mw=50.0, v_set=1.05,
                  q_min_mvar=-30.0, q_max_mvar=20.0)]
    case.loads = [ZipLoad(id="L", bus=3,
                          params=ZipLoadParams(p0_mw=80.0, q0_mvar=40.0))]
    sol = solve_power_flow(case)
    assert sol.gen_q_mvar["G"] == pytest.approx(20.0, abs=1e-6)
    assert sol.v_at(2) < 1.05  # setpoint lost once pinned
    unlimited = case.copy()
    unlimited.generators[1].q_max_mvar = 1e9
    assert solve_power_flow(unlimited).v_at(2) == pytest.approx(1.05, abs=1e-8)


def test_two_area_base_case_is_healthy(two_area):
    sol = solve_power_flow(two_area)
    vm = {b.id: sol.v_at(b.id) for b in two_area.buses}
    assert all(v > 0.95 for v in vm.values())


# ---------------------------------------------------------------------------
# Continuation loadability
# ---------------------------------------------------------------------------

def test_continuation_nose_matches_closed_form(twobus):
    """Constant-P max transfer over a lossless line is V1^2 / (2x) = 500 MW
    total, 400 MW above the 100 MW base."""
    lam = continuation_loadability(twobus, {"load-2": 1.0})
    assert lam == pytest.approx(400.0, rel=0.002)


def test_continuation_tracks_doubled_reactance(twobus2):
    tripped = twobus2.copy()
    tripped.branch("line-2").status = False
    lam = continuation_loadability(tripped, {"load-2": 1.0})
    assert lam == pytest.approx(150.0, rel=0.005)  # 250 MW total - 100 base


def test_continuation_full_output_is_monotone_in_lambda(twobus):
    lam, samples = continuation_loadability(twobus, {"load-2": 1.0},
                                            full_output=True)
    lams = [s[0] for s in samples]
    assert lams == sorted(lams)
    v2 = [s[1][1] for s in samples]
    assert v2[0] > v2[-1]  # upper branch: voltage falls as load grows


# ---------------------------------------------------------------------------
# Stress direction
# ---------------------------------------------------------------------------

def test_stress_direction_shares(two_area):
    sched = StressSchedule(load_area="Central", source_area="North")
    load_dir, gen_dir = stress_direction(two_area, sched)
    # loads split in proportion to nominal demand 250/200/150
    assert load_dir["load-6"] == pytest.approx(250 / 600)
    assert load_dir["load-7"] == pytest.approx(200 / 600)
    assert load_dir["load-8"] == pytest.approx(150 / 600)
    assert sum(load_dir.values()) == pytest.approx(1.0)
    # generators split in proportion to governor headroom
    g1 = two_area.generator("G1")
    g2 = two_area.generator("G2")
    h1 = g1.headroom_mw(two_area.base_mva)
    h2 = g2.headroom_mw(two_area.base_mva)
    assert gen_dir["G1"] == pytest.approx(h1 / (h1 + h2))
    assert gen_dir["G2"] == pytest.approx(h2 / (h1 + h2))
    assert "G3" not in gen_dir  # Central machine is not in the source area
