import csv

import pytest

import gridmargin as gm
from gridmargin import StressSchedule, StabilityCriterion
from gridmargin import margins as margins_mod
from gridmargin.errors import HeadroomError
from gridmargin.margins import (MarginResult, PVCurve, apply_stress_to_case,
                                binary_search_sol, compute_pcll, compute_sol,
                                distribute_stress, limiting_reason,
                                margins_to_csv, pv_per_bus_csv,
                                sample_pv_curve)

from conftest import DT, ORACLE_CRITERION

TWOBUS_SCHED = StressSchedule(load_area="sink", source_area="source",
                              fine_step_mw=5.0, coarse_step_mw=25.0,
                              max_total_mw=60.0, ramp_mw_per_s=25.0)


# ---------------------------------------------------------------------------
# Schedules and stress distribution
# ---------------------------------------------------------------------------

def test_schedule_rejects_bad_steps():
    with pytest.raises(ValueError):
        StressSchedule(fine_step_mw=10.0, coarse_step_mw=5.0)
    with pytest.raises(ValueError):
        StressSchedule(fine_step_mw=0.0)


def test_distribute_stress_sums_to_total(two_area):
    sched = StressSchedule()
    dl, dg = distribute_stress(two_area, 90.0, sched)
    assert sum(dl.values()) == pytest.approx(90.0)
    assert sum(dg.values()) == pytest.approx(90.0)


def test_stress_direction_requires_loads_and_headroom(two_area):
    with pytest.raises(HeadroomError, match="no loads"):
        distribute_stress(two_area, 10.0, StressSchedule(load_area="Nowhere"))
    with pytest.raises(HeadroomError, match="headroom"):
        distribute_stress(two_area, 10.0,
                          StressSchedule(source_area="Central2"))


def test_apply_stress_to_case_moves_load_and_dispatch(two_area):
    stressed = apply_stress_to_case(two_area, 60.0, StressSchedule())
    extra = (sum(ld.nominal_pq_mw()[0] for ld in stressed.loads)
             - sum(ld.nominal_pq_mw()[0] for ld in two_area.loads))
    assert extra == pytest.approx(60.0)
    dg = (sum(g.p_dispatch_mw for g in stressed.generators)
          - sum(g.p_dispatch_mw for g in two_area.generators))
    assert dg == pytest.approx(60.0)
    # original untouched
    assert two_area.loads[0].params.z == 1.0


# ---------------------------------------------------------------------------
# PCLL driver behaviour (small caps keep these fast)
# ---------------------------------------------------------------------------

def test_pcll_saturates_at_small_cap(twobus):
    crit = StabilityCriterion(**ORACLE_CRITERION)
    r = compute_pcll(twobus, "", schedule=TWOBUS_SCHED, criterion=crit,
                     dt=DT, settle_s=60.0)
    assert r.margin_mw == pytest.approx(60.0)
    assert limiting_reason(r) == "saturated_cap"
    assert r.pv is not None and len(r.pv.stress_mw) >= 3
    levels = [lv for lv, ok, _ in r.probes if ok]
    assert levels == sorted(levels)


def test_pcll_reports_insecure_base_point(twobus2):
    case = twobus2.copy()
    case.loads[0].params.z = 2.6  # 260 MW exceeds the 250 MW post-trip nose
    crit = StabilityCriterion(**ORACLE_CRITERION)
    r = compute_pcll(case, "trip-circuit", schedule=TWOBUS_SCHED,
                     criterion=crit, dt=DT)
    assert r.margin_mw == 0.0
    assert any("insecure" in n for n in r.notes)


# ---------------------------------------------------------------------------
# SOL drivers against a stubbed probe (exercises search logic in isolation)
# ---------------------------------------------------------------------------

@pytest.fixture
def stub_probe(monkeypatch):
    calls = []

    def install(boundary_mw, unstable_reason="voltage_collapse_early"):
        def fake(case, contingency, level, schedule, criterion, dt):
            calls.append(level)
            ok = level <= boundary_mw
            return ok, ("converged_stable" if ok else unstable_reason)
        monkeypatch.setattr(margins_mod, "_sol_probe", fake)
        return calls

    return install


def test_scan_sol_finds_boundary_on_fine_grid(two_area, stub_probe):
    stub_probe(137.0)
    sched = StressSchedule(fine_step_mw=5.0, coarse_step_mw=25.0,
                           max_total_mw=300.0)
    r = compute_sol(two_area, "scenario-A", schedule=sched)
    assert r.margin_mw == 135.0   # largest stable multiple of 5 below 137


def test_bisect_sol_matches_scan(two_area, stub_probe):
    calls = stub_probe(137.0)
    sched = StressSchedule(fine_step_mw=5.0, coarse_step_mw=25.0,
                           max_total_mw=300.0)
    r = binary_search_sol(two_area, "scenario-A", schedule=sched, tol_mw=5.0)
    assert r.margin_mw == 135.0
    assert all(lv % 5.0 == 0.0 for lv in calls)  # probes stay on the grid


def test_bisect_sol_insecure_at_zero(two_area, stub_probe):
    stub_probe(-1.0)
    r = binary_search_sol(two_area, "scenario-A")
    assert r.margin_mw == 0.0
    assert any("insecure at zero" in n for n in r.notes)


def test_bisect_sol_saturates_at_cap(two_area, stub_probe):
    stub_probe(1e9)
    sched = StressSchedule(max_total_mw=300.0)
    r = binary_search_sol(two_area, "scenario-A", schedule=sched)
    assert r.margin_mw == 300.0
    assert any("cap" in n for n in r.notes)


def test_bisect_sol_warns_on_inverted_boundary(two_area, monkeypatch):
    # stable at 0 and 200+, unstable in a 100-150 band: not monotone
    def fake(case, contingency, level, schedule, criterion, dt):
        return not (100.0 <= level <= 150.0), "x"
    monkeypatch.setattr(margins_mod, "_sol_probe", fake)
    with pytest.warns(UserWarning, match="non-monotonic"):
        r = binary_search_sol(two_area, "scenario-A",
                              schedule=StressSchedule(fine_step_mw=5.0,
                                                      coarse_step_mw=25.0),
                              tol_mw=5.0, screening_levels=(125.0, 200.0))
    assert any("non-monotonic" in n for n in r.notes)
    # the reported margin must stay on the conservative side of the band
    assert r.margin_mw < 100.0


def test_bisect_sol_screening_pair_seeds_the_bracket(two_area, stub_probe):
    calls = stub_probe(117.0)
    sched = StressSchedule(fine_step_mw=5.0, coarse_step_mw=25.0,
                           max_total_mw=300.0)
    r = binary_search_sol(two_area, "scenario-A", schedule=sched, tol_mw=5.0,
                          screening_levels=(115.0, 120.0))
    assert r.margin_mw == 115.0
    assert calls == [115.0, 120.0]  # the bracket was already tight


def test_sol_probe_treats_infeasible_power_flow_as_insecure(twobus):
    """A stressed operating point beyond the static nose cannot be set up."""
    sched = StressSchedule(load_area="sink", source_area="source",
                           fine_step_mw=5.0, coarse_step_mw=450.0,
                           max_total_mw=450.0)
    crit = StabilityCriterion(**ORACLE_CRITERION)
    r = compute_sol(twobus, "", schedule=sched, criterion=crit, dt=DT)
    reasons = {why for lv, ok, why in r.probes if not ok}
    assert reasons and reasons <= {"pf_diverged", "numerical_divergence",
                                   "voltage_collapse_early",
                                   "low_voltage_final",
                                   "pre_disturbance_divergence",
                                   "pre_disturbance_low_voltage"}


# ---------------------------------------------------------------------------
# PV curves and CSV artifacts
# ---------------------------------------------------------------------------

def test_sample_pv_curve_reaches_the_nose(twobus):
    sched = StressSchedule(load_area="sink", source_area="source")
    curve = sample_pv_curve(twobus, schedule=sched, step_mw=20.0)
    assert max(curve.total_load_mw) == pytest.approx(500.0, rel=0.01)
    assert min(curve.v_by_bus[2]) < 0.8


def test_margin_and_pv_csv_shapes(tmp_path):
    r = MarginResult(method="pcll", contingency="scenario-A", margin_mw=115.0,
                     probes=[(0.0, True, "stable"),
                             (120.0, False, "low_voltage")])
    path = tmp_path / "margins.csv"
    margins_to_csv([("scenario-A", "constP", r)], path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["scenario", "load_config", "method", "margin_MW",
                       "limiting_reason"]
    assert rows[1] == ["scenario-A", "constP", "PCLL", "115", "low_voltage"]

    curve = PVCurve()
    curve.add(0.0, 600.0, {4: 1.0, 8: 0.99})
    curve.add(50.0, 650.0, {4: 0.98, 8: 0.97})
    paths = pv_per_bus_csv(curve, tmp_path, prefix="pv")
    assert [p.split("/")[-1] for p in paths] == ["pv_bus4.csv", "pv_bus8.csv"]
    rows = list(csv.reader(open(paths[0])))
    assert rows[0] == ["P_MW", "V_pu"]
    assert rows[1] == ["600", "1"]


def test_limiting_reason_prefers_saturation_note():
    r = MarginResult(method="sol", contingency="", margin_mw=300.0,
                     notes=["scan saturated at the 300 MW cap"])
    assert limiting_reason(r) == "saturated_cap"
    r2 = MarginResult(method="sol", contingency="", margin_mw=10.0)
    assert limiting_reason(r2) == "none"
