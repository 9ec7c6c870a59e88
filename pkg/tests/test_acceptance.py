"""End-to-end acceptance checks.

Each test freezes one externally checkable property of the package:
closed-form margin oracles on the two-bus system, agreement between the
dynamic and static loadability limits, the regularity and monotonicity of
the two security margins across load compositions and disturbance severity,
exact load-model unit laws, integrator convergence, verdict-rule semantics,
and byte-level determinism of the command-line artifacts.

The composition sweeps simulate tens of minutes of system time and dominate
the suite's runtime; every test carrying an explicit wall-clock budget
asserts it.
"""

import json
import os
import time

import numpy as np
import pytest

import gridmargin as gm
from gridmargin.cli import main as cli_main
from gridmargin.devices import ZipLoadParams, zip_power
from gridmargin.margins import (StressSchedule, binary_search_sol,
                                compute_pcll, stress_direction)
from gridmargin.simulation import (Simulator, StabilityCriterion,
                                   VerdictReason, run)

from conftest import DT, ORACLE_CRITERION

ORACLE = StabilityCriterion(**ORACLE_CRITERION)

# Shared schedule for the two-area margin studies: 5 MW fine grid, 25 MW
# coarse exploration, 300 MW cap, 8 MW/s injection ramp.
TWO_AREA_SCHED = StressSchedule(fine_step_mw=5.0, coarse_step_mw=25.0,
                                max_total_mw=300.0, ramp_mw_per_s=8.0)


def two_area_with_zip(c_p):
    """Two-area system with active load split c_p constant-power /
    (1 - c_p) constant-current, and fully constant-current reactive load."""
    return gm.with_zip_composition(gm.builtin_two_area(), c_p=c_p,
                                   b_p=1.0 - c_p, a_q=1.0, c_q=0.0)


# ---------------------------------------------------------------------------
# Closed-form margin oracles on the two-bus system
# ---------------------------------------------------------------------------

def test_two_bus_nose_matches_closed_form():
    """A lossless line (x = 0.1) from a stiff source carries at most
    V1^2 / (2x) = 500 MW, i.e. 400 MW above the 100 MW base: the static
    continuation must land within 0.5% and the dynamic ramp within 1%."""
    t0 = time.monotonic()
    case = gm.without_limiters(gm.builtin_twobus(1))

    nose = gm.continuation_loadability(case, {"load-2": 1.0})
    assert nose == pytest.approx(400.0, rel=0.005)

    sched = StressSchedule(load_area="sink", source_area="source",
                           fine_step_mw=2.0, coarse_step_mw=25.0,
                           max_total_mw=410.0, ramp_mw_per_s=50.0)
    pcll = compute_pcll(case, "", schedule=sched, criterion=ORACLE,
                        dt=0.01, settle_s=30.0)
    assert pcll.margin_mw == pytest.approx(400.0, rel=0.01)
    assert time.monotonic() - t0 < 60.0


def test_two_bus_post_trip_margin_matches_doubled_reactance():
    """Tripping one of two parallel circuits doubles the reactance to 0.2,
    halving the transfer limit to 250 MW: a 150 MW margin above the 100 MW
    base, to be recovered within 1% by the disturb-then-ramp driver."""
    t0 = time.monotonic()
    case = gm.builtin_twobus(2)
    sched = StressSchedule(load_area="sink", source_area="source",
                           fine_step_mw=1.0, coarse_step_mw=25.0,
                           max_total_mw=160.0, ramp_mw_per_s=50.0)
    pcll = compute_pcll(case, "trip-circuit", schedule=sched, criterion=ORACLE,
                        dt=0.01, settle_s=30.0)
    assert pcll.margin_mw == pytest.approx(150.0, rel=0.01)
    assert time.monotonic() - t0 < 60.0


# ---------------------------------------------------------------------------
# Dynamic vs. static loadability
# ---------------------------------------------------------------------------

def test_dynamic_and_static_loadability_agree_without_limiters():
    """With limiters and tap changers disabled and no disturbance, ramping
    the dynamic system to its last restabilizable point is just a slow walk
    up the static P-V curve, so the dynamic limit must match the
    continuation nose to 2% on the two-area system."""
    case = gm.without_limiters(gm.builtin_two_area())
    load_dir, gen_dir = stress_direction(case, TWO_AREA_SCHED)
    nose = gm.continuation_loadability(case, load_dir, gen_direction=gen_dir)

    sched = StressSchedule(fine_step_mw=5.0, coarse_step_mw=25.0,
                           max_total_mw=450.0, ramp_mw_per_s=8.0)
    pcll = compute_pcll(case, "", schedule=sched, criterion=ORACLE,
                        dt=DT, settle_s=200.0)
    assert abs(pcll.margin_mw - nose) <= 0.02 * nose


def test_both_margins_agree_when_no_disturbance_is_applied():
    """With an empty contingency the two margin definitions ask the same
    question (how much stress is sustainable?), so they must agree to within
    one fine step on both built-in systems."""
    fine = 5.0

    # two-bus: no slow controls, so the equivalence holds all the way to the
    # static nose (~400 MW above base) and can be checked unsaturated
    tb_sched = StressSchedule(load_area="sink", source_area="source",
                              fine_step_mw=fine, coarse_step_mw=25.0,
                              max_total_mw=450.0, ramp_mw_per_s=50.0)
    tb = gm.builtin_twobus(1)
    p = compute_pcll(tb, "", schedule=tb_sched, criterion=ORACLE,
                     dt=DT, settle_s=60.0)
    s = binary_search_sol(tb, "", schedule=tb_sched, criterion=ORACLE,
                          dt=DT, tol_mw=fine)
    assert abs(s.margin_mw - p.margin_mw) <= fine
    assert p.margin_mw == pytest.approx(400.0, abs=2 * fine)

    # two-area: above ~235 MW a freshly dispatched stressed point is not even
    # set-up-able — the over-excitation limiters fire while the tap changers
    # are still waiting out their initial delay — while the live ramp, whose
    # taps are already low, survives. The equivalence is therefore checked
    # over the stress range where a stressed dispatch exists at all.
    ta = gm.builtin_two_area()
    sched = StressSchedule(fine_step_mw=fine, coarse_step_mw=25.0,
                           max_total_mw=200.0, ramp_mw_per_s=8.0)
    p = compute_pcll(ta, "", schedule=sched, dt=DT, settle_s=200.0)
    s = binary_search_sol(ta, "", schedule=sched, dt=DT, tol_mw=fine)
    assert abs(s.margin_mw - p.margin_mw) <= fine
    assert p.margin_mw == 200.0  # both drivers independently carry the cap


# ---------------------------------------------------------------------------
# Margin regularity across load compositions and disturbances
# ---------------------------------------------------------------------------

def test_margin_gap_shrinks_as_loads_become_voltage_sensitive():
    """Across a six-point composition sweep from pure constant-power load to
    pure constant-current load, the pre-stressed margin never materially
    exceeds the post-disturbance one (boundary quantization aside), and the
    gap between them is nonincreasing while voltage sensitivity grows,
    because voltage-sensitive loads shed demand exactly where the stressed
    pre-disturbance point is weakest. Budget: 30 minutes."""
    t0 = time.monotonic()
    fine = TWO_AREA_SCHED.fine_step_mw
    gaps = {}
    for c_p in (1.0, 0.95, 0.9, 0.8, 0.5, 0.0):
        case = two_area_with_zip(c_p)
        pcll = compute_pcll(case, "scenario-A", schedule=TWO_AREA_SCHED,
                            dt=DT, settle_s=200.0)
        # the post-contingency limit brackets the pre-contingency search:
        # screening at (PCLL, PCLL + fine) resolves the usual small-gap case
        # in two probes and merely seeds the bisection otherwise
        sol = binary_search_sol(case, "scenario-A", schedule=TWO_AREA_SCHED,
                                dt=DT, tol_mw=fine,
                                screening_levels=(pcll.margin_mw,
                                                  pcll.margin_mw + fine))
        assert sol.margin_mw <= pcll.margin_mw + fine, f"c_p={c_p}"
        gaps[c_p] = pcll.margin_mw - sol.margin_mw
    for stiffer, softer in ((1.0, 0.95), (0.95, 0.9), (0.9, 0.8), (0.8, 0.5)):
        assert gaps[softer] <= gaps[stiffer] + 1e-9, gaps
    assert time.monotonic() - t0 < 1800.0


def test_longer_fault_cannot_raise_the_secure_limit():
    """A 100 ms fault is a strictly harsher disturbance than a 40 ms fault
    at the same location with the same post-fault topology, so the secure
    operating limit cannot increase, at either load composition."""
    for c_p in (1.0, 0.8):
        case = two_area_with_zip(c_p)
        short = binary_search_sol(case, "scenario-A", schedule=TWO_AREA_SCHED,
                                  dt=DT, tol_mw=5.0)
        long = binary_search_sol(case, "scenario-B", schedule=TWO_AREA_SCHED,
                                 dt=DT, tol_mw=5.0)
        assert long.margin_mw <= short.margin_mw, f"c_p={c_p}"


def test_motor_load_share_erodes_the_secure_limit_to_zero():
    """Induction motors draw more current as voltage falls and can stall
    outright, so the secure operating limit is nonincreasing in the motor
    share of the load, and at a high enough share even the unstressed base
    point cannot survive the disturbance (limit 0)."""
    sols = []
    for share in (0.2, 0.4, 0.6, 0.8):
        case = gm.with_composite_composition(gm.builtin_two_area(),
                                             share_lim=share / 2,
                                             share_sim=share / 2,
                                             share_dl=0.1, share_mva=0.1)
        # composite feeders consume less than nominal at the solved voltage;
        # rebalance dispatch so the slack stays positive
        case.generator("G2").p_dispatch_mw = 300.0
        sol = binary_search_sol(case, "scenario-A", schedule=TWO_AREA_SCHED,
                                dt=DT, tol_mw=5.0)
        sols.append(sol.margin_mw)
    assert all(b <= a for a, b in zip(sols, sols[1:])), sols
    assert sols[-1] == 0.0, sols


# ---------------------------------------------------------------------------
# Load-model unit laws
# ---------------------------------------------------------------------------

def test_polynomial_load_identity_at_nominal_voltage_is_exact():
    params = ZipLoadParams(p0_mw=130.0, q0_mvar=42.0,
                           a_p=0.2, b_p=0.3, c_p=0.5,
                           a_q=0.5, b_q=0.3, c_q=0.2)
    p, q = zip_power(params, 1.0)
    assert p == 130.0
    assert q == 42.0


def test_polynomial_load_is_exactly_linear_in_scale():
    kw = dict(p0_mw=100.0, q0_mvar=30.0, a_p=0.2, b_p=0.3, c_p=0.5,
              a_q=0.5, b_q=0.3, c_q=0.2)
    for v in (0.7, 0.9, 1.0, 1.1):
        p1, q1 = zip_power(ZipLoadParams(**kw), v)
        p2, q2 = zip_power(ZipLoadParams(z=2.0, **kw), v)
        assert p2 == 2.0 * p1
        assert q2 == 2.0 * q1


def test_pure_impedance_load_follows_the_quadratic_law():
    params = ZipLoadParams(p0_mw=200.0, q0_mvar=80.0,
                           a_p=1.0, b_p=0.0, c_p=0.0,
                           a_q=1.0, b_q=0.0, c_q=0.0)
    p, q = zip_power(params, 0.9)
    assert p == pytest.approx(200.0 * 0.9 ** 2, rel=1e-12)
    assert q == pytest.approx(80.0 * 0.9 ** 2, rel=1e-12)


# ---------------------------------------------------------------------------
# Integrator convergence
# ---------------------------------------------------------------------------

def test_halving_the_time_step_barely_moves_the_trajectory():
    """Replaying the fault-and-trip disturbance at 1 ms and 0.5 ms steps,
    sampled on the same 0.1 s grid, must agree to better than 1e-3 pu in
    every bus voltage: the discretization error is already converged."""
    case = gm.builtin_two_area()
    traces = {}
    for dt, every in ((0.001, 100), (0.0005, 200)):
        sim = Simulator(case, dt=dt, record_every=every)
        sim.initialize()
        trace, _ = run(sim, case.contingencies["scenario-A"], t_end=10.0,
                       stop=StabilityCriterion(), early_exit=False,
                       record=True)
        traces[dt] = trace
    a, b = traces[0.001], traces[0.0005]
    n = min(len(a.t), len(b.t))
    assert np.allclose(a.t[:n], b.t[:n])
    assert np.max(np.abs(a.v[:n] - b.v[:n])) < 1e-3


# ---------------------------------------------------------------------------
# Verdict rules
# ---------------------------------------------------------------------------

def test_default_verdict_thresholds():
    crit = StabilityCriterion()
    assert crit.v_final == 0.9
    assert crit.v_early == 0.7
    assert crit.grace_s == 20.0
    assert crit.t_end_s == 1000.0


def test_end_of_horizon_floor_decides_when_early_floor_never_trips(twobus2):
    """The post-trip system settles near 0.979 pu: below a 0.99 final floor
    but never below a 0.9 early floor, so the failure must be attributed to
    the end-of-horizon rule."""
    sim = Simulator(twobus2, dt=DT)
    sim.initialize()
    crit = StabilityCriterion(v_final=0.99, v_early=0.9, t_end_s=40.0)
    _, verdict = run(sim, twobus2.contingencies["trip-circuit"], t_end=40.0,
                     stop=crit, early_exit=True)
    assert not verdict.stable
    assert verdict.reason == VerdictReason.LOW_VOLTAGE_FINAL


def test_early_stop_fires_exactly_after_the_grace_period(twobus2):
    """With the early floor set above the post-trip voltage, the run must end
    at disturbance time + 20 s, not at the dip itself."""
    sim = Simulator(twobus2, dt=DT)
    sim.initialize()
    crit = StabilityCriterion(v_final=0.99, v_early=0.985, grace_s=20.0,
                              t_end_s=100.0)
    _, verdict = run(sim, twobus2.contingencies["trip-circuit"], t_end=100.0,
                     stop=crit, early_exit=True)
    assert not verdict.stable
    assert verdict.reason == VerdictReason.VOLTAGE_COLLAPSE_EARLY
    assert verdict.t_violation == pytest.approx(1.0 + 20.0, abs=2 * DT)


# ---------------------------------------------------------------------------
# Artifact determinism
# ---------------------------------------------------------------------------

def test_repeated_sweeps_produce_byte_identical_artifacts(tmp_path):
    spec = {
        "load_configs": [{"label": "constP", "zip": {"c_p": 1.0, "c_q": 1.0}}],
        "contingencies": ["trip-circuit"],
        "schedule": {"fine_step_mw": 5, "coarse_step_mw": 25,
                     "max_total_mw": 50, "ramp_mw_per_s": 25},
        "criterion": ORACLE_CRITERION,
        "dt": DT,
        "tol_mw": 5,
        "settle_s": 60,
    }
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(spec))

    outs = []
    for sub in ("first", "second"):
        out = tmp_path / sub
        rc = cli_main(["sweep", "builtin:twobus-2ckt", str(spec_path),
                       "--out", str(out), "--workers", "1"])
        assert rc == 0
        outs.append(out)

    names = sorted(os.listdir(outs[0]))
    assert names == sorted(os.listdir(outs[1]))
    compared = 0
    for name in names:
        if "timestamp" in name:
            continue
        assert ((outs[0] / name).read_bytes()
                == (outs[1] / name).read_bytes()), name
        compared += 1
    assert compared >= 3  # margins, table, metadata at minimum
