"""Security margins: post-contingency loadability vs. secure operating limit.

Both margins use the same stress-injection rules: area load is raised in
proportion to nominal demand at constant power factor, and the matching
generation is raised in a source area in proportion to governor headroom.
The post-contingency loadability limit (PCLL) applies the disturbance first
and then ramps the live system; the secure operating limit (SOL) stresses
the pre-disturbance operating point and asks whether the disturbance is
survived.
"""

from __future__ import annotations

import csv
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .cases import SystemCase
from .errors import BracketError, HeadroomError, PowerFlowDivergedError
from .network import solve_power_flow
from .simulation import (Simulator, StabilityCriterion, VerdictReason, run,
                         run_until_stabilized)


@dataclass
class StressSchedule:
    """How stress is injected and discretized."""
    load_area: str = "Central"
    source_area: str = "North"
    fine_step_mw: float = 1.0
    coarse_step_mw: float = 5.0
    max_total_mw: float = 300.0
    ramp_mw_per_s: float = 2.0   # live-ramp rate for the PCLL search

    def __post_init__(self):
        if self.fine_step_mw <= 0 or self.coarse_step_mw < self.fine_step_mw:
            raise ValueError("require coarse_step_mw >= fine_step_mw > 0")


@dataclass
class PVCurve:
    """Sampled load-voltage curve: total stress vs. bus voltages."""
    stress_mw: list = field(default_factory=list)
    total_load_mw: list = field(default_factory=list)
    v_by_bus: dict = field(default_factory=dict)  # bus id -> [V, ...]

    def add(self, stress, total, vdict):
        self.stress_mw.append(stress)
        self.total_load_mw.append(total)
        for bus, v in vdict.items():
            self.v_by_bus.setdefault(bus, []).append(v)

    def to_csv(self, path):
        buses = sorted(self.v_by_bus)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["stress_mw", "total_load_mw"] + [f"{b}.V" for b in buses])
            for i in range(len(self.stress_mw)):
                w.writerow([f"{self.stress_mw[i]:.6g}",
                            f"{self.total_load_mw[i]:.6g}"]
                           + [f"{self.v_by_bus[b][i]:.8g}" for b in buses])


@dataclass
class MarginResult:
    method: str            # "pcll" or "sol"
    contingency: str
    margin_mw: float
    probes: list = field(default_factory=list)  # (level_mw, stable, reason)
    pv: PVCurve | None = None
    notes: list = field(default_factory=list)


def stress_direction(case: SystemCase, schedule: StressSchedule):
    """Per-MW shares: loads by nominal demand, generators by headroom."""
    loads = case.loads_in_area(schedule.load_area)
    if not loads:
        raise HeadroomError(f"no loads in area {schedule.load_area!r}")
    total_p = sum(ld.nominal_pq_mw()[0] for ld in loads)
    if total_p <= 0:
        raise HeadroomError(f"area {schedule.load_area!r} has no active load")
    load_dir = {ld.id: ld.nominal_pq_mw()[0] / total_p for ld in loads}
    gens = case.generators_in_area(schedule.source_area)
    head = {g.id: g.headroom_mw(case.base_mva) for g in gens}
    total_h = sum(head.values())
    if total_h <= 0:
        raise HeadroomError(
            f"no governor headroom in source area {schedule.source_area!r}")
    gen_dir = {gid: h / total_h for gid, h in head.items() if h > 0}
    return load_dir, gen_dir


def distribute_stress(case: SystemCase, total_mw: float,
                      schedule: StressSchedule):
    """MW increments per load / generator for a total stress of total_mw."""
    load_dir, gen_dir = stress_direction(case, schedule)
    return ({lid: w * total_mw for lid, w in load_dir.items()},
            {gid: w * total_mw for gid, w in gen_dir.items()})


def apply_stress_to_case(case: SystemCase, total_mw: float,
                         schedule: StressSchedule) -> SystemCase:
    """Stressed copy for pre-disturbance (SOL) probing."""
    out = case.copy()
    dl, dg = distribute_stress(out, total_mw, schedule)
    for ld in out.loads:
        if ld.id in dl:
            ld.add_nominal_mw(dl[ld.id])
    for g in out.generators:
        if g.id in dg:
            g.p_dispatch_mw += dg[g.id]
    return out


def _monitored_v(sim: Simulator):
    case = sim.case_in
    buses = case.monitored_buses or [b.id for b in case.buses if not b.internal]
    vm = np.abs(sim.vc)
    return {b: float(vm[sim.idx[b]]) for b in buses}


def _total_load_mw(sim: Simulator) -> float:
    return sum(p for p, _ in sim.load_pq_mw())


def compute_pcll(case: SystemCase, contingency: str,
                 schedule: StressSchedule | None = None,
                 criterion: StabilityCriterion | None = None,
                 dt: float = 5e-4, settle_s: float = 200.0) -> MarginResult:
    """Post-contingency loadability: disturb first, then ramp the live system.

    The ramp advances in coarse increments with a snapshot at each accepted
    level; on the first violation it backtracks one coarse level and repeats
    in fine increments. The margin is the last total stress at which the
    system restabilized with all external voltages above the criterion floor.
    """
    schedule = schedule or StressSchedule()
    criterion = criterion or StabilityCriterion()
    cont = case.contingencies[contingency] if contingency else None

    sim = Simulator(case, dt=dt)
    sim.initialize()
    result = MarginResult(method="pcll", contingency=contingency or "",
                          margin_mw=0.0, pv=PVCurve())
    if cont is not None:
        _, verdict = run(sim, cont, t_end=criterion.t_end_s, stop=criterion,
                         early_exit=True, record=False)
        if not verdict.stable:
            result.notes.append(
                f"base point insecure for {contingency}: {verdict.reason.value}")
            result.probes.append((0.0, False, verdict.reason.value))
            return result
    else:
        # no disturbance: still settle so limiter timers are quiescent
        run_until_stabilized(sim, max_wait=settle_s,
                             v_early=criterion.v_early)
    result.probes.append((0.0, True, "stable"))
    result.pv.add(0.0, _total_load_mw(sim), _monitored_v(sim))

    load_dir, gen_dir = stress_direction(case, schedule)

    def ramp(sim, level, step):
        """Advance one increment; True if the system restabilizes securely."""
        dl = {lid: w * step for lid, w in load_dir.items()}
        dg = {gid: w * step for gid, w in gen_dir.items()}
        status, _ = sim.ramp_stress(dl, dg, schedule.ramp_mw_per_s,
                                    v_early=criterion.v_early)
        if status in ("diverged", "violated"):
            return False, status
        status, _ = run_until_stabilized(sim, max_wait=settle_s,
                                         v_early=criterion.v_early)
        if status in ("diverged", "violated"):
            return False, status
        ok = sim.min_external_v() >= criterion.v_final
        if status == "timeout" and ok:
            result.notes.append(f"level {level:.0f} MW accepted on timeout "
                                f"after {settle_s:.0f} s")
        return ok, ("stable" if ok else "low_voltage")

    level = 0.0
    snap = sim.snapshot()
    coarse_fail = None
    while level < schedule.max_total_mw - 1e-9:
        step = min(schedule.coarse_step_mw, schedule.max_total_mw - level)
        ok, why = ramp(sim, level + step, step)
        result.probes.append((level + step, ok, why))
        if ok:
            level += step
            snap = sim.snapshot()
            result.pv.add(level, _total_load_mw(sim), _monitored_v(sim))
        else:
            coarse_fail = level + step
            break
    if coarse_fail is None:
        result.margin_mw = level
        result.notes.append(
            f"ramp saturated at the {schedule.max_total_mw:.0f} MW cap")
        return result

    # fine ramp from the last accepted coarse level; it may pass the coarse
    # failure level, since a larger instantaneous step is a larger transient
    sim.restore(snap)
    while level < schedule.max_total_mw - 1e-9:
        step = min(schedule.fine_step_mw, schedule.max_total_mw - level)
        ok, why = ramp(sim, level + step, step)
        result.probes.append((level + step, ok, why))
        if not ok:
            break
        level += step
        result.pv.add(level, _total_load_mw(sim), _monitored_v(sim))
    else:
        result.notes.append(
            f"ramp saturated at the {schedule.max_total_mw:.0f} MW cap")
    result.margin_mw = level
    return result


def _sol_probe(case, contingency, level, schedule, criterion, dt):
    """Stress the pre-disturbance point by ``level`` MW and test survival."""
    stressed = apply_stress_to_case(case, level, schedule)
    try:
        pf = solve_power_flow(stressed)
    except PowerFlowDivergedError:
        return False, "pf_diverged"
    sim = Simulator(stressed, dt=dt)
    try:
        sim.initialize()  # solves its own power flow on the expanded case
    except Exception as exc:  # infeasible dynamic start counts as insecure
        return False, f"init_failed: {exc}"
    # the stressed point must be a real operating point: let the slow
    # controls (tap changers, limiter timers) finish moving before the
    # disturbance lands, and reject the level outright if the settled
    # voltages already sit below the final floor
    status, _ = run_until_stabilized(sim, max_wait=criterion.t_end_s)
    if status == "diverged":
        return False, "pre_disturbance_divergence"
    if sim.min_external_v() < criterion.v_final:
        return False, "pre_disturbance_low_voltage"
    cont = stressed.contingencies[contingency] if contingency else None
    _, verdict = run(sim, cont, t_end=sim.t + criterion.t_end_s,
                     stop=criterion, early_exit=True, record=False)
    return verdict.stable, verdict.reason.value


def compute_sol(case: SystemCase, contingency: str,
                schedule: StressSchedule | None = None,
                criterion: StabilityCriterion | None = None,
                dt: float = 5e-4) -> MarginResult:
    """Secure operating limit by a coarse-then-fine upward scan.

    Each probe is an independent stressed power flow + full disturbance
    simulation. The SOL is the largest stress level on the fine grid whose
    probe survives, with every level below it also probed or implied stable.
    """
    schedule = schedule or StressSchedule()
    criterion = criterion or StabilityCriterion()
    result = MarginResult(method="sol", contingency=contingency or "",
                          margin_mw=0.0)

    level = 0.0
    last_stable = None
    first_unstable = None
    while level <= schedule.max_total_mw + 1e-9:
        ok, why = _sol_probe(case, contingency, level, schedule, criterion, dt)
        result.probes.append((level, ok, why))
        if ok:
            last_stable = level
        else:
            first_unstable = level
            break
        level += schedule.coarse_step_mw
    if last_stable is None:
        result.margin_mw = 0.0
        result.notes.append("insecure at zero stress")
        return result
    if first_unstable is None:
        result.margin_mw = min(last_stable, schedule.max_total_mw)
        result.notes.append(
            f"scan saturated at the {schedule.max_total_mw:.0f} MW cap")
        return result

    level = last_stable + schedule.fine_step_mw
    while level < first_unstable - 1e-9:
        ok, why = _sol_probe(case, contingency, level, schedule, criterion, dt)
        result.probes.append((level, ok, why))
        if not ok:
            break
        last_stable = level
        level += schedule.fine_step_mw
    result.margin_mw = last_stable
    return result


def binary_search_sol(case: SystemCase, contingency: str,
                      schedule: StressSchedule | None = None,
                      criterion: StabilityCriterion | None = None,
                      dt: float = 5e-4, tol_mw: float | None = None,
                      screening_levels=()) -> MarginResult:
    """Secure operating limit by bisection on the fine stress grid.

    Assumes a monotone stable/unstable boundary; all probes are recorded and
    an inversion (a stable probe above an unstable one) triggers a warning in
    ``notes`` since bisection cannot certify the answer in that regime.
    ``screening_levels`` are extra levels probed up front: they seed the
    bisection bracket (a well-placed pair resolves the search in two probes)
    and can expose non-monotonicity before the search narrows. Under an
    inversion the reported margin stays below every unstable probe.
    """
    schedule = schedule or StressSchedule()
    criterion = criterion or StabilityCriterion()
    tol = tol_mw if tol_mw is not None else schedule.fine_step_mw
    result = MarginResult(method="sol", contingency=contingency or "",
                          margin_mw=0.0)

    def grid(x):
        return round(x / schedule.fine_step_mw) * schedule.fine_step_mw

    def probe(level):
        ok, why = _sol_probe(case, contingency, level, schedule, criterion, dt)
        result.probes.append((level, ok, why))
        return ok

    for lv in screening_levels:
        probe(grid(lv))
    unstable_seen = [lv for lv, ok, _ in result.probes if not ok]
    stable_seen = [lv for lv, ok, _ in result.probes if ok]

    if unstable_seen:
        hi = min(unstable_seen)
    else:
        hi = schedule.max_total_mw
        if probe(hi):
            result.margin_mw = hi
            result.notes.append(
                f"secure at the {schedule.max_total_mw:.0f} MW cap; "
                "margin reported at the cap")
            _warn_inversions(result)
            return result
    # stable screening probes above an unstable one signal an inversion; the
    # bracket keeps only the levels below it so the result stays conservative
    below = [lv for lv in stable_seen if lv < hi]
    if below:
        lo = max(below)
    else:
        lo = 0.0
        if not probe(lo):
            result.notes.append("insecure at zero stress")
            _warn_inversions(result)
            return result
    while hi - lo > tol + 1e-9:
        mid = grid((lo + hi) / 2.0)
        if mid <= lo or mid >= hi:
            break
        if probe(mid):
            lo = mid
        else:
            hi = mid
    result.margin_mw = lo
    _warn_inversions(result)
    return result


def _warn_inversions(result: MarginResult):
    stable = [lv for lv, ok, _ in result.probes if ok]
    unstable = [lv for lv, ok, _ in result.probes if not ok]
    if stable and unstable and max(stable) > min(unstable):
        msg = (f"non-monotonic stability boundary: stable at "
               f"{max(stable):.0f} MW but unstable at {min(unstable):.0f} MW; "
               "bisection result is not certified")
        result.notes.append(msg)
        warnings.warn(msg)


def sample_pv_curve(case: SystemCase, schedule: StressSchedule | None = None,
                    step_mw: float = 10.0) -> PVCurve:
    """Static PV curve along the stress direction (continuation samples)."""
    from .network import continuation_loadability
    schedule = schedule or StressSchedule()
    load_dir, gen_dir = stress_direction(case, schedule)
    lam, samples = continuation_loadability(case, load_dir,
                                            gen_direction=gen_dir,
                                            full_output=True,
                                            initial_step_mw=step_mw)
    curve = PVCurve()
    from .network import bus_index_map
    idx = bus_index_map(case.buses)
    buses = case.monitored_buses or [b.id for b in case.buses]
    base_total = sum(ld.nominal_pq_mw()[0] for ld in case.loads)
    for lam_i, v in samples:
        curve.add(lam_i, base_total + lam_i,
                  {b: float(v[idx[b]]) for b in buses})
    return curve


def limiting_reason(result: MarginResult) -> str:
    """Why the margin stopped where it did: the first failure just above it."""
    if any("saturated" in n for n in result.notes):
        return "saturated_cap"
    above = [(lv, why) for lv, ok, why in result.probes
             if not ok and lv >= result.margin_mw - 1e-9]
    if above:
        return min(above)[1]
    return "none"


def margins_to_csv(rows, path):
    """Margin table: one row per (scenario, load config, method).

    ``rows`` is an iterable of (scenario, load_config, MarginResult).
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "load_config", "method", "margin_MW",
                    "limiting_reason"])
        for scenario, config, r in rows:
            w.writerow([scenario, config, r.method.upper(),
                        f"{r.margin_mw:.6g}", limiting_reason(r)])


def pv_per_bus_csv(curve: PVCurve, out_dir, prefix="pv"):
    """One ``P_MW,V_pu`` file per monitored bus; returns the paths written."""
    paths = []
    for bus in sorted(curve.v_by_bus):
        path = os.path.join(out_dir, f"{prefix}_bus{bus}.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["P_MW", "V_pu"])
            for p, v in zip(curve.total_load_mw, curve.v_by_bus[bus]):
                w.writerow([f"{p:.6g}", f"{v:.8g}"])
        paths.append(path)
    return paths
