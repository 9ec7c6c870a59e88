"""Static network model: admittance assembly, Newton power flow, continuation.

All quantities are per-unit on the system MVA base unless a name says MW/Mvar.
The power flow supports voltage-dependent loads (anything exposing
``static_pq(V)`` / ``static_dpq_dv(V)`` in MW/Mvar) and PV->PQ switching at
generator reactive limits.
"""

from __future__ import annotations

import copy
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.sparse import csr_matrix

from .errors import PowerFlowDivergedError, StructuralError


class BusKind(str, Enum):
    SLACK = "slack"
    PV = "PV"
    PQ = "PQ"


@dataclass
class Bus:
    id: int
    kind: BusKind = BusKind.PQ
    base_kv: float = 400.0
    area: str = ""
    v: float = 1.0
    theta: float = 0.0
    p_inj: float = 0.0
    q_inj: float = 0.0
    b_shunt: float = 0.0          # fixed shunt susceptance, pu (capacitor > 0)
    internal: bool = False        # model-internal node, excluded from verdicts

    def __post_init__(self):
        if isinstance(self.kind, str):
            self.kind = BusKind(self.kind)


@dataclass
class Branch:
    id: str
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_shunt: float = 0.0          # total line charging susceptance, pu
    tap: float = 1.0              # ratio on the from side; 1.0 if none
    status: bool = True


@dataclass
class AdmittanceMatrix:
    dimension: int
    matrix: csr_matrix
    bus_index: dict  # bus id -> row/column

    def dense(self) -> np.ndarray:
        return np.asarray(self.matrix.todense())


@dataclass
class PowerFlowSolution:
    v: np.ndarray
    theta: np.ndarray
    iterations: int
    max_mismatch: float
    bus_index: dict = field(default_factory=dict)
    gen_q_mvar: dict = field(default_factory=dict)  # generator id -> Q output
    gen_p_mw: dict = field(default_factory=dict)    # generator id -> P output

    def v_at(self, bus_id) -> float:
        return float(self.v[self.bus_index[bus_id]])

    def theta_at(self, bus_id) -> float:
        return float(self.theta[self.bus_index[bus_id]])


def bus_index_map(buses) -> dict:
    return {b.id: i for i, b in enumerate(buses)}


def build_admittance(case) -> AdmittanceMatrix:
    """Assemble the bus admittance matrix (taps and shunts included)."""
    idx = bus_index_map(case.buses)
    n = len(case.buses)
    y = np.zeros((n, n), dtype=complex)
    for br in case.branches:
        if not br.status:
            continue
        if br.from_bus not in idx or br.to_bus not in idx:
            raise StructuralError(
                f"branch {br.id!r} references unknown bus "
                f"{br.from_bus if br.from_bus not in idx else br.to_bus}"
            )
        f, t = idx[br.from_bus], idx[br.to_bus]
        ys = 1.0 / complex(br.r, br.x)
        bc = 1j * br.b_shunt / 2.0
        a = br.tap
        y[f, f] += (ys + bc) / (a * a)
        y[t, t] += ys + bc
        y[f, t] += -ys / a
        y[t, f] += -ys / a
    for b in case.buses:
        y[idx[b.id], idx[b.id]] += 1j * b.b_shunt
    return AdmittanceMatrix(dimension=n, matrix=csr_matrix(y), bus_index=idx)


def _spec_power(case, v, idx, base):
    """Net specified injection S_spec(V) in pu and its dV derivative."""
    n = len(case.buses)
    p = np.zeros(n)
    q = np.zeros(n)
    dp = np.zeros(n)
    dq = np.zeros(n)
    for g in case.generators:
        if not g.in_service:
            continue
        p[idx[g.bus]] += g.p_dispatch_mw / base
    for ld in case.loads:
        i = idx[ld.bus]
        pl, ql = ld.static_pq(v[i])
        dpl, dql = ld.static_dpq_dv(v[i])
        p[i] -= pl / base
        q[i] -= ql / base
        dp[i] -= dpl / base
        dq[i] -= dql / base
    return p, q, dp, dq


def solve_power_flow(case, guess=None, tol=1e-8, max_iter=20,
                     enforce_q_limits=True) -> PowerFlowSolution:
    """Full-Jacobian Newton-Raphson power flow with PV->PQ switching.

    Raises :class:`PowerFlowDivergedError` when the mismatch cannot be driven
    below ``tol`` within ``max_iter`` iterations (typically an infeasible or
    beyond-nose operating point).
    """
    ybus = build_admittance(case)
    y = ybus.dense()
    idx = ybus.bus_index
    n = ybus.dimension
    base = case.base_mva

    kinds = [b.kind for b in case.buses]
    slack = np.flatnonzero([k == BusKind.SLACK for k in kinds])
    if len(slack) != 1:
        raise StructuralError(f"expected exactly one slack bus, found {len(slack)}")

    v = np.ones(n)
    theta = np.zeros(n)
    if guess is not None:
        v = np.array(guess.v, dtype=float)
        theta = np.array(guess.theta, dtype=float)
    gen_at = {}
    for g in case.generators:
        if g.in_service:
            gen_at[idx[g.bus]] = g
    vset = np.ones(n)
    for i, b in enumerate(case.buses):
        if b.kind in (BusKind.PV, BusKind.SLACK):
            g = gen_at.get(i)
            vset[i] = g.v_set if g is not None else b.v
            v[i] = vset[i]
    theta[slack[0]] = 0.0

    # is_pv is mutable under Q-limit switching; q_pinned holds the pinned pu Q
    is_pv = np.array([k == BusKind.PV for k in kinds])
    q_pinned = np.full(n, np.nan)
    pin_side = {}  # bus row -> +1 pinned at qmax, -1 pinned at qmin

    it = 0
    max_mis = np.inf
    for it in range(1, max_iter + 1):
        vc = v * np.exp(1j * theta)
        ibus = y @ vc
        s_calc = vc * np.conj(ibus)
        p_spec, q_spec0, dp_spec, dq_spec = _spec_power(case, v, idx, base)
        q_spec = np.where(np.isnan(q_pinned), q_spec0, q_pinned)
        dq_spec = np.where(np.isnan(q_pinned), dq_spec, 0.0)

        if enforce_q_limits:
            switched = False
            for i, g in gen_at.items():
                if kinds[i] != BusKind.PV:
                    continue
                pl, ql = 0.0, 0.0
                for ld in case.loads:
                    if idx[ld.bus] == i:
                        p_l, q_l = ld.static_pq(v[i])
                        ql += q_l / base
                q_gen = s_calc[i].imag + ql
                qmin = g.q_min_mvar / base
                qmax = g.q_max_mvar / base
                if is_pv[i]:
                    if q_gen > qmax:
                        is_pv[i] = False
                        q_pinned[i] = qmax - ql
                        pin_side[i] = +1
                        switched = True
                    elif q_gen < qmin:
                        is_pv[i] = False
                        q_pinned[i] = qmin - ql
                        pin_side[i] = -1
                        switched = True
                else:
                    # allow switch-back when the pinned bus voltage recovers
                    side = pin_side.get(i, 0)
                    if (side > 0 and v[i] > vset[i]) or (side < 0 and v[i] < vset[i]):
                        is_pv[i] = True
                        q_pinned[i] = np.nan
                        pin_side.pop(i, None)
                        v[i] = vset[i]
                        switched = True
                    elif side != 0:
                        # keep the pinned net Q tracking the current load
                        q_pinned[i] = (qmax if side > 0 else qmin) - ql
            if switched:
                q_spec = np.where(np.isnan(q_pinned), q_spec0, q_pinned)
                dq_spec = np.where(np.isnan(q_pinned), dq_spec, 0.0)

        pq = np.flatnonzero(~is_pv & (np.arange(n) != slack[0]))
        pvpq = np.flatnonzero(np.arange(n) != slack[0])

        f_p = s_calc.real[pvpq] - p_spec[pvpq]
        f_q = s_calc.imag[pq] - q_spec[pq]
        fx = np.concatenate([f_p, f_q])
        max_mis = float(np.max(np.abs(fx))) if fx.size else 0.0
        if max_mis < tol:
            sol = PowerFlowSolution(v=v.copy(), theta=theta.copy(),
                                    iterations=it, max_mismatch=max_mis,
                                    bus_index=dict(idx))
            for i, g in gen_at.items():
                pl = ql = 0.0
                for ld in case.loads:
                    if idx[ld.bus] == i:
                        p_l, q_l = ld.static_pq(v[i])
                        pl += p_l / base
                        ql += q_l / base
                sol.gen_q_mvar[g.id] = (s_calc[i].imag + ql) * base
                sol.gen_p_mw[g.id] = (s_calc[i].real + pl) * base
            return sol

        dvm = np.diag(vc / v)
        dib = np.diag(np.conj(ibus))
        ds_dva = 1j * np.diag(vc) @ np.conj(np.diag(ibus) - y @ np.diag(vc))
        ds_dvm = np.diag(vc) @ np.conj(y @ dvm) + dib @ dvm

        j11 = ds_dva.real[np.ix_(pvpq, pvpq)]
        j12 = ds_dvm.real[np.ix_(pvpq, pq)] - np.diag(dp_spec)[np.ix_(pvpq, pq)]
        j21 = ds_dva.imag[np.ix_(pq, pvpq)]
        j22 = ds_dvm.imag[np.ix_(pq, pq)] - np.diag(dq_spec)[np.ix_(pq, pq)]
        jac = np.block([[j11, j12], [j21, j22]])

        try:
            dx = np.linalg.solve(jac, -fx)
        except np.linalg.LinAlgError as exc:
            raise PowerFlowDivergedError(f"singular Jacobian at iteration {it}") from exc
        if not np.all(np.isfinite(dx)):
            raise PowerFlowDivergedError(f"non-finite Newton step at iteration {it}")
        theta[pvpq] += dx[: len(pvpq)]
        v[pq] += dx[len(pvpq):]
        if np.any(v <= 0):
            raise PowerFlowDivergedError(f"voltage collapsed below zero at iteration {it}")

    raise PowerFlowDivergedError(
        f"power flow did not converge in {max_iter} iterations "
        f"(max mismatch {max_mis:.3e} pu)")


def _apply_stress_static(case, lam_mw, direction, gen_direction):
    """Return a stressed copy: nominal load + dispatch shifted by lam_mw."""
    stressed = copy.deepcopy(case)
    for ld in stressed.loads:
        w = direction.get(ld.id, 0.0)
        if w:
            ld.add_nominal_mw(w * lam_mw)
    if gen_direction:
        for g in stressed.generators:
            w = gen_direction.get(g.id, 0.0)
            if w:
                g.p_dispatch_mw += w * lam_mw
    return stressed


def continuation_loadability(case, direction, gen_direction=None,
                             full_output=False, tol=1e-8,
                             initial_step_mw=10.0, min_step_mw=0.1):
    """Predictor-corrector continuation along a stress direction.

    ``direction`` maps load id -> MW share per MW of total stress (shares are
    normalized internally). Returns the total added MW at the nose point.
    With ``full_output=True`` also returns the sampled (lambda, V) curve.
    """
    total = sum(direction.values())
    if total <= 0:
        warnings.warn("degenerate all-zero stress direction; loadability is 0")
        return (0.0, []) if full_output else 0.0
    direction = {k: w / total for k, w in direction.items()}
    if gen_direction:
        gtot = sum(gen_direction.values())
        gen_direction = {k: w / gtot for k, w in gen_direction.items()}

    sol = solve_power_flow(case, tol=tol)  # raises if base infeasible
    samples = [(0.0, sol.v.copy())]
    lams = [0.0]

    lam = 0.0
    step = initial_step_mw
    max_step = 4.0 * initial_step_mw
    while step >= min_step_mw:
        lam_try = lam + step
        guess = _secant_guess(lams, samples, sol, lam_try)
        try:
            sol_try = solve_power_flow(
                _apply_stress_static(case, lam_try, direction, gen_direction),
                guess=guess, tol=tol, max_iter=15)
        except PowerFlowDivergedError:
            step /= 2.0
            continue
        lam = lam_try
        sol = sol_try
        lams.append(lam)
        samples.append((lam, sol.v.copy()))
        if sol_try.iterations <= 3:
            step = min(step * 1.5, max_step)

    # Local parameterization near the nose: drive the weakest bus voltage
    # down and solve for lambda, capturing the turning point.
    lam_nose = _nose_refine(case, direction, gen_direction, lam, sol, tol)
    lam = max(lam, lam_nose)
    if full_output:
        return lam, samples
    return lam


def _secant_guess(lams, samples, sol, lam_try):
    if len(lams) < 2:
        return sol
    (l0, v0), (l1, v1) = samples[-2], samples[-1]
    if l1 <= l0:
        return sol
    frac = (lam_try - l1) / (l1 - l0)
    v_guess = v1 + frac * (v1 - v0)
    guess = PowerFlowSolution(v=np.clip(v_guess, 0.2, 2.0),
                              theta=sol.theta.copy(), iterations=0,
                              max_mismatch=np.inf, bus_index=sol.bus_index)
    return guess


def _nose_refine(case, direction, gen_direction, lam0, sol0, tol):
    """Voltage-parameterized corrector steps past the nose.

    Fixes the weakest PQ bus voltage at decreasing targets and solves the
    augmented system with lambda as an unknown; the largest lambda seen is
    the nose-point estimate.
    """
    idx = sol0.bus_index
    load_buses = {ld.bus for ld in case.loads if direction.get(ld.id, 0.0) > 0}
    if not load_buses:
        return lam0
    weak = min(load_buses, key=lambda b: sol0.v[idx[b]])
    wi = idx[weak]

    lam_best = lam0
    v_target = sol0.v[wi]
    dv = 0.005
    lam = lam0
    v, theta = sol0.v.copy(), sol0.theta.copy()
    fails = 0
    for _ in range(60):
        v_target -= dv
        if v_target < 0.3:
            break
        out = _solve_fixed_voltage(case, direction, gen_direction, wi, v_target,
                                   lam, v, theta, tol)
        if out is None:
            dv /= 2.0
            fails += 1
            if dv < 1e-4 or fails > 8:
                break
            v_target += dv  # retry from the previous target with smaller step
            continue
        lam, v, theta = out
        if lam > lam_best:
            lam_best = lam
        elif lam < lam_best - 2.0:
            break  # clearly on the lower branch
    return lam_best


def _solve_fixed_voltage(case, direction, gen_direction, wi, v_target,
                         lam0, v0, theta0, tol, max_iter=25):
    """Newton on (theta, V_other, lambda) with V at bus ``wi`` pinned."""
    ybus = build_admittance(case)
    y = ybus.dense()
    idx = ybus.bus_index
    n = ybus.dimension
    base = case.base_mva

    kinds = [b.kind for b in case.buses]
    slack = [i for i, k in enumerate(kinds) if k == BusKind.SLACK][0]
    is_pv = np.array([k == BusKind.PV for k in kinds])
    pvpq = np.flatnonzero(np.arange(n) != slack)
    pq = np.flatnonzero(~is_pv & (np.arange(n) != slack))
    if wi not in pq:
        return None

    # per-bus stress sensitivities (pu/MW): loads reduce P_spec, gens add
    dlam_p = np.zeros(n)
    dlam_q = np.zeros(n)
    for ld in case.loads:
        w = direction.get(ld.id, 0.0)
        if w:
            dp, dq = ld.stress_pq_sensitivity()
            dlam_p[idx[ld.bus]] -= w * dp / base
            dlam_q[idx[ld.bus]] -= w * dq / base
    if gen_direction:
        for g in case.generators:
            w = gen_direction.get(g.id, 0.0)
            if w:
                dlam_p[idx[g.bus]] += w / base

    v = v0.copy()
    theta = theta0.copy()
    v[wi] = v_target
    lam = lam0
    vfree = pq[pq != wi]

    for _ in range(max_iter):
        stressed = _apply_stress_static(case, lam, direction, gen_direction)
        vc = v * np.exp(1j * theta)
        ibus = y @ vc
        s_calc = vc * np.conj(ibus)
        p_spec, q_spec, dp_spec, dq_spec = _spec_power(stressed, v, idx, base)
        f_p = s_calc.real[pvpq] - p_spec[pvpq]
        f_q = s_calc.imag[pq] - q_spec[pq]
        fx = np.concatenate([f_p, f_q])
        if np.max(np.abs(fx)) < tol:
            return lam, v, theta

        dvm = np.diag(vc / v)
        ds_dva = 1j * np.diag(vc) @ np.conj(np.diag(ibus) - y @ np.diag(vc))
        ds_dvm = np.diag(vc) @ np.conj(y @ dvm) + np.diag(np.conj(ibus)) @ dvm
        j11 = ds_dva.real[np.ix_(pvpq, pvpq)]
        j12 = ds_dvm.real[np.ix_(pvpq, vfree)] - np.diag(dp_spec)[np.ix_(pvpq, vfree)]
        j21 = ds_dva.imag[np.ix_(pq, pvpq)]
        j22 = ds_dvm.imag[np.ix_(pq, vfree)] - np.diag(dq_spec)[np.ix_(pq, vfree)]
        col_lam = np.concatenate([-dlam_p[pvpq], -dlam_q[pq]])[:, None]
        jac = np.block([[j11, j12], [j21, j22]])
        jac = np.hstack([jac, col_lam])

        try:
            dx, *_ = np.linalg.lstsq(jac, -fx, rcond=None)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(dx)):
            return None
        nt = len(pvpq)
        theta[pvpq] += dx[:nt]
        v[vfree] += dx[nt:nt + len(vfree)]
        lam += dx[-1]
        if np.any(v <= 0.05) or abs(lam) > 1e6:
            return None
    return None
