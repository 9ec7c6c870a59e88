"""Time-domain simulation of the full system.

Partitioned scheme: trapezoidal integration of the differential states with a
fixed step, alternated (to convergence) with a Newton solve of the network
current balance. Events (faults, trips, stress increments) are applied at the
nearest integration boundary.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import devices, network
from .devices import (GEN_DELTA, GEN_EDP, GEN_EFD, GEN_EQP, GEN_OMEGA,
                      GovernorState, LtcState, MotorState)
from .errors import (AlgebraicDivergenceError, ClassificationError,
                     InitializationError)
from .events import Contingency, Event, EventAction
from .network import BusKind, PowerFlowSolution, solve_power_flow

# motors become constant-impedance-like below this voltage to keep the
# algebraic solve well posed during bolted faults (constant-P/I conversion)
V_CONVERT = 0.5
MOTOR_LOADING = 0.8  # motor MVA base = P share / loading factor


class VerdictReason(str, Enum):
    CONVERGED_STABLE = "converged_stable"
    LOW_VOLTAGE_FINAL = "low_voltage_final"
    VOLTAGE_COLLAPSE_EARLY = "voltage_collapse_early"
    NUMERICAL_DIVERGENCE = "numerical_divergence"


class InstabilityClass(str, Enum):
    LOSS_OF_EQUILIBRIUM = "loss_of_equilibrium"
    LOSS_OF_ATTRACTION = "loss_of_attraction"
    OSCILLATORY = "oscillatory"
    LONG_TERM = "long_term"


@dataclass
class Verdict:
    stable: bool
    reason: VerdictReason
    t_violation: float | None = None

    def __post_init__(self):
        if self.stable:
            assert self.reason == VerdictReason.CONVERGED_STABLE


@dataclass
class StabilityCriterion:
    """Verdict rules: end-of-horizon floor, early-stop floor, grace period."""
    v_final: float = 0.9
    v_early: float = 0.7
    grace_s: float = 20.0
    t_end_s: float = 1000.0


@dataclass
class StabilizationDetector:
    """Flatness detector: per-bus voltage band and speed deviation over a
    sliding window, with no armed limiter timers."""
    window_s: float = 5.0
    dv_tol: float = 1e-4
    speed_tol: float = 1e-5
    sample_s: float = 0.1


@dataclass
class SimulationTrace:
    bus_ids: list
    gen_ids: list
    load_ids: list
    gen_h: list
    internal_mask: np.ndarray
    t: np.ndarray = None
    v: np.ndarray = None          # (nt, nbus) magnitudes
    gen_delta: np.ndarray = None  # (nt, ngen)
    gen_speed: np.ndarray = None
    load_p: np.ndarray = None     # MW
    load_q: np.ndarray = None
    motor_slip: np.ndarray = None  # (nt, nmotor) or (nt, 0)
    events: list = field(default_factory=list)
    disturbance_t: float | None = None
    fault_clear_t: float | None = None

    def min_external_v(self):
        ext = ~self.internal_mask
        return self.v[:, ext].min(axis=1)

    def to_csv(self, path):
        header = ["t"]
        header += [f"{b}.V" for b in self.bus_ids]
        for g in self.gen_ids:
            header += [f"{g}.delta", f"{g}.speed"]
        for ld in self.load_ids:
            header += [f"{ld}.P", f"{ld}.Q"]
        cols = [self.t[:, None], self.v]
        for j in range(len(self.gen_ids)):
            cols += [self.gen_delta[:, j:j + 1], self.gen_speed[:, j:j + 1]]
        for j in range(len(self.load_ids)):
            cols += [self.load_p[:, j:j + 1], self.load_q[:, j:j + 1]]
        data = np.hstack(cols)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(header) + "\n")
            np.savetxt(fh, data, delimiter=",", fmt="%.10g")

    def events_to_jsonl(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for t, what in self.events:
                fh.write(json.dumps({"t": t, "event": what}) + "\n")


class _CompositeRuntime:
    """Per-composite-load dynamic bundle living on an internal bus."""

    def __init__(self, load, row):
        self.load = load
        self.row = row
        p = load.params
        self.motors = []  # (MotorClassParams, MotorState, base_mva, t0)
        self.lighting_on = True
        self.p_dl = 0.0
        self.q_dl = 0.0
        self.p_mva = 0.0
        self.q_mva = 0.0
        self.p_rem = 0.0
        self.q_rem_imp = 0.0
        self.kp = p.kp
        self.scale_ref = p.scale

    def initialize(self, v_mag, base_mva):
        p = self.load.params
        p_total, q_total = self.load.static_pq(v_mag)
        q_alloc = 0.0
        self.motors = []
        for mp, share in ((p.motor_lim, p.share_lim), (p.motor_sim, p.share_sim)):
            if share <= 0:
                continue
            p_target_mw = p.scale * p.p_nom_mw * share
            s_base = p_target_mw / MOTOR_LOADING
            slip = devices.motor_init_slip(mp, v_mag, p_target_mw / s_base)
            t0 = devices.motor_torque(mp, v_mag, slip) / (1.0 - slip) ** mp.torque_exp
            self.motors.append([mp, MotorState(slip=slip), s_base, t0])
            y = devices.motor_input_admittance(mp, slip)
            q_alloc += -v_mag * v_mag * y.imag * s_base
        self.p_dl = p.scale * p.p_nom_mw * p.share_dl
        self.q_dl = self.p_dl * math.tan(math.acos(p.dl_pf))
        self.lighting_on = v_mag >= p.DL_V_OFF
        if self.lighting_on:
            q_alloc += self.q_dl * v_mag ** p.DL_Q_EXP
        self.p_mva = p.scale * p.p_nom_mw * p.share_mva
        self.q_mva = p.scale * p.q_nom_mvar * p.share_mva
        q_alloc += self.q_mva
        self.p_rem = p.scale * p.p_nom_mw * p.share_kp
        # constant-impedance remainder absorbs the reactive residual so the
        # dynamic equilibrium reproduces the power-flow operating point
        self.q_rem_imp = (q_total - q_alloc) / (v_mag * v_mag)
        self.scale_ref = p.scale
        self.base_mva = base_mva

    def rescale(self, new_scale):
        ratio = new_scale / self.scale_ref
        for m in self.motors:
            m[2] *= ratio
        self.p_dl *= ratio
        self.q_dl *= ratio
        self.p_mva *= ratio
        self.q_mva *= ratio
        self.p_rem *= ratio
        self.q_rem_imp *= ratio
        self.scale_ref = new_scale

    def slips(self):
        return [m[1].slip for m in self.motors]

    def motor_admittance_pu(self, base_mva):
        """Summed system-base admittance of all connected motors."""
        y = 0.0 + 0.0j
        for mp, st, s_base, _ in self.motors:
            if st.connected:
                y += devices.motor_input_admittance(mp, st.slip) * (s_base / base_mva)
        return y

    def algebraic_pq_mw(self, v):
        """Non-motor P, Q (MW/Mvar) and dV derivatives at voltage v."""
        p = q = dp = dq = 0.0
        if self.lighting_on:
            p += self.p_dl * v ** 1.8
            q += self.q_dl * v ** 4.5
            dp += 1.8 * self.p_dl * v ** 0.8
            dq += 4.5 * self.q_dl * v ** 3.5
        if v >= V_CONVERT:
            p += self.p_mva
            q += self.q_mva
        else:
            r = (v / V_CONVERT) ** 2
            p += self.p_mva * r
            q += self.q_mva * r
            dp += 2 * self.p_mva * v / V_CONVERT ** 2
            dq += 2 * self.q_mva * v / V_CONVERT ** 2
        p += self.p_rem * v ** self.kp
        dp += self.kp * self.p_rem * v ** (self.kp - 1)
        q += self.q_rem_imp * v * v
        dq += 2 * self.q_rem_imp * v
        return p, q, dp, dq

    def total_pq_mw(self, vc, base_mva):
        v = abs(vc)
        p, q, _, _ = self.algebraic_pq_mw(v)
        y = self.motor_admittance_pu(base_mva)
        s = (v * v) * np.conj(y) * base_mva
        return p + s.real, q + s.imag

    def update_discrete(self, v, log, t, params):
        if self.lighting_on and v < params.DL_V_OFF:
            self.lighting_on = False
            log.append((t, f"lighting_off:{self.load.id}"))
        elif not self.lighting_on and v > params.DL_V_ON:
            self.lighting_on = True
            log.append((t, f"lighting_on:{self.load.id}"))


def _zip_nonlinear_pq(params, v):
    """Non-impedance ZIP parts (current + power) with low-V conversion."""
    z, p0, q0, v0 = params.z, params.p0_mw, params.q0_mvar, params.v0
    if v >= V_CONVERT:
        p = z * p0 * (params.b_p * v / v0 + params.c_p)
        q = z * q0 * (params.b_q * v / v0 + params.c_q)
        dp = z * p0 * params.b_p / v0
        dq = z * q0 * params.b_q / v0
    else:
        r1 = v / V_CONVERT
        p = z * p0 * (params.b_p * (v / v0) * r1 + params.c_p * r1 * r1)
        q = z * q0 * (params.b_q * (v / v0) * r1 + params.c_q * r1 * r1)
        dp = z * p0 * (2 * params.b_p * v / (v0 * V_CONVERT)
                       + 2 * params.c_p * v / V_CONVERT ** 2)
        dq = z * q0 * (2 * params.b_q * v / (v0 * V_CONVERT)
                       + 2 * params.c_q * v / V_CONVERT ** 2)
    return p, q, dp, dq


class Simulator:
    """Owns all dynamic state for one case; strictly sequential."""

    def __init__(self, case, dt=5e-4, record_every=20,
                 detector: StabilizationDetector | None = None,
                 algebraic_tol=1e-8):
        self.case_in = case
        self.case = case.expanded()
        self.dt = dt
        self.record_every = record_every
        self.detector = detector or StabilizationDetector()
        self.algebraic_tol = algebraic_tol
        self.base = self.case.base_mva
        self.omega_s = 2.0 * math.pi * self.case.f0

        self.idx = network.bus_index_map(self.case.buses)
        self.n = len(self.case.buses)
        self.internal_mask = np.array([b.internal for b in self.case.buses])

        # devices
        self.gens = [g for g in self.case.generators]
        for g in self.gens:
            if g.in_service and (g.machine is None or g.governor is None):
                raise InitializationError(
                    f"generator {g.id}: dynamic simulation requires machine "
                    f"and governor parameters")
        self.gen_row = np.array([self.idx[g.bus] for g in self.gens])
        self.mach = [g.machine.on_system_base(self.base) for g in self.gens]
        self.govp = [g.governor for g in self.gens]
        self.gen_active = np.array([g.in_service for g in self.gens])

        self.zip_loads = [ld for ld in self.case.loads if ld.model == "zip"]
        self.zip_row = np.array([self.idx[ld.bus] for ld in self.zip_loads],
                                dtype=int)
        self.composites = [_CompositeRuntime(ld, self.idx[ld.bus])
                           for ld in self.case.loads if ld.model == "composite"]
        self.ltcs = [(self.case.branch(rec.branch), rec.params, LtcState(
            tap=self.case.branch(rec.branch).tap)) for rec in self.case.ltcs]

        # state
        self.t = 0.0
        self.gen_x = np.zeros((len(self.gens), 5))
        self.gov_x = [GovernorState() for _ in self.gens]
        self.v_ref = np.zeros(len(self.gens))
        self.oel_timer = np.zeros(len(self.gens))
        self.oel_active = np.zeros(len(self.gens), dtype=bool)
        self.vc = np.ones(self.n, dtype=complex)
        self.faults = []  # (bus_row, admittance)
        self.event_log = []
        self.disturbance_t = None
        self.fault_clear_t = None
        self._initialized = False
        self._rebuild_static()

    # -- network assembly ---------------------------------------------------

    def _rebuild_static(self):
        """Complex Ybus + folded ZIP constant-impedance load admittances."""
        for br, _, st in self.ltcs:
            br.tap = st.tap
        ym = network.build_admittance(self.case).dense()
        for ld in self.zip_loads:
            p = ld.params
            g = p.z * p.p0_mw * p.a_p / (self.base * p.v0 * p.v0)
            b = -p.z * p.q0_mvar * p.a_q / (self.base * p.v0 * p.v0)
            ym[self.idx[ld.bus], self.idx[ld.bus]] += complex(g, b)
        self._y_static = ym
        n = self.n
        a = np.zeros((2 * n, 2 * n))
        a[:n, :n] = ym.real
        a[:n, n:] = -ym.imag
        a[n:, :n] = ym.imag
        a[n:, n:] = ym.real
        self._a_static = a

    def _assemble(self):
        """Real 2n x 2n matrix + source vector for the current balance."""
        n = self.n
        a = self._a_static.copy()
        extra = [(row, yf) for row, yf in self.faults]
        extra += [(c.row, c.motor_admittance_pu(self.base))
                  for c in self.composites]
        for row, ye in extra:
            a[row, row] += ye.real
            a[row, n + row] -= ye.imag
            a[n + row, row] += ye.imag
            a[n + row, n + row] += ye.real
        src = np.zeros(2 * n)
        for k, g in enumerate(self.gens):
            if not self.gen_active[k]:
                continue
            mp = self.mach[k]
            delta = self.gen_x[k, GEN_DELTA]
            gamma = delta - math.pi / 2.0
            cg, sg = math.cos(gamma), math.sin(gamma)
            rot = np.array([[cg, -sg], [sg, cg]])
            m = np.array([[0.0, -1.0 / mp.xd_p], [1.0 / mp.xq_p, 0.0]])
            g2 = rot @ m @ rot.T
            cvec = rot @ np.array([self.gen_x[k, GEN_EQP] / mp.xd_p,
                                   -self.gen_x[k, GEN_EDP] / mp.xq_p])
            r = self.gen_row[k]
            a[r, r] -= g2[0, 0]
            a[r, n + r] -= g2[0, 1]
            a[n + r, r] -= g2[1, 0]
            a[n + r, n + r] -= g2[1, 1]
            src[r] += cvec[0]
            src[n + r] += cvec[1]
        return a, src

    def _nonlinear_loads(self):
        """(row, pq_func) pairs for voltage-dependent load parts, pu."""
        out = []
        for ld in self.zip_loads:
            out.append((self.idx[ld.bus],
                        lambda v, p=ld.params: _zip_nonlinear_pq(p, v)))
        for c in self.composites:
            out.append((c.row, c.algebraic_pq_mw))
        return out

    def _network_residual(self, u, a, src, nl, with_jac):
        n = self.n
        fx = a @ u - src
        jac = a.copy() if with_jac else None
        for row, pq in nl:
            x, yim = u[row], u[n + row]
            vmag = math.hypot(x, yim)
            if vmag < 1e-9:
                continue
            p, q, dp, dq = pq(vmag)
            p, q, dp, dq = (p / self.base, q / self.base,
                            dp / self.base, dq / self.base)
            v2 = vmag * vmag
            fx[row] += (p * x + q * yim) / v2
            fx[n + row] += (p * yim - q * x) / v2
            if not with_jac:
                continue
            # d(load current)/d(Vr, Vi)
            dv_dx, dv_dy = x / vmag, yim / vmag
            jac[row, row] += (dp * dv_dx * x + p + dq * dv_dx * yim) / v2 \
                - 2 * x * (p * x + q * yim) / (v2 * v2)
            jac[row, n + row] += (dp * dv_dy * x + dq * dv_dy * yim + q) / v2 \
                - 2 * yim * (p * x + q * yim) / (v2 * v2)
            jac[n + row, row] += (dp * dv_dx * yim - dq * dv_dx * x - q) / v2 \
                - 2 * x * (p * yim - q * x) / (v2 * v2)
            jac[n + row, n + row] += (dp * dv_dy * yim + p - dq * dv_dy * x) / v2 \
                - 2 * yim * (p * yim - q * x) / (v2 * v2)
        return fx, jac

    def solve_network(self, v_guess=None, max_iter=40, _retry=True):
        n = self.n
        a, src = self._assemble()
        nl = self._nonlinear_loads()
        vc = (v_guess if v_guess is not None else self.vc).copy()
        u = np.concatenate([vc.real, vc.imag])
        fx, jac = self._network_residual(u, a, src, nl, with_jac=True)
        norm = float(np.linalg.norm(fx))
        for _ in range(max_iter):
            if not np.isfinite(norm):
                break
            if np.max(np.abs(fx)) < self.algebraic_tol:
                return u[:n] + 1j * u[n:]
            try:
                du = np.linalg.solve(jac, -fx)
            except np.linalg.LinAlgError:
                break
            if not np.all(np.isfinite(du)):
                break
            # backtracking line search: near-singular Jacobians produce huge
            # raw steps even when a nearby solution exists
            alpha = 1.0
            accepted = False
            while alpha >= 1.0 / 256.0:
                u_try = u + alpha * du
                fx_try, _ = self._network_residual(u_try, a, src, nl,
                                                   with_jac=False)
                norm_try = float(np.linalg.norm(fx_try))
                if np.isfinite(norm_try) and norm_try < norm * (1 - 1e-4 * alpha):
                    u = u_try
                    norm = norm_try
                    accepted = True
                    break
                alpha /= 2.0
            if not accepted:
                break
            fx, jac = self._network_residual(u, a, src, nl, with_jac=True)
            norm = float(np.linalg.norm(fx))
        if _retry:  # large disturbances can strand the warm start; go flat
            flat = np.full(self.n, 0.8 + 0j)
            return self.solve_network(v_guess=flat, max_iter=2 * max_iter,
                                      _retry=False)
        raise AlgebraicDivergenceError(self.t)

    # -- initialization -----------------------------------------------------

    def initialize(self, pf: PowerFlowSolution | None = None):
        if pf is None:
            pf = solve_power_flow(self.case)
        v = pf.v * np.exp(1j * pf.theta)
        self.vc = v.copy()
        for k, g in enumerate(self.gens):
            if not g.in_service:
                self.gen_active[k] = False
                continue
            mp = self.mach[k]
            r = self.gen_row[k]
            p_mw = pf.gen_p_mw.get(g.id, g.p_dispatch_mw)
            q_mvar = pf.gen_q_mvar.get(g.id, 0.0)
            s = complex(p_mw, q_mvar) / self.base
            vt = v[r]
            it = np.conj(s / vt)
            e_q_axis = vt + 1j * mp.xq * it
            delta = np.angle(e_q_axis)
            rot = np.exp(-1j * (delta - math.pi / 2.0))
            vdq = vt * rot
            idq = it * rot
            vd, vq = vdq.real, vdq.imag
            i_d, i_q = idq.real, idq.imag
            eqp = vq + mp.xd_p * i_d
            edp = vd - mp.xq_p * i_q
            efd = eqp + (mp.xd - mp.xd_p) * i_d
            if efd > mp.e_fd_max:
                raise InitializationError(
                    f"generator {g.id}: initial field voltage {efd:.2f} exceeds "
                    f"ceiling {mp.e_fd_max:.2f} (loading above capability)")
            self.gen_x[k] = [delta, 0.0, eqp, edp, efd]
            self.v_ref[k] = abs(vt) + efd / mp.k_avr
            pm = p_mw / self.base
            gov = self.govp[k]
            if not (gov.p_min <= pm <= gov.p_max):
                raise InitializationError(
                    f"generator {g.id}: dispatch {p_mw:.1f} MW outside governor "
                    f"limits [{gov.p_min * self.base:.1f}, {gov.p_max * self.base:.1f}] MW")
            gov.p_ref = pm
            self.gov_x[k] = devices.governor_init(gov, pm)
        for c in self.composites:
            c.initialize(abs(v[c.row]), self.base)
        self.oel_timer[:] = 0.0
        self.oel_active[:] = False
        self.t = 0.0
        self._initialized = True
        # consistency check: the assembled network must reproduce the PF point
        v_chk = self.solve_network(v_guess=self.vc)
        if np.max(np.abs(v_chk - self.vc)) > 1e-5:
            raise InitializationError(
                "assembled dynamic network does not reproduce the power flow "
                f"(max |dV| = {np.max(np.abs(v_chk - self.vc)):.2e})")
        self.vc = v_chk

    # -- stepping -----------------------------------------------------------

    def _derivatives(self, gen_x, gov_x, slips_flat, vc):
        ng = len(self.gens)
        dgen = np.zeros((ng, 5))
        dgov = np.zeros((ng, 4))
        for k in range(ng):
            if not self.gen_active[k]:
                continue
            gov = self.govp[k]
            gstate = gov_x[k]
            pm = devices.governor_output(gstate, gov)
            dgen[k] = devices.generator_derivatives(
                gen_x[k], self.mach[k], vc[self.gen_row[k]], pm,
                self.v_ref[k], self.omega_s, bool(self.oel_active[k]))
            dgov[k] = devices.governor_derivatives(gstate, gov,
                                                   gen_x[k, GEN_OMEGA])
        dslip = np.zeros_like(slips_flat)
        i = 0
        for c in self.composites:
            vmag = abs(vc[c.row])
            for mp, st, _, t0 in c.motors:
                dslip[i] = devices.motor_slip_derivative(mp, t0, vmag,
                                                         slips_flat[i])
                i += 1
        return dgen, dgov, dslip

    def _get_slips(self):
        return np.array([s for c in self.composites for s in c.slips()])

    def _set_slips(self, slips):
        i = 0
        for c in self.composites:
            for m in c.motors:
                m[1].slip = min(max(slips[i], 0.0), 1.0)
                i += 1

    def _gov_as_arrays(self):
        return np.array([[g.x_speed, g.p1, g.p2, g.p3] for g in self.gov_x])

    def _gov_from_arrays(self, arr):
        out = []
        for k, row in enumerate(arr):
            st = GovernorState(*row)
            devices._clamp_governor(st, self.govp[k])
            out.append(st)
        return out

    def step(self):
        """One trapezoidal step + network solve; raises on divergence."""
        dt = self.dt
        x_gen0 = self.gen_x.copy()
        x_gov0 = self._gov_as_arrays()
        slips0 = self._get_slips()
        f_gen0, f_gov0, f_slip0 = self._derivatives(
            self.gen_x, self.gov_x, slips0, self.vc)

        gen1 = x_gen0 + dt * f_gen0
        gov1 = x_gov0 + dt * f_gov0
        slip1 = np.clip(slips0 + dt * f_slip0, 0.0, 1.0)
        vc1 = self.vc
        for it in range(8):
            self._set_slips(slip1)
            self.gen_x = gen1
            vc1 = self.solve_network(v_guess=vc1)
            f_gen1, f_gov1, f_slip1 = self._derivatives(
                gen1, self._gov_from_arrays(gov1), slip1, vc1)
            gen_n = x_gen0 + 0.5 * dt * (f_gen0 + f_gen1)
            gov_n = x_gov0 + 0.5 * dt * (f_gov0 + f_gov1)
            slip_n = np.clip(slips0 + 0.5 * dt * (f_slip0 + f_slip1), 0.0, 1.0)
            # clamp field voltage within limits
            for k in range(len(self.gens)):
                gen_n[k, GEN_EFD] = min(max(gen_n[k, GEN_EFD], 0.0),
                                        self.mach[k].e_fd_max)
            err = max(np.max(np.abs(gen_n - gen1)) if gen_n.size else 0.0,
                      np.max(np.abs(gov_n - gov1)) if gov_n.size else 0.0,
                      np.max(np.abs(slip_n - slip1)) if slip_n.size else 0.0)
            gen1, gov1, slip1 = gen_n, gov_n, slip_n
            if err < 1e-10:
                break
        self.gen_x = gen1
        self.gov_x = self._gov_from_arrays(gov1)
        self._set_slips(slip1)
        # the last correction barely moved the states, so the voltage from the
        # previous solve is still consistent to well below the step error
        self.vc = vc1 if err < 1e-8 else self.solve_network(v_guess=vc1)
        self.t += dt
        self._update_discrete()

    def _update_discrete(self):
        vmag = np.abs(self.vc)
        rebuild = False
        for br, params, st in self.ltcs:
            new = devices.ltc_step(st, params, vmag[self.idx[params.controlled_bus]],
                                   self.t)
            if new.tap != st.tap:
                self.event_log.append((self.t, f"ltc_move:{br.id}:{new.tap:.4f}"))
                rebuild = True
            st.tap = new.tap
            st.timer_start = new.timer_start
            st.moved_once = new.moved_once
        if rebuild:
            self._rebuild_static()
        for k in range(len(self.gens)):
            if not self.gen_active[k] or self.oel_active[k]:
                continue
            mp = self.mach[k]
            if not mp.oel_enabled:
                continue
            i_fd = devices.generator_field_current(self.gen_x[k], mp,
                                                   self.vc[self.gen_row[k]])
            if i_fd > mp.i_fd_max:
                self.oel_timer[k] += self.dt
                if self.oel_timer[k] >= mp.t_oel:
                    self.oel_active[k] = True
                    self.event_log.append((self.t, f"oel_active:{self.gens[k].id}"))
            else:
                self.oel_timer[k] = 0.0
        for c in self.composites:
            was = [m[1].slip for m in c.motors]
            c.update_discrete(abs(self.vc[c.row]), self.event_log, self.t,
                              c.load.params)
            for m, s_old in zip(c.motors, was):
                if m[1].slip >= 1.0 and s_old < 1.0:
                    self.event_log.append((self.t, f"motor_stall:{c.load.id}"))

    # -- events -------------------------------------------------------------

    def apply_event(self, ev: Event):
        if ev.action == EventAction.APPLY_BUS_FAULT:
            self.faults.append((self.idx[ev.bus], ev.fault_y))
            self.event_log.append((self.t, f"fault_on:{ev.bus}"))
        elif ev.action == EventAction.CLEAR_FAULT:
            if self.faults:
                self.faults.pop()
            self.fault_clear_t = self.t
            self.event_log.append((self.t, "fault_cleared"))
        elif ev.action == EventAction.TRIP_BRANCH:
            self.case.branch(ev.branch).status = False
            self._rebuild_static()
            self.event_log.append((self.t, f"trip_branch:{ev.branch}"))
        elif ev.action == EventAction.TRIP_GENERATOR:
            for k, g in enumerate(self.gens):
                if g.id == ev.generator:
                    self.gen_active[k] = False
            self.event_log.append((self.t, f"trip_generator:{ev.generator}"))
        self.disturbance_t = self.t

    def apply_stress(self, load_increments_mw, gen_increments_mw, log=True):
        """Live stress injection: scale nominal loads, raise governor refs."""
        by_id = {ld.id: ld for ld in self.case.loads}
        for lid, dmw in load_increments_mw.items():
            by_id[lid].add_nominal_mw(dmw)
        for c in self.composites:
            c.rescale(c.load.params.scale)
        for gid, dmw in gen_increments_mw.items():
            for k, g in enumerate(self.gens):
                if g.id == gid:
                    self.govp[k].p_ref = min(self.govp[k].p_ref + dmw / self.base,
                                             self.govp[k].p_max)
        self._rebuild_static()
        if log:
            self.event_log.append(
                (self.t, f"stress:+{sum(load_increments_mw.values()):.3f}MW"))

    def ramp_stress(self, load_increments_mw, gen_increments_mw,
                    rate_mw_per_s, v_early=None):
        """Inject the increments as a continuous ramp at ``rate_mw_per_s``.

        A slow ramp avoids the artificial transients of instantaneous load
        steps. Returns ('ramped', t) or ('violated'/'diverged', t).
        """
        total = sum(load_increments_mw.values())
        nsteps = max(int(round(total / rate_mw_per_s / self.dt)), 1)
        dl = {k: v / nsteps for k, v in load_increments_mw.items()}
        dg = {k: v / nsteps for k, v in gen_increments_mw.items()}
        self.event_log.append(
            (self.t, f"stress_ramp:+{total:.3f}MW@{rate_mw_per_s:g}MW/s"))
        for _ in range(nsteps):
            self.apply_stress(dl, dg, log=False)
            try:
                self.step()
            except AlgebraicDivergenceError:
                return "diverged", self.t
            if v_early is not None and self.min_external_v() < v_early:
                return "violated", self.t
        return "ramped", self.t

    # -- state snapshots (PCLL coarse-phase backtracking) --------------------

    def snapshot(self):
        return {
            "t": self.t,
            "gen_x": self.gen_x.copy(),
            "gov_x": [g.copy() for g in self.gov_x],
            "gov_ref": [g.p_ref for g in self.govp],
            "vc": self.vc.copy(),
            "oel_timer": self.oel_timer.copy(),
            "oel_active": self.oel_active.copy(),
            "gen_active": self.gen_active.copy(),
            "zip_z": [ld.params.z for ld in self.zip_loads],
            "comp_scale": [c.load.params.scale for c in self.composites],
            "comp": [([(m[1].copy(), m[2], m[3]) for m in c.motors],
                      c.lighting_on, c.p_dl, c.q_dl, c.p_mva, c.q_mva,
                      c.p_rem, c.q_rem_imp, c.scale_ref)
                     for c in self.composites],
            "ltc": [(st.tap, st.timer_start, st.moved_once)
                    for _, _, st in self.ltcs],
            "faults": list(self.faults),
            "branch_status": [br.status for br in self.case.branches],
        }

    def restore(self, snap):
        self.t = snap["t"]
        self.gen_x = snap["gen_x"].copy()
        self.gov_x = [g.copy() for g in snap["gov_x"]]
        for g, ref in zip(self.govp, snap["gov_ref"]):
            g.p_ref = ref
        self.vc = snap["vc"].copy()
        self.oel_timer = snap["oel_timer"].copy()
        self.oel_active = snap["oel_active"].copy()
        self.gen_active = snap["gen_active"].copy()
        for ld, z in zip(self.zip_loads, snap["zip_z"]):
            ld.params.z = z
        for c, scale in zip(self.composites, snap["comp_scale"]):
            c.load.params.scale = scale
        for c, payload in zip(self.composites, snap["comp"]):
            motors, lighting_on, p_dl, q_dl, p_mva, q_mva, p_rem, q_rem, sref = payload
            for m, (st, s_base, t0) in zip(c.motors, motors):
                m[1] = st.copy()
                m[2] = s_base
                m[3] = t0
            c.lighting_on = lighting_on
            c.p_dl, c.q_dl, c.p_mva, c.q_mva = p_dl, q_dl, p_mva, q_mva
            c.p_rem, c.q_rem_imp, c.scale_ref = p_rem, q_rem, sref
        for (_, _, st), (tap, ts, moved) in zip(self.ltcs, snap["ltc"]):
            st.tap, st.timer_start, st.moved_once = tap, ts, moved
        self.faults = list(snap["faults"])
        for br, status in zip(self.case.branches, snap["branch_status"]):
            br.status = status
        self._rebuild_static()

    # -- measurements ---------------------------------------------------------

    def load_pq_mw(self):
        out = []
        vmag = np.abs(self.vc)
        ci = 0
        comps = {c.load.id: c for c in self.composites}
        for ld in self.case.loads:
            if ld.model == "zip":
                out.append(devices.zip_power(ld.params, vmag[self.idx[ld.bus]]))
            else:
                c = comps[ld.id]
                out.append(c.total_pq_mw(self.vc[c.row], self.base))
        return out

    def min_external_v(self):
        return float(np.abs(self.vc)[~self.internal_mask].min())

    def all_slips(self):
        return self._get_slips()

    def limiters_armed(self):
        """An LTC timer or OEL timer is counting toward an action."""
        for _, params, st in self.ltcs:
            if params.enabled and st.timer_start is not None:
                return True
        for k in range(len(self.gens)):
            if self.gen_active[k] and self.mach[k].oel_enabled \
                    and not self.oel_active[k] and self.oel_timer[k] > 0:
                return True
        return False


class _Recorder:
    def __init__(self, sim: Simulator):
        self.sim = sim
        self.t = []
        self.v = []
        self.delta = []
        self.speed = []
        self.load_p = []
        self.load_q = []
        self.slips = []

    def sample(self):
        sim = self.sim
        self.t.append(sim.t)
        self.v.append(np.abs(sim.vc))
        self.delta.append(sim.gen_x[:, GEN_DELTA].copy())
        self.speed.append(sim.gen_x[:, GEN_OMEGA].copy())
        pq = sim.load_pq_mw()
        self.load_p.append([p for p, _ in pq])
        self.load_q.append([q for _, q in pq])
        self.slips.append(sim.all_slips())

    def trace(self):
        sim = self.sim
        nt = len(self.t)
        return SimulationTrace(
            bus_ids=[b.id for b in sim.case.buses],
            gen_ids=[g.id for g in sim.gens],
            load_ids=[ld.id for ld in sim.case.loads],
            gen_h=[m.h for m in sim.mach],
            internal_mask=sim.internal_mask.copy(),
            t=np.array(self.t),
            v=np.array(self.v) if nt else np.zeros((0, sim.n)),
            gen_delta=np.array(self.delta) if nt else np.zeros((0, len(sim.gens))),
            gen_speed=np.array(self.speed) if nt else np.zeros((0, len(sim.gens))),
            load_p=np.array(self.load_p) if nt else np.zeros((0, len(sim.case.loads))),
            load_q=np.array(self.load_q) if nt else np.zeros((0, len(sim.case.loads))),
            motor_slip=(np.array(self.slips) if nt and len(self.slips[0])
                        else np.zeros((nt, 0))),
            events=list(sim.event_log),
            disturbance_t=sim.disturbance_t,
            fault_clear_t=sim.fault_clear_t,
        )


class _FlatnessWindow:
    """Sliding-window voltage band + speed check for the detector."""

    def __init__(self, detector: StabilizationDetector, dt: float, n: int):
        self.det = detector
        self.every = max(int(round(detector.sample_s / dt)), 1)
        self.size = max(int(round(detector.window_s / detector.sample_s)), 2)
        self.buf = np.zeros((self.size, n))
        self.wbuf = np.zeros(self.size)
        self.count = 0

    def reset(self):
        self.count = 0

    def push_and_check(self, sim: Simulator) -> bool:
        row = self.count % self.size
        self.buf[row] = np.abs(sim.vc)
        # droop control leaves a permanent frequency offset after any loss
        # change, so flatness (band), not magnitude, is the settling signal
        self.wbuf[row] = (sim.gen_x[sim.gen_active, GEN_OMEGA].max()
                          if np.any(sim.gen_active) else 0.0)
        self.count += 1
        if self.count < self.size:
            return False
        band = self.buf.max(axis=0) - self.buf.min(axis=0)
        if band.max() >= self.det.dv_tol:
            return False
        if self.wbuf.max() - self.wbuf.min() >= self.det.speed_tol:
            return False
        return not sim.limiters_armed()


def run(sim: Simulator, contingency: Contingency | None, t_end: float,
        stop: StabilityCriterion | None = None, early_exit: bool = True,
        record: bool = True) -> tuple[SimulationTrace, Verdict]:
    """Simulate to ``t_end`` applying contingency events at their offsets.

    Verdict: unstable if any (external) bus voltage is below ``stop.v_final``
    at the horizon; early stop when any voltage drops below ``stop.v_early``
    after the post-disturbance grace period. With ``early_exit`` the run also
    ends as soon as the system is provably settled (flat voltages, no armed
    limiter timers), which cannot change the verdict.
    """
    if not sim._initialized:
        sim.initialize()
    stop = stop or StabilityCriterion()
    dt = sim.dt
    t0 = sim.t
    schedule = []
    if contingency is not None:
        for ev in contingency.events:
            t_abs = t0 + round(ev.t / dt) * dt
            schedule.append((t_abs, ev))
    disturb_t = max((t for t, _ in schedule), default=t0)
    grace_until = disturb_t + stop.grace_s

    rec = _Recorder(sim)
    if record:
        rec.sample()
    window = _FlatnessWindow(sim.detector, dt, sim.n)
    nsteps = int(round((t_end - t0) / dt))
    pending = list(schedule)

    def finish(verdict):
        tr = rec.trace()
        tr.disturbance_t = disturb_t if schedule else None
        return tr, verdict

    for k in range(1, nsteps + 1):
        t_next = t0 + k * dt
        while pending and pending[0][0] <= t_next - dt / 2 + 1e-12:
            _, ev = pending.pop(0)
            sim.apply_event(ev)
            window.reset()
        try:
            sim.step()
        except AlgebraicDivergenceError:
            if record:
                rec.sample()
            return finish(Verdict(False, VerdictReason.NUMERICAL_DIVERGENCE,
                                  t_violation=sim.t))
        if record and k % sim.record_every == 0:
            rec.sample()
        vmin = sim.min_external_v()
        if vmin < stop.v_early and sim.t >= grace_until - 1e-9:
            if record:
                rec.sample()
            return finish(Verdict(False, VerdictReason.VOLTAGE_COLLAPSE_EARLY,
                                  t_violation=sim.t))
        if k % window.every == 0:
            settled = window.push_and_check(sim)
            if early_exit and settled and not pending \
                    and sim.t >= grace_until - 1e-9:
                if record:
                    rec.sample()
                if vmin < stop.v_final:
                    return finish(Verdict(False, VerdictReason.LOW_VOLTAGE_FINAL,
                                          t_violation=sim.t))
                return finish(Verdict(True, VerdictReason.CONVERGED_STABLE))
    if record:
        rec.sample()
    if sim.min_external_v() < stop.v_final:
        return finish(Verdict(False, VerdictReason.LOW_VOLTAGE_FINAL,
                              t_violation=sim.t))
    return finish(Verdict(True, VerdictReason.CONVERGED_STABLE))


def run_until_stabilized(sim: Simulator, max_wait: float,
                         v_floor: float | None = None,
                         v_early: float | None = None) -> tuple[str, float]:
    """Advance until the flatness detector fires or a floor is violated.

    Returns (status, t) with status in {'stabilized', 'violated', 'diverged',
    'timeout'}. Used by the post-contingency ramp, where a voltage below
    ``v_floor`` at any point after an increment is a criterion violation.
    """
    dt = sim.dt
    window = _FlatnessWindow(sim.detector, dt, sim.n)
    nsteps = int(round(max_wait / dt))
    for k in range(1, nsteps + 1):
        try:
            sim.step()
        except AlgebraicDivergenceError:
            return "diverged", sim.t
        vmin = sim.min_external_v()
        if v_early is not None and vmin < v_early:
            return "violated", sim.t
        if v_floor is not None and vmin < v_floor:
            return "violated", sim.t
        if k % window.every == 0 and window.push_and_check(sim):
            return "stabilized", sim.t
    return "timeout", sim.t


# ---------------------------------------------------------------------------
# Instability classification
# ---------------------------------------------------------------------------

def classify_instability(trace: SimulationTrace) -> InstabilityClass:
    """Heuristic mechanism label for an unstable trace."""
    vmin_series = trace.min_external_v()
    if len(vmin_series) and vmin_series[-1] >= 0.9 and vmin_series.min() >= 0.9:
        raise ClassificationError("trace appears stable; nothing to classify")

    t = trace.t
    # angle separation from the inertia-weighted mean shortly after clearing
    if trace.gen_delta.shape[1] >= 1 and trace.fault_clear_t is not None:
        h = np.asarray(trace.gen_h, dtype=float)
        w = h / h.sum()
        mean = trace.gen_delta @ w
        sep = np.abs(trace.gen_delta - mean[:, None]).max(axis=1)
        mask = (t >= trace.fault_clear_t) & (t <= trace.fault_clear_t + 5.0)
        if np.any(sep[mask] > math.pi):
            return InstabilityClass.LOSS_OF_ATTRACTION

    if trace.motor_slip.shape[1] and trace.motor_slip.max() >= 0.99:
        return InstabilityClass.LOSS_OF_EQUILIBRIUM

    disturb = trace.disturbance_t if trace.disturbance_t is not None else t[0]
    late_limiters = any(s.startswith(("ltc_move", "oel_active"))
                        for _, s in trace.events)
    t_viol = _first_violation_time(trace)
    if t_viol is not None and t_viol > disturb + 20.0 and late_limiters:
        return InstabilityClass.LONG_TERM

    if _growing_oscillation(t, vmin_series, disturb):
        return InstabilityClass.OSCILLATORY

    return InstabilityClass.LOSS_OF_EQUILIBRIUM


def _first_violation_time(trace):
    vmin = trace.min_external_v()
    below = np.flatnonzero(vmin < 0.9)
    if below.size:
        return float(trace.t[below[0]])
    return None


def _growing_oscillation(t, series, disturb):
    """At least 3 successive swings with growing amplitude."""
    post = series[t >= disturb]
    if post.size < 8:
        return False
    x = post - post.mean()
    sign = np.sign(x)
    crossings = np.flatnonzero(np.diff(sign) != 0)
    if len(crossings) < 4:
        return False
    amps = []
    for a, b in zip(crossings[:-1], crossings[1:]):
        amps.append(np.abs(x[a:b + 1]).max())
    growing = sum(1 for a, b in zip(amps, amps[1:]) if b > a * 1.0)
    return growing >= 3 and len(amps) >= 4 and amps[-1] > amps[0]
