"""Dynamic device models.

Synchronous generator (two-axis) with first-order AVR and a fixed-delay
over-excitation limiter, IEESGO-style governor, load tap changer, ZIP load,
and a composite load (induction motors + discharge lighting + constant-MVA
+ polynomial remainder behind a feeder impedance).

Generator/motor parameters are given on the device MVA base and converted
to the system base when a simulation is assembled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from .errors import InitializationError, ValidationError


# ---------------------------------------------------------------------------
# ZIP load
# ---------------------------------------------------------------------------

@dataclass
class ZipLoadParams:
    p0_mw: float
    q0_mvar: float
    v0: float = 1.0
    a_p: float = 0.0
    b_p: float = 0.0
    c_p: float = 1.0
    a_q: float = 0.0
    b_q: float = 0.0
    c_q: float = 1.0
    z: float = 1.0

    def __post_init__(self):
        fails = []
        if abs(self.a_p + self.b_p + self.c_p - 1.0) > 1e-9:
            fails.append(f"a_P+b_P+c_P must equal 1, got {self.a_p + self.b_p + self.c_p}")
        if abs(self.a_q + self.b_q + self.c_q - 1.0) > 1e-9:
            fails.append(f"a_Q+b_Q+c_Q must equal 1, got {self.a_q + self.b_q + self.c_q}")
        for name in ("a_p", "b_p", "c_p", "a_q", "b_q", "c_q"):
            if getattr(self, name) < 0:
                fails.append(f"{name} must be >= 0")
        if self.v0 <= 0:
            fails.append("V0 must be > 0")
        if self.z < 0:
            fails.append("z must be >= 0")
        if fails:
            raise ValidationError(fails)


def zip_power(params: ZipLoadParams, v: float) -> tuple[float, float]:
    """Active/reactive demand (MW, Mvar) at voltage ``v``."""
    r = v / params.v0
    p = params.z * params.p0_mw * (params.a_p * r * r + params.b_p * r + params.c_p)
    q = params.z * params.q0_mvar * (params.a_q * r * r + params.b_q * r + params.c_q)
    return p, q


def zip_power_derivative(params: ZipLoadParams, v: float) -> tuple[float, float]:
    """dP/dV, dQ/dV in MW per pu, Mvar per pu."""
    r = v / params.v0
    dp = params.z * params.p0_mw * (2 * params.a_p * r + params.b_p) / params.v0
    dq = params.z * params.q0_mvar * (2 * params.a_q * r + params.b_q) / params.v0
    return dp, dq


# ---------------------------------------------------------------------------
# Synchronous generator + AVR/OEL
# ---------------------------------------------------------------------------

@dataclass
class GeneratorParams:
    h: float                 # inertia constant, s (machine base)
    d: float                 # damping torque coefficient, pu
    xd: float
    xq: float
    xd_p: float
    xq_p: float
    td0_p: float
    tq0_p: float
    s_base_mva: float = 100.0
    k_avr: float = 200.0
    t_avr: float = 0.02
    droop: float = 0.04      # governor speed droop, pu
    i_fd_max: float = 2.5    # field-current ceiling, pu
    t_oel: float = 20.0      # over-excitation delay, s
    e_fd_max: float = 0.0    # 0 -> default 2 * i_fd_max
    oel_enabled: bool = True

    def __post_init__(self):
        fails = []
        if self.h <= 0:
            fails.append("H must be > 0")
        if not (self.xd >= self.xd_p > 0):
            fails.append("require Xd >= Xd' > 0")
        for name in ("td0_p", "tq0_p", "t_avr"):
            if getattr(self, name) <= 0:
                fails.append(f"{name} must be > 0")
        if fails:
            raise ValidationError(fails)
        if self.e_fd_max <= 0:
            self.e_fd_max = 2.0 * self.i_fd_max

    def on_system_base(self, base_mva: float) -> "GeneratorParams":
        """Convert reactances/inertia to the system base."""
        k = base_mva / self.s_base_mva
        return replace(
            self,
            xd=self.xd * k, xq=self.xq * k, xd_p=self.xd_p * k, xq_p=self.xq_p * k,
            h=self.h / k, d=self.d / k, s_base_mva=base_mva,
            # field quantities stay on the machine base; currents computed
            # from system-base reactances scale accordingly
        )


# generator differential state layout
GEN_DELTA, GEN_OMEGA, GEN_EQP, GEN_EDP, GEN_EFD = range(5)


def generator_currents(state, params: GeneratorParams, v_term: complex):
    """Stator dq currents for a terminal phasor (stator resistance ignored)."""
    delta = state[GEN_DELTA]
    rot = np.exp(-1j * (delta - math.pi / 2.0))
    vdq = v_term * rot
    vd, vq = vdq.real, vdq.imag
    i_d = (state[GEN_EQP] - vq) / params.xd_p
    i_q = (vd - state[GEN_EDP]) / params.xq_p
    return i_d, i_q, vd, vq


def generator_electric_power(state, params: GeneratorParams, v_term: complex) -> float:
    i_d, i_q, _, _ = generator_currents(state, params, v_term)
    return (state[GEN_EDP] * i_d + state[GEN_EQP] * i_q
            + (params.xq_p - params.xd_p) * i_d * i_q)


def generator_field_current(state, params: GeneratorParams, v_term: complex) -> float:
    """Steady-state field-current proxy: Eq' + (Xd - Xd') Id."""
    i_d, _, _, _ = generator_currents(state, params, v_term)
    return state[GEN_EQP] + (params.xd - params.xd_p) * i_d


def generator_derivatives(state, params: GeneratorParams, v_term: complex,
                          p_mech: float, v_ref: float, omega_s: float,
                          oel_active: bool = False) -> np.ndarray:
    """Two-axis model + first-order AVR; OEL overrides the AVR input."""
    i_d, i_q, vd, vq = generator_currents(state, params, v_term)
    p_e = (state[GEN_EDP] * i_d + state[GEN_EQP] * i_q
           + (params.xq_p - params.xd_p) * i_d * i_q)
    dx = np.empty(5)
    dx[GEN_DELTA] = omega_s * state[GEN_OMEGA]
    dx[GEN_OMEGA] = (p_mech - p_e - params.d * state[GEN_OMEGA]) / (2.0 * params.h)
    dx[GEN_EQP] = (-state[GEN_EQP] - (params.xd - params.xd_p) * i_d
                   + state[GEN_EFD]) / params.td0_p
    dx[GEN_EDP] = (-state[GEN_EDP] + (params.xq - params.xq_p) * i_q) / params.tq0_p
    if oel_active:
        i_fd = state[GEN_EQP] + (params.xd - params.xd_p) * i_d
        err = params.i_fd_max - i_fd
    else:
        err = v_ref - abs(v_term)
    defd = (params.k_avr * err - state[GEN_EFD]) / params.t_avr
    # anti-windup on the field-voltage ceiling/floor
    if state[GEN_EFD] >= params.e_fd_max and defd > 0:
        defd = 0.0
    if state[GEN_EFD] <= 0.0 and defd < 0:
        defd = 0.0
    dx[GEN_EFD] = defd
    return dx


# ---------------------------------------------------------------------------
# IEESGO-style governor
# ---------------------------------------------------------------------------

@dataclass
class GovernorIeesgoParams:
    k1: float = 25.0         # speed gain (1/droop)
    t1: float = 0.0
    t2: float = 0.0
    t3: float = 0.01         # main servo lag, must be > 0
    t4: float = 0.0
    t5: float = 0.0
    t6: float = 0.0
    p_max: float = 1.0       # pu on the system base
    p_min: float = 0.0
    p_ref: float = 0.0

    def __post_init__(self):
        fails = []
        if self.t3 <= 0:
            fails.append("T3 must be > 0")
        if not (self.p_min <= self.p_ref <= self.p_max):
            fails.append(f"require P_min <= P_ref <= P_max, got "
                         f"{self.p_min} <= {self.p_ref} <= {self.p_max}")
        if fails:
            raise ValidationError(fails)


@dataclass
class GovernorState:
    x_speed: float = 0.0     # lagged speed-deviation signal (T1 stage)
    p1: float = 0.0          # T3 lag output (clamped)
    p2: float = 0.0          # T4 lag output
    p3: float = 0.0          # T5 lag output

    def copy(self):
        return replace(self)


def governor_init(params: GovernorIeesgoParams, p_mech: float) -> GovernorState:
    return GovernorState(x_speed=0.0, p1=p_mech, p2=p_mech, p3=p_mech)


def governor_derivatives(state: GovernorState, params: GovernorIeesgoParams,
                         speed_dev: float) -> np.ndarray:
    """Zeroed lags collapse to pass-throughs, matching the reduced diagram."""
    if params.t1 > 0:
        dx_speed = (speed_dev - state.x_speed) / params.t1
        y = state.x_speed + params.t2 * dx_speed  # lead-lag (1+sT2)/(1+sT1)
    else:
        dx_speed = 0.0
        y = speed_dev
    u = params.p_ref - params.k1 * y
    dp1 = (u - state.p1) / params.t3
    if state.p1 >= params.p_max and dp1 > 0:
        dp1 = 0.0
    if state.p1 <= params.p_min and dp1 < 0:
        dp1 = 0.0
    dp2 = (state.p1 - state.p2) / params.t4 if params.t4 > 0 else 0.0
    dp3 = ((state.p2 if params.t4 > 0 else state.p1) - state.p3) / params.t5 \
        if params.t5 > 0 else 0.0
    return np.array([dx_speed, dp1, dp2, dp3])


def governor_output(state: GovernorState, params: GovernorIeesgoParams) -> float:
    if params.t5 > 0:
        p = state.p3
    elif params.t4 > 0:
        p = state.p2
    else:
        p = state.p1
    return min(max(p, params.p_min), params.p_max)


def governor_step(state: GovernorState, params: GovernorIeesgoParams,
                  speed_dev: float, dt: float) -> tuple[GovernorState, float]:
    """Single trapezoidal update; returns (new state, P_mech)."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    x0 = np.array([state.x_speed, state.p1, state.p2, state.p3])
    f0 = governor_derivatives(state, params, speed_dev)
    pred = GovernorState(*(x0 + dt * f0))
    _clamp_governor(pred, params)
    for _ in range(3):
        f1 = governor_derivatives(pred, params, speed_dev)
        x1 = x0 + 0.5 * dt * (f0 + f1)
        pred = GovernorState(*x1)
        _clamp_governor(pred, params)
    return pred, governor_output(pred, params)


def _clamp_governor(state: GovernorState, params: GovernorIeesgoParams):
    state.p1 = min(max(state.p1, params.p_min), params.p_max)


# ---------------------------------------------------------------------------
# Load tap changer
# ---------------------------------------------------------------------------

@dataclass
class LtcParams:
    controlled_bus: int
    deadband: float = 0.01
    step: float = 0.01
    delay_first: float = 30.0
    delay_subsequent: float = 10.0
    tap_min: float = 0.85
    tap_max: float = 1.15
    v_set: float = 1.0
    enabled: bool = True

    def __post_init__(self):
        fails = []
        if self.deadband <= self.step / 2.0:
            fails.append("deadband must exceed step/2 to avoid hunting")
        if self.tap_min >= self.tap_max:
            fails.append("tap_min must be < tap_max")
        if fails:
            raise ValidationError(fails)


@dataclass
class LtcState:
    tap: float = 1.0
    timer_start: float | None = None   # time the voltage left the deadband
    moved_once: bool = False           # first move already taken

    def copy(self):
        return replace(self)


def ltc_step(state: LtcState, params: LtcParams, v_controlled: float,
             t: float) -> LtcState:
    """Timer-and-deadband tap logic; moves at most one step per call."""
    if not params.enabled:
        return state
    err = v_controlled - params.v_set
    new = state.copy()
    if abs(err) <= params.deadband:
        new.timer_start = None
        return new
    # lowering the ratio raises the controlled (to-side) voltage
    direction = -1.0 if err < 0 else 1.0
    target = min(max(new.tap + direction * params.step, params.tap_min),
                 params.tap_max)
    if target == new.tap:
        # pinned at the end of the range in the demanded direction: no move
        # is possible, so there is nothing for the timer to count toward
        new.timer_start = None
        return new
    if new.timer_start is None:
        new.timer_start = t
        return new
    delay = params.delay_subsequent if new.moved_once else params.delay_first
    if t - new.timer_start < delay:
        return new
    new.tap = target
    new.moved_once = True
    new.timer_start = t
    return new


# ---------------------------------------------------------------------------
# Composite load (motors + lighting + constant MVA + polynomial remainder)
# ---------------------------------------------------------------------------

@dataclass
class MotorClassParams:
    rs: float = 0.02         # stator resistance, pu on motor base
    xs: float = 0.10
    xm: float = 3.0          # magnetizing reactance
    rr: float = 0.03         # rotor resistance
    xr: float = 0.10
    h: float = 0.6           # inertia, s
    torque_exp: float = 2.0  # T_mech = T0 (1-s)^exp


@dataclass
class MotorState:
    slip: float = 0.02
    connected: bool = True

    def __post_init__(self):
        if not (0.0 <= self.slip <= 1.0):
            raise ValidationError(f"slip must be within [0, 1], got {self.slip}")

    def copy(self):
        return replace(self)


@dataclass
class CompositeLoadParams:
    p_nom_mw: float
    q_nom_mvar: float
    share_lim: float = 0.2       # large induction motors
    share_sim: float = 0.2       # small induction motors
    share_dl: float = 0.1        # discharge lighting
    share_mva: float = 0.1       # constant power
    kp: float = 2.0              # remainder active-power voltage exponent
    feeder_r: float = 0.0
    feeder_x: float = 0.05
    motor_lim: MotorClassParams = field(default_factory=lambda: MotorClassParams(
        rs=0.013, xs=0.067, xm=3.8, rr=0.009, xr=0.17, h=1.0, torque_exp=0.5))
    motor_sim: MotorClassParams = field(default_factory=lambda: MotorClassParams(
        rs=0.031, xs=0.10, xm=3.2, rr=0.018, xr=0.18, h=0.5, torque_exp=2.0))
    dl_pf: float = 0.9           # lighting power factor at nominal voltage
    scale: float = 1.0           # stress multiplier on nominal MVA

    # lighting behaviour
    DL_P_EXP = 1.8
    DL_Q_EXP = 4.5
    DL_V_OFF = 0.7
    DL_V_ON = 0.8

    def __post_init__(self):
        fails = []
        shares = (self.share_lim, self.share_sim, self.share_dl, self.share_mva)
        if any(s < 0 for s in shares):
            fails.append("all composite shares must be >= 0")
        if sum(shares) > 1.0 + 1e-9:
            fails.append(f"composite shares sum to {sum(shares)}, must be <= 1")
        if self.scale < 0:
            fails.append("scale must be >= 0")
        if fails:
            raise ValidationError(fails)

    @property
    def share_kp(self) -> float:
        return 1.0 - (self.share_lim + self.share_sim + self.share_dl
                      + self.share_mva)


def motor_input_admittance(mp: MotorClassParams, slip: float) -> complex:
    """Steady-state equivalent-circuit admittance, pu on the motor base."""
    s = max(slip, 1e-6)
    zr = complex(mp.rr / s, mp.xr)
    zm = complex(0.0, mp.xm)
    z = complex(mp.rs, mp.xs) + zm * zr / (zm + zr)
    return 1.0 / z


def motor_torque(mp: MotorClassParams, v: float, slip: float) -> float:
    """Electrical (air-gap) torque, pu on the motor base, at voltage v."""
    s = max(slip, 1e-6)
    y = motor_input_admittance(mp, slip)
    i1 = v * y
    zr = complex(mp.rr / s, mp.xr)
    zm = complex(0.0, mp.xm)
    ir = i1 * zm / (zm + zr)
    return abs(ir) ** 2 * mp.rr / s


def motor_peak_torque_slip(mp: MotorClassParams) -> float:
    """Slip of maximum torque (numeric scan + golden refinement)."""
    slips = np.geomspace(1e-3, 1.0, 200)
    torques = [motor_torque(mp, 1.0, s) for s in slips]
    return float(slips[int(np.argmax(torques))])


def motor_init_slip(mp: MotorClassParams, v: float, p_target_pu: float) -> float:
    """Solve the running slip where electrical input P equals the target.

    ``p_target_pu`` is on the motor base. Picks the stable (low-slip) root.
    """
    def p_in(s):
        y = motor_input_admittance(mp, s)
        return (v * v * np.conj(y)).real

    s_pk = motor_peak_torque_slip(mp)
    if p_in(s_pk) < p_target_pu:
        raise InitializationError(
            f"motor cannot carry {p_target_pu:.3f} pu at V={v:.3f} "
            f"(peak input {p_in(s_pk):.3f} pu)")
    return brentq(lambda s: p_in(s) - p_target_pu, 1e-5, s_pk, xtol=1e-12)


def mechanical_torque(mp: MotorClassParams, t0: float, slip: float) -> float:
    return t0 * (1.0 - slip) ** mp.torque_exp


def motor_slip_derivative(mp: MotorClassParams, t0: float, v: float,
                          slip: float) -> float:
    """2H ds/dt = T_mech - T_elec; clamped at the stall boundary s=1."""
    dsdt = (mechanical_torque(mp, t0, slip) - motor_torque(mp, v, slip)) \
        / (2.0 * mp.h)
    if slip >= 1.0 and dsdt > 0:
        return 0.0
    if slip <= 0.0 and dsdt < 0:
        return 0.0
    return dsdt
