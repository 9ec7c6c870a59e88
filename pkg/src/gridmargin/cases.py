"""System case model, JSON ingestion/validation, and built-in test systems."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field, replace

from . import devices
from .devices import (CompositeLoadParams, GeneratorParams,
                      GovernorIeesgoParams, LtcParams, ZipLoadParams,
                      zip_power, zip_power_derivative)
from .errors import StructuralError, ValidationError
from .events import Contingency, event_from_dict, event_to_dict
from .network import Branch, Bus, BusKind

SCHEMA_VERSION = 1
INTERNAL_BUS_BASE = 9000


@dataclass
class ZipLoad:
    id: str
    bus: int
    params: ZipLoadParams

    model = "zip"

    def static_pq(self, v):
        return zip_power(self.params, v)

    def static_dpq_dv(self, v):
        return zip_power_derivative(self.params, v)

    def nominal_pq_mw(self):
        return (self.params.z * self.params.p0_mw,
                self.params.z * self.params.q0_mvar)

    def base_p_mw(self):
        return self.params.p0_mw

    def add_nominal_mw(self, dmw):
        # scaling z moves P and Q together: constant power factor
        self.params.z += dmw / self.params.p0_mw

    def stress_pq_sensitivity(self):
        return 1.0, self.params.q0_mvar / self.params.p0_mw


@dataclass
class CompositeLoad:
    id: str
    bus: int
    params: CompositeLoadParams

    model = "composite"

    def static_pq(self, v):
        """Aggregate steady-state characteristic used by the power flow.

        Motor and constant-MVA shares hold constant P; lighting follows its
        exponent curve; the remainder follows V^Kp. Reactive power is treated
        as aggregate constant impedance; the dynamic initialization allocates
        the exact split so the equilibrium matches this characteristic.
        """
        p = self.params
        const = p.share_lim + p.share_sim + p.share_mva
        dl = p.share_dl * v ** p.DL_P_EXP if v >= p.DL_V_OFF else 0.0
        pw = p.scale * p.p_nom_mw * (const + dl + p.share_kp * v ** p.kp)
        qw = p.scale * p.q_nom_mvar * v * v
        return pw, qw

    def static_dpq_dv(self, v):
        p = self.params
        ddl = p.share_dl * p.DL_P_EXP * v ** (p.DL_P_EXP - 1) if v >= p.DL_V_OFF else 0.0
        dp = p.scale * p.p_nom_mw * (ddl + p.share_kp * p.kp * v ** (p.kp - 1))
        dq = p.scale * p.q_nom_mvar * 2.0 * v
        return dp, dq

    def nominal_pq_mw(self):
        return self.params.scale * self.params.p_nom_mw, \
            self.params.scale * self.params.q_nom_mvar

    def base_p_mw(self):
        return self.params.p_nom_mw

    def add_nominal_mw(self, dmw):
        self.params.scale += dmw / self.params.p_nom_mw

    def stress_pq_sensitivity(self):
        return 1.0, self.params.q_nom_mvar / self.params.p_nom_mw


@dataclass
class Generator:
    id: str
    bus: int
    p_dispatch_mw: float
    v_set: float = 1.0
    q_min_mvar: float = -1e9
    q_max_mvar: float = 1e9
    in_service: bool = True
    machine: GeneratorParams | None = None
    governor: GovernorIeesgoParams | None = None

    def headroom_mw(self, base_mva):
        if self.governor is None:
            return 0.0
        return max(self.governor.p_max * base_mva - self.p_dispatch_mw, 0.0)


@dataclass
class LtcRecord:
    branch: str
    params: LtcParams


@dataclass
class SystemCase:
    name: str
    buses: list[Bus] = field(default_factory=list)
    branches: list[Branch] = field(default_factory=list)
    generators: list[Generator] = field(default_factory=list)
    loads: list = field(default_factory=list)
    ltcs: list[LtcRecord] = field(default_factory=list)
    contingencies: dict = field(default_factory=dict)
    monitored_buses: list[int] = field(default_factory=list)
    base_mva: float = 100.0
    f0: float = 50.0
    schema_version: int = SCHEMA_VERSION

    def copy(self) -> "SystemCase":
        return copy.deepcopy(self)

    def bus(self, bus_id) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise StructuralError(f"unknown bus {bus_id}")

    def branch(self, branch_id) -> Branch:
        for br in self.branches:
            if br.id == branch_id:
                return br
        raise StructuralError(f"unknown branch {branch_id}")

    def generator(self, gen_id) -> Generator:
        for g in self.generators:
            if g.id == gen_id:
                return g
        raise StructuralError(f"unknown generator {gen_id}")

    def areas(self) -> set:
        return {b.area for b in self.buses if b.area}

    def loads_in_area(self, area) -> list:
        by_bus = {b.id: b.area for b in self.buses}
        return [ld for ld in self.loads if by_bus[ld.bus] == area]

    def generators_in_area(self, area) -> list[Generator]:
        by_bus = {b.id: b.area for b in self.buses}
        return [g for g in self.generators if g.in_service and by_bus[g.bus] == area]

    def total_area_load_mw(self, area) -> float:
        return sum(ld.nominal_pq_mw()[0] for ld in self.loads_in_area(area))

    def expanded(self) -> "SystemCase":
        """Move composite loads behind their feeder onto internal buses.

        Network operations (power flow, dynamics) run on the expanded case;
        internal buses are excluded from stability verdicts.
        """
        case = self.copy()  # always a copy: simulations mutate their case
        if not any(ld.model == "composite" for ld in self.loads):
            return case
        next_id = INTERNAL_BUS_BASE
        for ld in case.loads:
            if ld.model != "composite":
                continue
            host = case.bus(ld.bus)
            while any(b.id == next_id for b in case.buses):
                next_id += 1
            case.buses.append(Bus(id=next_id, kind=BusKind.PQ,
                                  base_kv=host.base_kv, area=host.area,
                                  internal=True))
            case.branches.append(Branch(
                id=f"{ld.id}__feeder", from_bus=ld.bus, to_bus=next_id,
                r=ld.params.feeder_r, x=ld.params.feeder_x))
            ld.bus = next_id
            next_id += 1
        return case


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def validate_case(case: SystemCase) -> None:
    """Check every declared invariant; raises with the full failure list."""
    fails = []
    ids = [b.id for b in case.buses]
    if len(set(ids)) != len(ids):
        fails.append("duplicate bus ids")
    bus_set = set(ids)
    slack = [b for b in case.buses if b.kind == BusKind.SLACK]
    if len(slack) != 1:
        fails.append(f"expected exactly one slack bus, found {len(slack)}")
    for b in case.buses:
        if b.base_kv <= 0:
            fails.append(f"bus {b.id}: base_kV must be > 0")
        if b.v <= 0:
            fails.append(f"bus {b.id}: V must be > 0")
    for br in case.branches:
        if br.from_bus not in bus_set or br.to_bus not in bus_set:
            fails.append(f"branch {br.id}: dangling bus reference")
        if br.status and br.x == 0:
            fails.append(f"branch {br.id}: x must be nonzero while in service")
        if br.tap <= 0:
            fails.append(f"branch {br.id}: tap must be > 0")
    gen_buses = set()
    for g in case.generators:
        if g.bus not in bus_set:
            fails.append(f"generator {g.id}: dangling bus reference")
        if g.bus in gen_buses:
            fails.append(f"generator {g.id}: multiple generators on bus {g.bus}")
        gen_buses.add(g.bus)
    by_bus = {b.id: b for b in case.buses}
    for ld in case.loads:
        if ld.bus not in bus_set:
            fails.append(f"load {ld.id}: dangling bus reference")
        elif not by_bus[ld.bus].area:
            fails.append(f"load {ld.id}: bus {ld.bus} has no area")
    branch_ids = {br.id for br in case.branches}
    for rec in case.ltcs:
        if rec.branch not in branch_ids:
            fails.append(f"LTC on unknown branch {rec.branch}")
        if rec.params.controlled_bus not in bus_set:
            fails.append(f"LTC on branch {rec.branch}: unknown controlled bus")
    if not _connected_through_branches(case):
        fails.append("network is not a single connected island")
    if fails:
        raise ValidationError(fails)


def _connected_through_branches(case) -> bool:
    if not case.buses:
        return True
    adj = {b.id: set() for b in case.buses}
    for br in case.branches:
        if br.status and br.from_bus in adj and br.to_bus in adj:
            adj[br.from_bus].add(br.to_bus)
            adj[br.to_bus].add(br.from_bus)
    seen = {case.buses[0].id}
    stack = [case.buses[0].id]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == len(case.buses)


# ---------------------------------------------------------------------------
# JSON I/O (schema documented in docs/schema.md)
# ---------------------------------------------------------------------------

def load_case(path) -> SystemCase:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return case_from_dict(doc)


def save_case(case: SystemCase, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(case_to_dict(case), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _take(d, cls, prefix=""):
    names = set(cls.__dataclass_fields__)
    return {k: v for k, v in d.items() if k in names}


def case_from_dict(doc: dict) -> SystemCase:
    fails = []
    if doc.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ValidationError([f"unsupported schema_version {doc.get('schema_version')}"])
    case = SystemCase(name=doc.get("name", "unnamed"),
                      base_mva=float(doc.get("base_mva", 100.0)),
                      f0=float(doc.get("f0", 50.0)))
    for i, d in enumerate(doc.get("buses", [])):
        try:
            case.buses.append(Bus(id=d["id"], kind=d.get("kind", "PQ"),
                                  base_kv=d.get("base_kv", 400.0),
                                  area=d.get("area", ""),
                                  b_shunt=d.get("b_shunt", 0.0)))
        except (KeyError, ValueError, ValidationError) as exc:
            fails.append(f"buses[{i}]: {exc}")
    for i, d in enumerate(doc.get("branches", [])):
        try:
            case.branches.append(Branch(
                id=str(d["id"]), from_bus=d["from"], to_bus=d["to"],
                r=float(d.get("r", 0.0)), x=float(d["x"]),
                b_shunt=float(d.get("b", 0.0)), tap=float(d.get("tap", 1.0)),
                status=bool(d.get("status", True))))
        except (KeyError, ValueError) as exc:
            fails.append(f"branches[{i}]: {exc}")
    for i, d in enumerate(doc.get("generators", [])):
        try:
            mach = GeneratorParams(**_take(d.get("machine", {}), GeneratorParams)) \
                if "machine" in d else None
            gov = None
            if "governor" in d:
                gd = dict(d["governor"])
                base = case.base_mva
                if "p_max_mw" in gd:
                    gd["p_max"] = gd.pop("p_max_mw") / base
                if "p_min_mw" in gd:
                    gd["p_min"] = gd.pop("p_min_mw") / base
                gov = GovernorIeesgoParams(**_take(gd, GovernorIeesgoParams))
            case.generators.append(Generator(
                id=str(d["id"]), bus=d["bus"], p_dispatch_mw=float(d["p_mw"]),
                v_set=float(d.get("v_set", 1.0)),
                q_min_mvar=float(d.get("q_min_mvar", -1e9)),
                q_max_mvar=float(d.get("q_max_mvar", 1e9)),
                in_service=bool(d.get("in_service", True)),
                machine=mach, governor=gov))
        except (KeyError, ValueError, TypeError, ValidationError) as exc:
            fails.append(f"generators[{i}]: {exc}")
    for i, d in enumerate(doc.get("loads", [])):
        try:
            model = d.get("model", "zip")
            if model == "zip":
                params = ZipLoadParams(
                    p0_mw=float(d["p0_mw"]), q0_mvar=float(d["q0_mvar"]),
                    **{k: float(d[k]) for k in
                       ("v0", "a_p", "b_p", "c_p", "a_q", "b_q", "c_q", "z")
                       if k in d})
                case.loads.append(ZipLoad(id=str(d["id"]), bus=d["bus"], params=params))
            elif model == "composite":
                kw = _take(d, CompositeLoadParams)
                for mk in ("motor_lim", "motor_sim"):
                    if mk in d:
                        kw[mk] = devices.MotorClassParams(
                            **_take(d[mk], devices.MotorClassParams))
                params = CompositeLoadParams(
                    p_nom_mw=float(d["p_nom_mw"]), q_nom_mvar=float(d["q_nom_mvar"]),
                    **{k: v for k, v in kw.items()
                       if k not in ("p_nom_mw", "q_nom_mvar")})
                case.loads.append(CompositeLoad(id=str(d["id"]), bus=d["bus"], params=params))
            else:
                fails.append(f"loads[{i}]: unknown model {model!r}")
        except (KeyError, ValueError, TypeError) as exc:
            fails.append(f"loads[{i}]: {exc}")
        except ValidationError as exc:
            fails.extend(f"loads[{i}] ({d.get('id', '?')}): {f}" for f in exc.failures)
    for i, d in enumerate(doc.get("ltcs", [])):
        try:
            case.ltcs.append(LtcRecord(
                branch=str(d["branch"]),
                params=LtcParams(**_take(d, LtcParams))))
        except (KeyError, ValueError, TypeError, ValidationError) as exc:
            fails.append(f"ltcs[{i}]: {exc}")
    for label, evts in doc.get("contingencies", {}).items():
        try:
            case.contingencies[label] = Contingency(
                label=label, events=[event_from_dict(e) for e in evts])
        except (KeyError, ValueError, ValidationError) as exc:
            fails.append(f"contingencies[{label}]: {exc}")
    case.monitored_buses = list(doc.get("monitoring", []))
    if fails:
        raise ValidationError(fails)
    validate_case(case)
    return case


def case_to_dict(case: SystemCase) -> dict:
    def drop_defaults(d):
        return {k: v for k, v in d.items() if v is not None}

    doc = {"schema_version": case.schema_version, "name": case.name,
           "base_mva": case.base_mva, "f0": case.f0,
           "buses": [], "branches": [], "generators": [], "loads": [],
           "ltcs": [], "contingencies": {}, "monitoring": list(case.monitored_buses)}
    for b in case.buses:
        doc["buses"].append({"id": b.id, "kind": b.kind.value, "base_kv": b.base_kv,
                             "area": b.area, "b_shunt": b.b_shunt})
    for br in case.branches:
        doc["branches"].append({"id": br.id, "from": br.from_bus, "to": br.to_bus,
                                "r": br.r, "x": br.x, "b": br.b_shunt,
                                "tap": br.tap, "status": br.status})
    for g in case.generators:
        d = {"id": g.id, "bus": g.bus, "p_mw": g.p_dispatch_mw, "v_set": g.v_set,
             "q_min_mvar": g.q_min_mvar, "q_max_mvar": g.q_max_mvar,
             "in_service": g.in_service}
        if g.machine is not None:
            d["machine"] = {k: getattr(g.machine, k)
                            for k in GeneratorParams.__dataclass_fields__}
        if g.governor is not None:
            d["governor"] = {k: getattr(g.governor, k)
                             for k in GovernorIeesgoParams.__dataclass_fields__}
        doc["generators"].append(d)
    for ld in case.loads:
        if ld.model == "zip":
            p = ld.params
            doc["loads"].append({"id": ld.id, "bus": ld.bus, "model": "zip",
                                 "p0_mw": p.p0_mw, "q0_mvar": p.q0_mvar, "v0": p.v0,
                                 "a_p": p.a_p, "b_p": p.b_p, "c_p": p.c_p,
                                 "a_q": p.a_q, "b_q": p.b_q, "c_q": p.c_q, "z": p.z})
        else:
            p = ld.params
            d = {"id": ld.id, "bus": ld.bus, "model": "composite",
                 "p_nom_mw": p.p_nom_mw, "q_nom_mvar": p.q_nom_mvar,
                 "share_lim": p.share_lim, "share_sim": p.share_sim,
                 "share_dl": p.share_dl, "share_mva": p.share_mva,
                 "kp": p.kp, "feeder_r": p.feeder_r, "feeder_x": p.feeder_x,
                 "dl_pf": p.dl_pf, "scale": p.scale}
            for mk in ("motor_lim", "motor_sim"):
                d[mk] = {k: getattr(getattr(p, mk), k)
                         for k in devices.MotorClassParams.__dataclass_fields__}
            doc["loads"].append(d)
    for rec in case.ltcs:
        d = {"branch": rec.branch}
        d.update({k: getattr(rec.params, k) for k in LtcParams.__dataclass_fields__})
        doc["ltcs"].append(d)
    for label, cont in case.contingencies.items():
        doc["contingencies"][label] = [event_to_dict(e) for e in cont.events]
    return doc


# ---------------------------------------------------------------------------
# Case transforms used by margins and sweeps
# ---------------------------------------------------------------------------

def without_limiters(case: SystemCase) -> SystemCase:
    """Disable OELs, LTC motion, and generator Q limits; freeze motor loads.

    Composite loads are replaced by constant-power ZIP equivalents so the
    limiter-free dynamic ramp and the static continuation see identical load
    characteristics.
    """
    out = case.copy()
    for g in out.generators:
        if g.machine is not None:
            g.machine.oel_enabled = False
            g.machine.e_fd_max = 1e9  # the excitation ceiling is a limiter too
        g.q_min_mvar = -1e9
        g.q_max_mvar = 1e9
    for rec in out.ltcs:
        rec.params.enabled = False
    for i, ld in enumerate(out.loads):
        if ld.model == "composite":
            p, q = ld.nominal_pq_mw()
            out.loads[i] = ZipLoad(id=ld.id, bus=ld.bus,
                                   params=ZipLoadParams(p0_mw=p, q0_mvar=q))
    return out


def with_zip_composition(case: SystemCase, a_p=0.0, b_p=0.0, c_p=1.0,
                         a_q=0.0, b_q=0.0, c_q=1.0) -> SystemCase:
    """Override every load with a ZIP model of the given composition."""
    out = case.copy()
    for i, ld in enumerate(out.loads):
        p, q = ld.nominal_pq_mw()
        out.loads[i] = ZipLoad(id=ld.id, bus=ld.bus, params=ZipLoadParams(
            p0_mw=p, q0_mvar=q, a_p=a_p, b_p=b_p, c_p=c_p,
            a_q=a_q, b_q=b_q, c_q=c_q))
    return out


def with_composite_composition(case: SystemCase, **shares) -> SystemCase:
    """Override every load with a composite model of the given shares."""
    out = case.copy()
    for i, ld in enumerate(out.loads):
        p, q = ld.nominal_pq_mw()
        out.loads[i] = CompositeLoad(id=ld.id, bus=ld.bus,
                                     params=CompositeLoadParams(
                                         p_nom_mw=p, q_nom_mvar=q, **shares))
    return out


# ---------------------------------------------------------------------------
# Built-in systems
# ---------------------------------------------------------------------------

def builtin_twobus(n_circuits: int = 1) -> SystemCase:
    """Two-bus oracle system: slack + single line + constant-power load.

    With one circuit (x = 0.1) the analytical maximum total load is
    V1^2/(2x) = 500 MW. With ``n_circuits=2`` each circuit has x = 0.2 so the
    intact system is identical; tripping one doubles the reactance and halves
    the maximum to 250 MW.
    """
    case = SystemCase(name=f"twobus-{n_circuits}ckt")
    case.buses = [
        Bus(id=1, kind=BusKind.SLACK, base_kv=400.0, area="source", v=1.0),
        Bus(id=2, kind=BusKind.PQ, base_kv=400.0, area="sink"),
    ]
    x_each = 0.1 * n_circuits
    for k in range(n_circuits):
        case.branches.append(Branch(id=f"line-{k + 1}", from_bus=1, to_bus=2,
                                    r=0.0, x=x_each))
    # near-ideal stiff machine: with a vanishing transient reactance the
    # dynamic loadability coincides with the closed-form network nose, which
    # is the point of this fixture
    case.generators = [Generator(
        id="G1", bus=1, p_dispatch_mw=100.0, v_set=1.0,
        q_min_mvar=-1e9, q_max_mvar=1e9,
        machine=GeneratorParams(h=6.0, d=2.0, xd=0.04, xq=0.03, xd_p=0.01,
                                xq_p=0.012, td0_p=8.0, tq0_p=0.8,
                                s_base_mva=700.0, k_avr=2000.0, t_avr=0.02,
                                i_fd_max=20.0, t_oel=20.0, oel_enabled=False),
        governor=GovernorIeesgoParams(k1=25.0, t3=0.01, p_max=7.0, p_min=0.0))]
    case.loads = [ZipLoad(id="load-2", bus=2,
                          params=ZipLoadParams(p0_mw=100.0, q0_mvar=0.0))]
    if n_circuits >= 2:
        case.contingencies["trip-circuit"] = Contingency(
            label="trip-circuit",
            events=[_trip_branch_event(1.0, "line-2")])
    case.monitored_buses = [2]
    validate_case(case)
    return case


def _trip_branch_event(t, branch):
    from .events import Event, EventAction
    return Event(t=t, action=EventAction.TRIP_BRANCH, branch=branch)


def _fault_events(t0, duration, bus, branch):
    from .events import Event, EventAction
    return [
        Event(t=t0, action=EventAction.APPLY_BUS_FAULT, bus=bus, fault_y=-1e4j),
        Event(t=t0 + duration, action=EventAction.CLEAR_FAULT),
        Event(t=t0 + duration, action=EventAction.TRIP_BRANCH, branch=branch),
    ]


def builtin_two_area() -> SystemCase:
    """Reduced two-area system: North generation feeding a Central load area
    over a double-circuit corridor, Central loads behind LTC transformers.

    Constructed for directional studies (not a published test network); sized
    so the base case is secure and contingency margins land in the hundreds
    of MW.
    """
    from .events import Event, EventAction

    case = SystemCase(name="two-area")
    pf_q = math.tan(math.acos(0.95))  # constant 0.95 power factor loads
    case.buses = [
        Bus(id=1, kind=BusKind.SLACK, base_kv=400.0, area="North", v=1.03),
        Bus(id=2, kind=BusKind.PV, base_kv=400.0, area="North"),
        Bus(id=3, kind=BusKind.PQ, base_kv=400.0, area="North"),
        Bus(id=4, kind=BusKind.PQ, base_kv=400.0, area="Central", b_shunt=2.0),
        Bus(id=5, kind=BusKind.PV, base_kv=400.0, area="Central"),
        Bus(id=6, kind=BusKind.PQ, base_kv=130.0, area="Central", b_shunt=0.3),
        Bus(id=7, kind=BusKind.PQ, base_kv=130.0, area="Central", b_shunt=0.3),
        Bus(id=8, kind=BusKind.PQ, base_kv=130.0, area="Central", b_shunt=0.2),
    ]
    case.branches = [
        Branch(id="N1-N3", from_bus=1, to_bus=3, r=0.001, x=0.02),
        Branch(id="N2-N3", from_bus=2, to_bus=3, r=0.001, x=0.02),
        Branch(id="corridor-1", from_bus=3, to_bus=4, r=0.005, x=0.08, b_shunt=0.2),
        Branch(id="corridor-2", from_bus=3, to_bus=4, r=0.005, x=0.08, b_shunt=0.2),
        Branch(id="C4-C5", from_bus=4, to_bus=5, r=0.002, x=0.03),
        Branch(id="T1", from_bus=4, to_bus=6, r=0.002, x=0.08, tap=1.0),
        Branch(id="T2", from_bus=4, to_bus=7, r=0.002, x=0.08, tap=1.0),
        Branch(id="T3", from_bus=5, to_bus=8, r=0.002, x=0.08, tap=1.0),
    ]
    # low transient reactance + high AVR gain keep the dynamic loadability
    # close to the static nose, so limiter effects dominate the SOL/PCLL gap
    north_machine = dict(h=5.0, d=2.0, xd=2.0, xq=1.9, xd_p=0.06, xq_p=0.08,
                         td0_p=7.0, tq0_p=1.0, k_avr=1500.0, t_avr=0.02)
    case.generators = [
        Generator(id="G1", bus=1, p_dispatch_mw=0.0, v_set=1.03,
                  q_min_mvar=-500.0, q_max_mvar=700.0,
                  machine=GeneratorParams(s_base_mva=1000.0, i_fd_max=2.4,
                                          **north_machine),
                  governor=GovernorIeesgoParams(k1=25.0, t3=0.01, p_max=10.0)),
        Generator(id="G2", bus=2, p_dispatch_mw=350.0, v_set=1.03,
                  q_min_mvar=-300.0, q_max_mvar=450.0,
                  machine=GeneratorParams(s_base_mva=700.0, i_fd_max=2.4,
                                          **north_machine),
                  governor=GovernorIeesgoParams(k1=25.0, t3=0.01, p_max=7.0)),
        Generator(id="G3", bus=5, p_dispatch_mw=230.0, v_set=1.02,
                  q_min_mvar=-100.0, q_max_mvar=220.0,
                  machine=GeneratorParams(s_base_mva=350.0, i_fd_max=2.5,
                                          h=4.0, d=2.0, xd=2.1, xq=2.0,
                                          xd_p=0.06, xq_p=0.08, td0_p=6.0,
                                          tq0_p=0.8, k_avr=1500.0, t_avr=0.02),
                  governor=GovernorIeesgoParams(k1=25.0, t3=0.01, p_max=2.8)),
    ]
    loads = [("load-6", 6, 250.0), ("load-7", 7, 200.0), ("load-8", 8, 150.0)]
    case.loads = [ZipLoad(id=lid, bus=bus, params=ZipLoadParams(
        p0_mw=p, q0_mvar=p * pf_q, a_p=0.0, b_p=0.0, c_p=1.0,
        a_q=1.0, b_q=0.0, c_q=0.0)) for lid, bus, p in loads]
    case.ltcs = [
        LtcRecord(branch="T1", params=LtcParams(controlled_bus=6, v_set=1.0)),
        LtcRecord(branch="T2", params=LtcParams(controlled_bus=7, v_set=1.0)),
        LtcRecord(branch="T3", params=LtcParams(controlled_bus=8, v_set=1.0)),
    ]
    case.contingencies = {
        "scenario-A": Contingency(label="scenario-A",
                                  events=_fault_events(1.0, 0.040, 4, "corridor-1")),
        "scenario-B": Contingency(label="scenario-B",
                                  events=_fault_events(1.0, 0.100, 4, "corridor-1")),
        "scenario-C": Contingency(label="scenario-C", events=[
            Event(t=1.0, action=EventAction.TRIP_GENERATOR, generator="G3")]),
    }
    case.monitored_buses = [4, 6, 7, 8]
    validate_case(case)
    return case
