"""Timed contingency events applied during a dynamic simulation."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .errors import ValidationError


class EventAction(str, Enum):
    APPLY_BUS_FAULT = "apply_bus_fault"
    CLEAR_FAULT = "clear_fault"
    TRIP_BRANCH = "trip_branch"
    TRIP_GENERATOR = "trip_generator"


@dataclass
class Event:
    t: float                       # offset from contingency start, s
    action: EventAction
    bus: int | None = None         # apply_bus_fault
    fault_y: complex = -1e4j       # fault shunt admittance, pu
    branch: str | None = None      # trip_branch
    generator: str | None = None   # trip_generator

    def __post_init__(self):
        if isinstance(self.action, str):
            self.action = EventAction(self.action)
        if isinstance(self.fault_y, (int, float)):
            self.fault_y = complex(0.0, float(self.fault_y))


@dataclass
class Contingency:
    label: str
    events: list[Event] = field(default_factory=list)

    def __post_init__(self):
        times = [e.t for e in self.events]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValidationError(f"contingency {self.label!r}: event times must be nondecreasing")
        pending = 0
        for e in self.events:
            if e.action == EventAction.APPLY_BUS_FAULT:
                pending += 1
            elif e.action == EventAction.CLEAR_FAULT:
                if pending == 0:
                    raise ValidationError(
                        f"contingency {self.label!r}: clear_fault without a preceding apply_bus_fault")
                pending -= 1

    @property
    def is_empty(self) -> bool:
        return not self.events


def event_from_dict(d: dict) -> Event:
    kw = dict(t=float(d["t"]), action=d["action"])
    if "bus" in d:
        kw["bus"] = d["bus"]
    if "fault_b" in d or "fault_g" in d:
        kw["fault_y"] = complex(float(d.get("fault_g", 0.0)), float(d.get("fault_b", 0.0)))
    if "branch" in d:
        kw["branch"] = d["branch"]
    if "generator" in d:
        kw["generator"] = d["generator"]
    return Event(**kw)


def event_to_dict(e: Event) -> dict:
    d = {"t": e.t, "action": e.action.value}
    if e.bus is not None:
        d["bus"] = e.bus
        d["fault_g"] = e.fault_y.real
        d["fault_b"] = e.fault_y.imag
    if e.branch is not None:
        d["branch"] = e.branch
    if e.generator is not None:
        d["generator"] = e.generator
    return d
