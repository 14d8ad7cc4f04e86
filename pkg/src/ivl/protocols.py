"""Where invariant checks fire: the monitor-based protocol, and D/Eiffel
visible-state placement for comparison."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .syntax import Program

SITES = ("ctor", "field_update", "capsule_mutator_exit", "method_entry", "method_exit")


class ProtocolMode(str, Enum):
    PAPER = "paper"
    D = "d"
    EIFFEL = "eiffel"

    @classmethod
    def parse(cls, s: str) -> "ProtocolMode":
        aliases = {"d_visible_state": "d", "eiffel_visible_state": "eiffel"}
        return cls(aliases.get(s, s))


@dataclass(frozen=True)
class CtorExit:
    cls: str


@dataclass(frozen=True)
class FieldUpdate:
    cls: str


@dataclass(frozen=True)
class McallEntry:
    cls: str
    method: str
    qualified: bool


@dataclass(frozen=True)
class McallExit:
    cls: str
    method: str
    qualified: bool


@dataclass(frozen=True)
class CapsuleMutatorExit:
    cls: str


def classify_field_backed(prog: Program, cls: str, method: str) -> bool:
    """Body is exactly ``this.f`` in a class annotated ``@uniform_access``."""
    return prog.is_field_backed(cls, method)


def _declared(prog: Program, cls: str) -> bool:
    c = prog.classes.get(cls)
    return c is not None and c.kind == "class" and c.has_declared_invariant


def _visible(prog: Program, mode: ProtocolMode, ev) -> bool:
    if ev.method == "invariant" or not _declared(prog, ev.cls):
        return False
    md = prog.cls(ev.cls).methods.get(ev.method)
    if md is None or md.is_static or md.is_private:
        return False
    if mode is ProtocolMode.EIFFEL:
        return ev.qualified and not classify_field_backed(prog, ev.cls, ev.method)
    return True


def check_events(mode: ProtocolMode, event, prog: Program) -> bool:
    """Whether ``event`` fires an invariant check under ``mode``."""
    t = type(event)
    if t is CtorExit:
        return _declared(prog, event.cls)
    if mode is ProtocolMode.PAPER:
        if t is FieldUpdate or t is CapsuleMutatorExit:
            return _declared(prog, event.cls)
        return False
    if t is McallEntry or t is McallExit:
        return _visible(prog, mode, event)
    return False


@dataclass
class CheckCounters:
    total: int = 0
    per_class: dict = field(default_factory=dict)
    per_site: dict = field(default_factory=lambda: {s: 0 for s in SITES})

    def bump(self, cls: str, site: str) -> None:
        self.total += 1
        self.per_class[cls] = self.per_class.get(cls, 0) + 1
        self.per_site[site] += 1

    def consistent(self) -> bool:
        return self.total == sum(self.per_site.values()) == sum(self.per_class.values())


SCHEMA_VERSION = 1


def report(mode: ProtocolMode, counters: CheckCounters, steps: int, outcome: str) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "mode": mode.value,
        "total": counters.total,
        "per_class": dict(sorted(counters.per_class.items())),
        "per_site": dict(counters.per_site),
        "steps": steps,
        "outcome": outcome,
    }
