"""Trace audits that cross-check the machine against independent bookkeeping.

Each audit drives a :class:`~ivl.machine.Machine` one step at a time and keeps
its own records, so it does not trust the machine's own checks:

* :func:`ses_audit` copies memory when a try is entered and compares the
  pre-existing cells after every caught error.
* :func:`injection_audit` predicts from the redexes which steps must start a
  monitor, and compares that with the counters and the monitor events.
* :func:`redex_validity_audit` calls ``valid`` on every location of every
  untrusted redex.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

from .machine import Machine, Memory, SESViolation, StepBudgetExceeded
from .oracle import redex_locations, trusted, valid
from .protocols import ProtocolMode
from .syntax import Call, FieldSet, Loc, New, Program, Try, Val, is_list_type
from .wellformed import capsule_mutators


@dataclass
class AuditReport:
    outcome: str = ""
    steps: int = 0
    checked: int = 0
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def _drive(m: Machine, before, after=None) -> str:
    """Step ``m`` to the end, calling ``before(m)`` ahead of each reduction and
    ``after(m, token)`` with whatever ``before`` returned."""
    try:
        while True:
            status = m.refocus()
            if status != "redex":
                return status
            token = before(m)
            m.step()
            if after is not None:
                after(m, token)
    except StepBudgetExceeded:
        return "fuel"


def _cells(mem: Memory) -> dict:
    return {i: (o.cls, tuple(o.vals)) for i, o in mem.store.items()}


def ses_audit(prog: Program, fuel: Optional[int] = None) -> AuditReport:
    """After each caught error, every object that existed when the try was
    entered must hold exactly its pre-try state, and nothing else may survive.
    ``checked`` counts caught errors."""
    m = Machine(prog, ProtocolMode.PAPER, fuel)
    rep = AuditReport()
    saved: dict = {}                 # id(snapshot) -> deep copy of the cells

    def before(mach: Machine):
        e = mach.focus
        if type(e) is Try:
            if e.saved is None:
                return ("enter", _cells(mach.mem))
            if type(e.body) is not Val:
                return ("error", saved.get(id(e.saved)))
        return None

    def after(mach: Machine, token) -> None:
        if token is None:
            return
        kind, cells = token
        if kind == "enter":
            t = mach.focus
            if type(t) is Try and t.saved is not None:
                saved[id(t.saved)] = cells
            return
        rep.checked += 1
        now = _cells(mach.mem)
        if cells is None or now != cells:
            extra = sorted(set(now) - set(cells or {}))
            changed = sorted(i for i in (cells or {}) if now.get(i) != cells[i])
            rep.failures.append(f"step {mach.steps}: caught error left changed {changed} new {extra}")

    try:
        rep.outcome = _drive(m, before, after)
    except SESViolation as ex:
        rep.outcome = "error"
        rep.failures.append(f"step {m.steps}: {ex}")
    rep.steps = m.steps
    return rep


_SITE_OF_RULE = {"new": "ctor", "update": "field_update", "mcall": "capsule_mutator_exit"}


def injection_audit(prog: Program, fuel: Optional[int] = None) -> AuditReport:
    """Paper mode only: a monitor may start only at a constructor call, a field
    update or a capsule mutator call, each on a class with a declared
    invariant, and every counter increment must close such a monitor.
    ``checked`` counts increments."""
    m = Machine(prog, ProtocolMode.PAPER, fuel)
    rep = AuditReport()
    predicted: Counter = Counter()
    mutators = {c.name: {md.name for md in capsule_mutators(c)} for c in prog.classes.values()}

    def declared(cls: str) -> bool:
        return not is_list_type(cls) and prog.cls(cls).has_declared_invariant

    def before(mach: Machine):
        e = mach.focus
        t = type(e)
        if t is New and declared(e.cls):
            return "ctor", e.cls
        if t is FieldSet and type(e.recv.value) is Loc:
            cls = mach.mem.cls_of(e.recv.value)
            if declared(cls):
                return "field_update", cls
        if t is Call and type(e.recv.value) is Loc:
            cls = mach.mem.cls_of(e.recv.value)
            if e.name in mutators.get(cls, ()):
                return "capsule_mutator_exit", cls
        return None

    events_seen = [0]
    caught = [0]

    def after(mach: Machine, token) -> None:
        caught[0] += mach.last_rule == "try-error"
        fresh = mach.events[events_seen[0]:]
        events_seen[0] = len(mach.events)
        if token is not None:
            predicted[token] += 1
        started = [(_SITE_OF_RULE.get(ev.rule), ev.cls) for ev in fresh]
        expect = [token] if token is not None else []
        if started != expect:
            rep.failures.append(f"step {mach.steps}: monitors {started} but the redex predicts {expect}")

    rep.outcome = _drive(m, before, after)
    rep.steps = m.steps
    by_mid = {ev.mid: ev for ev in m.events}
    observed: Counter = Counter()
    for step, mid, cls, site in m.increments:
        rep.checked += 1
        ev = by_mid.get(mid)
        if ev is None or _SITE_OF_RULE.get(ev.rule) != site or ev.cls != cls:
            rep.failures.append(f"step {step}: increment {site} on {cls} closes no matching monitor")
        observed[(site, cls)] += 1
    per_site: Counter = Counter()
    for (site, _), n in observed.items():
        per_site[site] += n
    for site, n in m.counters.per_site.items():
        if per_site[site] != n:
            rep.failures.append(f"per_site {site} is {n} but {per_site[site]} increments were traced")
    # a caught error abandons the monitors it unwinds, so only then may checks fall short
    exact = rep.outcome == "value" and not caught[0]
    for key in set(predicted) | set(observed):
        n, got = predicted[key], observed[key]
        if got > n or (exact and got != n):
            rep.failures.append(f"{key[0]} on {key[1]}: {n} injection points, {got} checks")
    return rep


def redex_validity_audit(prog: Program, fuel: Optional[int] = None) -> AuditReport:
    """Before every step, each location of an untrusted redex must be valid.
    ``checked`` counts ``valid`` calls."""
    m = Machine(prog, ProtocolMode.PAPER, fuel)
    rep = AuditReport()

    def before(mach: Machine):
        redex = mach.focus
        locs = redex_locations(redex)
        if not locs:
            return None
        _, path, _ = mach.context()
        for l in locs:
            if trusted(path, redex, l):
                continue
            rep.checked += 1
            if not valid(prog, mach.mem, l):
                rep.failures.append(f"step {mach.steps}: {mach.mem.cls_of(l)} {l!r} invalid in redex")
        return None

    try:
        rep.outcome = _drive(m, before)
    except SESViolation as ex:
        rep.outcome = "error"
        rep.failures.append(str(ex))
    rep.steps = m.steps
    return rep
