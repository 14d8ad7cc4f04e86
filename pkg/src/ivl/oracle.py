"""Executable soundness predicates over machine configurations.

Every predicate takes the program (for the class table), a memory and a
running expression. :class:`SoundnessOracle` evaluates them together at each
step of a run and reports locations that are neither garbage, valid and well
encapsulated, nor monitored, plus any untrusted redex on an invalid object.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .machine import (
    CHECK_FUEL, Machine, Memory, SESViolation, StepBudgetExceeded, StuckError, decompose,
)
from .protocols import ProtocolMode
from .syntax import (
    Call, FieldGet, FieldSet, Loc, Mdf, Monitor, New, Program, TypeRef, Val, Var, children,
    invariant_fields, is_list_type, rebuild,
)
from .typecheck import Binding, Checker, MethodContext, TypeCheckError, TypeEnv

SMALL_HEAP = 64
HOLE = "$hole"
_RUNTIME_CTX = MethodContext(None, None, True, "runtime")

GARBAGE = "garbage"
VALID = "valid_and_encapsulated"
MONITORED = "monitored"
VIOLATION = "VIOLATION"


# ---------------------------------------------------------------- heap shape


def _field_locs(obj) -> Iterable[Loc]:
    return (v for v in obj.vals if type(v) is Loc)


def rog(mem: Memory, l: Loc, without: Optional[Loc] = None) -> frozenset:
    """Locations reachable from ``l`` through any field, ``l`` included.
    ``without`` is treated as absent from memory."""
    if l == without or l not in mem:
        return frozenset()
    seen = {l}
    todo = deque([l])
    store = mem.store
    while todo:
        o = store.get(todo.popleft().id)
        if o is None:
            continue
        for v in _field_locs(o):
            if v not in seen and v != without and v.id in store:
                seen.add(v)
                todo.append(v)
    return frozenset(seen)


ALL_FIELDS = "all"
INVARIANT_FIELDS = "invariant"
SCOPES = (ALL_FIELDS, INVARIANT_FIELDS)


def _encap_roots(prog: Program, mem: Memory, l0: Loc, scope: str = ALL_FIELDS) -> list:
    o = mem.obj(l0)
    if is_list_type(o.cls):
        return []
    c = prog.cls(o.cls)
    seen = invariant_fields(c) if scope == INVARIANT_FIELDS else None
    out = []
    for f, v in zip(c.fields, o.vals):
        if type(v) is not Loc:
            continue
        if f.type.mdf is Mdf.IMM or (f.type.mdf is Mdf.CAPSULE and (seen is None or f.name in seen)):
            out.append(v)
    return out


def erog(prog: Program, mem: Memory, l0: Loc, without: Optional[Loc] = None,
         scope: str = ALL_FIELDS) -> frozenset:
    """Union of the ROGs of ``l0``'s imm and capsule fields. With the
    ``invariant`` scope, capsule fields the invariant never reads are left out."""
    out: set = set()
    for v in _encap_roots(prog, mem, l0, scope):
        out |= rog(mem, v, without)
    return frozenset(out)


class HeapAnalysis:
    """Memoised rog/erog for one memory; dropped whenever a field is written."""

    def __init__(self, prog: Program, mem: Memory) -> None:
        self.prog = prog
        self.memory = mem
        self._writes = mem.writes
        self._rog: dict = {}
        self._erog: dict = {}

    def _sync(self) -> None:
        if self.memory.writes != self._writes:
            self._writes = self.memory.writes
            self._rog.clear()
            self._erog.clear()

    def rog(self, l: Loc) -> frozenset:
        self._sync()
        r = self._rog.get(l.id)
        if r is None:
            r = self._rog[l.id] = rog(self.memory, l)
        return r

    def erog(self, l: Loc, scope: str = ALL_FIELDS) -> frozenset:
        self._sync()
        key = (l.id, scope)
        r = self._erog.get(key)
        if r is None:
            out: set = set()
            for v in _encap_roots(self.prog, self.memory, l, scope):
                out |= self.rog(v)
            r = self._erog[key] = frozenset(out)
        return r


# ---------------------------------------------------------------- expressions


def _loc_paths(e, l: Loc, path: tuple = ()):
    """Child-index paths of every ``Val(l)`` in ``e``."""
    if type(e) is Val:
        if e.value == l:
            yield path
        return
    for i, c in enumerate(children(e)):
        yield from _loc_paths(c, l, path + (i,))


def replace_at(e, path: tuple, new):
    if not path:
        return new
    kids = list(children(e))
    kids[path[0]] = replace_at(kids[path[0]], path[1:], new)
    return rebuild(e, tuple(kids))


def typable(prog: Program, mem: Memory, e, hole: Optional[TypeRef] = None) -> bool:
    """Whether ``e`` types with locations as ``mut`` and ``$hole`` bound to ``hole``."""
    vars = {} if hole is None else {HOLE: Binding(hole)}
    env = TypeEnv(vars, mem.cls_of, frozenset())
    try:
        Checker(prog).tc(e, env, _RUNTIME_CTX)
        return True
    except (TypeCheckError, LookupError, StuckError):
        return False


def mutatable(prog: Program, l: Loc, mem: Memory, e) -> bool:
    """Some occurrence of ``l`` in ``e``, seen as imm, makes ``e`` ill typed."""
    t = TypeRef(Mdf.IMM, mem.cls_of(l))
    for p in _loc_paths(e, l):
        if not typable(prog, mem, replace_at(e, p, Var(HOLE)), t):
            return True
    return False


def well_encapsulated(prog: Program, mem: Memory, e, l0: Loc, scope: str = ALL_FIELDS) -> bool:
    return not any(mutatable(prog, l, mem, e) for l in erog(prog, mem, l0, scope=scope))


def monitors_in(e) -> list:
    out = []
    stack = [e]
    while stack:
        n = stack.pop()
        if type(n) is Monitor:
            out.append(n)
        stack.extend(children(n))
    return out


def _count(e, l: Loc) -> int:
    n = 0
    stack = [e]
    while stack:
        x = stack.pop()
        if type(x) is Val:
            n += x.value == l
        else:
            stack.extend(children(x))
    return n


def monitored(e, l: Loc) -> bool:
    """Inside a monitor on ``l`` whose body is ``l`` or no longer mentions it."""
    for m in monitors_in(e):
        if m.loc == l and ((type(m.body) is Val and m.body.value == l) or _count(m.body, l) == 0):
            return True
    return False


def roots(e) -> set:
    """Locations mentioned by ``e``, monitor labels included."""
    out = set()
    stack = [e]
    while stack:
        n = stack.pop()
        t = type(n)
        if t is Val:
            if type(n.value) is Loc:
                out.add(n.value)
            continue
        if t is Monitor:
            out.add(n.loc)
        stack.extend(children(n))
    return out


def reachable(mem: Memory, start: Iterable[Loc]) -> set:
    seen = set()
    todo = deque(l for l in start if l in mem)
    seen.update(todo)
    store = mem.store
    while todo:
        o = store.get(todo.popleft().id)
        if o is None:
            continue
        for v in _field_locs(o):
            if v not in seen and v.id in store:
                seen.add(v)
                todo.append(v)
    return seen


def garbage(l: Loc, mem: Memory, e) -> bool:
    return l not in reachable(mem, roots(e))


def valid(prog: Program, mem: Memory, l: Loc, fuel: int = CHECK_FUEL) -> bool:
    """``l.invariant()`` reduces to true within ``fuel`` steps on a copy of
    memory and leaves every pre-existing object untouched."""
    if l not in mem:
        return False
    cls = mem.cls_of(l)
    if is_list_type(cls):
        return True
    if not prog.cls(cls).has_declared_invariant:
        return True          # the body is the literal true
    return _run_invariant(prog, mem, l, fuel)[0]


def _run_invariant(prog: Program, mem: Memory, l: Loc, fuel: int) -> tuple:
    before = mem.cells()
    m = mem.copy()
    mach = Machine(prog, ProtocolMode.PAPER, fuel=fuel, memory=m,
                   expr=Call(Val(l), "invariant", (), True, False))
    try:
        r = mach.run()
    except (StepBudgetExceeded, StuckError, SESViolation):
        return False, None
    after = {i: (o.cls, tuple(o.vals)) for i, o in m.store.items() if i in before}
    ok = r.outcome == "value" and r.value is True and after == before
    return ok, after


def valid_is_deterministic(prog: Program, mem: Memory, l: Loc, fuel: int = CHECK_FUEL) -> bool:
    """Two evaluations of the invariant agree and leave memory alike."""
    if not prog.cls(mem.cls_of(l)).has_declared_invariant:
        return True
    return _run_invariant(prog, mem, l, fuel) == _run_invariant(prog, mem, l, fuel)


def redex_location(redex) -> Optional[Loc]:
    t = type(redex)
    if t in (Call, FieldGet, FieldSet) and type(redex.recv) is Val and type(redex.recv.value) is Loc:
        return redex.recv.value
    return None


def redex_locations(redex) -> list:
    """Every location a redex mentions: receiver, arguments, stored value."""
    t = type(redex)
    if t is Call:
        vals = (redex.recv, *redex.args)
    elif t is FieldGet:
        vals = (redex.recv,)
    elif t is FieldSet:
        vals = (redex.recv, redex.value)
    elif t is New:
        vals = tuple(redex.args)
    else:
        return []
    out = []
    for v in vals:
        if type(v) is Val and type(v.value) is Loc and v.value not in out:
            out.append(v.value)
    return out


def trusted(path: list, redex, l: Optional[Loc] = None) -> bool:
    """``path`` is the evaluation context as (ancestor, child index) pairs,
    root first. Trusted steps are the injected invariant call itself and field
    reads on the checked object while its check runs. ``l`` defaults to the
    receiver."""
    if l is None:
        l = redex_location(redex)
    if l is None or l != redex_location(redex):
        return False
    if type(redex) is Call and redex.name == "invariant" and not redex.args:
        if not path:
            return False
        p, idx = path[-1]
        return type(p) is Monitor and idx == 1 and p.loc == l and type(p.body) is Val
    if type(redex) is FieldGet:
        return any(type(p) is Monitor and idx == 1 and p.loc == l and type(p.body) is Val
                   for p, idx in path)
    return False


def _capsule_accesses(prog: Program, mem: Memory, e):
    """Yield (path, l, field type, guarded) for every ``l.f`` with ``f`` a
    capsule field the invariant of ``l`` reads."""
    stack = [(e, (), ())]
    while stack:
        n, path, mons = stack.pop()
        t = type(n)
        if t is FieldGet and type(n.recv) is Val and type(n.recv.value) is Loc:
            l = n.recv.value
            o = mem.store.get(l.id)
            if o is not None and not is_list_type(o.cls):
                c = prog.cls(o.cls)
                fd = c.field(n.name)
                if (fd is not None and fd.type.mdf is Mdf.CAPSULE
                        and n.name in invariant_fields(c)):
                    guarded = any(m.loc == l and (slot == 1 or _count(m.body, l) == 1)
                                  for m, slot in mons)
                    yield path, l, fd.type, guarded
        if t is Val:
            continue
        for i, c in enumerate(children(n)):
            stack.append((c, path + (i,), mons + ((n, i),) if t is Monitor else mons))


def field_guarded(prog: Program, mem: Memory, e) -> bool:
    return not _unguarded(prog, mem, e)


def _unguarded(prog: Program, mem: Memory, e) -> list:
    out = []
    for path, l, ft, guarded in _capsule_accesses(prog, mem, e):
        if guarded:
            continue
        probe = replace_at(e, path, Var(HOLE))
        if typable(prog, mem, probe, TypeRef(Mdf.READ, ft.cls)):
            continue                 # the access is not used as mut
        if not typable(prog, mem, probe, TypeRef(Mdf.MUT, ft.cls)):
            continue
        out.append((l, path))
    return out


def head_not_circular(prog: Program, mem: Memory, h: Optional[HeapAnalysis] = None) -> list:
    """Locations inside their own encapsulated ROG."""
    h = h or HeapAnalysis(prog, mem)
    return [l for l in mem.locations() if l in h.erog(l)]


def capsule_tree(prog: Program, mem: Memory, e, is_mut=None,
                 h: Optional[HeapAnalysis] = None) -> list:
    """(l0, l1, l2) where mutatable ``l2`` stays in erog(l0) after removing ``l1``."""
    h = h or HeapAnalysis(prog, mem)
    if is_mut is None:
        def is_mut(l):
            return mutatable(prog, l, mem, e)
    occurring = roots(e)
    bad = []
    for l0 in mem.locations():
        for l1 in h.erog(l0):
            for l2 in h.erog(l1) & occurring:
                if is_mut(l2) and l2 in erog(prog, mem, l0, without=l1):
                    bad.append((l0, l1, l2))
    return bad


# ---------------------------------------------------------------- verdicts


@dataclass
class Config:
    """A configuration split into evaluation context and redex."""

    prog: Program
    memory: Memory
    expr: object
    path: list = field(default_factory=list)
    redex: object = None
    step: int = 0

    @classmethod
    def of(cls, prog: Program, memory: Memory, expr, step: int = 0) -> "Config":
        d = decompose(expr)
        if d[0] == "redex":
            return cls(prog, memory, expr, list(d[1]), d[2], step)
        return cls(prog, memory, expr, [], None, step)

    @classmethod
    def from_machine(cls, m: Machine) -> "Config":
        e, path, focus = m.context()
        redex = focus if m.halted is None else None
        return cls(m.prog, m.mem, e, path, redex, m.steps)


@dataclass(frozen=True)
class Violation:
    step: int
    location: Optional[int]
    kind: str
    reason: str

    def record(self) -> dict:
        return {"step": self.step, "location": self.location, "classification": VIOLATION,
                "kind": self.kind, "reason": self.reason}


@dataclass
class OkVerdict:
    step: int
    per_location: dict            # location id -> classification
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations

    def records(self) -> list:
        out = [{"step": self.step, "location": i, "classification": c}
               for i, c in sorted(self.per_location.items()) if c != VIOLATION]
        return out + [v.record() for v in self.violations]


class SoundnessOracle:
    """Checks configurations of one program, caching invariant results."""

    def __init__(self, prog: Program, deep: bool = True, check_types: bool = False,
                 fuel: int = CHECK_FUEL, scope: str = INVARIANT_FIELDS) -> None:
        if scope not in SCOPES:
            raise ValueError(f"unknown encapsulation scope {scope!r}")
        self.prog = prog
        self.scope = scope
        self.deep = deep
        self.check_types = check_types
        self.fuel = fuel
        self._valid_at: dict = {}        # id -> (memory id, writes, result)
        self._valid_by_content: dict = {}
        self._heap: Optional[HeapAnalysis] = None
        self.invariant_runs = 0
        self.deep_checks = 0

    def heap(self, mem: Memory) -> HeapAnalysis:
        if self._heap is None or self._heap.memory is not mem:
            self._heap = HeapAnalysis(self.prog, mem)
        return self._heap

    def valid(self, mem: Memory, l: Loc) -> bool:
        cls = mem.cls_of(l)
        if is_list_type(cls) or not self.prog.cls(cls).has_declared_invariant:
            return True
        hit = self._valid_at.get(l.id)
        if hit is not None and hit[0] is mem and hit[1] == mem.writes:
            return hit[2]
        h = self.heap(mem)
        key = (l.id, tuple((i.id, mem.store[i.id].cls, tuple(mem.store[i.id].vals))
                           for i in sorted(h.rog(l), key=lambda x: x.id)))
        r = self._valid_by_content.get(key)
        if r is None:
            self.invariant_runs += 1
            r = self._valid_by_content[key] = valid(self.prog, mem, l, self.fuel)
        self._valid_at[l.id] = (mem, mem.writes, r)
        return r

    def check(self, cfg: Config) -> OkVerdict:
        prog, mem, e = self.prog, cfg.memory, cfg.expr
        viol: list = []
        per: dict = {}
        h = self.heap(mem)
        occurring = roots(e)
        reach = reachable(mem, occurring)
        mon = {}
        for m in monitors_in(e):
            if (type(m.body) is Val and m.body.value == m.loc) or _count(m.body, m.loc) == 0:
                mon[m.loc] = True
        mut_memo: dict = {}
        typed: list = []

        def is_mut(l: Loc) -> bool:
            r = mut_memo.get(l)
            if r is None:
                if not typed:
                    typed.append(typable(prog, mem, e))
                    if not typed[0]:
                        viol.append(Violation(cfg.step, None, "ill-typed",
                                              "the running expression does not type"))
                r = mut_memo[l] = typed[0] and mutatable(prog, l, mem, e)
            return r

        for i in list(mem.store):
            l = Loc(i)
            if l not in reach:
                per[i] = GARBAGE
            elif l in mon:
                per[i] = MONITORED
            elif not self.valid(mem, l):
                per[i] = VIOLATION
                viol.append(Violation(cfg.step, i, "invalid",
                                      f"{mem.cls_of(l)} {l!r} is reachable, unmonitored and invalid"))
            else:
                exposed = [x for x in h.erog(l, self.scope) & occurring if is_mut(x)]
                if exposed:
                    per[i] = VIOLATION
                    viol.append(Violation(cfg.step, i, "not-encapsulated",
                                          f"{mem.cls_of(l)} {l!r} has mutatable {sorted(x.id for x in exposed)} "
                                          f"in its encapsulated state"))
                else:
                    per[i] = VALID
        if cfg.redex is not None:
            for l in redex_locations(cfg.redex):
                if l in mem and not self.valid(mem, l) and not trusted(cfg.path, cfg.redex, l):
                    viol.append(Violation(cfg.step, l.id, "untrusted-redex",
                                          f"redex on invalid {mem.cls_of(l)} {l!r} is not trusted"))
        for l, _ in _unguarded(prog, mem, e):
            viol.append(Violation(cfg.step, l.id, "field-unguarded",
                                  f"capsule field of {l!r} used as mut outside its monitor"))
        if self.check_types and not typed:
            if not typable(prog, mem, e):
                viol.append(Violation(cfg.step, None, "ill-typed", "the running expression does not type"))
        if self.deep and len(mem.store) <= SMALL_HEAP:
            self.deep_checks += 1
            for l in head_not_circular(prog, mem, h):
                viol.append(Violation(cfg.step, l.id, "head-circular",
                                      f"{l!r} is inside its own encapsulated ROG"))
            for l0, l1, l2 in capsule_tree(prog, mem, e, is_mut, h):
                viol.append(Violation(cfg.step, l2.id, "capsule-tree",
                                      f"{l2!r} reaches {l0!r} around {l1!r}"))
        return OkVerdict(cfg.step, per, viol)


def assert_ok(cfg: Config, oracle: Optional[SoundnessOracle] = None) -> OkVerdict:
    return (oracle or SoundnessOracle(cfg.prog)).check(cfg)


# ---------------------------------------------------------------- runs


@dataclass(frozen=True)
class OraclePolicy:
    kind: str          # "off" | "sampled" | "every-step"
    k: int = 1

    @classmethod
    def parse(cls, s: str) -> "OraclePolicy":
        if s in ("off", "every-step"):
            return cls(s)
        if s.startswith("sampled"):
            _, _, k = s.partition(":")
            k = int(k) if k else 1
            if k < 1:
                raise ValueError("sampling period must be positive")
            return cls("sampled", k)
        raise ValueError(f"unknown oracle policy {s!r}")

    def wants(self, step: int) -> bool:
        if self.kind == "off":
            return False
        return self.kind == "every-step" or step % self.k == 0


EVERY_STEP = OraclePolicy("every-step")


@dataclass
class OracleReport:
    outcome: str
    steps: int
    checked: int
    violations: list
    records: list = field(default_factory=list)
    invariant_runs: int = 0
    deep_checked: int = 0        # configurations small enough for the brute-force axioms

    @property
    def ok(self) -> bool:
        return not self.violations


def check_run(prog: Program, policy: OraclePolicy = EVERY_STEP, fuel: Optional[int] = None,
              deep: bool = True, check_types: bool = False, keep_records: bool = False,
              determinism_every: int = 0, scope: str = INVARIANT_FIELDS) -> OracleReport:
    """Run ``prog`` in paper mode, asserting OK at the steps the policy selects
    and at the final configuration."""
    oracle = SoundnessOracle(prog, deep=deep, check_types=check_types, scope=scope)
    m = Machine(prog, ProtocolMode.PAPER, fuel)
    violations: list = []
    records: list = []
    checked = [0]

    def look(mach: Machine) -> None:
        cfg = Config.from_machine(mach)
        v = oracle.check(cfg)
        checked[0] += 1
        violations.extend(v.violations)
        if keep_records:
            records.extend(v.records())
        if determinism_every and checked[0] % determinism_every == 0:
            for i in list(mach.mem.store):
                l = Loc(i)
                if v.per_location.get(i) == VALID and not is_list_type(mach.mem.cls_of(l)):
                    if not valid_is_deterministic(prog, mach.mem, l):
                        violations.append(Violation(mach.steps, i, "nondeterministic",
                                                    f"invariant of {l!r} is not deterministic"))

    def observer(mach: Machine) -> None:
        if policy.wants(mach.steps):
            look(mach)

    outcome = "value"
    try:
        m.run(observer if policy.kind != "off" else None)
        outcome = m.halted
    except StepBudgetExceeded:
        outcome = "fuel"
    except SESViolation as ex:
        outcome = "error"
        violations.append(Violation(m.steps, None, "ses", str(ex)))
    if policy.kind != "off" and m.halted is not None:
        look(m)
    return OracleReport(outcome, m.steps, checked[0], violations, records, oracle.invariant_runs,
                        oracle.deep_checks)
