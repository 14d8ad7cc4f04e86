"""Small-step abstract machine.

The running expression is kept as a focus plus a stack of frames (parent node,
child index), so finding the next redex is amortised constant time. The full
expression can be rebuilt at any step for tracing or for the oracle.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Optional

from .protocols import (
    CapsuleMutatorExit, CheckCounters, CtorExit, FieldUpdate, McallEntry, McallExit,
    ProtocolMode, check_events,
)
from .syntax import (
    VOID, Call, FieldGet, FieldSet, For, ForRange, Hole, If, Let, Loc, Monitor, New, Prim,
    Program, Seq, Snapshot, StaticCall, Throw, Try, Val, Var, children, is_list_type,
    rebuild, subst, wrap_int,
)

DEFAULT_FUEL = 10_000_000
CHECK_FUEL = 1_000_000
CAP_LOC = Loc(0)


def default_fuel() -> int:
    v = os.environ.get("IVL_FUEL")
    return int(v) if v else DEFAULT_FUEL


class StepBudgetExceeded(RuntimeError):
    pass


class StuckError(RuntimeError):
    """No rule applies: an interpreter or typechecker bug."""


class UnboundVariable(StuckError):
    pass


class SESViolation(RuntimeError):
    """A location preserved by a try changed before the try failed."""


# ---------------------------------------------------------------- memory


class Obj:
    __slots__ = ("cls", "vals")

    def __init__(self, cls: str, vals: list) -> None:
        self.cls = cls
        self.vals = vals

    def __repr__(self) -> str:
        return f"{self.cls}{{{', '.join(map(repr, self.vals))}}}"


class Memory:
    """Locations to objects; list objects keep their elements in ``vals``."""

    def __init__(self) -> None:
        self.store: dict[int, Obj] = {}
        self.next_id = 0
        self.output_log: list[str] = []
        self.writes = 0

    def alloc(self, cls: str, vals: list) -> Loc:
        l = Loc(self.next_id)
        self.next_id += 1
        self.store[l.id] = Obj(cls, vals)
        return l

    def obj(self, l: Loc) -> Obj:
        o = self.store.get(l.id)
        if o is None:
            raise StuckError(f"dangling location {l!r}")
        return o

    def cls_of(self, l: Loc) -> str:
        return self.obj(l).cls

    def __contains__(self, l: Loc) -> bool:
        return l.id in self.store

    def locations(self) -> list:
        return [Loc(i) for i in self.store]

    def copy(self) -> "Memory":
        m = Memory()
        m.store = {i: Obj(o.cls, list(o.vals)) for i, o in self.store.items()}
        m.next_id = self.next_id
        m.output_log = list(self.output_log)
        m.writes = self.writes
        return m

    def cells(self, ids=None) -> dict:
        ids = self.store.keys() if ids is None else ids
        return {i: (self.store[i].cls, tuple(self.store[i].vals)) for i in ids}

    def discard_from(self, mark: int) -> None:
        for i in range(mark, self.next_id):
            self.store.pop(i, None)

    def snapshot(self) -> Snapshot:
        return Snapshot(frozenset(self.store), self.cells(), self.next_id)


def initial_memory(prog: Program) -> Memory:
    m = Memory()
    cap = prog.cls("Cap")
    vals = []
    for f in cap.fields:
        if not is_list_type(f.type.cls):
            raise StuckError(f"Cap field {f.name} must have a List type to be initialised")
        vals.append(None)
    m.alloc("Cap", vals)
    for i, f in enumerate(cap.fields):
        m.store[0].vals[i] = m.alloc(f.type.cls, [])
    return m


# ---------------------------------------------------------------- results


@dataclass
class RunResult:
    outcome: str                       # "value" | "error"
    value: object
    memory: Memory
    counters: CheckCounters
    steps: int
    output_log: list
    expr: object = None


@dataclass
class MonitorEvent:
    mid: int
    rule: str
    cls: str
    site: str
    step: int


@dataclass
class Frame:
    node: object
    idx: int


def is_error(e) -> bool:
    t = type(e)
    if t is Throw:
        return type(e.value) is Val
    if t is Monitor:
        return type(e.body) is Val and type(e.check) is Val and e.check.value is False
    return False


def _next_child(e) -> int:
    """Index (in :func:`children` order) of the next child to evaluate, or -1."""
    t = type(e)
    if t is Call:
        if type(e.recv) is not Val:
            return 0
        for i, a in enumerate(e.args):
            if type(a) is not Val:
                return i + 1
        return -1
    if t is StaticCall or t is New or t is Prim:
        for i, a in enumerate(e.args):
            if type(a) is not Val:
                return i
        return -1
    if t is FieldGet or t is Let or t is Seq or t is If or t is For or t is Throw:
        return 0 if type(children(e)[0]) is not Val else -1
    if t is FieldSet:
        if type(e.recv) is not Val:
            return 0
        return 1 if type(e.value) is not Val else -1
    if t is ForRange:
        if type(e.start) is not Val:
            return 0
        return 1 if type(e.end) is not Val else -1
    if t is Try:
        if e.saved is None:
            return -1
        return 0 if type(e.body) is not Val else -1
    if t is Monitor:
        if type(e.body) is not Val:
            return 0
        return 1 if type(e.check) is not Val else -1
    if t is Var:
        raise UnboundVariable(f"free variable {e.name}")
    if t is Hole:
        raise StuckError("hole in running expression")
    return -1


def _replace(e, idx: int, child):
    kids = list(children(e))
    kids[idx] = child
    return rebuild(e, tuple(kids))


def _same(a, b) -> bool:
    return type(a) is type(b) and a == b


def _show(v) -> str:
    if type(v) is bool:
        return "true" if v else "false"
    return str(v) if type(v) in (int, str) else repr(v)


class Machine:
    def __init__(self, prog: Program, mode: ProtocolMode = ProtocolMode.PAPER,
                 fuel: Optional[int] = None, memory: Optional[Memory] = None,
                 expr=None, check_fuel: int = CHECK_FUEL) -> None:
        self.prog = prog
        self.mode = mode
        self.fuel = default_fuel() if fuel is None else fuel
        self.check_fuel = check_fuel
        self.mem = initial_memory(prog) if memory is None else memory
        if expr is None:
            expr = subst(prog.main, {"c": Val(CAP_LOC)})
        self.focus = expr
        self.frames: list[Frame] = []
        self.checks: list[int] = []        # frame depths of monitors evaluating their check
        self.check_start: dict[int, int] = {}
        self.steps = 0
        self.counters = CheckCounters()
        self.events: list[MonitorEvent] = []
        self.increments: list[tuple] = []  # (step, mid, cls, site)
        self.last_rule = ""
        self._mid = 0
        self._fidx: dict = {}
        self.halted: Optional[str] = None

    # ---------------------------------------------------------------- focus

    def _push(self, node, idx: int) -> None:
        if type(node) is Monitor and idx == 1:
            if node.mark is None:
                node.mark = self.mem.next_id
                node.spent = self.steps
            self.checks.append(len(self.frames))
        self.frames.append(Frame(node, idx))

    def _pop(self) -> Frame:
        fr = self.frames.pop()
        if self.checks and self.checks[-1] == len(self.frames):
            self.checks.pop()
        return fr

    def _plug(self, v) -> None:
        """Place value ``v`` into the innermost frame and refocus on the parent."""
        fr = self._pop()
        node = fr.node
        if type(node) is Monitor and fr.idx == 1:
            self._check_done(node, v)
        self.focus = _replace(node, fr.idx, v)

    def _check_done(self, m: Monitor, v: Val) -> None:
        self.counters.bump(self.mem.cls_of(m.loc), m.site)
        self.increments.append((self.steps, m.mid, self.mem.cls_of(m.loc), m.site))
        if m.mark is not None:
            self.mem.discard_from(m.mark)

    def refocus(self) -> str:
        """Move the focus to the next redex; returns "redex", "value" or "error"."""
        while True:
            e = self.focus
            if type(e) is Val:
                if not self.frames:
                    return "value"
                self._plug(e)
                continue
            if is_error(e):
                for i in range(len(self.frames) - 1, -1, -1):
                    fr = self.frames[i]
                    if type(fr.node) is Try and fr.node.saved is not None and fr.idx == 0:
                        while len(self.frames) > i:
                            self._pop()
                        self.focus = _replace(fr.node, 0, e)
                        return "redex"
                return "error"
            k = _next_child(e)
            if k < 0:
                return "redex"
            self._push(e, k)
            self.focus = children(e)[k]

    def expression(self):
        """The full running expression."""
        e = self.focus
        for fr in reversed(self.frames):
            e = _replace(fr.node, fr.idx, e)
        return e

    def context(self):
        """Full expression, ancestors of the focus (root first) with child
        indices, and the focus."""
        e = self.focus
        rebuilt = []
        for fr in reversed(self.frames):
            e = _replace(fr.node, fr.idx, e)
            rebuilt.append((e, fr.idx))
        rebuilt.reverse()
        return e, rebuilt, self.focus

    # ---------------------------------------------------------------- stepping

    def step(self) -> bool:
        """Perform one reduction; False once halted."""
        if self.halted:
            return False
        status = self.refocus()
        if status != "redex":
            self.halted = status
            return False
        if self.steps >= self.fuel:
            raise StepBudgetExceeded(f"fuel of {self.fuel} steps exhausted")
        if self.checks:
            outer = self.frames[self.checks[0]].node
            if self.steps - outer.spent >= self.check_fuel:
                depth = self.checks[0]
                while len(self.frames) > depth + 1:
                    self._pop()
                self.focus = Val(False)
                self.last_rule = "check-fuel"
                self.steps += 1
                return True
        self.focus = self.reduce(self.focus)
        self.steps += 1
        return True

    def run(self, observer: Optional[Callable[["Machine"], None]] = None) -> RunResult:
        while True:
            status = self.refocus()
            if status != "redex":
                self.halted = status
                break
            if observer is not None:
                observer(self)
            self.step()
        e = self.expression()
        value = e.value if status == "value" else None
        return RunResult(status, value, self.mem, self.counters, self.steps,
                         self.mem.output_log, e)

    # ---------------------------------------------------------------- rules

    def _monitor(self, l: Loc, body, site: str, rule: str):
        self._mid += 1
        self.events.append(MonitorEvent(self._mid, rule, self.mem.cls_of(l), site, self.steps))
        return Monitor(l, body, Call(Val(l), "invariant", (), True, False), site, mid=self._mid)

    def fidx(self, cls: str, f: str) -> int:
        key = (cls, f)
        i = self._fidx.get(key)
        if i is None:
            i = self.prog.cls(cls).field_index(f)
            self._fidx[key] = i
        return i

    def reduce(self, e):
        t = type(e)
        if t is Call:
            return self.r_call(e)
        if t is FieldGet:
            self.last_rule = "access"
            l = e.recv.value
            o = self.mem.obj(l)
            return Val(o.vals[self.fidx(o.cls, e.name)])
        if t is FieldSet:
            self.last_rule = "update"
            l = e.recv.value
            o = self.mem.obj(l)
            o.vals[self.fidx(o.cls, e.name)] = e.value.value
            self.mem.writes += 1
            if check_events(self.mode, FieldUpdate(o.cls), self.prog):
                return self._monitor(l, Val(l), "field_update", "update")
            return Val(l)
        if t is New:
            self.last_rule = "new"
            if is_list_type(e.cls):
                return Val(self.mem.alloc(e.cls, []))
            l = self.mem.alloc(e.cls, [a.value for a in e.args])
            if check_events(self.mode, CtorExit(e.cls), self.prog):
                return self._monitor(l, Val(l), "ctor", "new")
            return Val(l)
        if t is Monitor:
            self.last_rule = "monitor-exit"
            return e.body
        if t is Let:
            self.last_rule = "let"
            return subst(e.body, {e.name: e.init})
        if t is Seq:
            self.last_rule = "seq"
            return e.second
        if t is If:
            self.last_rule = "if"
            return e.then if e.cond.value is True else e.els
        if t is Prim:
            return self.r_prim(e)
        if t is StaticCall:
            return self.r_static(e)
        if t is For:
            self.last_rule = "for"
            items = self.mem.obj(e.src.value).vals
            if e.index >= len(items):
                return Val(VOID)
            body = subst(e.body, {e.name: Val(items[e.index])})
            return Seq(body, For(e.name, e.type, e.src, e.body, e.index + 1, e.pos), e.pos)
        if t is ForRange:
            self.last_rule = "for"
            a, b = e.start.value, e.end.value
            if a >= b:
                return Val(VOID)
            body = subst(e.body, {e.name: Val(a)})
            return Seq(body, ForRange(e.name, Val(wrap_int(a + 1)), e.end, e.body, e.pos), e.pos)
        if t is Try:
            return self.r_try(e)
        raise StuckError(f"no rule for {t.__name__}")

    def r_try(self, e: Try):
        if e.saved is None:
            self.last_rule = "try-enter"
            return Try(e.body, e.handler, self.mem.snapshot(), e.pos)
        if type(e.body) is Val:
            self.last_rule = "try-ok"
            return e.body
        self.last_rule = "try-error"
        snap = e.saved
        for i in list(self.mem.store):
            if i not in snap.domain:
                del self.mem.store[i]
        now = self.mem.cells(snap.domain)
        if now != snap.cells:
            changed = sorted(i for i in snap.domain if now[i] != snap.cells[i])
            raise SESViolation(f"locations {changed} changed inside a failed try")
        return e.handler

    def r_call(self, e: Call):
        recv = e.recv.value
        args = [a.value for a in e.args]
        if type(recv) is str:
            self.last_rule = "prim"
            return Val(len(recv) == 0 if e.name == "isEmpty" else len(recv))
        if type(recv) is not Loc:
            raise StuckError(f"method {e.name} called on {recv!r}")
        cls = self.mem.cls_of(recv)
        if is_list_type(cls):
            return self.r_list(recv, e.name, args)
        self.last_rule = "mcall"
        prog = self.prog
        md = prog.lookup_method(cls, e.name)
        if self.mode is not ProtocolMode.PAPER and not e.entry_done:
            if check_events(self.mode, McallEntry(cls, e.name, e.qualified), prog):
                entry = self._monitor(recv, Val(recv), "method_entry", "mcall")
                again = Call(e.recv, e.name, e.args, e.qualified, True, e.pos)
                return Seq(entry, again, e.pos)
        env = {"this": e.recv}
        for (_, pn), a in zip(md.params, e.args):
            env[pn] = a
        body = subst(prog.exec_body(cls, e.name), env)
        if self.mode is ProtocolMode.PAPER:
            if prog.is_capsule_mutator(cls, e.name) and check_events(
                    self.mode, CapsuleMutatorExit(cls), prog):
                return self._monitor(recv, body, "capsule_mutator_exit", "mcall")
        elif check_events(self.mode, McallExit(cls, e.name, e.qualified), prog):
            return self._monitor(recv, body, "method_exit", "mcall")
        return body

    def r_static(self, e: StaticCall):
        args = [a.value for a in e.args]
        if is_list_type(e.cls):
            self.last_rule = "new"
            return Val(self.mem.alloc(e.cls, args))
        self.last_rule = "mcall"
        md = self.prog.cls(e.cls).methods[e.name]
        env = {pn: a for (_, pn), a in zip(md.params, e.args)}
        return subst(self.prog.exec_body(e.cls, e.name), env)

    def r_list(self, l: Loc, name: str, args: list):
        self.last_rule = "list"
        items = self.mem.obj(l).vals
        if name == "add":
            items.append(args[0])
            self.mem.writes += 1
            return Val(VOID)
        if name == "get":
            i = args[0]
            if not 0 <= i < len(items):
                return Throw(Val(f"index {i} out of range"))
            return Val(items[i])
        if name == "size":
            return Val(len(items))
        if name == "indexOf":
            for i, x in enumerate(items):
                if _same(x, args[0]):
                    return Val(i)
            return Val(-1)
        if name == "contains":
            return Val(any(_same(x, args[0]) for x in items))
        raise StuckError(f"unknown list operation {name}")

    def r_prim(self, e: Prim):
        self.last_rule = "prim"
        op = e.op
        vs = [a.value for a in e.args]
        if op == "print":
            self.mem.output_log.append(_show(vs[0]))
            return Val(VOID)
        if op == "==":
            return Val(_same(vs[0], vs[1]))
        if op == "!=":
            return Val(not _same(vs[0], vs[1]))
        if op == "!":
            return Val(not vs[0])
        if op == "neg":
            return Val(wrap_int(-vs[0]))
        a, b = vs
        if op == "+" and (type(a) is str or type(b) is str):
            return Val(_show(a) + _show(b))
        if op == "+":
            return Val(wrap_int(a + b))
        if op == "-":
            return Val(wrap_int(a - b))
        if op == "*":
            return Val(wrap_int(a * b))
        if op in ("/", "%"):
            if b == 0:
                return Throw(Val("division by zero"))
            q = abs(a) // abs(b)
            if (a < 0) != (b < 0):
                q = -q
            return Val(wrap_int(q) if op == "/" else wrap_int(a - b * q))
        if op == "<":
            return Val(a < b)
        if op == "<=":
            return Val(a <= b)
        if op == ">":
            return Val(a > b)
        if op == ">=":
            return Val(a >= b)
        raise StuckError(f"unknown primitive {op}")


# ---------------------------------------------------------------- entry points


def run(prog: Program, mode: ProtocolMode = ProtocolMode.PAPER, fuel: Optional[int] = None,
        observer=None) -> RunResult:
    return Machine(prog, mode, fuel).run(observer)


def substitute(body, bindings: dict):
    """Replace free variables by values; every free variable must be bound."""
    from .syntax import free_vars
    missing = free_vars(body) - set(bindings)
    if missing:
        raise UnboundVariable(f"unbound {', '.join(sorted(missing))}")
    return subst(body, {k: v if type(v) is Val else Val(v) for k, v in bindings.items()})


def decompose(e):
    """Classify ``e``: ("value", v), ("error", e) or ("redex", ancestors, redex),
    where ancestors are (node, child index) pairs from the root."""
    path = []
    node = e
    while True:
        if type(node) is Val and not path:
            return ("value", node.value)
        if is_error(node):
            for i in range(len(path) - 1, -1, -1):
                p, idx = path[i]
                if type(p) is Try and p.saved is not None and idx == 0:
                    return ("redex", path[:i], p)
            return ("error", e)
        k = _next_child(node)
        if k < 0:
            return ("redex", path, node)
        path.append((node, k))
        node = children(node)[k]


def trace(prog: Program, mode: ProtocolMode = ProtocolMode.PAPER, fuel: Optional[int] = None,
          limit: Optional[int] = None):
    """Yield (step, rule, redex text, check delta) per step."""
    from .parser import pretty_expr
    m = Machine(prog, mode, fuel)
    while True:
        if m.refocus() != "redex" or (limit is not None and m.steps >= limit):
            break
        redex = pretty_expr(m.focus)
        before = m.counters.total
        m.step()
        m.refocus()
        yield m.steps, m.last_rule, redex, m.counters.total - before
