"""Abstract syntax, values, and class tables for the IVL language.

Surface and runtime expressions share one set of node classes. Runtime-only
forms (``Monitor``, annotated ``Try``, ``Val`` holding a location) are never
produced by the parser.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional, Union


class Mdf(str, Enum):
    MUT = "mut"
    IMM = "imm"
    CAPSULE = "capsule"
    READ = "read"

    def __str__(self) -> str:
        return self.value


_LE = {
    Mdf.CAPSULE: frozenset(Mdf),
    Mdf.MUT: frozenset({Mdf.MUT, Mdf.READ}),
    Mdf.IMM: frozenset({Mdf.IMM, Mdf.READ}),
    Mdf.READ: frozenset({Mdf.READ}),
}


def mdf_le(a: Mdf, b: Mdf) -> bool:
    return b in _LE[a]


def mdf_join(a: Mdf, b: Mdf) -> Mdf:
    if mdf_le(a, b):
        return b
    if mdf_le(b, a):
        return a
    return Mdf.READ


SCALARS = frozenset({"Int", "Bool", "String", "Void"})
LIST = "List"


def is_list_type(cls: str) -> bool:
    return cls.startswith("List<")


def list_elem(cls: str) -> str:
    return cls[5:-1]


@dataclass(frozen=True, slots=True)
class TypeRef:
    mdf: Mdf
    cls: str

    def __str__(self) -> str:
        return f"{self.mdf.value} {self.cls}"

    def with_mdf(self, mdf: Mdf) -> "TypeRef":
        return TypeRef(mdf, self.cls)


def scalar(cls: str) -> TypeRef:
    return TypeRef(Mdf.IMM, cls)


INT = scalar("Int")
BOOL = scalar("Bool")
STRING = scalar("String")
VOID_T = scalar("Void")


# ---------------------------------------------------------------- values


class Loc:
    """A heap location; ids are allocation ordered and never reused."""

    __slots__ = ("id",)

    def __init__(self, id: int) -> None:
        self.id = id

    def __eq__(self, other: object) -> bool:
        return type(other) is Loc and other.id == self.id

    def __hash__(self) -> int:
        return self.id * 2654435761 & 0xFFFFFFFF

    def __repr__(self) -> str:
        return f"#{self.id}"


class _Void:
    __slots__ = ()
    _inst: Optional["_Void"] = None

    def __new__(cls) -> "_Void":
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self) -> str:
        return "void"


VOID = _Void()

Value = Union[Loc, bool, int, str, _Void]

INT_BITS = 64
_INT_MOD = 1 << INT_BITS
_INT_HALF = 1 << (INT_BITS - 1)


def wrap_int(n: int) -> int:
    n &= _INT_MOD - 1
    return n - _INT_MOD if n >= _INT_HALF else n


def value_class(v: Value) -> str:
    if type(v) is bool:
        return "Bool"
    if type(v) is int:
        return "Int"
    if type(v) is str:
        return "String"
    if v is VOID:
        return "Void"
    raise TypeError(f"not a scalar: {v!r}")


# ---------------------------------------------------------------- expressions

Pos = Optional[tuple]


@dataclass(slots=True)
class Var:
    name: str
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(slots=True)
class Val:
    value: Value
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(slots=True)
class Call:
    recv: "Expr"
    name: str
    args: tuple
    # receiver was not syntactically ``this`` at the call site
    qualified: bool = True
    # visible-state modes: entry check already performed
    entry_done: bool = False
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(slots=True)
class StaticCall:
    cls: str
    name: str
    args: tuple
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(slots=True)
class FieldGet:
    recv: "Expr"
    name: str
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(slots=True)
class FieldSet:
    recv: "Expr"
    name: str
    value: "Expr"
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(slots=True)
class New:
    cls: str
    args: tuple
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(slots=True)
class Try:
    body: "Expr"
    handler: "Expr"
    # memory snapshot taken by try-enter; None for a surface try
    saved: Optional["Snapshot"] = field(default=None, compare=False)
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(slots=True)
class Monitor:
    loc: Loc
    body: "Expr"
    check: "Expr"
    site: str
    # allocation counter when the check started evaluating
    mark: Optional[int] = field(default=None, compare=False)
    spent: int = field(default=0, compare=False)
    mid: int = field(default=0, compare=False)
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(slots=True)
class Let:
    name: str
    type: TypeRef
    init: "Expr"
    body: "Expr"
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(slots=True)
class Seq:
    first: "Expr"
    second: "Expr"
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(slots=True)
class If:
    cond: "Expr"
    then: "Expr"
    els: "Expr"
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(slots=True)
class For:
    """``for (T x : src) body``; ``index`` advances once ``src`` is a value."""

    name: str
    type: TypeRef
    src: "Expr"
    body: "Expr"
    index: int = 0
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(slots=True)
class ForRange:
    """``for (Int x = start; x < end; x++) body``."""

    name: str
    start: "Expr"
    end: "Expr"
    body: "Expr"
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(slots=True)
class Prim:
    op: str
    args: tuple
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(slots=True)
class Throw:
    value: "Expr"
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(slots=True)
class Hole:
    """Typing-only placeholder standing for an expression of a given type."""

    type: TypeRef
    pos: Pos = field(default=None, compare=False, repr=False)


Expr = Union[Var, Val, Call, StaticCall, FieldGet, FieldSet, New, Try, Monitor,
             Let, Seq, If, For, ForRange, Prim, Throw, Hole]

BINOPS = {"+", "-", "*", "/", "%", "==", "!=", "<", "<=", ">", ">="}
UNOPS = {"!", "neg", "print"}


class Snapshot:
    """The memory captured by try-enter: domain plus exact field contents."""

    __slots__ = ("domain", "cells", "next_id")

    def __init__(self, domain: frozenset, cells: dict, next_id: int) -> None:
        self.domain = domain
        self.cells = cells
        self.next_id = next_id


def is_value(e: Expr) -> bool:
    return type(e) is Val


def children(e: Expr) -> tuple:
    """Immediate subexpressions in left-to-right order (full context)."""
    t = type(e)
    if t is Call:
        return (e.recv,) + e.args
    if t is StaticCall or t is New or t is Prim:
        return e.args
    if t is FieldGet:
        return (e.recv,)
    if t is FieldSet:
        return (e.recv, e.value)
    if t is Try:
        return (e.body, e.handler)
    if t is Monitor:
        return (e.body, e.check)
    if t is Let:
        return (e.init, e.body)
    if t is Seq:
        return (e.first, e.second)
    if t is If:
        return (e.cond, e.then, e.els)
    if t is For:
        return (e.src, e.body)
    if t is ForRange:
        return (e.start, e.end, e.body)
    if t is Throw:
        return (e.value,)
    return ()


def walk(e: Expr) -> Iterator[Expr]:
    """Pre-order traversal of every subexpression."""
    stack = [e]
    while stack:
        n = stack.pop()
        yield n
        stack.extend(reversed(children(n)))


def locations_in(e: Expr) -> set:
    return {n.value for n in walk(e) if type(n) is Val and type(n.value) is Loc}


def count_loc(e: Expr, loc: Loc) -> int:
    return sum(1 for n in walk(e) if type(n) is Val and n.value == loc)


def free_vars(e: Expr) -> set:
    t = type(e)
    if t is Var:
        return {e.name}
    if t is Let:
        return free_vars(e.init) | (free_vars(e.body) - {e.name})
    if t is For:
        return free_vars(e.src) | (free_vars(e.body) - {e.name})
    if t is ForRange:
        return free_vars(e.start) | free_vars(e.end) | (free_vars(e.body) - {e.name})
    out: set = set()
    for c in children(e):
        out |= free_vars(c)
    return out


def subst(e: Expr, env: dict) -> Expr:
    """Replace free variables by expressions (values are closed, so no capture)."""
    t = type(e)
    if t is Var:
        r = env.get(e.name)
        return e if r is None else r
    if t is Val or t is Hole:
        return e
    if t is Call:
        return Call(subst(e.recv, env), e.name, tuple(subst(a, env) for a in e.args),
                    e.qualified, e.entry_done, e.pos)
    if t is FieldGet:
        return FieldGet(subst(e.recv, env), e.name, e.pos)
    if t is FieldSet:
        return FieldSet(subst(e.recv, env), e.name, subst(e.value, env), e.pos)
    if t is Seq:
        return Seq(subst(e.first, env), subst(e.second, env), e.pos)
    if t is Let:
        inner = env
        if e.name in env:
            inner = {k: v for k, v in env.items() if k != e.name}
        return Let(e.name, e.type, subst(e.init, env), subst(e.body, inner) if inner else e.body, e.pos)
    if t is If:
        return If(subst(e.cond, env), subst(e.then, env), subst(e.els, env), e.pos)
    if t is Prim:
        return Prim(e.op, tuple(subst(a, env) for a in e.args), e.pos)
    if t is StaticCall:
        return StaticCall(e.cls, e.name, tuple(subst(a, env) for a in e.args), e.pos)
    if t is New:
        return New(e.cls, tuple(subst(a, env) for a in e.args), e.pos)
    if t is For:
        inner = {k: v for k, v in env.items() if k != e.name}
        return For(e.name, e.type, subst(e.src, env), subst(e.body, inner) if inner else e.body,
                   e.index, e.pos)
    if t is ForRange:
        inner = {k: v for k, v in env.items() if k != e.name}
        return ForRange(e.name, subst(e.start, env), subst(e.end, env),
                        subst(e.body, inner) if inner else e.body, e.pos)
    if t is Try:
        return Try(subst(e.body, env), subst(e.handler, env), e.saved, e.pos)
    if t is Throw:
        return Throw(subst(e.value, env), e.pos)
    if t is Monitor:
        return Monitor(e.loc, subst(e.body, env), subst(e.check, env), e.site,
                       e.mark, e.spent, e.mid, e.pos)
    raise TypeError(f"unknown node {t.__name__}")


# ---------------------------------------------------------------- declarations


@dataclass(slots=True)
class FieldDecl:
    type: TypeRef
    name: str
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(slots=True)
class MethodDecl:
    receiver: Optional[Mdf]          # None for static methods
    ret: TypeRef
    name: str
    params: tuple                    # of (TypeRef, name)
    body: Optional[Expr]             # None when abstract
    is_static: bool = False
    is_private: bool = False
    is_foreign: bool = False
    throws: tuple = ()
    synthesized: bool = False
    is_capability: bool = False
    pos: Pos = field(default=None, compare=False, repr=False)

    @property
    def is_abstract(self) -> bool:
        return self.body is None


@dataclass(slots=True)
class CtorDecl:
    params: tuple                    # of (TypeRef, name)
    assigns: tuple                   # of (field name, param name), in body order
    pos: Pos = field(default=None, compare=False, repr=False)


@dataclass(slots=True)
class ClassDecl:
    name: str
    kind: str                        # "class" | "interface"
    implements: tuple
    fields: tuple                    # of FieldDecl
    methods: dict                    # name -> MethodDecl
    is_capability_class: bool = False
    annotations: frozenset = frozenset()
    ctor: Optional[CtorDecl] = None
    pos: Pos = field(default=None, compare=False, repr=False)

    def field(self, name: str) -> Optional[FieldDecl]:
        for f in self.fields:
            if f.name == name:
                return f
        return None

    def field_index(self, name: str) -> int:
        for i, f in enumerate(self.fields):
            if f.name == name:
                return i
        raise KeyError(name)

    @property
    def invariant(self) -> MethodDecl:
        return self.methods["invariant"]

    @property
    def has_declared_invariant(self) -> bool:
        m = self.methods.get("invariant")
        return m is not None and not m.synthesized

    @property
    def uniform_access(self) -> bool:
        return "uniform_access" in self.annotations


CAPABILITY_PREFIX = "#$"


class UnknownMethod(LookupError):
    pass


class UnknownClass(LookupError):
    pass


def trivial_invariant() -> MethodDecl:
    return MethodDecl(Mdf.READ, BOOL, "invariant", (), Val(True), synthesized=True)


def cap_class() -> ClassDecl:
    return ClassDecl("Cap", "class", (), (), {"invariant": trivial_invariant()})


@dataclass
class Program:
    classes: dict                    # name -> ClassDecl
    main: Expr
    source_name: str = "<input>"
    user_cap: bool = False           # Cap was declared in the source

    def __post_init__(self) -> None:
        self._cache: dict = {}

    # -- lookups

    def cls(self, name: str) -> ClassDecl:
        c = self.classes.get(name)
        if c is None:
            raise UnknownClass(name)
        return c

    def has_class(self, name: str) -> bool:
        return name in self.classes or name in SCALARS or is_list_type(name)

    def lookup_method(self, cname: str, m: str) -> MethodDecl:
        c = self.cls(cname)
        md = c.methods.get(m)
        if md is not None:
            return md
        for iname in c.implements:
            i = self.classes.get(iname)
            if i is not None and m in i.methods:
                return i.methods[m]
        raise UnknownMethod(f"{cname}.{m}")

    def subtype(self, sub: str, sup: str) -> bool:
        if sub == sup:
            return True
        c = self.classes.get(sub)
        if c is None:
            return False
        return any(self.subtype(i, sup) for i in c.implements)

    # -- derived relations, cached

    def field_inside(self, cname: str, m: str, f: str) -> bool:
        key = ("inside", cname, m, f)
        r = self._cache.get(key)
        if r is None:
            if m == "invariant":
                r = f in invariant_fields(self.cls(cname))
            else:
                body = self.lookup_method(cname, m).body
                r = body is not None and field_inside_expr(body, f)
            self._cache[key] = r
        return r

    def is_capsule_mutator(self, cname: str, m: str) -> bool:
        key = ("cm", cname, m)
        r = self._cache.get(key)
        if r is None:
            r = False
            c = self.cls(cname)
            md = c.methods.get(m)
            if (c.kind == "class" and md is not None and not md.is_static
                    and md.receiver is Mdf.MUT and md.body is not None and m != "invariant"):
                for fd in c.fields:
                    if (fd.type.mdf is Mdf.CAPSULE and self.field_inside(cname, m, fd.name)
                            and self.field_inside(cname, "invariant", fd.name)):
                        r = True
                        break
            self._cache[key] = r
        return r

    def invariant_body(self, cname: str) -> Expr:
        """Invariant body with ``this``-helper calls inlined (bounded depth)."""
        key = ("invbody", cname)
        r = self._cache.get(key)
        if r is None:
            r = inline_helpers(self, cname, self.cls(cname).invariant.body, 0, [0])
            self._cache[key] = r
        return r

    def exec_body(self, cname: str, m: str) -> Expr:
        """The body substituted at call time."""
        key = ("exec", cname, m)
        r = self._cache.get(key)
        if r is None:
            md = self.lookup_method(cname, m)
            if m == "invariant" and not md.is_static:
                r = self.invariant_body(cname)
            else:
                r = md.body
            if md.ret.cls == "Void" and not (type(r) is Val and r.value is VOID):
                r = Seq(r, Val(VOID))
            self._cache[key] = r
        return r

    def static_exec_body(self, cname: str, m: str) -> Expr:
        return self.exec_body(cname, m)

    def is_field_backed(self, cname: str, m: str) -> bool:
        c = self.cls(cname)
        md = c.methods.get(m)
        if md is None or md.body is None or not c.uniform_access:
            return False
        b = md.body
        return (type(b) is FieldGet and type(b.recv) is Var and b.recv.name == "this"
                and c.field(b.name) is not None)


INLINE_DEPTH = 32


class InlineError(Exception):
    pass


def inline_helpers(prog: Program, cname: str, body: Expr, depth: int, counter: list) -> Expr:
    """Macro-expand calls ``this.h(args)`` in an invariant body."""
    if depth > INLINE_DEPTH:
        raise InlineError(f"helper inlining deeper than {INLINE_DEPTH} in {cname}")

    def go(e: Expr) -> Expr:
        t = type(e)
        if t is Call and type(e.recv) is Var and e.recv.name == "this" and e.name != "invariant":
            args = tuple(go(a) for a in e.args)
            md = prog.lookup_method(cname, e.name)
            if md.body is None or md.is_static:
                return Call(e.recv, e.name, args, e.qualified, e.entry_done, e.pos)
            inner = inline_helpers(prog, cname, md.body, depth + 1, counter)
            renames = {}
            fresh = []
            for (pt, pn) in md.params:
                counter[0] += 1
                nn = f"{pn}${counter[0]}"
                renames[pn] = Var(nn)
                fresh.append((pt, nn))
            out = subst(inner, renames) if renames else inner
            for (pt, nn), a in reversed(list(zip(fresh, args))):
                out = Let(nn, pt, a, out, e.pos)
            return out
        if t in (Var, Val, Hole):
            return e
        return rebuild(e, tuple(go(c) for c in children(e)))

    return go(body)


def rebuild(e: Expr, kids: tuple) -> Expr:
    """Copy ``e`` with new children (same order as :func:`children`)."""
    t = type(e)
    if t is Call:
        return Call(kids[0], e.name, kids[1:], e.qualified, e.entry_done, e.pos)
    if t is StaticCall:
        return StaticCall(e.cls, e.name, kids, e.pos)
    if t is New:
        return New(e.cls, kids, e.pos)
    if t is Prim:
        return Prim(e.op, kids, e.pos)
    if t is FieldGet:
        return FieldGet(kids[0], e.name, e.pos)
    if t is FieldSet:
        return FieldSet(kids[0], e.name, kids[1], e.pos)
    if t is Try:
        return Try(kids[0], kids[1], e.saved, e.pos)
    if t is Monitor:
        return Monitor(e.loc, kids[0], kids[1], e.site, e.mark, e.spent, e.mid, e.pos)
    if t is Let:
        return Let(e.name, e.type, kids[0], kids[1], e.pos)
    if t is Seq:
        return Seq(kids[0], kids[1], e.pos)
    if t is If:
        return If(kids[0], kids[1], kids[2], e.pos)
    if t is For:
        return For(e.name, e.type, kids[0], kids[1], e.index, e.pos)
    if t is ForRange:
        return ForRange(e.name, kids[0], kids[1], kids[2], e.pos)
    if t is Throw:
        return Throw(kids[0], e.pos)
    return e


def field_inside_expr(body: Expr, f: str) -> bool:
    for n in walk(body):
        if type(n) is FieldGet and n.name == f and type(n.recv) is Var and n.recv.name == "this":
            return True
    return False


def this_helper_calls(body: Expr) -> list:
    return [n for n in walk(body)
            if type(n) is Call and type(n.recv) is Var and n.recv.name == "this"]


def invariant_fields(c: ClassDecl) -> frozenset:
    """Fields read as ``this.f`` by the invariant or any helper it reaches."""
    inv = c.methods.get("invariant")
    if inv is None or inv.body is None:
        return frozenset()
    seen: set = set()
    out: set = set()
    todo = [inv]
    while todo:
        m = todo.pop()
        if m.name in seen or m.body is None:
            continue
        seen.add(m.name)
        for n in walk(m.body):
            if type(n) is FieldGet and type(n.recv) is Var and n.recv.name == "this":
                out.add(n.name)
        for call in this_helper_calls(m.body):
            h = c.methods.get(call.name)
            if h is not None:
                todo.append(h)
    return frozenset(out)


def this_count(body: Expr) -> int:
    return sum(1 for n in walk(body) if type(n) is Var and n.name == "this")


def lookup_method(prog: Program, cname: str, m: str) -> MethodDecl:
    return prog.lookup_method(cname, m)


def field_inside_method(prog: Program, cname: str, m: str, f: str) -> bool:
    return prog.field_inside(cname, m, f)
