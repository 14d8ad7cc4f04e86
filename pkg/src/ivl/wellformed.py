"""Static well-formedness checks: receiver forms, Cap rules, invariant and
capsule-mutator restrictions, interface conformance."""
from __future__ import annotations

from dataclasses import dataclass

from .syntax import (
    BOOL, INLINE_DEPTH, Call, ClassDecl, FieldGet, FieldSet, Mdf, MethodDecl, New,
    Program, Val, Var, invariant_fields, this_count, walk,
)

RULES = frozenset({
    "fields-instance-private",
    "cap-no-new", "cap-mut-receiver", "cap-mut-field", "cap-invariant-true",
    "inv-receiver", "inv-params", "inv-return", "inv-this-use", "inv-helper-recursion",
    "cm-this-once", "cm-param-modifier", "cm-mut-return", "cm-throws",
    "interface-shape", "interface-impl", "unknown-annotation",
})

KNOWN_ANNOTATIONS = frozenset({"uniform_access"})


@dataclass(frozen=True)
class Diagnostic:
    severity: str
    rule_id: str
    pos: tuple | None
    message: str

    def render(self, filename: str) -> str:
        line, col = self.pos if self.pos else (0, 0)
        return f"{filename}:{line}:{col}: {self.severity}[{self.rule_id}]: {self.message}"

    def record(self, filename: str) -> dict:
        line, col = self.pos if self.pos else (0, 0)
        return {"file": filename, "line": line, "col": col, "severity": self.severity,
                "rule_id": self.rule_id, "message": self.message}


def _err(rule: str, pos, msg: str) -> Diagnostic:
    assert rule in RULES, rule
    return Diagnostic("error", rule, pos, msg)


def _is_this(e) -> bool:
    return type(e) is Var and e.name == "this"


# ---------------------------------------------------------------- invariants


def _helper_ok(c: ClassDecl, m: MethodDecl, good: set) -> bool:
    if m.is_static or m.body is None or m.receiver is not Mdf.READ:
        return False
    return not _bad_this_uses(c, m.body, good)


def _bad_this_uses(c: ClassDecl, body, good: set) -> list:
    """``this`` occurrences that are neither imm/capsule field reads nor
    calls to approved helpers."""
    allowed = set()
    for n in walk(body):
        if type(n) is FieldGet and _is_this(n.recv):
            f = c.field(n.name)
            if f is not None and f.type.mdf in (Mdf.IMM, Mdf.CAPSULE):
                allowed.add(id(n.recv))
        elif type(n) is Call and _is_this(n.recv) and n.name in good:
            allowed.add(id(n.recv))
    return [n for n in walk(body) if _is_this(n) and id(n) not in allowed]


def helper_closure(c: ClassDecl) -> set:
    """Greatest fixpoint of instance methods usable from an invariant."""
    good = {n for n, m in c.methods.items() if n != "invariant"}
    changed = True
    while changed:
        changed = False
        for n in sorted(good):
            if not _helper_ok(c, c.methods[n], good):
                good.discard(n)
                changed = True
    return good


def _helper_depth(c: ClassDecl, start: MethodDecl) -> tuple[bool, int]:
    """(recursive?, max depth) of the ``this``-call graph below ``start``."""
    memo: dict[str, int] = {}
    onstack: set[str] = set()
    recursive = False

    def depth(m: MethodDecl) -> int:
        nonlocal recursive
        if m.name in memo:
            return memo[m.name]
        if m.name in onstack:
            recursive = True
            return 0
        onstack.add(m.name)
        d = 0
        for n in walk(m.body) if m.body is not None else ():
            if type(n) is Call and _is_this(n.recv) and n.name in c.methods:
                d = max(d, 1 + depth(c.methods[n.name]))
        onstack.discard(m.name)
        memo[m.name] = d
        return d

    d = depth(start)
    return recursive, d


def check_invariant_method(c: ClassDecl) -> list[Diagnostic]:
    if c.kind != "class":
        return []
    inv = c.methods.get("invariant")
    if inv is None or inv.synthesized:
        return []
    out = []
    where = f"{c.name}.invariant"
    if inv.is_static or inv.receiver is not Mdf.READ:
        out.append(_err("inv-receiver", inv.pos, f"{where} must be a read method"))
    if inv.params:
        out.append(_err("inv-params", inv.pos, f"{where} must not take parameters"))
    if inv.ret != BOOL:
        out.append(_err("inv-return", inv.pos, f"{where} must return imm Bool"))
    if inv.body is None:
        return out
    good = helper_closure(c)
    recursive, depth = _helper_depth(c, inv)
    if recursive:
        out.append(_err("inv-helper-recursion", inv.pos,
                        f"{where} reaches a recursive chain of helper calls on this"))
    elif depth > INLINE_DEPTH:
        out.append(_err("inv-helper-recursion", inv.pos,
                        f"{where} helper chain deeper than {INLINE_DEPTH}"))
    for n in _bad_this_uses(c, inv.body, good):
        out.append(_err("inv-this-use", n.pos,
                        f"{where} may use this only to read imm or capsule fields "
                        f"or to call such helpers"))
    return out


# ---------------------------------------------------------------- capsule mutators


def capsule_mutators(c: ClassDecl) -> list[MethodDecl]:
    """Mut methods reading a capsule field that the invariant also reads."""
    if c.kind != "class" or not c.has_declared_invariant:
        return []
    inv_fields = invariant_fields(c)
    caps = {f.name for f in c.fields if f.type.mdf is Mdf.CAPSULE and f.name in inv_fields}
    out = []
    for m in c.methods.values():
        if m.name == "invariant" or m.is_static or m.body is None or m.receiver is not Mdf.MUT:
            continue
        used = {n.name for n in walk(m.body) if type(n) is FieldGet and _is_this(n.recv)}
        if used & caps:
            out.append(m)
    return out


def check_capsule_mutators(c: ClassDecl) -> list[Diagnostic]:
    out = []
    for m in capsule_mutators(c):
        where = f"{c.name}.{m.name}"
        k = this_count(m.body)
        if k != 1:
            out.append(_err("cm-this-once", m.pos,
                            f"capsule mutator {where} uses this {k} times; exactly once is allowed"))
        for t, x in m.params:
            if t.mdf in (Mdf.MUT, Mdf.READ):
                out.append(_err("cm-param-modifier", m.pos,
                                f"capsule mutator {where} parameter {x} is {t.mdf.value}; "
                                f"only imm or capsule parameters are allowed"))
        if m.ret.mdf is Mdf.MUT:
            out.append(_err("cm-mut-return", m.pos,
                            f"capsule mutator {where} must not return mut"))
        if m.throws:
            out.append(_err("cm-throws", m.pos,
                            f"capsule mutator {where} must have an empty throws clause"))
    return out


# ---------------------------------------------------------------- receivers and Cap


def _receiver_diags(body, in_method: bool, where: str) -> list[Diagnostic]:
    out = []
    for n in walk(body):
        if type(n) in (FieldGet, FieldSet):
            r = n.recv
            ok = _is_this(r) if in_method else (type(r) is Val and not isinstance(r.value, (bool, int, str)))
            if not ok:
                kind = "update" if type(n) is FieldSet else "access"
                form = "this.f" if in_method else "l.f"
                out.append(_err("fields-instance-private", n.pos,
                                f"field {kind} of {n.name} in {where} must have the form {form}"))
    return out


def check_receiver_forms(prog: Program) -> list[Diagnostic]:
    out = []
    for c in prog.classes.values():
        for m in c.methods.values():
            if m.body is not None and not m.synthesized:
                out += _receiver_diags(m.body, True, f"{c.name}.{m.name}")
    out += _receiver_diags(prog.main, False, "main")
    return out


def check_cap_rules(prog: Program) -> list[Diagnostic]:
    out = []
    bodies = [m.body for c in prog.classes.values() for m in c.methods.values() if m.body is not None]
    bodies.append(prog.main)
    for b in bodies:
        for n in walk(b):
            if type(n) is New and n.cls == "Cap":
                out.append(_err("cap-no-new", n.pos, "instances of Cap cannot be created"))
    cap = prog.classes.get("Cap")
    if cap is None:
        return out
    for m in cap.methods.values():
        if m.name == "invariant":
            if not m.synthesized and not (type(m.body) is Val and m.body.value is True):
                out.append(_err("cap-invariant-true", m.pos, "Cap.invariant must be exactly true"))
        elif m.is_static or m.receiver is not Mdf.MUT:
            out.append(_err("cap-mut-receiver", m.pos, f"Cap.{m.name} must take a mut receiver"))
    for f in cap.fields:
        if f.type.mdf is not Mdf.MUT:
            out.append(_err("cap-mut-field", f.pos, f"Cap.{f.name} must be a mut field"))
    return out


# ---------------------------------------------------------------- interfaces


def check_interfaces(prog: Program) -> list[Diagnostic]:
    out = []
    for c in prog.classes.values():
        if c.kind == "interface":
            if c.fields:
                out.append(_err("interface-shape", c.pos, f"interface {c.name} may not declare fields"))
            for m in c.methods.values():
                if m.body is not None:
                    out.append(_err("interface-shape", m.pos,
                                    f"interface method {c.name}.{m.name} must be abstract"))
            continue
        for m in c.methods.values():
            if m.body is None:
                out.append(_err("interface-shape", m.pos, f"class method {c.name}.{m.name} needs a body"))
        for iname in c.implements:
            i = prog.classes.get(iname)
            if i is None or i.kind != "interface":
                out.append(_err("interface-impl", c.pos, f"{c.name} implements non-interface {iname}"))
                continue
            for im in i.methods.values():
                if im.name == "invariant" and im.synthesized:
                    continue
                cm = c.methods.get(im.name)
                if cm is None:
                    out.append(_err("interface-impl", c.pos, f"{c.name} does not implement {iname}.{im.name}"))
                elif (cm.receiver, cm.ret, tuple(t for t, _ in cm.params)) != (
                        im.receiver, im.ret, tuple(t for t, _ in im.params)):
                    out.append(_err("interface-impl", cm.pos,
                                    f"{c.name}.{im.name} must match the signature in {iname}"))
    return out


def check_annotations(prog: Program) -> list[Diagnostic]:
    out = []
    for c in prog.classes.values():
        for a in sorted(c.annotations - KNOWN_ANNOTATIONS):
            out.append(Diagnostic("warning", "unknown-annotation", c.pos, f"unknown annotation @{a}"))
    return out


def check_program(prog: Program) -> list[Diagnostic]:
    out: list[Diagnostic] = []
    out += check_receiver_forms(prog)
    out += check_cap_rules(prog)
    out += check_interfaces(prog)
    out += check_annotations(prog)
    for c in prog.classes.values():
        out += check_invariant_method(c)
        out += check_capsule_mutators(c)
    return out
