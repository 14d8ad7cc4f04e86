"""Type-modifier checker.

Covers viewpoint adaptation, promotion of mut expressions to capsule/imm,
affine capsule locals, strong-exception-safety masking inside ``try`` and
capability-call restrictions. The same judgement types runtime expressions
(locations, monitors, annotated ``try``) so the soundness oracle can ask
whether retyping one location occurrence breaks typing.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

from .syntax import (
    BOOL, INT, STRING, VOID_T, Call, ClassDecl, FieldGet, FieldSet, For, ForRange,
    Hole, If, Let, Loc, Mdf, Monitor, New, Prim, Program, Seq, StaticCall, Throw, Try,
    TypeRef, Val, Var, children, free_vars, is_list_type, list_elem, mdf_join, mdf_le, SCALARS, value_class,
)
from .wellformed import Diagnostic

KINDS = frozenset({
    "mut-through-read", "read-to-mut", "capsule-reuse", "capability-call-outside",
    "modifier-mismatch", "unknown-name", "promotion-failed", "ses-mut-capture",
})

BOTTOM = TypeRef(Mdf.CAPSULE, "⊥")
ALL = "all"   # every location is masked (unentered try at runtime)


class TypeCheckError(Exception):
    def __init__(self, kind: str, message: str, pos=None) -> None:
        assert kind in KINDS, kind
        self.kind = kind
        self.message = message
        self.pos = pos
        super().__init__(f"{kind}: {message}")

    def diagnostic(self) -> Diagnostic:
        return Diagnostic("error", self.kind, self.pos, self.message)


@dataclass(frozen=True, slots=True)
class Binding:
    type: TypeRef
    masked: bool = False      # seen as read only because of an enclosing try


@dataclass(slots=True)
class TypeEnv:
    vars: dict
    # runtime forms: class of each location, and which locations a try masks
    loc_class: Optional[Callable[[Loc], str]] = None
    masked_locs: object = frozenset()

    def extend(self, name: str, t: TypeRef) -> "TypeEnv":
        v = dict(self.vars)
        v[name] = Binding(t)
        return TypeEnv(v, self.loc_class, self.masked_locs)


@dataclass(frozen=True, slots=True)
class MethodContext:
    enclosing_class: Optional[str]
    receiver_modifier: Optional[Mdf]
    is_capability_context: bool
    where: str = "main"


@dataclass(slots=True)
class _Ty:
    t: TypeRef
    masked: bool = False


def _scalar(name: str) -> TypeRef:
    return TypeRef(Mdf.IMM, name)


def elem_type(list_mdf: Mdf, cls: str) -> TypeRef:
    """Element type of a list seen through a reference; scalars are imm."""
    elem = list_elem(cls)
    if elem in SCALARS:
        return TypeRef(Mdf.IMM, elem)
    return TypeRef(adapt(list_mdf, Mdf.MUT), elem)


def adapt(recv: Mdf, fld: Mdf) -> Mdf:
    """Modifier of a field (or list element) read through a receiver."""
    if fld is Mdf.IMM or recv is Mdf.IMM:
        return Mdf.IMM
    if recv is Mdf.READ or fld is Mdf.READ:
        return Mdf.READ
    return Mdf.MUT


class Checker:
    def __init__(self, prog: Program) -> None:
        self.prog = prog

    # ---------------------------------------------------------------- helpers

    def class_ok(self, cls: str) -> bool:
        if cls == BOTTOM.cls:
            return True
        if is_list_type(cls):
            return self.class_ok(list_elem(cls))
        return self.prog.has_class(cls)

    def subclass(self, a: str, b: str) -> bool:
        if a == b or a == BOTTOM.cls:
            return True
        return self.prog.subtype(a, b)

    def join(self, a: _Ty, b: _Ty, pos) -> _Ty:
        if a.t == BOTTOM:
            return b
        if b.t == BOTTOM:
            return a
        if self.subclass(a.t.cls, b.t.cls):
            cls = b.t.cls
        elif self.subclass(b.t.cls, a.t.cls):
            cls = a.t.cls
        else:
            raise TypeCheckError("modifier-mismatch",
                                 f"branches have unrelated types {a.t} and {b.t}", pos)
        return _Ty(TypeRef(mdf_join(a.t.mdf, b.t.mdf), cls), a.masked or b.masked)

    def require(self, e, got: _Ty, want: TypeRef, env: TypeEnv, what: str) -> None:
        g = got.t
        if g == BOTTOM:
            return
        if not self.subclass(g.cls, want.cls):
            raise TypeCheckError("modifier-mismatch", f"{what}: expected {want}, found {g}", e.pos)
        if mdf_le(g.mdf, want.mdf):
            return
        if want.mdf is Mdf.MUT:
            if got.masked:
                raise TypeCheckError("ses-mut-capture",
                                     f"{what}: a variable declared outside the try is mutated", e.pos)
            kind = "read-to-mut" if g.mdf is Mdf.READ else "modifier-mismatch"
            raise TypeCheckError(kind, f"{what}: expected {want}, found {g}", e.pos)
        if want.mdf in (Mdf.IMM, Mdf.CAPSULE) and g.mdf is Mdf.MUT:
            self.promote(e, env, want.mdf, what)
            return
        raise TypeCheckError("modifier-mismatch", f"{what}: expected {want}, found {g}", e.pos)

    def promote(self, e, env: TypeEnv, target: Mdf, what: str) -> None:
        if type(e) is Var:
            b = env.vars.get(e.name)
            raise TypeCheckError("modifier-mismatch",
                                 f"{what}: {e.name} is {b.type if b else '?'}, {target.value} required",
                                 e.pos)
        bad = sorted(x for x in free_vars_of(e)
                     if x in env.vars and env.vars[x].type.mdf in (Mdf.MUT, Mdf.READ))
        if bad:
            raise TypeCheckError("promotion-failed",
                                 f"{what}: cannot promote to {target.value}; free "
                                 f"{'variable' if len(bad) == 1 else 'variables'} "
                                 f"{', '.join(bad)} not imm or capsule", e.pos)

    def need_cap(self, ctx: MethodContext, what: str, pos) -> None:
        if not ctx.is_capability_context:
            raise TypeCheckError("capability-call-outside",
                                 f"{what} is a capability operation, not allowed in {ctx.where}", pos)

    def decl(self, cls: str, pos) -> ClassDecl:
        c = self.prog.classes.get(cls)
        if c is None:
            raise TypeCheckError("unknown-name", f"unknown class {cls}", pos)
        return c

    # ---------------------------------------------------------------- expressions

    def tc(self, e, env: TypeEnv, ctx: MethodContext) -> _Ty:
        t = type(e)
        if t is Var:
            b = env.vars.get(e.name)
            if b is None:
                raise TypeCheckError("unknown-name", f"unknown variable {e.name}", e.pos)
            return _Ty(b.type, b.masked)
        if t is Val:
            v = e.value
            if type(v) is Loc:
                if env.loc_class is None:
                    raise TypeCheckError("unknown-name", f"location {v!r} in source code", e.pos)
                cls = env.loc_class(v)
                if env.masked_locs == ALL or v in env.masked_locs:
                    return _Ty(TypeRef(Mdf.READ, cls), True)
                return _Ty(TypeRef(Mdf.MUT, cls))
            return _Ty(_scalar(value_class(v)))
        if t is Hole:
            return _Ty(e.type)
        if t is FieldGet:
            return self.tc_field_get(e, env, ctx)
        if t is FieldSet:
            return self.tc_field_set(e, env, ctx)
        if t is Call:
            return self.tc_call(e, env, ctx)
        if t is StaticCall:
            return self.tc_static_call(e, env, ctx)
        if t is New:
            return self.tc_new(e, env, ctx)
        if t is Let:
            if not self.class_ok(e.type.cls):
                raise TypeCheckError("unknown-name", f"unknown class {e.type.cls}", e.pos)
            self.require(e.init, self.tc(e.init, env, ctx), e.type, env, f"initialiser of {e.name}")
            if e.type.mdf is Mdf.CAPSULE:
                check_affine(e.name, e.body)
            return self.tc(e.body, env.extend(e.name, e.type), ctx)
        if t is Seq:
            self.tc(e.first, env, ctx)
            return self.tc(e.second, env, ctx)
        if t is If:
            self.require(e.cond, self.tc(e.cond, env, ctx), BOOL, env, "if condition")
            return self.join(self.tc(e.then, env, ctx), self.tc(e.els, env, ctx), e.pos)
        if t is Prim:
            return self.tc_prim(e, env, ctx)
        if t is Throw:
            v = self.tc(e.value, env, ctx)
            self.require(e.value, v, TypeRef(Mdf.IMM, v.t.cls), env, "thrown value")
            return _Ty(BOTTOM)
        if t is Try:
            return self.tc_try(e, env, ctx)
        if t is Monitor:
            body = self.tc(e.body, env, ctx)
            self.require(e.check, self.tc(e.check, env, ctx), BOOL, env, "monitor check")
            if type(e.check) is Val and e.check.value is False:
                return _Ty(BOTTOM)    # a failed check never yields its body
            return body
        if t is For:
            src = self.tc(e.src, env, ctx)
            if not is_list_type(src.t.cls):
                raise TypeCheckError("modifier-mismatch", f"cannot iterate over {src.t}", e.pos)
            elem = elem_type(src.t.mdf, src.t.cls)
            self.require(e, _Ty(elem, src.masked and elem.mdf is Mdf.READ), e.type, env, f"loop variable {e.name}")
            check_no_outer_capsule(e.body, env, e.name)
            self.tc(e.body, env.extend(e.name, e.type), ctx)
            return _Ty(VOID_T)
        if t is ForRange:
            self.require(e.start, self.tc(e.start, env, ctx), INT, env, "loop start")
            self.require(e.end, self.tc(e.end, env, ctx), INT, env, "loop bound")
            check_no_outer_capsule(e.body, env, e.name)
            self.tc(e.body, env.extend(e.name, INT), ctx)
            return _Ty(VOID_T)
        raise TypeCheckError("unknown-name", f"unexpected {t.__name__}", getattr(e, "pos", None))

    def tc_field_get(self, e: FieldGet, env, ctx) -> _Ty:
        r = self.tc(e.recv, env, ctx)
        f = self.field_decl(r.t, e.name, e.pos)
        m = adapt(r.t.mdf, f.type.mdf)
        return _Ty(TypeRef(m, f.type.cls), r.masked and m is Mdf.READ)

    def field_decl(self, rt: TypeRef, name: str, pos):
        if rt.cls in SCALARS or is_list_type(rt.cls) or rt == BOTTOM:
            raise TypeCheckError("unknown-name", f"{rt.cls} has no field {name}", pos)
        c = self.decl(rt.cls, pos)
        f = c.field(name)
        if f is None:
            raise TypeCheckError("unknown-name", f"{rt.cls} has no field {name}", pos)
        return f

    def tc_field_set(self, e: FieldSet, env, ctx) -> _Ty:
        r = self.tc(e.recv, env, ctx)
        f = self.field_decl(r.t, e.name, e.pos)
        if not mdf_le(r.t.mdf, Mdf.MUT):
            if r.masked:
                raise TypeCheckError("ses-mut-capture",
                                     f"update of {e.name} mutates an object from outside the try", e.pos)
            raise TypeCheckError("mut-through-read",
                                 f"update of {e.name} through a {r.t.mdf.value} receiver", e.pos)
        self.require(e.value, self.tc(e.value, env, ctx), f.type, env, f"value for field {e.name}")
        return _Ty(TypeRef(Mdf.MUT, r.t.cls))

    def tc_args(self, args, params, env, ctx, what: str) -> None:
        if len(args) != len(params):
            raise TypeCheckError("modifier-mismatch",
                                 f"{what} expects {len(params)} arguments, got {len(args)}",
                                 args[0].pos if args else None)
        for a, (pt, pn) in zip(args, params):
            self.require(a, self.tc(a, env, ctx), pt, env, f"argument {pn} of {what}")

    def tc_call(self, e: Call, env, ctx) -> _Ty:
        r = self.tc(e.recv, env, ctx)
        rt = r.t
        if rt == BOTTOM:
            for a in e.args:
                self.tc(a, env, ctx)
            return _Ty(BOTTOM)
        if is_list_type(rt.cls):
            return self.tc_list_call(e, r, env, ctx)
        if rt.cls == "String":
            if e.name in ("isEmpty", "size") and not e.args:
                return _Ty(BOOL if e.name == "isEmpty" else INT)
            raise TypeCheckError("unknown-name", f"String has no method {e.name}", e.pos)
        if rt.cls in SCALARS:
            raise TypeCheckError("unknown-name", f"{rt.cls} has no method {e.name}", e.pos)
        self.decl(rt.cls, e.pos)
        try:
            md = self.prog.lookup_method(rt.cls, e.name)
        except LookupError:
            raise TypeCheckError("unknown-name", f"{rt.cls} has no method {e.name}", e.pos) from None
        if md.is_static:
            raise TypeCheckError("unknown-name", f"{rt.cls}.{e.name} is static", e.pos)
        what = f"{rt.cls}.{e.name}"
        if md.is_capability:
            self.need_cap(ctx, f"call to {what}", e.pos)
        self.require(e.recv, r, TypeRef(md.receiver, rt.cls), env, f"receiver of {what}")
        self.tc_args(e.args, md.params, env, ctx, what)
        return _Ty(md.ret)

    def tc_list_call(self, e: Call, r: _Ty, env, ctx) -> _Ty:
        rt = r.t
        elem = list_elem(rt.cls)
        name = e.name
        what = f"{rt.cls}.{name}"
        if name == "add":
            self.require(e.recv, r, TypeRef(Mdf.MUT, rt.cls), env, f"receiver of {what}")
            self.tc_args(e.args, ((elem_type(Mdf.MUT, rt.cls), "elem"),), env, ctx, what)
            return _Ty(VOID_T)
        if name == "get":
            self.tc_args(e.args, ((INT, "index"),), env, ctx, what)
            got = elem_type(rt.mdf, rt.cls)
            return _Ty(got, r.masked and got.mdf is Mdf.READ)
        if name == "size":
            self.tc_args(e.args, (), env, ctx, what)
            return _Ty(INT)
        if name in ("indexOf", "contains"):
            self.tc_args(e.args, ((TypeRef(Mdf.READ, elem), "elem"),), env, ctx, what)
            return _Ty(INT if name == "indexOf" else BOOL)
        raise TypeCheckError("unknown-name", f"{rt.cls} has no method {name}", e.pos)

    def tc_static_call(self, e: StaticCall, env, ctx) -> _Ty:
        if is_list_type(e.cls):
            if e.name != "of" or not self.class_ok(e.cls):
                raise TypeCheckError("unknown-name", f"unknown static method {e.cls}.{e.name}", e.pos)
            elem = elem_type(Mdf.MUT, e.cls)
            self.tc_args(e.args, tuple((elem, f"#{i}") for i in range(len(e.args))), env, ctx,
                         f"{e.cls}.of")
            return _Ty(TypeRef(Mdf.MUT, e.cls))
        c = self.decl(e.cls, e.pos)
        md = c.methods.get(e.name)
        if md is None or not md.is_static:
            raise TypeCheckError("unknown-name", f"unknown static method {e.cls}.{e.name}", e.pos)
        what = f"{e.cls}.{e.name}"
        if md.is_capability:
            self.need_cap(ctx, f"call to {what}", e.pos)
        self.tc_args(e.args, md.params, env, ctx, what)
        return _Ty(md.ret)

    def tc_new(self, e: New, env, ctx) -> _Ty:
        if is_list_type(e.cls):
            if e.args or not self.class_ok(e.cls):
                raise TypeCheckError("modifier-mismatch", f"new {e.cls} takes no arguments", e.pos)
            return _Ty(TypeRef(Mdf.MUT, e.cls))
        c = self.decl(e.cls, e.pos)
        if c.kind != "class" or e.cls in SCALARS:
            raise TypeCheckError("unknown-name", f"cannot instantiate {e.cls}", e.pos)
        if c.is_capability_class:
            self.need_cap(ctx, f"constructor of capability class {e.cls}", e.pos)
        self.tc_args(e.args, tuple((f.type, f.name) for f in c.fields), env, ctx, f"new {e.cls}")
        return _Ty(TypeRef(Mdf.MUT, e.cls))

    def tc_prim(self, e: Prim, env, ctx) -> _Ty:
        op = e.op
        ts = [self.tc(a, env, ctx) for a in e.args]
        if op == "print":
            return _Ty(VOID_T)
        if op in ("==", "!="):
            return _Ty(BOOL)
        if op == "!":
            self.require(e.args[0], ts[0], BOOL, env, "operand of !")
            return _Ty(BOOL)
        if op == "neg":
            self.require(e.args[0], ts[0], INT, env, "operand of -")
            return _Ty(INT)
        if op == "+" and any(t.t.cls == "String" for t in ts):
            for a, t in zip(e.args, ts):
                if t.t.cls not in SCALARS and t.t != BOTTOM:
                    raise TypeCheckError("modifier-mismatch", f"cannot concatenate {t.t}", a.pos)
            return _Ty(STRING)
        for a, t in zip(e.args, ts):
            self.require(a, t, INT, env, f"operand of {op}")
        return _Ty(BOOL if op in ("<", "<=", ">", ">=") else INT)

    def tc_try(self, e: Try, env: TypeEnv, ctx) -> _Ty:
        masked = {}
        for x, b in env.vars.items():
            if b.type.mdf in (Mdf.MUT, Mdf.CAPSULE):
                masked[x] = Binding(TypeRef(Mdf.READ, b.type.cls), True)
            else:
                masked[x] = b
        locs = env.masked_locs
        if env.loc_class is not None and locs != ALL:
            locs = ALL if e.saved is None else frozenset(locs) | e.saved.domain
        body = self.tc(e.body, TypeEnv(masked, env.loc_class, locs), ctx)
        handler = self.tc(e.handler, env, ctx)
        return self.join(body, handler, e.pos)


# ---------------------------------------------------------------- syntactic checks


def free_vars_of(e) -> set:
    return free_vars(e)


def _uses(name: str, e) -> int:
    """Uses of ``name`` on one execution path; loop bodies count as many."""
    t = type(e)
    if t is Var:
        return 1 if e.name == name else 0
    if t is Let:
        n = _uses(name, e.init)
        return n if e.name == name else n + _uses(name, e.body)
    if t is If:
        return _uses(name, e.cond) + max(_uses(name, e.then), _uses(name, e.els))
    if t is Try:
        return max(_uses(name, e.body), _uses(name, e.handler)) + (
            1 if _uses(name, e.body) and _uses(name, e.handler) else 0)
    if t is For or t is ForRange:
        head = _uses(name, e.src) if t is For else _uses(name, e.start) + _uses(name, e.end)
        if e.name == name:
            return head
        return head + 2 * _uses(name, e.body)
    return sum(_uses(name, c) for c in children(e))


def check_affine(name: str, body) -> None:
    n = _uses(name, body)
    if n > 1:
        raise TypeCheckError("capsule-reuse", f"capsule variable {name} used more than once",
                             getattr(body, "pos", None))


def check_no_outer_capsule(body, env: TypeEnv, bound: str) -> None:
    for x in free_vars_of(body) - {bound}:
        b = env.vars.get(x)
        if b is not None and b.type.mdf is Mdf.CAPSULE and not b.masked:
            raise TypeCheckError("capsule-reuse", f"capsule variable {x} used inside a loop",
                                 getattr(body, "pos", None))


# ---------------------------------------------------------------- entry points


def method_context(prog: Program, cname: str, md) -> MethodContext:
    c = prog.cls(cname)
    cap = md.is_capability or cname == "Cap" or (
        c.is_capability_class and md.receiver in (Mdf.MUT, Mdf.CAPSULE))
    return MethodContext(cname, md.receiver, cap, f"{cname}.{md.name}")


MAIN_CONTEXT = MethodContext(None, None, True, "main")


def typecheck_expr(prog: Program, env: TypeEnv, ctx: MethodContext, e) -> TypeRef:
    return Checker(prog).tc(e, env, ctx).t


def try_promote(prog: Program, env: TypeEnv, ctx: MethodContext, e, target: Mdf) -> TypeRef:
    ch = Checker(prog)
    got = ch.tc(e, env, ctx)
    want = TypeRef(target, got.t.cls)
    ch.require(e, got, want, env, "promoted expression")
    return want


def typecheck_try(prog: Program, env: TypeEnv, ctx: MethodContext, try_e, catch_e) -> TypeRef:
    return Checker(prog).tc_try(Try(try_e, catch_e), env, ctx).t


def is_pure_method(prog: Program, cname: str, m: str) -> bool:
    md = prog.lookup_method(cname, m)
    mdfs = [p.mdf for p, _ in md.params]
    if md.receiver is not None:
        mdfs.append(md.receiver)
    return all(x in (Mdf.READ, Mdf.IMM) for x in mdfs)


def check_method(prog: Program, c: ClassDecl, md) -> None:
    ch = Checker(prog)
    for t in [md.ret] + [p for p, _ in md.params]:
        if not ch.class_ok(t.cls):
            raise TypeCheckError("unknown-name", f"unknown class {t.cls} in {c.name}.{md.name}", md.pos)
    if md.body is None:
        return
    vars = {}
    if not md.is_static:
        vars["this"] = Binding(TypeRef(md.receiver, c.name))
    for t, x in md.params:
        vars[x] = Binding(t)
        if t.mdf is Mdf.CAPSULE:
            check_affine(x, md.body)
    env = TypeEnv(vars)
    ctx = method_context(prog, c.name, md)
    got = ch.tc(md.body, env, ctx)
    if md.ret.cls != "Void":
        ch.require(md.body, got, md.ret, env, f"result of {c.name}.{md.name}")


def typecheck_program(prog: Program) -> list[Diagnostic]:
    """One diagnostic per failing method body (and for main)."""
    out = []
    ch = Checker(prog)
    for c in prog.classes.values():
        for f in c.fields:
            if not ch.class_ok(f.type.cls):
                out.append(Diagnostic("error", "unknown-name", f.pos,
                                      f"unknown class {f.type.cls} for field {c.name}.{f.name}"))
        for md in c.methods.values():
            if md.synthesized:
                continue
            try:
                check_method(prog, c, md)
            except TypeCheckError as err:
                out.append(err.diagnostic())
    try:
        env = TypeEnv({"c": Binding(TypeRef(Mdf.MUT, "Cap"))})
        ch.tc(prog.main, env, MAIN_CONTEXT)
    except TypeCheckError as err:
        out.append(err.diagnostic())
    return out


# ---------------------------------------------------------------- runtime forms


def type_runtime(prog: Program, loc_class: Callable[[Loc], str], e) -> TypeRef:
    """Type a closed runtime expression; locations are typed ``mut`` by class."""
    env = TypeEnv({}, loc_class, frozenset())
    ctx = MethodContext(None, None, True, "runtime")
    return Checker(prog).tc(e, env, ctx).t


def runtime_typable(prog: Program, loc_class, e) -> bool:
    try:
        type_runtime(prog, loc_class, e)
        return True
    except TypeCheckError:
        return False
