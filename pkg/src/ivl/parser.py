"""Lexer, recursive-descent parser, and pretty-printer for ``.ivl`` sources."""
from __future__ import annotations

import re
from dataclasses import dataclass

from .syntax import (
    BOOL, CAPABILITY_PREFIX, INT, VOID, Call, ClassDecl, CtorDecl, FieldDecl,
    FieldGet, FieldSet, For, ForRange, If, Let, Mdf, MethodDecl, New, Prim,
    Program, Seq, StaticCall, Throw, Try, TypeRef, Val, Var, cap_class,
    trivial_invariant, SCALARS,
)


class ParseError(Exception):
    def __init__(self, msg: str, pos: tuple | None = None) -> None:
        self.msg = msg
        self.pos = pos
        where = f"{pos[0]}:{pos[1]}: " if pos else ""
        super().__init__(f"{where}{msg}")


class StandardFormError(ParseError):
    pass


@dataclass(slots=True)
class Token:
    kind: str      # ident, int, string, op, eof
    text: str
    pos: tuple


KEYWORDS = {
    "class", "interface", "capability", "implements", "method", "static", "private",
    "foreign", "return", "new", "if", "else", "for", "try", "catch", "throw", "throws",
    "true", "false", "void", "this", "main", "print",
}
MDFS = {"mut", "imm", "capsule", "read"}

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>//[^\n]*|/\*.*?\*/)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<int>\d+)
  | (?P<ident>(?:\#\$)?[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>:=|==|!=|<=|>=|&&|\|\||\+=|\+\+|[{}()\[\],;.=<>+\-*/%!:@])
""", re.VERBOSE | re.DOTALL)


def tokenize(src: str) -> list[Token]:
    out: list[Token] = []
    i, line, col = 0, 1, 1
    while i < len(src):
        m = _TOKEN_RE.match(src, i)
        if m is None:
            raise ParseError(f"unexpected character {src[i]!r}", (line, col))
        kind = m.lastgroup
        text = m.group()
        if kind == "ident" or kind == "int" or kind == "string" or kind == "op":
            out.append(Token(kind, text, (line, col)))
        nls = text.count("\n")
        if nls:
            line += nls
            col = len(text) - text.rfind("\n")
        else:
            col += len(text)
        i = m.end()
    out.append(Token("eof", "", (line, col)))
    return out


def _unescape(s: str) -> str:
    body = s[1:-1]
    return re.sub(r"\\(.)", lambda m: {"n": "\n", "t": "\t"}.get(m.group(1), m.group(1)), body)


class Parser:
    def __init__(self, src: str, name: str = "<input>") -> None:
        self.toks = tokenize(src)
        self.i = 0
        self.name = name

    # -- token helpers

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at(self, text: str) -> bool:
        t = self.tok
        return t.text == text and t.kind in ("op", "ident")

    def eat(self, text: str) -> Token:
        t = self.tok
        if t.text != text or t.kind not in ("op", "ident"):
            raise ParseError(f"expected {text!r}, found {t.text or 'end of input'!r}", t.pos)
        self.i += 1
        return t

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    def ident(self) -> Token:
        t = self.tok
        if t.kind != "ident" or t.text in KEYWORDS or t.text in MDFS:
            raise ParseError(f"expected identifier, found {t.text or 'end of input'!r}", t.pos)
        self.i += 1
        return t

    # -- types

    def _is_type_name_at(self, k: int) -> int:
        """Length in tokens of a type name starting at offset k, or 0."""
        t = self.peek(k)
        if t.kind != "ident" or t.text in KEYWORDS or t.text in MDFS:
            return 0
        if t.text == "List" and self.peek(k + 1).text == "<":
            if self.peek(k + 2).kind == "ident" and self.peek(k + 3).text == ">":
                return 4
            return 0
        return 1

    def type_name(self) -> str:
        t = self.ident()
        if t.text == "List" and self.at("<"):
            self.eat("<")
            inner = self.ident().text
            self.eat(">")
            return f"List<{inner}>"
        return t.text

    def mdf_opt(self) -> Mdf | None:
        t = self.tok
        if t.kind == "ident" and t.text in MDFS:
            self.i += 1
            return Mdf(t.text)
        return None

    def type_ref(self) -> TypeRef:
        m = self.mdf_opt()
        name = self.type_name()
        return _norm(TypeRef(m or Mdf.IMM, name))

    # -- program

    def program(self) -> Program:
        classes: dict[str, ClassDecl] = {}
        user_cap = False
        while not self.at("main"):
            if self.tok.kind == "eof":
                raise ParseError("missing main block", self.tok.pos)
            c = self.class_decl()
            if c.name in classes:
                raise ParseError(f"duplicate class {c.name}", c.pos)
            if c.name == "Cap":
                user_cap = True
            classes[c.name] = c
        self.eat("main")
        main = self.block()
        if self.tok.kind != "eof":
            raise ParseError(f"unexpected {self.tok.text!r} after main", self.tok.pos)
        if "Cap" not in classes:
            classes["Cap"] = cap_class()
        return Program(classes, main, self.name, user_cap)

    def class_decl(self) -> ClassDecl:
        annotations = set()
        while self.accept("@"):
            annotations.add(self.ident().text)
        start = self.tok.pos
        cap = self.accept("capability")
        if self.accept("interface"):
            kind = "interface"
        else:
            self.eat("class")
            kind = "class"
        name = self.ident().text
        impls: list[str] = []
        if self.accept("implements"):
            impls.append(self.ident().text)
            while self.accept(","):
                impls.append(self.ident().text)
        self.eat("{")
        fields: list[FieldDecl] = []
        methods: dict[str, MethodDecl] = {}
        ctor: CtorDecl | None = None
        while not self.accept("}"):
            mem = self.member(name)
            if isinstance(mem, FieldDecl):
                if any(f.name == mem.name for f in fields):
                    raise ParseError(f"duplicate field {mem.name}", mem.pos)
                fields.append(mem)
            elif isinstance(mem, CtorDecl):
                if ctor is not None:
                    raise ParseError(f"duplicate constructor for {name}", mem.pos)
                ctor = mem
            else:
                if mem.name in methods:
                    raise ParseError(f"duplicate method {mem.name} (no overloading)", mem.pos)
                methods[mem.name] = mem
        if kind == "class":
            if ctor is not None:
                _check_standard_form(name, fields, ctor)
            if "invariant" not in methods:
                methods["invariant"] = trivial_invariant()
        return ClassDecl(name, kind, tuple(impls), tuple(fields), methods, cap,
                         frozenset(annotations), ctor, start)

    def member(self, cname: str):
        start = self.tok.pos
        is_private = is_static = is_foreign = False
        while True:
            if self.accept("private"):
                is_private = True
            elif self.accept("static"):
                is_static = True
            elif self.accept("foreign"):
                is_foreign = True
            else:
                break
        if self.tok.kind == "ident" and self.tok.text == cname and self.peek().text == "(":
            return self.ctor_decl(start)
        mdfs: list[Mdf] = []
        while len(mdfs) < 2:
            m = self.mdf_opt()
            if m is None:
                break
            mdfs.append(m)
        if self.accept("method"):
            if len(mdfs) > 1 or (is_static and mdfs):
                raise ParseError("bad modifiers before 'method'", start)
            receiver = None if is_static else (mdfs[0] if mdfs else Mdf.IMM)
            ret = self.type_ref()
        else:
            tname = self.type_name()
            ntok = self.ident()
            if self.accept(";"):
                if is_static or is_private or is_foreign or len(mdfs) > 1:
                    raise ParseError("bad field declaration", start)
                return FieldDecl(_norm(TypeRef(mdfs[0] if mdfs else Mdf.IMM, tname)), ntok.text, start)
            if is_static:
                if len(mdfs) > 1:
                    raise ParseError("static methods have no receiver modifier", start)
                receiver, rm = None, (mdfs[0] if mdfs else Mdf.IMM)
            elif len(mdfs) == 2:
                receiver, rm = mdfs
            else:
                # a lone modifier belongs to the receiver
                receiver, rm = (mdfs[0] if mdfs else Mdf.IMM), Mdf.IMM
            ret = _norm(TypeRef(rm, tname))
            self.i -= 1
        ntok = self.ident()
        params = self.params()
        throws: list[str] = []
        if self.accept("throws"):
            throws.append(self.ident().text)
            while self.accept(","):
                throws.append(self.ident().text)
        body = None
        if not self.accept(";"):
            body = self.block()
        name = ntok.text
        return MethodDecl(receiver, ret, name, params, body, is_static, is_private, is_foreign,
                          tuple(throws), False,
                          name.startswith(CAPABILITY_PREFIX) or is_foreign, start)

    def params(self) -> tuple:
        self.eat("(")
        ps = []
        if not self.at(")"):
            while True:
                t = self.type_ref()
                ps.append((t, self.ident().text))
                if not self.accept(","):
                    break
        self.eat(")")
        return tuple(ps)

    def ctor_decl(self, start: tuple) -> CtorDecl:
        self.ident()
        params = self.params()
        self.eat("{")
        assigns = []
        while not self.accept("}"):
            p = self.tok.pos
            self.eat("this")
            self.eat(".")
            f = self.ident().text
            if not (self.accept("=") or self.accept(":=")):
                raise StandardFormError("constructor body may only initialise fields", p)
            x = self.ident().text
            self.eat(";")
            assigns.append((f, x))
        return CtorDecl(params, tuple(assigns), start)

    # -- blocks and statements

    def block(self):
        start = self.eat("{").pos
        stmts = []
        while not self.at("}"):
            stmts.append(self.statement())
        self.eat("}")
        return _fold(stmts, start)

    def _is_decl(self) -> bool:
        if self.tok.kind == "ident" and self.tok.text in MDFS:
            return True
        n = self._is_type_name_at(0)
        if not n:
            return False
        t = self.peek(n)
        return (t.kind == "ident" and t.text not in KEYWORDS and t.text not in MDFS
                and self.peek(n + 1).text == "=")

    def statement(self):
        p = self.tok.pos
        if self.accept("return"):
            e = self.expr()
            self.eat(";")
            if not self.at("}"):
                raise ParseError("'return' must be the last statement of a block", p)
            return ("ret", e, p)
        if self._is_decl():
            t = self.type_ref()
            x = self.ident().text
            self.eat("=")
            e = self.expr()
            self.eat(";")
            return ("let", (t, x, e), p)
        if self.at("if") or self.at("for") or self.at("try"):
            e = self.expr()
            self.accept(";")
            return ("expr", e, p)
        e = self.expr()
        if not self.accept(";") and not self.at("}"):
            raise ParseError(f"expected ';', found {self.tok.text!r}", self.tok.pos)
        return ("expr", e, p)

    # -- expressions

    def expr(self):
        p = self.tok.pos
        if self.accept("throw"):
            return Throw(self.expr(), p)
        lhs = self.or_expr()
        if self.at("=") or self.at(":="):
            self.i += 1
            if type(lhs) is not FieldGet:
                raise ParseError("left side of assignment must be a field access", p)
            rhs = self.expr()
            return FieldSet(lhs.recv, lhs.name, rhs, p)
        if self.at("+="):
            self.i += 1
            if type(lhs) is not FieldGet:
                raise ParseError("left side of '+=' must be a field access", p)
            rhs = self.expr()
            return FieldSet(lhs.recv, lhs.name, Prim("+", (FieldGet(lhs.recv, lhs.name, p), rhs), p), p)
        return lhs

    def or_expr(self):
        e = self.and_expr()
        while self.at("||"):
            p = self.eat("||").pos
            r = self.and_expr()
            e = If(e, Val(True), r, p)
        return e

    def and_expr(self):
        e = self.eq_expr()
        while self.at("&&"):
            p = self.eat("&&").pos
            r = self.eq_expr()
            e = If(e, r, Val(False), p)
        return e

    def eq_expr(self):
        e = self.rel_expr()
        while self.at("==") or self.at("!="):
            t = self.tok
            self.i += 1
            e = Prim(t.text, (e, self.rel_expr()), t.pos)
        return e

    def rel_expr(self):
        e = self.add_expr()
        while self.tok.kind == "op" and self.tok.text in ("<", "<=", ">", ">="):
            t = self.tok
            self.i += 1
            e = Prim(t.text, (e, self.add_expr()), t.pos)
        return e

    def add_expr(self):
        e = self.mul_expr()
        while self.tok.kind == "op" and self.tok.text in ("+", "-"):
            t = self.tok
            self.i += 1
            e = Prim(t.text, (e, self.mul_expr()), t.pos)
        return e

    def mul_expr(self):
        e = self.unary()
        while self.tok.kind == "op" and self.tok.text in ("*", "/", "%"):
            t = self.tok
            self.i += 1
            e = Prim(t.text, (e, self.unary()), t.pos)
        return e

    def unary(self):
        t = self.tok
        if t.kind == "op" and t.text == "!":
            self.i += 1
            return Prim("!", (self.unary(),), t.pos)
        if t.kind == "op" and t.text == "-":
            self.i += 1
            return Prim("neg", (self.unary(),), t.pos)
        return self.postfix()

    def postfix(self):
        e = self.primary()
        while self.at("."):
            p = self.eat(".").pos
            name = self.ident().text
            if self.at("("):
                args = self.args()
                qualified = not (type(e) is Var and e.name == "this")
                e = Call(e, name, args, qualified, False, p)
            else:
                e = FieldGet(e, name, p)
        return e

    def args(self) -> tuple:
        self.eat("(")
        out = []
        if not self.at(")"):
            out.append(self.expr())
            while self.accept(","):
                out.append(self.expr())
        self.eat(")")
        return tuple(out)

    def primary(self):
        t = self.tok
        p = t.pos
        if t.kind == "int":
            self.i += 1
            return Val(int(t.text), p)
        if t.kind == "string":
            self.i += 1
            return Val(_unescape(t.text), p)
        if self.accept("true"):
            return Val(True, p)
        if self.accept("false"):
            return Val(False, p)
        if self.accept("void"):
            return Val(VOID, p)
        if self.accept("this"):
            return Var("this", p)
        if self.accept("("):
            e = self.expr()
            self.eat(")")
            return e
        if self.accept("new"):
            cname = self.type_name()
            return New(cname, self.args(), p)
        if self.accept("print"):
            a = self.args()
            if len(a) != 1:
                raise ParseError("print takes one argument", p)
            return Prim("print", a, p)
        if self.accept("if"):
            self.eat("(")
            c = self.expr()
            self.eat(")")
            th = self.block()
            if self.accept("else"):
                el = self.expr() if self.at("if") else self.block()
            else:
                el = Val(VOID, p)
            return If(c, th, el, p)
        if self.accept("try"):
            body = self.block()
            self.eat("catch")
            if self.accept("("):
                self.type_ref()
                self.ident()
                self.eat(")")
            return Try(body, self.block(), None, p)
        if self.accept("for"):
            return self.for_loop(p)
        if t.kind == "ident" and t.text not in KEYWORDS and t.text not in MDFS:
            n = self._is_type_name_at(0)
            if t.text[0].isupper() and n and self.peek(n).text == "." and self.peek(n + 2).text == "(":
                cname = self.type_name()
                self.eat(".")
                mname = self.ident().text
                return StaticCall(cname, mname, self.args(), p)
            self.i += 1
            return Var(t.text, p)
        raise ParseError(f"unexpected {t.text or 'end of input'!r}", p)

    def for_loop(self, p: tuple):
        self.eat("(")
        t = self.type_ref()
        x = self.ident().text
        if self.accept(":"):
            src = self.expr()
            self.eat(")")
            return For(x, t, src, self.block(), 0, p)
        self.eat("=")
        start = self.expr()
        self.eat(";")
        if self.ident().text != x:
            raise ParseError("counted loop must test its own variable", p)
        self.eat("<")
        end = self.expr()
        self.eat(";")
        if self.ident().text != x:
            raise ParseError("counted loop must increment its own variable", p)
        self.eat("++")
        self.eat(")")
        if t.cls != "Int":
            raise ParseError("counted loop variable must be Int", p)
        return ForRange(x, start, end, self.block(), p)


def _norm(t: TypeRef) -> TypeRef:
    if t.cls in SCALARS and t.mdf is not Mdf.IMM:
        return TypeRef(Mdf.IMM, t.cls)
    return t


def _fold(stmts: list, pos: tuple):
    if not stmts:
        return Val(VOID, pos)
    kind, payload, p = stmts[0]
    rest = stmts[1:]
    if kind == "let":
        t, x, e = payload
        return Let(x, t, e, _fold(rest, p) if rest else Val(VOID, p), p)
    if not rest:
        return payload
    return Seq(payload, _fold(rest, p), p)


def _check_standard_form(cname: str, fields: list, ctor: CtorDecl) -> None:
    expected_params = tuple((f.type, f.name) for f in fields)
    ok = ctor.params == expected_params
    ok = ok and ctor.assigns == tuple((f.name, f.name) for f in fields)
    if not ok:
        want = ", ".join(f"{t} {n}" for t, n in expected_params)
        raise StandardFormError(
            f"constructor of {cname} must have the standard form {cname}({want}) "
            f"initialising every field in declaration order", ctor.pos)


def parse(source: str, name: str = "<input>") -> Program:
    return Parser(source, name).program()


def parse_expr(source: str):
    p = Parser(source)
    e = p.expr()
    if p.tok.kind != "eof":
        raise ParseError(f"unexpected {p.tok.text!r}", p.tok.pos)
    return e


# ---------------------------------------------------------------- printing


def _q(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\t", "\\t") + '"'


def pretty_type(t: TypeRef) -> str:
    return f"{t.mdf.value} {t.cls}"


def pretty_expr(e) -> str:
    t = type(e)
    if t is Val:
        v = e.value
        if type(v) is bool:
            return "true" if v else "false"
        if type(v) is int:
            return str(v) if v >= 0 else f"(0 - {-v})"
        if type(v) is str:
            return _q(v)
        if v is VOID:
            return "void"
        return repr(v)
    if t is Var:
        return e.name
    if t is Call:
        return f"{pretty_expr(e.recv)}.{e.name}({', '.join(pretty_expr(a) for a in e.args)})"
    if t is StaticCall:
        return f"{e.cls}.{e.name}({', '.join(pretty_expr(a) for a in e.args)})"
    if t is FieldGet:
        return f"{pretty_expr(e.recv)}.{e.name}"
    if t is FieldSet:
        return f"({pretty_expr(e.recv)}.{e.name} := {pretty_expr(e.value)})"
    if t is New:
        return f"new {e.cls}({', '.join(pretty_expr(a) for a in e.args)})"
    if t is Prim:
        if e.op == "print":
            return f"print({pretty_expr(e.args[0])})"
        if e.op == "!":
            return f"!{pretty_expr(e.args[0])}"
        if e.op == "neg":
            return f"-{pretty_expr(e.args[0])}"
        return f"({pretty_expr(e.args[0])} {e.op} {pretty_expr(e.args[1])})"
    if t is If:
        return f"if ({pretty_expr(e.cond)}) {pretty_block(e.then)} else {pretty_block(e.els)}"
    if t is Try:
        tag = "" if e.saved is None else "^"
        return f"try{tag} {pretty_block(e.body)} catch {pretty_block(e.handler)}"
    if t is For:
        idx = f" /*@{e.index}*/" if e.index else ""
        return f"for ({pretty_type(e.type)} {e.name} : {pretty_expr(e.src)}{idx}) {pretty_block(e.body)}"
    if t is ForRange:
        return (f"for (Int {e.name} = {pretty_expr(e.start)}; {e.name} < {pretty_expr(e.end)}; "
                f"{e.name}++) {pretty_block(e.body)}")
    if t is Throw:
        return f"(throw {pretty_expr(e.value)})"
    if t is Let or t is Seq:
        return pretty_block(e)
    if t.__name__ == "Monitor":
        return f"M({e.loc!r}, {pretty_expr(e.body)}, {pretty_expr(e.check)})"
    if t.__name__ == "Hole":
        return f"[{pretty_type(e.type)}]"
    raise TypeError(t.__name__)


def _stmts(e) -> list[str]:
    out = []
    while True:
        t = type(e)
        if t is Let:
            out.append(f"{pretty_type(e.type)} {e.name} = {pretty_expr(e.init)};")
            e = e.body
        elif t is Seq:
            out.append(f"{pretty_expr(e.first)};")
            e = e.second
        else:
            out.append(f"return {pretty_expr(e)};")
            return out


def pretty_block(e) -> str:
    return "{ " + " ".join(_stmts(e)) + " }"


def pretty_method(m: MethodDecl) -> str:
    head = []
    if m.is_private:
        head.append("private")
    if m.is_static:
        head.append("static")
    if m.is_foreign:
        head.append("foreign")
    if m.receiver is not None:
        head.append(m.receiver.value)
    head.append("method")
    head.append(pretty_type(m.ret))
    ps = ", ".join(f"{pretty_type(t)} {n}" for t, n in m.params)
    s = " ".join(head) + f" {m.name}({ps})"
    if m.throws:
        s += " throws " + ", ".join(m.throws)
    return s + (";" if m.body is None else " " + pretty_block(m.body))


def pretty_class(c: ClassDecl) -> str:
    lines = []
    for a in sorted(c.annotations):
        lines.append(f"@{a}")
    head = ("capability " if c.is_capability_class else "") + c.kind + " " + c.name
    if c.implements:
        head += " implements " + ", ".join(c.implements)
    lines.append(head + " {")
    for f in c.fields:
        lines.append(f"  {pretty_type(f.type)} {f.name};")
    if c.ctor is not None:
        ps = ", ".join(f"{pretty_type(t)} {n}" for t, n in c.ctor.params)
        body = " ".join(f"this.{f} = {x};" for f, x in c.ctor.assigns)
        lines.append(f"  {c.name}({ps}) {{ {body} }}")
    for m in c.methods.values():
        if not m.synthesized:
            lines.append("  " + pretty_method(m))
    lines.append("}")
    return "\n".join(lines)


def pretty_program(p: Program) -> str:
    parts = [pretty_class(c) for n, c in p.classes.items() if n != "Cap" or p.user_cap]
    parts.append("main " + pretty_block(p.main))
    return "\n\n".join(parts) + "\n"
