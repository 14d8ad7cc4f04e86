"""Random well-typed programs for differential soundness testing.

Programs are generated as source text and kept only if they parse, pass the
well-formedness checks and typecheck. Each program index has its own RNG
seeded from ``(seed, index)``, so any shard of a run can be regenerated alone.
"""
from __future__ import annotations

import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Optional

from .oracle import INVARIANT_FIELDS, OraclePolicy, check_run
from .parser import ParseError, parse
from .syntax import Program
from .typecheck import typecheck_program
from .wellformed import check_program

MAX_ATTEMPTS = 400
FUZZ_STEPS = 200


class GenerationExhausted(RuntimeError):
    """Too many candidates in a row failed to typecheck."""


@dataclass
class _Field:
    name: str
    mdf: str            # "imm" | "capsule" | "mut"
    cls: str            # "Int" or a class name


@dataclass
class _Class:
    name: str
    fields: list
    inv: Optional[str] = None

    def ints(self) -> list:
        return [f for f in self.fields if f.cls == "Int"]

    def refs(self) -> list:
        return [f for f in self.fields if f.cls != "Int"]


class _Gen:
    def __init__(self, rng: random.Random, size_budget: int) -> None:
        self.r = rng
        self.budget = max(1, size_budget)
        self.classes: list[_Class] = []
        self.vars: list = []         # (name, mdf, class)
        self.fresh = 0

    # -- class table

    def int_lit(self) -> str:
        n = self.r.randint(-3, 120)
        return str(n) if n >= 0 else f"(0 - {-n})"

    def make_classes(self) -> None:
        for i in range(self.r.randint(1, 4)):
            fields = []
            for j in range(self.r.randint(0, 3)):
                if i > 0 and self.r.random() < 0.45:
                    fields.append(_Field(f"f{j}", self.r.choice(["imm", "capsule", "mut"]),
                                         f"C{self.r.randrange(i)}"))
                else:
                    fields.append(_Field(f"f{j}", "imm", "Int"))
            c = _Class(f"C{i}", fields)
            if self.r.random() < 0.7:
                c.inv = self.invariant(c)
            self.classes.append(c)

    def invariant(self, c: _Class) -> Optional[str]:
        parts = []
        for f in c.fields:
            if f.cls == "Int":
                parts.append(f"this.{f.name} {self.r.choice(['>=', '<', '!='])} {self.r.randint(0, 100)}")
            elif f.mdf in ("imm", "capsule"):
                inner = self.cls(f.cls).ints()
                if inner:
                    g = self.r.choice(inner)
                    parts.append(f"this.{f.name}.get{g.name}() < {self.r.randint(20, 130)}")
        if not parts:
            return None
        k = self.r.randint(1, len(parts))
        return " && ".join(self.r.sample(parts, k))

    def cls(self, name: str) -> _Class:
        return next(c for c in self.classes if c.name == name)

    def class_source(self, c: _Class) -> str:
        out = [f"class {c.name} {{"]
        for f in c.fields:
            mdf = "" if f.mdf == "imm" else f"{f.mdf} "
            out.append(f"  {mdf}{f.cls} {f.name};")
        params = ", ".join(f"{'' if f.mdf == 'imm' else f.mdf + ' '}{f.cls} {f.name}" for f in c.fields)
        body = " ".join(f"this.{f.name} = {f.name};" for f in c.fields)
        out.append(f"  {c.name}({params}) {{ {body} }}")
        for f in c.ints():
            out.append(f"  read method Int get{f.name}() {{ this.{f.name} }}")
            out.append(f"  mut method Void set{f.name}(Int v) {{ this.{f.name} = v; }}")
        for f in c.refs():
            inner = self.cls(f.cls).ints()
            if inner and f.mdf != "imm":
                g = self.r.choice(inner)
                out.append(f"  mut method Void poke{f.name}(Int v) {{ this.{f.name}.set{g.name}(v); }}")
            if inner:
                g = self.r.choice(inner)
                out.append(f"  read method Int peek{f.name}() {{ this.{f.name}.get{g.name}() }}")
        if c.inv:
            out.append(f"  read method Bool invariant() {{ {c.inv} }}")
        out.append("}")
        return "\n".join(out)

    # -- main

    def new_expr(self, c: _Class, depth: int = 0) -> str:
        args = []
        for f in c.fields:
            if f.cls == "Int":
                args.append(self.int_lit())
                continue
            # a variable can fill a mut field, or a capsule field once
            same = [v for v in self.vars if v[2] == f.cls and v[1] == f.mdf and v[1] != "imm"]
            if same and depth < 2 and self.r.random() < 0.4:
                v = self.r.choice(same)
                if v[1] == "capsule":
                    self.vars.remove(v)
                args.append(v[0])
            else:
                args.append(self.new_expr(self.cls(f.cls), depth + 1))
        return f"new {c.name}({', '.join(args)})"

    def name(self) -> str:
        self.fresh += 1
        return f"x{self.fresh}"

    def statement(self, local: Optional[set] = None) -> str:
        """``local`` holds the variables declared inside the enclosing try."""
        r = self.r
        roll = r.random()
        if roll < 0.3 or not self.vars:
            c = r.choice(self.classes)
            mdf = r.choice(["mut", "mut", "mut", "imm", "capsule"])
            x = self.name()
            s = f"{mdf} {c.name} {x} = {self.new_expr(c)};"
            self.vars.append((x, mdf, c.name))
            if local is not None:
                local.add(x)
            return s
        muts = [v for v in self.vars if v[1] == "mut" and (local is None or v[0] in local)]
        if roll < 0.7 and muts:
            x, _, cname = r.choice(muts)
            c = self.cls(cname)
            ops = [f"set{f.name}({self.int_lit()})" for f in c.ints()]
            ops += [f"poke{f.name}({self.int_lit()})" for f in c.refs()
                    if f.mdf != "imm" and self.cls(f.cls).ints()]
            if ops:
                return f"{x}.{r.choice(ops)};"
        readable = [v for v in self.vars if v[1] != "capsule"]
        if roll < 0.85 and readable:
            x, _, cname = r.choice(readable)
            c = self.cls(cname)
            reads = [f"get{f.name}()" for f in c.ints()]
            reads += [f"peek{f.name}()" for f in c.refs() if self.cls(f.cls).ints()]
            if reads:
                return f"print({x}.{r.choice(reads)});"
        if local is None and roll < 0.97:
            saved = list(self.vars)
            inner: set = set()
            body = " ".join(self.statement(inner) for _ in range(r.randint(1, 3)))
            self.vars = saved
            return f"try {{ {body} }} catch (Error e) {{ print(\"caught\"); }}"
        return f"print({self.int_lit()});"

    def program(self) -> str:
        self.make_classes()
        stmts = [self.statement() for _ in range(self.r.randint(1, self.budget))]
        classes = "\n\n".join(self.class_source(c) for c in self.classes)
        return classes + "\n\nmain {\n  " + "\n  ".join(stmts) + "\n}\n"


def accepts(src: str) -> Optional[Program]:
    """The parsed program if it is well formed and well typed."""
    try:
        prog = parse(src, "<fuzz>")
    except ParseError:
        return None
    if any(d.severity == "error" for d in check_program(prog)):
        return None
    if typecheck_program(prog):
        return None
    return prog


def generate(seed: int, index: int, size_budget: int = 8) -> tuple[str, Program]:
    """The program at ``index`` of the stream for ``seed``."""
    rng = random.Random(f"ivl-fuzz/{seed}/{index}")
    for _ in range(MAX_ATTEMPTS):
        src = _Gen(rng, size_budget).program()
        prog = accepts(src)
        if prog is not None:
            prog.source_name = f"<fuzz {seed}:{index}>"
            return src, prog
    raise GenerationExhausted(f"no typed program after {MAX_ATTEMPTS} attempts "
                              f"(seed {seed}, index {index})")


def fuzz_sources(seed: int, n: int, size_budget: int = 8, start: int = 0) -> Iterator[tuple]:
    for i in range(start, start + n):
        yield generate(seed, i, size_budget)


def fuzz_programs(seed: int, n: int, size_budget: int = 8) -> Iterator[Program]:
    for _, prog in fuzz_sources(seed, n, size_budget):
        yield prog


@dataclass
class FuzzFailure:
    index: int
    source: str
    violations: list


@dataclass
class FuzzReport:
    programs: int = 0
    steps: int = 0
    checked: int = 0
    deep_checked: int = 0
    truncated: int = 0
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def merge(self, other: "FuzzReport") -> None:
        self.programs += other.programs
        self.steps += other.steps
        self.checked += other.checked
        self.deep_checked += other.deep_checked
        self.truncated += other.truncated
        self.failures += other.failures


def _shard(args) -> FuzzReport:
    seed, start, n, size_budget, max_steps, policy, scope = args
    rep = FuzzReport()
    for i, (src, prog) in enumerate(fuzz_sources(seed, n, size_budget, start), start):
        r = check_run(prog, OraclePolicy.parse(policy), fuel=max_steps, scope=scope)
        rep.programs += 1
        rep.steps += r.steps
        rep.checked += r.checked
        rep.deep_checked += r.deep_checked
        rep.truncated += r.outcome == "fuel"
        if r.violations:
            rep.failures.append(FuzzFailure(i, src, r.violations))
    return rep


def fuzz_check(seed: int, n: int, size_budget: int = 8, max_steps: int = FUZZ_STEPS,
               policy: str = "sampled:1", jobs: int = 1,
               scope: str = INVARIANT_FIELDS) -> FuzzReport:
    """Run ``n`` generated programs for at most ``max_steps`` steps each,
    asserting OK per ``policy``."""
    jobs = max(1, min(jobs, n)) if n else 1
    chunk = -(-n // jobs) if n else 0
    shards = [(seed, s, min(chunk, n - s), size_budget, max_steps, policy, scope)
              for s in range(0, n, chunk or 1)] if n else []
    total = FuzzReport()
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            for rep in ex.map(_shard, shards):
                total.merge(rep)
    else:
        for sh in shards:
            total.merge(_shard(sh))
    return total

