"""Bundled example programs with golden expectations, and the GUI depth sweep."""
from __future__ import annotations

import fnmatch
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .machine import run
from .parser import parse
from .protocols import ProtocolMode
from .typecheck import typecheck_program
from .wellformed import check_program

MODES = (ProtocolMode.PAPER, ProtocolMode.D, ProtocolMode.EIFFEL)
KINDS = ("typecheck_reject", "wf_reject", "run_ok", "run_error")
MAX_SWEEP_DEPTH = 6
PROGRAM_DIR = Path(__file__).parent / "programs"


@dataclass(frozen=True)
class CorpusCase:
    name: str
    path: str
    kind: str
    rule: Optional[str] = None
    totals: dict = field(default_factory=dict)

    def source(self) -> str:
        return (PROGRAM_DIR / self.path).read_text()


@dataclass
class CaseResult:
    name: str
    ok: bool
    detail: str
    totals: dict = field(default_factory=dict)


@dataclass
class CorpusReport:
    results: list

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.results)

    def mismatches(self) -> list:
        return [r for r in self.results if not r.ok]


def load_manifest() -> list[CorpusCase]:
    raw = json.loads((PROGRAM_DIR / "manifest.json").read_text())
    cases = []
    for c in raw["cases"]:
        ex = c["expect"]
        if ex["kind"] not in KINDS:
            raise ValueError(f"{c['name']}: unknown expectation {ex['kind']}")
        if ex["kind"].endswith("_reject") and not ex.get("rule"):
            raise ValueError(f"{c['name']}: negative case must name its rule")
        cases.append(CorpusCase(c["name"], c["path"], ex["kind"], ex.get("rule"),
                                dict(ex.get("totals", {}))))
    return cases


def case(name: str) -> CorpusCase:
    for c in load_manifest():
        if c.name == name:
            return c
    raise KeyError(name)


def load_program(name: str):
    c = case(name)
    return parse(c.source(), c.path)


def check_case(c: CorpusCase, modes=MODES) -> CaseResult:
    prog = parse(c.source(), c.path)
    wf = [d for d in check_program(prog) if d.severity == "error"]
    if c.kind == "wf_reject":
        rules = sorted({d.rule_id for d in wf})
        return CaseResult(c.name, c.rule in rules, f"wf rules {rules}")
    if wf:
        return CaseResult(c.name, False, f"unexpected wf diagnostics {[d.rule_id for d in wf]}")
    tc = typecheck_program(prog)
    if c.kind == "typecheck_reject":
        rules = sorted({d.rule_id for d in tc})
        return CaseResult(c.name, c.rule in rules, f"typecheck rules {rules}")
    if tc:
        return CaseResult(c.name, False, f"unexpected type errors {[d.rule_id for d in tc]}")
    want = "value" if c.kind == "run_ok" else "error"
    totals, bad = {}, []
    for m in modes:
        r = run(prog, m)
        totals[m.value] = r.counters.total
        if r.outcome != want:
            bad.append(f"{m.value}: outcome {r.outcome}")
        exp = c.totals.get(m.value)
        if exp is not None and exp != r.counters.total:
            bad.append(f"{m.value}: total {r.counters.total} != {exp}")
    return CaseResult(c.name, not bad, "; ".join(bad) or "ok", totals)


def run_corpus(filter: Optional[str] = None, jobs: int = 1) -> CorpusReport:
    """Check every case whose name matches the glob ``filter``."""
    cases = [c for c in load_manifest() if filter is None or fnmatch.fnmatch(c.name, filter)]
    if jobs > 1 and len(cases) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(check_case, cases))
    else:
        results = [check_case(c) for c in cases]
    return CorpusReport(results)


# ---------------------------------------------------------------- GUI depth sweep


def _gui_classes() -> str:
    src = case("gui").source()
    return src[:src.index("\nmain {")]


def _chain(depth: int, first_id: int) -> str:
    inner = "List<Widget>.of()"
    for level in range(depth, 0, -1):
        size = 30 + 20 * (depth - level)
        pos = 0 if level == 1 else 15
        inner_list = inner if level == depth else f"List<Widget>.of({inner})"
        inner = f"SafeMovable.make({pos}, {pos}, {size}, {size}, {inner_list}, {first_id + level - 1}, 1)"
    return inner


def sweep_source(depth: int, widgets: int) -> str:
    """A program with ``widgets`` movables: a chain nested ``depth`` deep plus
    flat siblings, one button each, every button pressed once."""
    if not 1 <= depth <= widgets:
        raise ValueError("need 1 <= depth <= widgets")
    lines = [f"  c.show({_chain(depth, 0)});"]
    for i in range(widgets - depth):
        x = 400 + 50 * i
        lines.append(f"  c.show(SafeMovable.make({x}, 0, 30, 30, List<Widget>.of(), {depth + i}, 1));")
    lines.append(f"  for (Int i = 0; i < {widgets}; i++) {{ c.post(i); }}")
    lines.append("  c.deliver();")
    return _gui_classes() + "\nmain {\n" + "\n".join(lines) + "\n}\n"


def gui_depth_sweep(max_depth: int, modes=MODES, fuel: Optional[int] = None) -> dict:
    """{depth: {mode: check total}} for depths 1..max_depth with a fixed
    number of widgets and presses."""
    if not 1 <= max_depth <= MAX_SWEEP_DEPTH:
        raise ValueError(f"max_depth must be between 1 and {MAX_SWEEP_DEPTH}")
    table = {}
    for d in range(1, max_depth + 1):
        prog = parse(sweep_source(d, max_depth), f"<sweep depth {d}>")
        row = {}
        for m in modes:
            r = run(prog, m, fuel)
            if r.outcome != "value":
                raise RuntimeError(f"sweep depth {d} mode {m.value} ended in {r.outcome}")
            row[m.value] = r.counters.total
        table[d] = row
    return table
