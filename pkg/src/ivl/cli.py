"""Command-line front end: ``ivl check|run|count|trace|oracle|sweep|fuzz|corpus``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

from .corpus import MAX_SWEEP_DEPTH, gui_depth_sweep, run_corpus
from .fuzz import FUZZ_STEPS, fuzz_check
from .machine import Machine, SESViolation, StepBudgetExceeded, default_fuel, trace
from .oracle import INVARIANT_FIELDS, SCOPES, OraclePolicy, check_run
from .parser import ParseError, parse
from .protocols import SCHEMA_VERSION, ProtocolMode, report
from .typecheck import typecheck_program
from .wellformed import check_program

EXIT_OK = 0
EXIT_DIAGNOSTICS = 1
EXIT_VIOLATION = 2
EXIT_USAGE = 3
EXIT_FUEL = 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _Out:
    def __init__(self, structured: bool) -> None:
        self.structured = structured

    def record(self, record: str, line: str, /, **fields) -> None:
        if self.structured:
            print(json.dumps({"schema_version": SCHEMA_VERSION, "record": record, **fields}))
        else:
            print(line)


def _fuel(v: Optional[int]) -> int:
    return default_fuel() if v is None else v


def _load(path: str, out: _Out):
    """Parse and check ``path``; returns (program, number of errors)."""
    try:
        src = Path(path).read_text()
    except OSError as ex:
        raise UsageError(f"cannot read {path}: {ex.strerror}")
    try:
        prog = parse(src, path)
    except ParseError as ex:
        line, col = ex.pos or (0, 0)
        out.record("diagnostic", f"{path}:{line}:{col}: error[parse]: {ex.msg}", file=path,
                   line=line, col=col, severity="error", rule_id="parse", message=ex.msg)
        return None, 1
    diags = check_program(prog)
    if not any(d.severity == "error" for d in diags):
        diags += typecheck_program(prog)
    for d in diags:
        out.record("diagnostic", d.render(path), **d.record(path))
    return prog, sum(d.severity == "error" for d in diags)


def _cmd_check(a, out: _Out) -> int:
    errors = 0
    for f in a.files:
        _, n = _load(f, out)
        errors += n
    if not errors:
        out.record("summary", f"{len(a.files)} file(s) ok", files=len(a.files), errors=0)
    return EXIT_DIAGNOSTICS if errors else EXIT_OK


def _cmd_run(a, out: _Out) -> int:
    prog, errors = _load(a.file, out)
    if errors:
        return EXIT_DIAGNOSTICS
    mode = ProtocolMode(a.mode)
    m = Machine(prog, mode, _fuel(a.fuel))
    try:
        r = m.run()
    except StepBudgetExceeded as ex:
        out.record("fuel", f"fuel exhausted after {m.steps} steps", steps=m.steps, message=str(ex))
        return EXIT_FUEL
    except SESViolation as ex:
        out.record("ses", f"exception safety violated: {ex}", message=str(ex))
        return EXIT_VIOLATION
    for line in r.output_log:
        out.record("output", line, text=line)
    if a.count:
        rep = report(mode, r.counters, r.steps, r.outcome)
        if out.structured:
            print(json.dumps({"record": "counters", **rep}))
        else:
            print(f"mode {rep['mode']}: total {rep['total']} checks, {rep['steps']} steps, outcome {r.outcome}")
            for site, n in rep["per_site"].items():
                if n:
                    print(f"  {site}: {n}")
            for cls, n in rep["per_class"].items():
                print(f"  {cls}: {n}")
    elif r.outcome == "error":
        out.record("outcome", "uncaught error", outcome="error")
    return EXIT_OK if r.outcome == "value" else EXIT_DIAGNOSTICS


def _cmd_count(a, out: _Out) -> int:
    a.count = True
    return _cmd_run(a, out)


def _cmd_trace(a, out: _Out) -> int:
    prog, errors = _load(a.file, out)
    if errors:
        return EXIT_DIAGNOSTICS
    try:
        for step, rule, redex, delta in trace(prog, ProtocolMode(a.mode), _fuel(a.fuel), a.limit):
            out.record("step", f"{step:>6} {rule:<20} {redex}" + (f"  [+{delta} check]" if delta else ""),
                       step=step, rule=rule, redex=redex, checks=delta)
    except StepBudgetExceeded:
        out.record("fuel", "fuel exhausted", message="fuel exhausted")
        return EXIT_FUEL
    return EXIT_OK


def _cmd_oracle(a, out: _Out) -> int:
    prog, errors = _load(a.file, out)
    if errors:
        return EXIT_DIAGNOSTICS
    try:
        policy = OraclePolicy.parse(a.policy)
    except ValueError as ex:
        raise UsageError(str(ex))
    r = check_run(prog, policy, fuel=_fuel(a.fuel), check_types=a.types,
                  keep_records=a.verdicts and out.structured, scope=a.scope)
    if out.structured:
        for rec in r.records:
            print(json.dumps({"schema_version": SCHEMA_VERSION, "record": "verdict", **rec}))
    for v in r.violations:
        out.record("violation", f"step {v.step}: VIOLATION {v.kind} at {v.location}: {v.reason}",
                   **v.record())
    out.record("summary", f"{r.steps} steps, {r.checked} configurations checked, "
                          f"{len(r.violations)} violation(s), outcome {r.outcome}",
               steps=r.steps, checked=r.checked, violations=len(r.violations), outcome=r.outcome)
    if r.violations:
        return EXIT_VIOLATION
    return EXIT_FUEL if r.outcome == "fuel" else EXIT_OK


def _cmd_sweep(a, out: _Out) -> int:
    if not 1 <= a.max_depth <= MAX_SWEEP_DEPTH:
        raise UsageError(f"--max-depth must be between 1 and {MAX_SWEEP_DEPTH}")
    try:
        table = gui_depth_sweep(a.max_depth, fuel=_fuel(a.fuel))
    except StepBudgetExceeded:
        out.record("fuel", "fuel exhausted", message="fuel exhausted")
        return EXIT_FUEL
    if not out.structured:
        print(f"{'depth':>5} {'paper':>10} {'d':>12} {'eiffel':>12}")
    for d, row in table.items():
        out.record("sweep", f"{d:>5} {row['paper']:>10} {row['d']:>12} {row['eiffel']:>12}",
                   depth=d, **row)
    return EXIT_OK


def _cmd_fuzz(a, out: _Out) -> int:
    if a.n < 0:
        raise UsageError("-n must be non-negative")
    rep = fuzz_check(a.seed, a.n, a.size, a.max_steps, a.policy, a.jobs, a.scope)
    for f in rep.failures:
        for v in f.violations:
            out.record("violation", f"program {f.index} step {v.step}: VIOLATION {v.kind}: {v.reason}",
                       program=f.index, **v.record())
        if not out.structured:
            print(f.source)
    out.record("summary", f"{rep.programs} programs, {rep.steps} steps, {rep.checked} checked, "
                          f"{rep.truncated} hit the step limit, {len(rep.failures)} failing",
               programs=rep.programs, steps=rep.steps, checked=rep.checked,
               truncated=rep.truncated, failing=len(rep.failures))
    return EXIT_OK if rep.ok else EXIT_VIOLATION


def _cmd_corpus(a, out: _Out) -> int:
    rep = run_corpus(a.filter, a.jobs)
    for r in rep.results:
        tot = " ".join(f"{k}={v}" for k, v in r.totals.items())
        out.record("case", f"{'ok  ' if r.ok else 'FAIL'} {r.name:<22} {tot or r.detail}",
                   name=r.name, ok=r.ok, detail=r.detail, totals=r.totals)
    return EXIT_OK if rep.ok else EXIT_DIAGNOSTICS


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=("text", "structured"), default="text")
    fuel = argparse.ArgumentParser(add_help=False)
    fuel.add_argument("--fuel", type=int, default=None,
                      help="step budget (default: $IVL_FUEL or 10,000,000)")
    mode = argparse.ArgumentParser(add_help=False)
    mode.add_argument("--mode", choices=[m.value for m in ProtocolMode], default="paper")

    p = _Parser(prog="ivl", description="Invariant protocol interpreter and soundness oracle.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("check", parents=[common], help="well-formedness and type check")
    s.add_argument("files", nargs="+")
    s.set_defaults(fn=_cmd_check)

    s = sub.add_parser("run", parents=[common, fuel, mode], help="execute a program")
    s.add_argument("file")
    s.add_argument("--count", action="store_true", help="print the invariant check counters")
    s.set_defaults(fn=_cmd_run)

    s = sub.add_parser("count", parents=[common, fuel, mode], help="same as run --count")
    s.add_argument("file")
    s.set_defaults(fn=_cmd_count)

    s = sub.add_parser("trace", parents=[common, fuel, mode], help="print one line per step")
    s.add_argument("file")
    s.add_argument("--limit", type=int, default=None, help="stop after this many steps")
    s.set_defaults(fn=_cmd_trace)

    s = sub.add_parser("oracle", parents=[common, fuel], help="run with the soundness oracle")
    s.add_argument("file")
    s.add_argument("--policy", "--oracle", dest="policy", default="every-step",
                   help="off, every-step or sampled[:k]")
    s.add_argument("--scope", choices=SCOPES, default=INVARIANT_FIELDS,
                   help="capsule fields counted as encapsulated state")
    s.add_argument("--types", action="store_true", help="also typecheck every configuration")
    s.add_argument("--verdicts", action="store_true",
                   help="with --format structured, emit every per-location verdict")
    s.set_defaults(fn=_cmd_oracle)

    s = sub.add_parser("sweep", parents=[common, fuel], help="GUI nesting depth sweep")
    s.add_argument("--max-depth", type=int, default=4)
    s.set_defaults(fn=_cmd_sweep)

    s = sub.add_parser("fuzz", parents=[common], help="differential soundness fuzzing")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-n", type=int, default=100)
    s.add_argument("--size", type=int, default=8, help="statements per main, at most")
    s.add_argument("--max-steps", type=int, default=FUZZ_STEPS)
    s.add_argument("--policy", "--oracle", dest="policy", default="sampled:1")
    s.add_argument("--scope", choices=SCOPES, default=INVARIANT_FIELDS)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(fn=_cmd_fuzz)

    s = sub.add_parser("corpus", parents=[common], help="check the bundled corpus")
    s.add_argument("--filter", default=None, help="glob over case names")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(fn=_cmd_corpus)
    return p


def main(argv: Optional[list] = None) -> int:
    p = build_parser()
    try:
        a = p.parse_args(argv)
    except SystemExit as ex:
        return ex.code if isinstance(ex.code, int) else EXIT_USAGE
    out = _Out(a.format == "structured")
    try:
        return a.fn(a, out)
    except UsageError as ex:
        print(f"ivl: error: {ex}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
