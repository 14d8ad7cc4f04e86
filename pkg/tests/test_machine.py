import pytest
from hypothesis import given, settings, strategies as st

from ivl.fuzz import generate
from ivl.machine import (
    Machine, StepBudgetExceeded, UnboundVariable, decompose, run, substitute, trace,
)
from ivl.parser import parse, parse_expr
from ivl.protocols import ProtocolMode
from ivl.syntax import Call, Val, Var, wrap_int

POS = """
class Pos {
  Int v;
  Pos(Int v) { this.v = v; }
  read method Bool invariant() { this.v >= 0 }
  read method Int get() { this.v }
  mut method Void set(Int v) { this.v = v; }
  mut method Void bump() { this.set(this.get() + 1); }
}
"""


def prog(main):
    return parse(POS + "main {\n" + main + "\n}\n")


def test_empty_main_runs_no_checks():
    r = run(parse("main { true }"))
    assert r.outcome == "value" and r.value is True
    assert r.counters.total == 0


def test_arithmetic_and_output():
    r = run(prog("mut Pos p = new Pos(1); p.set(2); p.bump(); print(p.get());"))
    assert r.outcome == "value"
    assert r.output_log == ["3"]


# hand counted: paper = ctor + two updates; d = ctor + 5 boundary pairs;
# eiffel = ctor + the 3 qualified calls
@pytest.mark.parametrize("mode,total", [("paper", 3), ("d", 11), ("eiffel", 7)])
def test_check_counts_by_mode(mode, total):
    r = run(prog("mut Pos p = new Pos(1); p.set(2); p.bump(); print(p.get());"), ProtocolMode(mode))
    assert r.counters.total == total
    assert r.counters.consistent()


def test_broken_invariant_is_an_error():
    r = run(prog("mut Pos p = new Pos(1); p.set(0 - 1); print(9);"))
    assert r.outcome == "error"
    assert r.output_log == []


def test_caught_error_restores_memory():
    r = run(prog("""
  mut Pos keep = new Pos(5);
  try { mut Pos p = new Pos(1); p.set(0 - 1); } catch (Error e) { print("caught"); }
  print(keep.get());"""))
    assert r.outcome == "value"
    assert r.output_log == ["caught", "5"]
    assert [o.cls for o in r.memory.store.values()].count("Pos") == 1


def test_fuel_is_enforced():
    with pytest.raises(StepBudgetExceeded):
        run(prog("mut Pos p = new Pos(1); p.bump(); p.bump();"), fuel=5)


def test_fuel_from_environment(monkeypatch):
    monkeypatch.setenv("IVL_FUEL", "3")
    with pytest.raises(StepBudgetExceeded):
        Machine(prog("mut Pos p = new Pos(1); p.bump();")).run()


def test_integers_wrap_at_64_bits():
    assert wrap_int(2**63) == -2**63
    assert wrap_int(-2**63 - 1) == 2**63 - 1
    assert run(parse("main { 9223372036854775807 + 1 }")).value == -2**63


def test_substitute_requires_every_free_variable():
    with pytest.raises(UnboundVariable):
        substitute(parse_expr("x + y"), {"x": 1})
    assert substitute(parse_expr("x"), {"x": 4}) == Val(4)


def test_decompose_finds_leftmost_redex():
    kind, path, redex = decompose(parse_expr("(1 + 2) * (3 + 4)"))
    assert kind == "redex"
    assert redex == parse_expr("1 + 2")
    assert decompose(Val(3)) == ("value", 3)


def test_trace_deltas_sum_to_total():
    p = prog("mut Pos p = new Pos(1); p.set(2); p.bump();")
    steps = list(trace(p, ProtocolMode.D))
    r = run(p, ProtocolMode.D)
    assert len(steps) == r.steps
    assert sum(d for *_, d in steps) == r.counters.total
    assert [s for s, *_ in steps] == list(range(1, r.steps + 1))


def test_observer_sees_each_redex_once():
    p = prog("mut Pos p = new Pos(1); p.bump();")
    seen = []
    r = Machine(p).run(lambda m: seen.append(m.steps))
    assert seen == list(range(r.steps))


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=10_000), st.sampled_from(list(ProtocolMode)))
def test_execution_is_deterministic(index, mode):
    _, p = generate(7, index)
    a, b = run(p, mode, fuel=2000), run(p, mode, fuel=2000)
    assert (a.outcome, a.steps, a.output_log, a.counters) == (b.outcome, b.steps, b.output_log, b.counters)
    assert a.memory.cells() == b.memory.cells()


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=10_000), st.sampled_from(list(ProtocolMode)))
def test_counters_are_consistent(index, mode):
    _, p = generate(11, index)
    c = run(p, mode, fuel=2000).counters
    assert c.consistent()
    if mode is ProtocolMode.PAPER:
        assert c.per_site["method_entry"] == c.per_site["method_exit"] == 0
    else:
        assert c.per_site["field_update"] == c.per_site["capsule_mutator_exit"] == 0
