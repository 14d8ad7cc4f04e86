"""Oracle predicates on hand-built configurations, including negative
controls that no typed program produces."""
import pytest
from hypothesis import given, settings, strategies as st

from ivl.corpus import load_program
from ivl.fuzz import generate
from ivl.machine import Machine, initial_memory
from ivl.oracle import (
    ALL_FIELDS, GARBAGE, INVARIANT_FIELDS, MONITORED, VALID, VIOLATION, Config, HeapAnalysis,
    OraclePolicy, SoundnessOracle, assert_ok, capsule_tree, check_run, erog, field_guarded,
    garbage, head_not_circular, monitored, mutatable, redex_locations, rog, trusted, valid,
    valid_is_deterministic, well_encapsulated,
)
from ivl.parser import parse
from ivl.syntax import Call, FieldGet, FieldSet, Loc, Monitor, New, Seq, Val, subst

SRC = """
class Box {
  Int v;
  Box(Int v) { this.v = v; }
  read method Int get() { this.v }
  mut method Void set(Int v) { this.v = v; }
}

class Holder {
  capsule Box b;
  Holder(capsule Box b) { this.b = b; }
  read method Bool invariant() { this.b.get() > 0 }
  read method Int peek() { this.b.get() }
  mut method Void put(Int v) { this.b.set(v); }
}

class Mid {
  capsule Box x;
  Mid(capsule Box x) { this.x = x; }
}

class Top {
  capsule Mid m;
  capsule Box y;
  Top(capsule Mid m, capsule Box y) { this.m = m; this.y = y; }
}

class Ring {
  capsule Back r;
  Ring(capsule Back r) { this.r = r; }
}

class Back {
  mut Ring back;
  Back(mut Ring back) { this.back = back; }
}

main { 1 }
"""


@pytest.fixture(scope="module")
def prog():
    return parse(SRC)


def holder(prog, v):
    """Memory with a Cap, a Box holding ``v`` and a Holder owning it."""
    mem = initial_memory(prog)
    box = mem.alloc("Box", [v])
    h = mem.alloc("Holder", [box])
    return mem, box, h


def inv(l):
    return Call(Val(l), "invariant", (), True, False)


def test_initial_configuration_is_ok():
    p = load_program("cage")
    mem = initial_memory(p)
    e = subst(p.main, {"c": Val(Loc(0))})
    v = assert_ok(Config.of(p, mem, e))
    assert v.ok
    assert set(v.per_location.values()) <= {VALID, GARBAGE}


def test_valid_examples():
    p = load_program("person")
    mem = initial_memory(p)
    bob = mem.alloc("Person", ["bob"])
    nobody = mem.alloc("Person", [""])
    assert valid(p, mem, bob)
    assert not valid(p, mem, nobody)
    assert valid(p, mem, Loc(0))               # Cap
    assert valid_is_deterministic(p, mem, bob)


def test_valid_leaves_memory_alone(prog):
    mem, box, h = holder(prog, 3)
    before = mem.cells()
    assert valid(prog, mem, h)
    assert mem.cells() == before


def test_invalid_reachable_unmonitored_object_is_a_violation(prog):
    mem, box, h = holder(prog, 0)
    v = assert_ok(Config.of(prog, mem, Call(Val(h), "peek", ())))
    assert v.per_location[h.id] == VIOLATION
    kinds = {x.kind for x in v.violations}
    assert kinds == {"invalid", "untrusted-redex"}


def test_invalid_but_monitored_object_is_ok(prog):
    mem, box, h = holder(prog, 0)
    e = Monitor(h, Val(h), inv(h), "field_update")
    v = assert_ok(Config.of(prog, mem, e))
    assert v.per_location[h.id] == MONITORED
    assert v.ok


def test_invalid_garbage_is_ok(prog):
    mem, box, h = holder(prog, 0)
    v = assert_ok(Config.of(prog, mem, Val(7)))
    assert v.per_location[h.id] == GARBAGE
    assert garbage(h, mem, Val(7))
    assert not garbage(h, mem, Val(h))
    assert v.ok


def test_capability_is_not_garbage_when_mentioned(prog):
    mem = initial_memory(prog)
    assert not garbage(Loc(0), mem, Call(Val(Loc(0)), "invariant", ()))


def test_mut_alias_into_encapsulated_state_is_a_violation(prog):
    mem, box, h = holder(prog, 3)
    # the holder must stay live, or it is simply garbage
    e = Seq(Call(Val(box), "set", (Val(5),)), Call(Val(h), "peek", ()))
    assert erog(prog, mem, h) == {box}
    assert not well_encapsulated(prog, mem, e, h)
    v = assert_ok(Config.of(prog, mem, e))
    assert [x.kind for x in v.violations] == ["not-encapsulated"]


def test_read_alias_keeps_encapsulation(prog):
    mem, box, h = holder(prog, 3)
    e = Seq(Call(Val(box), "get", ()), Call(Val(h), "peek", ()))
    assert well_encapsulated(prog, mem, e, h)
    assert assert_ok(Config.of(prog, mem, e)).ok


def test_empty_erog_is_encapsulated(prog):
    mem = initial_memory(prog)
    box = mem.alloc("Box", [1])
    assert erog(prog, mem, box) == frozenset()
    assert well_encapsulated(prog, mem, Call(Val(box), "set", (Val(2),)), box)


def test_mutatable_examples(prog):
    mem, box, h = holder(prog, 3)
    assert not mutatable(prog, box, mem, Call(Val(box), "get", ()))
    assert mutatable(prog, box, mem, FieldSet(Val(box), "v", Val(4)))
    assert not mutatable(prog, box, mem, Val(1))


def test_monitored_examples(prog):
    mem, box, h = holder(prog, 3)
    assert monitored(Monitor(h, Val(h), inv(h), "ctor"), h)
    body = Call(Val(h), "put", (Call(Val(h), "peek", ()),))
    assert not monitored(Monitor(h, body, inv(h), "capsule_mutator_exit"), h)
    assert monitored(Monitor(h, Call(Val(box), "get", ()), inv(h), "capsule_mutator_exit"), h)
    assert not monitored(Call(Val(h), "peek", ()), h)


def test_trusted_invariant_call_and_field_reads(prog):
    mem, box, h = holder(prog, 0)
    cfg = Config.of(prog, mem, Monitor(h, Val(h), inv(h), "field_update"))
    assert cfg.redex == inv(h)
    assert trusted(cfg.path, cfg.redex)
    read = Monitor(h, Val(h), Call(FieldGet(Val(h), "b"), "get", ()), "field_update")
    cfg = Config.of(prog, mem, read)
    assert cfg.redex == FieldGet(Val(h), "b")
    assert trusted(cfg.path, cfg.redex)
    assert assert_ok(cfg).ok


def test_same_redexes_outside_a_monitor_are_untrusted(prog):
    mem, box, h = holder(prog, 0)
    for e in (inv(h), FieldGet(Val(h), "b")):
        cfg = Config.of(prog, mem, e)
        assert not trusted(cfg.path, cfg.redex)
        assert "untrusted-redex" in {x.kind for x in assert_ok(cfg).violations}


def test_monitor_body_is_not_trusted(prog):
    mem, box, h = holder(prog, 0)
    cfg = Config.of(prog, mem, Monitor(h, FieldGet(Val(h), "b"), inv(h), "ctor"))
    assert not trusted(cfg.path, cfg.redex)


def test_redex_locations_cover_arguments(prog):
    a, b = Loc(3), Loc(4)
    assert redex_locations(Call(Val(a), "m", (Val(b), Val(1)))) == [a, b]
    assert redex_locations(FieldSet(Val(a), "f", Val(b))) == [a, b]
    assert redex_locations(New("Holder", (Val(b),))) == [b]
    assert redex_locations(Val(a)) == []


def test_argument_on_invalid_object_is_flagged(prog):
    mem, box, h = holder(prog, 0)
    cfg = Config.of(prog, mem, Call(Val(Loc(0)), "invariant", (Val(h),)))
    v = assert_ok(cfg)
    assert [(x.kind, x.location) for x in v.violations if x.kind == "untrusted-redex"] == [
        ("untrusted-redex", h.id)]


def test_field_guarded(prog):
    mem, box, h = holder(prog, 3)
    assert field_guarded(prog, mem, Call(Val(h), "peek", ()))
    access = Call(FieldGet(Val(h), "b"), "set", (Val(4),))
    assert not field_guarded(prog, mem, access)
    v = assert_ok(Config.of(prog, mem, access))
    assert "field-unguarded" in {x.kind for x in v.violations}
    assert field_guarded(prog, mem, Monitor(h, access, inv(h), "capsule_mutator_exit"))
    # read-only use of the capsule field needs no guard
    assert field_guarded(prog, mem, Call(FieldGet(Val(h), "b"), "get", ()))


def test_head_not_circular_detects_cycle(prog):
    mem = initial_memory(prog)
    ring = mem.alloc("Ring", [None])
    back = mem.alloc("Back", [ring])
    mem.obj(ring).vals[0] = back
    assert ring in erog(prog, mem, ring)
    assert head_not_circular(prog, mem) == [ring]
    mem2, _, _ = holder(prog, 1)
    assert head_not_circular(prog, mem2) == []


def test_capsule_tree_detects_bypass(prog):
    mem = initial_memory(prog)
    leaf = mem.alloc("Box", [1])
    mid = mem.alloc("Mid", [leaf])
    top = mem.alloc("Top", [mid, leaf])
    e = Call(Val(leaf), "set", (Val(2),))
    assert (top, mid, leaf) in capsule_tree(prog, mem, e)
    assert capsule_tree(prog, mem, Call(Val(leaf), "get", ())) == []


def test_rog_without_location(prog):
    mem, box, h = holder(prog, 1)
    assert rog(mem, h) == {h, box}
    assert rog(mem, h, without=box) == {h}


def test_heap_analysis_cache_tracks_writes(prog):
    mem, box, h = holder(prog, 1)
    other = mem.alloc("Box", [2])
    ha = HeapAnalysis(prog, mem)
    assert ha.erog(h) == {box}
    mem.obj(h).vals[0] = other
    mem.writes += 1
    assert ha.erog(h) == {other} == erog(prog, mem, h)


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=5000), st.integers(min_value=1, max_value=60))
def test_heap_analysis_matches_recomputation(index, stop):
    _, p = generate(3, index)
    m = Machine(p, fuel=stop)
    ha = HeapAnalysis(p, m.mem)
    for _ in range(stop):
        if not m.step():
            break
        for l in m.mem.locations():
            assert ha.rog(l) == rog(m.mem, l)
            for scope in (ALL_FIELDS, INVARIANT_FIELDS):
                assert ha.erog(l, scope) == erog(prog=p, mem=m.mem, l0=l, scope=scope)


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=5000))
def test_head_not_circular_on_fuzzed_heaps(index):
    _, p = generate(5, index)
    m = Machine(p, fuel=200)
    for _ in range(200):
        assert head_not_circular(p, m.mem) == []
        if not m.step():
            break


@pytest.mark.parametrize("name", ["cage", "person", "shipping", "person_empty_name", "empty"])
def test_every_step_of_small_corpus_is_ok(name):
    r = check_run(load_program(name), check_types=True, determinism_every=5)
    assert r.violations == []
    assert r.checked == r.steps + 1


def test_policy_parsing():
    assert OraclePolicy.parse("off").wants(3) is False
    assert OraclePolicy.parse("every-step").wants(3)
    s = OraclePolicy.parse("sampled:4")
    assert (s.k, s.wants(8), s.wants(9)) == (4, True, False)
    assert OraclePolicy.parse("sampled").k == 1
    for bad in ("sampled:0", "always"):
        with pytest.raises(ValueError):
            OraclePolicy.parse(bad)


def test_sampled_policy_checks_fewer_configurations():
    p = load_program("cage")
    every = check_run(p)
    sampled = check_run(p, OraclePolicy.parse("sampled:10"))
    assert sampled.checked < every.checked
    assert sampled.ok


def test_verdict_records():
    p = load_program("person")
    r = check_run(p, OraclePolicy.parse("sampled:10"), keep_records=True)
    assert r.records
    assert {"step", "location", "classification"} <= set(r.records[0])


def test_unknown_scope_rejected():
    with pytest.raises(ValueError):
        SoundnessOracle(load_program("cage"), scope="some")


# Encapsulated state literally covers every imm and capsule field, but only
# capsule fields the invariant reads are guarded by capsule mutators. A class
# may therefore mutate through a capsule field its invariant ignores without
# any monitor; the object stays valid but is not well encapsulated.
LOOSE = """
class Cell {
  Int v;
  Cell(Int v) { this.v = v; }
  read method Int get() { this.v }
  mut method Void set(Int v) { this.v = v; }
}

class Loose {
  capsule Cell watched;
  capsule Cell free;
  Loose(capsule Cell watched, capsule Cell free) { this.watched = watched; this.free = free; }
  read method Bool invariant() { this.watched.get() > 0 }
  mut method Void poke(Int v) { this.free.set(v); }
}

main {
  mut Loose x = new Loose(new Cell(1), new Cell(2));
  x.poke(3);
  x.poke(4);
}
"""


def test_literal_encapsulation_flags_fields_outside_the_invariant():
    p = parse(LOOSE)
    literal = check_run(p, scope=ALL_FIELDS)
    assert {v.kind for v in literal.violations} == {"not-encapsulated"}
    assert check_run(p, scope=INVARIANT_FIELDS).ok
