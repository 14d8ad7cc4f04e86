import pytest

from ivl.corpus import load_manifest
from ivl.parser import parse
from ivl.typecheck import KINDS, typecheck_program
from ivl.wellformed import check_program


def type_rules(src):
    return sorted({d.rule_id for d in typecheck_program(parse(src))})


@pytest.mark.parametrize("case", [c for c in load_manifest() if c.kind == "typecheck_reject"],
                         ids=lambda c: c.name)
def test_negative_corpus_fires_expected_rule(case):
    assert case.rule in KINDS
    assert case.rule in type_rules(case.source())


@pytest.mark.parametrize("case", [c for c in load_manifest() if c.kind.startswith("run")],
                         ids=lambda c: c.name)
def test_positive_corpus_typechecks(case):
    prog = parse(case.source())
    assert not [d for d in check_program(prog) if d.severity == "error"]
    assert typecheck_program(prog) == []


BOX = """
class Box {
  Int v;
  Box(Int v) { this.v = v; }
  read method Int get() { this.v }
  mut method Void set(Int v) { this.v = v; }
}
"""


def test_mutation_through_imm_rejected():
    assert type_rules(BOX + "main { imm Box b = new Box(1); b.set(2); }") != []


def test_mutation_through_mut_accepted():
    assert type_rules(BOX + "main { mut Box b = new Box(1); b.set(2); }") == []


def test_capsule_local_is_affine():
    src = BOX + "main { capsule Box b = new Box(1); imm Box x = b; imm Box y = b; }"
    assert "capsule-reuse" in type_rules(src)


def test_try_may_not_mutate_outer_mut_variable():
    src = BOX + """main {
  mut Box b = new Box(1);
  try { b.set(2); } catch (Error e) { print("caught"); }
}"""
    assert "ses-mut-capture" in type_rules(src)


def test_try_may_mutate_its_own_objects():
    src = BOX + """main {
  try { mut Box b = new Box(1); b.set(2); } catch (Error e) { print("caught"); }
}"""
    assert type_rules(src) == []


def test_unknown_class_rejected():
    assert "unknown-name" in type_rules("main { new Nope() }")
