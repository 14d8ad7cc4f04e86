import json

import pytest

from ivl.corpus import (
    KINDS, MAX_SWEEP_DEPTH, MODES, PROGRAM_DIR, case, check_case, gui_depth_sweep,
    load_manifest, load_program, run_corpus, sweep_source,
)
from ivl.machine import run
from ivl.parser import parse
from ivl.protocols import ProtocolMode


def test_manifest_is_versioned_and_complete():
    raw = json.loads((PROGRAM_DIR / "manifest.json").read_text())
    assert raw["schema_version"] == 1
    names = {c.name for c in load_manifest()}
    assert len(names) == len(raw["cases"])
    for c in load_manifest():
        assert (PROGRAM_DIR / c.path).is_file()
        assert c.kind in KINDS
        if c.kind.endswith("_reject"):
            assert c.rule
        else:
            assert set(c.totals) == {m.value for m in MODES}


def test_seven_negative_cases():
    neg = [c for c in load_manifest() if c.kind.endswith("_reject")]
    assert len(neg) == 7


# family and gui are long runs, checked by the acceptance suite
@pytest.mark.parametrize("c", [c for c in load_manifest() if c.name not in ("family", "gui")],
                         ids=lambda c: c.name)
def test_case_matches_expectation(c):
    r = check_case(c)
    assert r.ok, r.detail


def test_run_corpus_filter():
    rep = run_corpus("person*")
    assert {r.name for r in rep.results} == {"person", "person_empty_name", "person_catch_broken"}
    assert rep.ok and rep.mismatches() == []


def test_unknown_case():
    with pytest.raises(KeyError):
        case("nope")


def test_family_per_site_decomposition(family):
    # 1095 Family.processDay calls + 2 addChild are capsule mutators;
    # 2898 Person.processDay field updates; 5 constructors
    paper = run(family, ProtocolMode.PAPER).counters.per_site
    assert paper == {"ctor": 5, "field_update": 2898, "capsule_mutator_exit": 1097,
                     "method_entry": 0, "method_exit": 0}
    for m in (ProtocolMode.D, ProtocolMode.EIFFEL):
        assert run(family, m).counters.per_site == {
            "ctor": 5, "field_update": 0, "capsule_mutator_exit": 0,
            "method_entry": 3995, "method_exit": 3995}


def gui_visible_state_total(pads, buttons_each, presses, getters, backed):
    """Checks for the GUI program under a visible-state protocol.

    One check of the top widget's invariant costs itself plus the getter
    calls it makes on its pads: ``inside`` calls every getter once per pad,
    ``overlap`` calls every getter on both pads of each pair, and each getter
    call costs an entry and an exit check on its pad (pads' own invariants
    only touch buttons, which declare none). Field-backed getters are exempt.
    Each press runs dispatch on the top widget (2 checks of the above cost)
    and on every pad (2 plain checks each); construction checks each pad once
    and the top widget once.
    """
    g = getters - backed
    pairs = pads * (pads - 1) // 2
    top = 1 + pads * g * 2 + pairs * 2 * g * 2
    assert buttons_each * pads == presses
    return pads + top + presses * (2 * top + 2 * pads)


def test_gui_totals_follow_the_check_formula(gui):
    d = gui_visible_state_total(pads=4, buttons_each=4, presses=16, getters=4, backed=0)
    eiffel = gui_visible_state_total(pads=4, buttons_each=4, presses=16, getters=4, backed=2)
    # monitors: five constructors, then per press one capsule mutator exit
    # for the top widget's dispatch and one per pad
    paper = 5 + 16 * 5
    assert case("gui").totals == {"paper": paper, "d": d, "eiffel": eiffel}
    assert run(gui, ProtocolMode.PAPER).counters.total == paper


def test_gui_reconstruction_has_21_widgets_16_buttons(gui):
    r = run(gui, ProtocolMode.PAPER)
    classes = [o.cls for o in r.memory.store.values()]
    assert classes.count("Button") == 16
    assert classes.count("SafeMovable") + classes.count("Button") == 21


def test_sweep_source_shape():
    src = sweep_source(3, 4)
    prog = parse(src)
    r = run(prog, ProtocolMode.PAPER)
    assert r.outcome == "value"
    assert [o.cls for o in r.memory.store.values()].count("SafeMovable") == 4
    with pytest.raises(ValueError):
        sweep_source(5, 4)


def test_sweep_paper_mode_is_depth_independent():
    table = gui_depth_sweep(3, modes=(ProtocolMode.PAPER,))
    # K constructors plus every movable dispatching each of the K presses
    assert {row["paper"] for row in table.values()} == {3 + 3 * 3}


def test_sweep_depth_bounds():
    with pytest.raises(ValueError):
        gui_depth_sweep(MAX_SWEEP_DEPTH + 1)
    with pytest.raises(ValueError):
        gui_depth_sweep(0)


def test_load_program_parses():
    assert "Cage" in load_program("cage").classes
