"""Acceptance criteria 1-8. Each test prints one ``CRITERION n: PASS|FAIL``
line; the lines are repeated in the terminal summary."""
import time

import pytest

from ivl.audits import injection_audit, redex_validity_audit, ses_audit
from ivl.corpus import gui_depth_sweep, load_manifest, load_program, run_corpus
from ivl.fuzz import fuzz_check, fuzz_sources
from ivl.machine import run
from ivl.oracle import ALL_FIELDS, check_run
from ivl.protocols import ProtocolMode

FUZZ_N = 1000
FUZZ_STEPS = 200
SWEEP_DEPTH = 4
GUI_PAPER_REFERENCE = 77

RESULTS: dict = {}


def verdict(n, ok, detail):
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


def positive_cases():
    return [c for c in load_manifest() if c.kind.startswith("run")]


@pytest.fixture(scope="module")
def corpus_oracle():
    """Every-step oracle reports for the positive corpus, with wall time."""
    t = time.perf_counter()
    reps = {c.name: check_run(load_program(c.name)) for c in positive_cases()}
    return reps, time.perf_counter() - t


@pytest.fixture(scope="module")
def fuzz_oracle():
    t = time.perf_counter()
    rep = fuzz_check(0, FUZZ_N, max_steps=FUZZ_STEPS, policy="sampled:1")
    return rep, time.perf_counter() - t


def test_criterion_1_family_exact_counts(family):
    totals, worst = {}, 0.0
    for m in ProtocolMode:
        t = time.perf_counter()
        totals[m.value] = run(family, m).counters.total
        worst = max(worst, time.perf_counter() - t)
    ok = totals == {"paper": 4000, "d": 7995, "eiffel": 7995} and worst < 10
    verdict(1, ok, f"totals {totals}, slowest mode {worst:.2f} s")


def test_criterion_2_family_decomposition(family):
    sites = {m.value: {k: v for k, v in run(family, m).counters.per_site.items() if v}
             for m in ProtocolMode}
    want = {"paper": {"ctor": 5, "field_update": 2898, "capsule_mutator_exit": 1097},
            "d": {"ctor": 5, "method_entry": 3995, "method_exit": 3995},
            "eiffel": {"ctor": 5, "method_entry": 3995, "method_exit": 3995}}
    verdict(2, sites == want, f"per_site {sites}")


def test_criterion_3_gui_trend(gui):
    table = gui_depth_sweep(SWEEP_DEPTH)
    paper = {row["paper"] for row in table.values()}
    growth = [table[d]["d"] / table[d - 1]["d"] for d in range(2, SWEEP_DEPTH + 1)]
    eiffel_below = all(table[d]["eiffel"] < table[d]["d"] for d in range(2, SWEEP_DEPTH + 1))
    gui_paper = run(gui, ProtocolMode.PAPER).counters.total
    off = (gui_paper - GUI_PAPER_REFERENCE) / GUI_PAPER_REFERENCE
    ok = len(paper) == 1 and all(g >= 2 for g in growth) and eiffel_below and abs(off) <= 0.15
    verdict(3, ok, f"sweep {table}; d growth {[round(g, 1) for g in growth]}; "
                   f"GUI paper-mode {gui_paper} vs {GUI_PAPER_REFERENCE} ({off:+.1%}, routing to "
                   f"every widget: 5 ctor + 16 presses x 5 capsule mutators)")


def test_criterion_4_negative_corpus():
    neg = [c for c in load_manifest() if c.kind.endswith("_reject")]
    rep = run_corpus()
    by = {r.name: r for r in rep.results}
    bad = [f"{c.name}: {by[c.name].detail}" for c in neg if not by[c.name].ok]
    ok = len(neg) == 7 and not bad and rep.ok
    verdict(4, ok, f"{len(neg)} rejected with expected rules "
                   f"{sorted((c.name, c.rule) for c in neg)}; {bad or 'no mismatches'}; "
                   f"MagicCounter inexpressible (no interior mutation), documented")


def test_criterion_5_soundness_suite(corpus_oracle, fuzz_oracle):
    reps, t_corpus = corpus_oracle
    fuzz, t_fuzz = fuzz_oracle
    corpus_viol = {n: len(r.violations) for n, r in reps.items() if r.violations}
    steps = sum(r.checked for r in reps.values())
    literal = fuzz_check(0, FUZZ_N, max_steps=FUZZ_STEPS, scope=ALL_FIELDS)
    ok = (not corpus_viol and fuzz.ok and fuzz.programs >= FUZZ_N
          and t_corpus + t_fuzz < 600)
    verdict(5, ok, f"corpus every-step: {steps} configurations, violations {corpus_viol or 0}; "
                   f"fuzz: {fuzz.programs} programs, {fuzz.checked} configurations, "
                   f"{len(fuzz.failures)} failing; {t_corpus + t_fuzz:.0f} s; "
                   f"encapsulation scope 'invariant' (literal 'all' scope flags "
                   f"{len(literal.failures)} fuzz programs, see decisions)")


def test_criterion_6_axioms(corpus_oracle, fuzz_oracle):
    reps, _ = corpus_oracle
    fuzz, _ = fuzz_oracle
    axiom = {"head-circular", "capsule-tree"}
    bad = [(n, v.kind) for n, r in reps.items() for v in r.violations if v.kind in axiom]
    bad += [(f"fuzz {f.index}", v.kind) for f in fuzz.failures for v in f.violations
            if v.kind in axiom]
    deep = sum(r.deep_checked for r in reps.values())
    caught, ses_bad = 0, []
    for c in positive_cases():
        r = ses_audit(load_program(c.name))
        caught += r.checked
        ses_bad += r.failures
    for _, p in fuzz_sources(0, FUZZ_N):
        r = ses_audit(p, fuel=FUZZ_STEPS)
        caught += r.checked
        ses_bad += r.failures
    ok = not bad and not ses_bad and deep > 0 and caught > 0
    verdict(6, ok, f"head-not-circular and capsule-tree on {deep} small corpus configurations "
                   f"and {fuzz.deep_checked} fuzz configurations: {bad or 'no failures'}; "
                   f"SES restoration exact on {caught} caught errors: {ses_bad or 'no failures'}")


def test_criterion_7_injection_points():
    increments, bad = 0, []
    for c in positive_cases():
        r = injection_audit(load_program(c.name))
        increments += r.checked
        bad += [f"{c.name}: {f}" for f in r.failures]
    verdict(7, not bad, f"{increments} paper-mode increments cross-checked against "
                        f"new/update/capsule-mutator redexes and per_site: {bad or 'no failures'}")


def test_criterion_8_validity_spot_check():
    calls, bad, programs = 0, [], 0
    for i, (_, p) in enumerate(fuzz_sources(0, FUZZ_N)):
        r = redex_validity_audit(p, fuel=FUZZ_STEPS)
        programs += 1
        calls += r.checked
        bad += [f"program {i}: {f}" for f in r.failures]
    verdict(8, not bad and calls > 0,
            f"valid() on every location of every untrusted redex in {programs} fuzz traces: "
            f"{calls} calls, {len(bad)} failures")
