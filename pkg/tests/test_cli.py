import json
import subprocess
import sys

import pytest

from ivl.cli import EXIT_DIAGNOSTICS, EXIT_FUEL, EXIT_OK, EXIT_USAGE, EXIT_VIOLATION, main
from ivl.corpus import PROGRAM_DIR


def prog(name):
    return str(PROGRAM_DIR / f"{name}.ivl")


def records(out):
    return [json.loads(line) for line in out.splitlines() if line.strip()]


def test_run_family_d_mode_count(capsys):
    assert main(["run", prog("family"), "--mode", "d", "--count"]) == EXIT_OK
    assert "total 7995 checks" in capsys.readouterr().out


def test_check_reports_rule(capsys):
    assert main(["check", prog("person_catch_broken")]) == EXIT_DIAGNOSTICS
    assert "ses-mut-capture" in capsys.readouterr().out


def test_check_clean_file(capsys):
    assert main(["check", prog("cage"), prog("person")]) == EXIT_OK


def test_run_empty_structured(capsys):
    assert main(["run", prog("empty"), "--count", "--format", "structured"]) == EXIT_OK
    rec = records(capsys.readouterr().out)[-1]
    assert rec["record"] == "counters"
    assert rec["schema_version"] == 1
    assert (rec["total"], rec["mode"], rec["outcome"]) == (0, "paper", "value")
    assert set(rec) >= {"per_class", "per_site", "steps"}


def test_count_is_run_with_counters(capsys):
    assert main(["count", prog("cage"), "--mode", "eiffel", "--format", "structured"]) == EXIT_OK
    assert records(capsys.readouterr().out)[-1]["total"] == 9


def test_uncaught_error_exit(capsys):
    assert main(["run", prog("person_empty_name")]) == EXIT_DIAGNOSTICS


def test_fuel_flag_and_environment(capsys, monkeypatch):
    assert main(["run", prog("cage"), "--fuel", "10"]) == EXIT_FUEL
    monkeypatch.setenv("IVL_FUEL", "10")
    assert main(["run", prog("cage")]) == EXIT_FUEL
    assert main(["run", prog("cage"), "--fuel", "100000"]) == EXIT_OK


def test_trace_lines(capsys):
    assert main(["trace", prog("person"), "--limit", "5", "--format", "structured"]) == EXIT_OK
    recs = records(capsys.readouterr().out)
    assert [r["step"] for r in recs] == [1, 2, 3, 4, 5]
    assert recs[0]["rule"] == "new"


def test_oracle_clean(capsys):
    assert main(["oracle", prog("cage")]) == EXIT_OK
    assert "0 violation(s)" in capsys.readouterr().out


def test_oracle_verdicts(capsys):
    assert main(["oracle", prog("person"), "--policy", "sampled:20", "--verdicts",
                 "--format", "structured"]) == EXIT_OK
    recs = records(capsys.readouterr().out)
    assert any(r["record"] == "verdict" for r in recs)
    assert recs[-1]["record"] == "summary"


def test_oracle_violation_exit(tmp_path, capsys):
    src = tmp_path / "loose.ivl"
    src.write_text("""
class Cell {
  Int v;
  Cell(Int v) { this.v = v; }
  mut method Void set(Int v) { this.v = v; }
  read method Int get() { this.v }
}
class Loose {
  capsule Cell a;
  capsule Cell b;
  Loose(capsule Cell a, capsule Cell b) { this.a = a; this.b = b; }
  read method Bool invariant() { this.a.get() > 0 }
  mut method Void poke() { this.b.set(5); }
}
main { mut Loose x = new Loose(new Cell(1), new Cell(1)); x.poke(); x.poke(); }
""")
    assert main(["oracle", str(src)]) == EXIT_OK
    assert main(["oracle", str(src), "--scope", "all"]) == EXIT_VIOLATION


def test_bad_policy_is_usage_error(capsys):
    assert main(["oracle", prog("cage"), "--policy", "sometimes"]) == EXIT_USAGE


@pytest.mark.parametrize("argv", [[], ["bogus"], ["run"], ["run", "x.ivl", "--mode", "spec"],
                                  ["sweep", "--max-depth", "9"], ["fuzz", "-n", "-1"]])
def test_usage_errors(argv, capsys):
    assert main(argv) == EXIT_USAGE


def test_missing_file(capsys):
    assert main(["run", "/nonexistent/file.ivl"]) == EXIT_USAGE


def test_parse_error_is_a_diagnostic(tmp_path, capsys):
    f = tmp_path / "bad.ivl"
    f.write_text("main { 1 + }")
    assert main(["check", str(f), "--format", "structured"]) == EXIT_DIAGNOSTICS
    rec = records(capsys.readouterr().out)[0]
    assert rec["rule_id"] == "parse" and rec["line"] == 1


def test_sweep(capsys):
    assert main(["sweep", "--max-depth", "2", "--format", "structured"]) == EXIT_OK
    recs = records(capsys.readouterr().out)
    assert [r["depth"] for r in recs] == [1, 2]
    assert recs[0]["paper"] == recs[1]["paper"]


def test_fuzz(capsys):
    assert main(["fuzz", "--seed", "0", "-n", "20", "--format", "structured"]) == EXIT_OK
    rec = records(capsys.readouterr().out)[-1]
    assert rec["programs"] == 20 and rec["failing"] == 0


def test_corpus_filter(capsys):
    assert main(["corpus", "--filter", "shipping*"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "shipping_mut_field" in out and "FAIL" not in out


def test_console_script_entry_point():
    r = subprocess.run([sys.executable, "-m", "ivl.cli", "run", prog("cage"), "--count"],
                       capture_output=True, text=True)
    assert r.returncode == 0
    assert "total 4 checks" in r.stdout
