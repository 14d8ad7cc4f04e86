"""Interpreter and verification toolkit for a small object-oriented language
with reference capabilities (mut, imm, capsule, read), object capabilities and
runtime-checked class invariants."""
from .machine import Machine, RunResult, StepBudgetExceeded, run, trace
from .oracle import Config, SoundnessOracle, assert_ok, check_run
from .parser import ParseError, parse
from .protocols import CheckCounters, ProtocolMode
from .typecheck import typecheck_program
from .wellformed import check_program

__version__ = "0.1.0"

__all__ = [
    "CheckCounters", "Config", "Machine", "ParseError", "ProtocolMode", "RunResult",
    "SoundnessOracle", "StepBudgetExceeded", "assert_ok", "check_program", "check_run",
    "parse", "run", "trace", "typecheck_program",
]
