import pytest

from ivl.corpus import load_program


@pytest.fixture(scope="session")
def family():
    return load_program("family")


@pytest.fixture(scope="session")
def gui():
    return load_program("gui")


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
