import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

import systems  # noqa: E402

CONFIGS = os.path.join(os.path.dirname(os.path.dirname(__file__)), "configs")


@pytest.fixture(scope="session")
def quadratic():
    return systems.quadratic()


@pytest.fixture(scope="session")
def carr():
    return systems.carr()


@pytest.fixture(scope="session")
def reference():
    return systems.reference()


@pytest.fixture
def config_path():
    return lambda name: os.path.join(CONFIGS, name)


ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record a pass/fail line for an acceptance criterion, then assert it."""

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
