"""Shared fixtures and the acceptance-criterion reporter."""

import pathlib

import numpy as np
import pytest

from congested_ot import load_instance

FIXTURES = pathlib.Path(__file__).resolve().parent.parent / "fixtures"

_CRITERION_LINES = []


def record_criterion(number: int, title: str, passed: bool, detail: str = ""):
    status = "PASS" if passed else "FAIL"
    suffix = f" ({detail})" if detail else ""
    line = f"{status} criterion {number:2d}: {title}{suffix}"
    _CRITERION_LINES.append((number, line))
    print(line)
    assert passed, line


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERION_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_CRITERION_LINES):
        terminalreporter.write_line(line)


@pytest.fixture
def fixture_path():
    return lambda name: FIXTURES / f"{name}.json"


@pytest.fixture
def example_3_1():
    return load_instance(FIXTURES / "example-3-1.json")


@pytest.fixture
def example_3_2():
    return load_instance(FIXTURES / "example-3-2.json")


@pytest.fixture
def appendix_a_linear():
    return load_instance(FIXTURES / "appendix-a-linear.json")


@pytest.fixture
def appendix_a_quadratic():
    return load_instance(FIXTURES / "appendix-a-quadratic.json")


@pytest.fixture
def appendix_b():
    return load_instance(FIXTURES / "appendix-b.json")


@pytest.fixture
def appendix_c():
    return load_instance(FIXTURES / "appendix-c.json")


APPENDIX_C_PLAN = np.array(
    [[8.17174, 3.29304], [6.19868, 4.79052], [10.4517, 7.18412]]
)
