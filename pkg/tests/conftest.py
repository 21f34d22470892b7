from __future__ import annotations

import pytest

from cape.embedding import TrigramEmbedder
from cape.harness import bundled_suite_config
from cape.world import load_default_domain

SUITE = bundled_suite_config().parent


@pytest.fixture
def household():
    return load_default_domain("household")


@pytest.fixture
def robot():
    return load_default_domain("robot")


@pytest.fixture(scope="session")
def embedder():
    return TrigramEmbedder()


@pytest.fixture
def suite_dir():
    return SUITE


_criteria: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        _criteria[name] = "PASS" if report.outcome == "passed" else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria, key=lambda n: int(n.split("_")[2])):
        terminalreporter.write_line(f"{_criteria[name]}  {name}")
