import logging

import pytest

from asthma_risk.data_io import generate_cohort, planted_risk, read_manifest


def pytest_configure(config):
    # clamp warnings from tuning trials are expected and noisy
    logging.getLogger("asthma_risk.gbdt").setLevel(logging.ERROR)


@pytest.fixture(scope="session")
def pre_manifest():
    return read_manifest("pre_covid")


@pytest.fixture(scope="session")
def post_manifest():
    return read_manifest("post_covid")


@pytest.fixture(scope="session")
def ed_risk(pre_manifest):
    return planted_risk("ed", pre_manifest)


@pytest.fixture(scope="session")
def small_cohort(pre_manifest, ed_risk):
    return generate_cohort(pre_manifest, 600, ed_risk, 11, contamination_rate=0.05)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance(capsys):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number: int, title: str, passed: bool, detail: str = "") -> None:
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
