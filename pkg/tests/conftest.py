from pathlib import Path

import pytest

from imp_pricing.market import load_model

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES


@pytest.fixture(scope="session")
def binomial():
    return load_model(FIXTURES / "binomial.json")


@pytest.fixture(scope="session")
def trinomial():
    return load_model(FIXTURES / "trinomial.json")


@pytest.fixture(scope="session")
def trinomial_emm():
    return load_model(FIXTURES / "trinomial_emm.json")


@pytest.fixture(scope="session")
def two_claims():
    return load_model(FIXTURES / "two_claims.json")


@pytest.fixture(scope="session")
def two_period():
    return load_model(FIXTURES / "two_period.json")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
