import logging

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "seqfair", deadline=None, suppress_health_check=[HealthCheck.too_slow], print_blob=True
)
settings.load_profile("seqfair")

# filled by test_acceptance.record()
ACCEPTANCE_LINES: list = []


@pytest.fixture(autouse=True)
def _quiet_guardrail_diagnostics():
    logging.getLogger("seqfair.guardrails").setLevel(logging.ERROR)
    yield


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
