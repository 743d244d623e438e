import sys

import pytest
from hypothesis import HealthCheck, settings

from obliqc.oblivious import MaskedBackend, ReferenceBackend, TraceBackend

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def ref():
    b = ReferenceBackend()
    return b, b.keygen(16)


@pytest.fixture
def ref32():
    b = ReferenceBackend()
    return b, b.keygen(32)


@pytest.fixture
def tracer():
    b = TraceBackend()
    return b, b.keygen(16)


@pytest.fixture
def masked():
    b = MaskedBackend()
    return b, b.keygen(16)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[cid])
