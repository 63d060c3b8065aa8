from __future__ import annotations

import pytest

from rcsampler.circuit import gen_random_circuit

# criterion id -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"criterion {cid:2d}: {status}  {detail}")


@pytest.fixture(scope="session")
def circuit12():
    return gen_random_circuit(12, 14, "line", seed=3)
