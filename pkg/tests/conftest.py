import re

import numpy as np
import pytest

# criterion number -> list of detail strings recorded by the acceptance tests
ACCEPTANCE_DETAILS = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def report(request):
    """Attach a one-line measurement to the acceptance criterion of the calling test."""
    number = int(re.search(r"test_criterion_(\d+)", request.node.name).group(1))

    def _report(text):
        ACCEPTANCE_DETAILS.setdefault(number, []).append(text)
        print(f"criterion {number}: {text}")

    return _report


def pytest_terminal_summary(terminalreporter):
    outcomes = {}
    for key in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(key, []):
            m = re.search(r"test_acceptance\.py::test_criterion_(\d+)", rep.nodeid)
            if m and rep.when in ("call", "setup"):
                if key != "passed" or rep.when == "call":
                    outcomes.setdefault(int(m.group(1)), []).append(key == "passed")
    if not outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(outcomes):
        status = "PASS" if all(outcomes[number]) else "FAIL"
        detail = "; ".join(ACCEPTANCE_DETAILS.get(number, []))
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {detail}")
