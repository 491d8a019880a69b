import sys

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20241015)


def random_spd(rng, m, spread=2.0):
    q, _ = np.linalg.qr(rng.standard_normal((m, m)))
    lam = 10.0 ** rng.uniform(-spread / 2, spread / 2, size=m)
    out = (q * lam) @ q.T
    return 0.5 * (out + out.T)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
