import numpy as np
import pytest

from mectwin.params import SystemParams


@pytest.fixture
def params() -> SystemParams:
    return SystemParams()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240521)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        ok, detail = mod.RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
