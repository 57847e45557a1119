import numpy as np
import pytest

from xbartherm.geometry import CrossbarSpec, MeshPolicy, build_model

QUICK = MeshPolicy().coarsened(2.0)


@pytest.fixture(scope="session")
def quick_mesh():
    return QUICK


@pytest.fixture(scope="session")
def model_1x1_quick():
    return build_model(CrossbarSpec(rows=1, cols=1), QUICK)


@pytest.fixture(scope="session")
def model_3x3_quick():
    return build_model(CrossbarSpec(sp=400e-9), QUICK)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240611)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


def record(n: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE[n] = (bool(ok), detail)
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
