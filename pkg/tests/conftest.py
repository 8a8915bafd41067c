import warnings

import numpy as np
import pytest
from hypothesis import settings

from pnpdg.transport import AdmissibilityWarning

settings.register_profile("pnpdg", deadline=None, max_examples=60)
settings.load_profile("pnpdg")


@pytest.fixture(autouse=True)
def _quiet_admissibility():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AdmissibilityWarning)
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


# -- acceptance summary ---------------------------------------------------------------
# test_acceptance.py records one verdict per criterion; the lines are echoed at the
# end of the run so they appear even when output capture is on.

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def verdict():
    def record(number: int, passed: bool, detail: str) -> None:
        ACCEPTANCE[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'} - {detail}")
