import sys
from pathlib import Path

import pytest

from urn_ldp import ReplacementMatrix, SkewSpec, UrnConfig

sys.path.insert(0, str(Path(__file__).parent))


def make_config(rows, skew=None, y0=(1, 1)):
    return UrnConfig(ReplacementMatrix.from_rows(rows), skew or SkewSpec.identity(), *y0)


@pytest.fixture
def base_config():
    return make_config([[2, 4], [3, 6]])


@pytest.fixture
def golden_config():
    return make_config([[4, 1], [5, 4]])


_ACCEPTANCE = []


@pytest.fixture
def record():
    """Log one PASS/FAIL line for an acceptance criterion (printed at the end of the run)."""

    def _record(number, passed, detail, seconds=None):
        timing = f" [{seconds:.2f} s]" if seconds is not None else ""
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'} - {detail}{timing}"
        _ACCEPTANCE.append(line)
        print(line)
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
