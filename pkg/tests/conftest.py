import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("ci", max_examples=50, deadline=None)
settings.load_profile("ci")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def chi2_pooled(counts, probs, min_expected=5.0):
    """Chi-square statistic and dof after merging low-expectation bins into one."""
    n = counts.sum()
    expected = n * np.asarray(probs, dtype=np.float64)
    big = expected >= min_expected
    obs = list(counts[big])
    exp = list(expected[big])
    if (~big).any():
        obs.append(counts[~big].sum())
        exp.append(expected[~big].sum())
    obs = np.asarray(obs, dtype=np.float64)
    exp = np.asarray(exp)
    keep = exp > 0
    stat = float(np.sum((obs[keep] - exp[keep]) ** 2 / exp[keep]))
    return stat, int(keep.sum()) - 1


import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))


_ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one acceptance line; all lines are printed at the end of the run."""

    def emit(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
