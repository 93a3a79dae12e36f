import numpy as np
import pytest

from ugg.core import ProblemInstance


def random_instance(rng, n, c, link_rate=0.3, sym_scale=1.0):
    s_gt = rng.uniform(-1, 1, (c, n))
    a = rng.uniform(-1, 1, (n, n)) * sym_scale
    s_tt = np.triu(a, 1)
    s_tt = s_tt + s_tt.T + np.eye(n)
    cl = np.triu((rng.random((n, n)) < link_rate).astype(np.int8), 1)
    cl = cl + cl.T
    return ProblemInstance.from_arrays(s_gt, s_tt, cl)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS = []


@pytest.fixture
def verdict(capsys):
    """Record one PASS/FAIL line per acceptance criterion; the lines are
    printed live and repeated in the terminal summary."""
    def report(label: str, ok: bool, detail: str = ""):
        line = f"{'PASS' if ok else 'FAIL'}  {label}" + (f"  ({detail})" if detail else "")
        _VERDICTS.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
