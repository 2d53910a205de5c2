import functools

import numpy as np
import pytest

from switchbsde.instances import CI_NAMES, instance
from switchbsde.lattice import build_chain
from switchbsde.oracle import dp_value
from switchbsde.switching import picard_solve


@functools.lru_cache(maxsize=None)
def solved(name, n_steps=None):
    """(problem, grid, solution, report, dp table) for a reference instance, cached per session."""
    doc = instance(name, n_steps)
    grid = build_chain(doc.problem, doc.n_steps)
    sol, rep = picard_solve(grid, doc.problem, track_bounds=True)
    return doc.problem, grid, sol, rep, dp_value(grid, doc.problem)


@pytest.fixture(params=CI_NAMES)
def ci_case(request):
    return (request.param,) + solved(request.param)


def max_slice_diff(a, b):
    return max(float(np.max(np.abs(x - y))) for x, y in zip(a, b))


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def record(number, title, passed, detail=""):
    ACCEPTANCE[number] = (title, bool(passed), detail)
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number}. {title}: {detail}")
