import numpy as np
import pytest

from mvlevy import Ball, Box, Polyhedron, WholeSpace


def domain_variants():
    return {
        "whole": WholeSpace(2),
        "box": Box([-1.0, -0.5], [1.0, 2.0]),
        "ball": Ball([0.5, -0.5], 1.5),
        "polyhedron": Polyhedron([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]], [1.0, 1.0, 1.0], [0.0, 0.0]),
    }


@pytest.fixture(params=list(domain_variants()))
def domain(request):
    return domain_variants()[request.param]


@pytest.fixture
def gen():
    return np.random.default_rng(12345)


ACCEPTANCE = {}


def record(criterion: int, passed: bool, detail: str):
    ACCEPTANCE[criterion] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
