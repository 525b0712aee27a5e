import sys

import numpy as np
import pytest

from stablefrac.extension import ExtensionGrid, extend_poisson
from stablefrac.fracops import exponential, power
from stablefrac.gelfand import ContinuationConfig, minimal_branch


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[k])


@pytest.fixture(scope="session")
def branch_line_exp():
    return minimal_branch(exponential(), ContinuationConfig(resolution=256), n=1)


@pytest.fixture(scope="session")
def branch_disk_exp():
    return minimal_branch(exponential(), ContinuationConfig(resolution=64), n=2)


@pytest.fixture(scope="session")
def branch_disk_power():
    return minimal_branch(power(3), ContinuationConfig(resolution=64), n=2)


def middle_point(branch):
    pts = [p for p in branch.minimal() if p.lam > 0]
    return pts[len(pts) // 2]


@pytest.fixture(scope="session")
def field_line_exp(branch_line_exp):
    p = middle_point(branch_line_exp)
    return extend_poisson(p.solution, ExtensionGrid.uniform("line", h=1 / 64),
                          nonlinearity=exponential().scaled(p.lam))


@pytest.fixture(scope="session")
def field_disk_exp(branch_disk_exp):
    p = middle_point(branch_disk_exp)
    return extend_poisson(p.solution, ExtensionGrid.uniform("radial", h=1 / 64),
                          nonlinearity=exponential().scaled(p.lam))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
