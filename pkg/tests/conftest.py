import functools
import os
import sys

import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

from lobdark.scenario import load_scenario  # noqa: E402
from lobdark.solver import solve_backward  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@functools.lru_cache(maxsize=None)
def solved(name: str):
    """Solve a bundled scenario once per test session."""
    sc = load_scenario(name)
    value, policy, diag = solve_backward(sc.model, sc.objective, sc.require_grid())
    return sc, value, policy, diag


@pytest.fixture(scope="session")
def solve_bundled():
    return solved


@pytest.fixture
def smoke():
    return load_scenario("smoke")
