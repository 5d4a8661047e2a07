from __future__ import annotations

import random

import pytest

from adns.harness.scenarios import World, scenario_l7


@pytest.fixture(scope="session")
def l7_world() -> World:
    """A completed bootstrap + L7 run shared by read-only tests."""
    world = World(seed=0)
    scenario_l7(world)
    return world


@pytest.fixture
def fresh_l7() -> World:
    world = World(seed=0)
    scenario_l7(world)
    return world


@pytest.fixture
def rng() -> random.Random:
    return random.Random(1234)


def pytest_terminal_summary(terminalreporter):
    from support import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s[2:4])):
            terminalreporter.write_line(line)
