import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from wwrouter.grid import Design, Macro, Net

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def random_design(rng: np.random.Generator, max_layers=3, max_side=20, max_nets=6,
                  obstacle_frac=0.15, name="rand") -> Design:
    """Small random design with random blockages; pins are distinct free nodes."""
    L = int(rng.integers(1, max_layers + 1))
    R = int(rng.integers(3, max_side + 1))
    C = int(rng.integers(3, max_side + 1))
    total = L * R * C
    n_obs = int(rng.integers(0, int(obstacle_frac * total) + 1))
    flat = rng.permutation(total)
    obstacles = []
    for v in flat[:n_obs]:
        lr, c = divmod(int(v), C)
        l, r = divmod(lr, R)
        obstacles.append((l, r, c))
    free = flat[n_obs:]
    n_nets = int(rng.integers(1, max_nets + 1))
    nets = []
    pos = 0
    for i in range(n_nets):
        k = int(rng.integers(2, 4))
        if pos + k > len(free):
            break
        pins = []
        for v in free[pos : pos + k]:
            lr, c = divmod(int(v), C)
            l, r = divmod(lr, R)
            pins.append((l, r, c))
        pos += k
        nets.append(Net(f"n{i:02d}", tuple(pins)))
    return Design.build(name, (L, R, C), nets, obstacles=obstacles)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def corridor_design() -> Design:
    """Two nets that must both squeeze through a one-track gap in a wall.

    The conflict is unresolvable: used for congestion and non-convergence cases.
    """
    wall = Macro(0, 0, 3, 0, 1, 3)
    wall2 = Macro(0, 3, 3, 0, 6, 3)
    nets = [
        Net("a", ((0, 1, 0), (0, 1, 6))),
        Net("b", ((0, 3, 0), (0, 3, 6))),
    ]
    return Design.build("corridor", (1, 7, 7), nets, macros=[wall, wall2])


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
