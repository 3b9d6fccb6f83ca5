import numpy as np
import pytest

from bloomlab import DyadicGrid, GridFunction


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)


def rand_fn(grid: DyadicGrid, rng, positive=False) -> GridFunction:
    v = rng.normal(size=grid.n_leaves)
    return GridFunction(grid, np.exp(v) if positive else v)


def leaf_coords(grid: DyadicGrid):
    """Row-major leaf coordinates (left corners) in absolute position."""
    side = grid.side
    idx = np.array(np.unravel_index(np.arange(grid.n_leaves), (side,) * grid.dim)).T
    return idx / side


def cube_contains_point(Q, x):
    """Independent membership oracle: point x (absolute coords) in cube Q of an unshifted grid."""
    w = 2.0 ** -Q.level
    return all(i * w <= xi < (i + 1) * w for i, xi in zip(Q.index, x))


ACCEPTANCE_LINES: list[str] = []


def report_criterion(number: int, name: str, ok: bool, detail: str) -> None:
    """Print and remember one PASS/FAIL line for the acceptance summary."""
    line = f"criterion {number:2d} {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
