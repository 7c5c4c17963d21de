import numpy as np
import pytest

from drlpdid import NEVER, Panel, build_stack

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def four_unit_panel(y=None) -> Panel:
    """Units u1..u4 entering at 3, 5, never, 3 over six periods."""
    if y is None:
        y = np.arange(24, dtype=float).reshape(4, 6) ** 1.5
    return Panel.from_arrays(y, [3, 5, None, 3], unit_ids=np.array(["u1", "u2", "u3", "u4"]))


def random_panel(seed: int, N: int = 40, T: int = 8, k: int = 2, p_never: float = 0.3,
                 n_clusters: int | None = None, effect: float = 1.0) -> Panel:
    """Staggered panel with covariate-dependent timing and trends."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(N, k))
    dates = np.arange(3, T + 1)
    score = x[:, 0] if k else np.zeros(N)
    p_ever = 1 / (1 + np.exp(-0.5 * score))
    ever = rng.random(N) > p_never * (2 - p_ever)
    ft = np.where(ever, rng.choice(dates, size=N), NEVER)
    ft[0], ft[1] = NEVER, dates[0]
    t = np.arange(1, T + 1)
    trend = (x @ np.linspace(0.5, -0.3, k))[:, None] * t / T if k else 0.0
    y = rng.normal(size=(N, 1)) + trend + rng.normal(size=(N, T))
    on = (ft[:, None] != NEVER) & (t[None, :] >= ft[:, None])
    y = y + effect * on * (t[None, :] - ft[:, None] + 1)
    cl = np.arange(N) if n_clusters is None else rng.integers(0, n_clusters, N)
    return Panel(y, ft.astype(np.int64), x, cl)


def single_cell_stack():
    """Two entrants at t=3 with long differences (3, 5) and two controls with (1, 1)."""
    y = np.zeros((4, 4))
    y[:, 2] = [3.0, 5.0, 1.0, 1.0]
    return build_stack(Panel.from_arrays(y, [3, 3, None, None]), 0)


def count_stack(n1, n0, x=None, delta=None):
    """h=0 stack with ``n1`` entrants at t=3 and ``n0`` never-treated controls."""
    n = n1 + n0
    y = np.zeros((n, 4))
    if delta is not None:
        y[:, 2] = delta
    x = np.zeros((n, 0)) if x is None else np.asarray(x, dtype=float).reshape(n, -1)
    return build_stack(Panel.from_arrays(y, [3] * n1 + [None] * n0, x), 0)


@pytest.fixture
def panel4():
    return four_unit_panel()
