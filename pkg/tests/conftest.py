import numpy as np
import pytest

from dpaa.graph import build_graph


def random_pairs(rng: np.random.Generator, num_users: int, num_items: int, n: int) -> np.ndarray:
    return np.column_stack([rng.integers(0, num_users, n), rng.integers(0, num_items, n)])


def random_graph(rng: np.random.Generator, num_users: int, num_items: int, n: int):
    return build_graph(random_pairs(rng, num_users, num_items, n), num_users, num_items)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_graph():
    # 3 users, 3 items, 5 edges
    return build_graph([(0, 0), (0, 1), (1, 1), (2, 1), (2, 2)], 3, 3)


# acceptance criteria report ------------------------------------------------------

ACCEPTANCE_RESULTS: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        status, title, detail = ACCEPTANCE_RESULTS[key]
        line = f"{status} criterion {key}: {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
