import numpy as np
import pytest

from oblivann import pq
from oblivann.graph import BuildParams, build, pack


@pytest.fixture(scope="session")
def small_data():
    rng = np.random.default_rng(11)
    return rng.random((1000, 16), dtype=np.float32)


@pytest.fixture(scope="session")
def small_index(small_data):
    g = build(small_data, BuildParams(max_degree=16, build_list_size=64, alpha=1.01, seed=0))
    cb_p = pq.train(small_data, 8, k_c=64, iters=10, seed=0)
    cb_t = pq.train(small_data, 4, k_c=64, iters=10, seed=1)
    return g, pack(g, cb_p), cb_t, cb_p


@pytest.fixture(scope="session")
def uniform_10k():
    """10k uniform 32-D points plus an index built once per session (shared by the slow tests)."""
    rng = np.random.default_rng(2024)
    X = rng.random((10_000, 32), dtype=np.float32)
    Q = rng.random((200, 32), dtype=np.float32)
    g = build(X, BuildParams(max_degree=32, build_list_size=128, alpha=1.01, seed=0))
    cb_p = pq.train(X, 64, k_c=256, iters=10, seed=0)
    cb_t = pq.train(X, 16, k_c=256, iters=10, seed=1)
    return X, Q, g, pack(g, cb_p), cb_t, cb_p


# ---- acceptance reporting: one PASS/FAIL line per criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    def record(criterion: str, ok: bool, detail: str = "") -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
