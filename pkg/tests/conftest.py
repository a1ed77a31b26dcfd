import numpy as np
import pytest

from gfa.model import build_dataset, default_hyperparameters
from gfa.vb import init_state, prepare, update_tau, update_w, update_z, update_alpha


def random_instance(seed, n=None, dims=None, k=None, full_rank=None):
    """Small random problem: centered dataset, hyperparameters and a warmed-up state."""
    rng = np.random.default_rng(seed)
    if dims is None:
        m = int(rng.integers(1, 5))
        dims = list(rng.integers(1, 4, size=m))
        while sum(dims) > 12:
            dims[int(np.argmax(dims))] -= 1
    m = len(dims)
    n = n or int(rng.integers(3, 21))
    k = k or int(rng.integers(1, 6))
    if full_rank is None:
        full_rank = bool(rng.integers(0, 2))
    rank = min(m, k) if full_rank else int(rng.integers(0, min(m, k)))
    x = rng.standard_normal((n, sum(dims))) @ rng.standard_normal((sum(dims), sum(dims)))
    data, _, _ = prepare(build_dataset(x, dims))
    h = default_hyperparameters(m, k, rank=rank)
    return data, h, init_state(data, h, seed)


def warm(state, data, h, sweeps=2):
    for _ in range(sweeps):
        state = update_w(state, data)
        state = update_z(state, data)
        state = update_alpha(state, h)
        state = update_tau(state, data, h)
    return state


@pytest.fixture
def small_problem():
    data, h, state = random_instance(3, n=6, dims=[2, 3], k=3, full_rank=True)
    return data, h, warm(state, data, h)


ACCEPTANCE_LINES: list[str] = []


def record(criterion, passed, detail):
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
