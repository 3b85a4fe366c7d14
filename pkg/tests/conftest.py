import functools
import os

import numpy as np
import pytest

os.environ.setdefault("MPLBACKEND", "Agg")

from srflow.flow import TimeGrid, build_circle1d, build_graph  # noqa: E402


def two_point(grid=(0.5, 1.5, 100), c=1.0, m=(1.0, 1.0)):
    """Static two-state space; the generator has spectral gap 2c."""
    C = np.array([[0.0, c], [c, 0.0]])
    return build_graph(np.asarray(m, float), C, TimeGrid(*grid), metric=np.array([[0.0, 1.0], [1.0, 0.0]]))


def random_graph_flow(seed: int, n: int = 8, steps: int = 100, grid=(0.5, 1.5), density: float = 1.0,
                      static: bool = False):
    """Connected random graph with smoothly varying conductances and log-density."""
    rng = np.random.default_rng(seed)
    A = rng.uniform(0.5, 1.5, (n, n))
    A = np.triu(A, 1)
    if density < 1.0:
        keep = np.triu(rng.uniform(size=(n, n)) < density, 1)
        keep[np.arange(n - 1), np.arange(1, n)] = True  # path keeps it connected
        A = A * keep
    A = A + A.T
    B = rng.uniform(-0.5, 0.5, (n, n))
    B = B + B.T
    m = rng.uniform(0.5, 2.0, n)
    amp, ph = rng.uniform(0.0, 1.0, n), rng.uniform(0.0, 6.0, n)
    g = TimeGrid(grid[0], grid[1], steps)
    if static:
        return build_graph(m, A, g, logdensity=0.3 * amp)
    return build_graph(m, lambda t: A * np.exp(B * np.sin(2 * t)), g,
                       logdensity=lambda t: 0.3 * np.sin(1.5 * t + ph) * amp)


def circle(a=0.5, n=64, grid=(0.5, 1.5, 50), static=True, phi=None):
    phi = phi or (lambda t, x: 0.0 * x)
    return build_circle1d(n, phi, lambda t, x: a * np.cos(x), TimeGrid(*grid), static=static)


@pytest.fixture(scope="session")
def tp():
    return two_point()


@pytest.fixture(scope="session")
def rand_flow():
    return random_graph_flow(3, n=8, steps=100)


@functools.lru_cache(maxsize=None)
def shipped_run(name: str, seed=None):
    """Suite run of a shipped scenario, shared by every test module in the session."""
    from srflow.scenarios import load_scenario, run_scenario

    return run_scenario(load_scenario(name), seed=seed)


ACCEPTANCE = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    """Remember one acceptance line; printed at the end of the session."""
    ACCEPTANCE[criterion] = f"criterion {criterion}: {'PASS' if passed else 'FAIL'} ({detail})"
    print(ACCEPTANCE[criterion])


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
