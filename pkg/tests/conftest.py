import numpy as np
import pytest

from dccox import CovariateSet, EventStream, KernelSpec

# verdict lines appended by the acceptance tests, echoed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_instance(n=4, p=2, seed=0, m=60, tau=1.0, pieces=2):
    """Small dense random instance: every dyad active, piecewise covariates."""
    rng = np.random.default_rng(seed)
    sender = rng.integers(1, n + 1, size=m)
    receiver = rng.integers(1, n, size=m)
    receiver = receiver + (receiver >= sender)
    times = np.round(rng.uniform(0.01, tau, size=m), 6)
    es = EventStream(n, tau, sender, receiver, times)
    default = [(0.0, rng.standard_normal(p))]
    for q in range(1, pieces):
        default.append((q * tau / pieces, rng.standard_normal(p)))
    exceptions = {}
    for (i, j) in [(1, 2), (2, 1)]:
        path = [(0.0, rng.standard_normal(p)), (0.37 * tau, rng.standard_normal(p))]
        exceptions[(i, j)] = path
    zs = CovariateSet.from_paths(n, p, default, exceptions=exceptions)
    return es, zs


@pytest.fixture
def inst44():
    return random_instance(n=4, p=2, seed=11, m=80)


@pytest.fixture
def kern():
    return KernelSpec("gaussian", h1=0.35, h2=0.3)
