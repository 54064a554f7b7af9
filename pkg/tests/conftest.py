import numpy as np
import pytest

from hogl.simulation import SimConfig, build_truth, generate_dataset, replication_rng
from hogl.solver import build_problem


def simulated_problem(seed=0, rep=0, n=100, p=10, k=10, q=6, snr=1.0):
    cfg = SimConfig(n=n, p=p, k=k, q=q, snr=snr, reps=1, seed=seed)
    truth = build_truth(cfg)
    Y, A = generate_dataset(truth, cfg, replication_rng(seed, rep))
    return build_problem(Y, A, truth.X)


@pytest.fixture(scope="session")
def sim_problem():
    return simulated_problem()


@pytest.fixture(scope="session")
def small_problem():
    """Random problem small enough for dense Kronecker oracles."""
    rng = np.random.default_rng(11)
    n, p, k, q = 40, 6, 4, 3
    A = rng.standard_normal((n, k))
    t = np.linspace(-1, 1, p)
    X = np.vander(t, q)
    X /= np.linalg.norm(X, axis=0)
    Y = A @ rng.standard_normal((k, q)) @ X.T + rng.standard_normal((n, p))
    return build_problem(Y, A, X)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
