import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from convexrec.geometry import SampleSet

settings.register_profile(
    "default",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")


@pytest.fixture
def line_samples():
    """Three samples of |x| on [0, 1] used across the reconstruction tests."""
    return SampleSet([[0.0], [0.5], [1.0]], [0.0, 0.5, 1.0], lipschitz=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_instance(rng, dim=2, n=5, L=1.0):
    """Exact samples of a random max-affine L-Lipschitz convex function."""
    X = rng.uniform(-1, 1, size=(n, dim))
    S = rng.normal(size=(6, dim))
    S *= L * rng.uniform(0.1, 1.0, size=(6, 1)) / np.linalg.norm(S, axis=1, keepdims=True)
    b = rng.normal(scale=0.3, size=6)
    y = (X @ S.T + b).max(axis=1)
    return SampleSet(X, y, lipschitz=L)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[key])
