import numpy as np
import pytest
from scipy.special import expit


@pytest.fixture()
def rng():
    return np.random.default_rng(20240611)


def simulate_zip(rng, n, beta=(1.0, -0.4, 0.3), gamma=(-0.5, 0.4, 0.0), p_t=0.5):
    """Small ZIP generator used by unit tests (independent of zibc.simulation)."""
    t = (rng.random(n) < p_t).astype(float)
    x = rng.standard_normal(n)
    x -= x.mean()
    X = np.column_stack([np.ones(n), t, x])
    pi = expit(X @ np.asarray(gamma))
    mu = np.exp(X @ np.asarray(beta))
    y = np.where(rng.random(n) < pi, 0, rng.poisson(mu)).astype(float)
    return X, y, pi


def central_gradient(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
