import os

os.environ.setdefault("LOG_TO_FILE", "false")
os.environ.setdefault("LOG_LEVEL", "WARNING")

import numpy as np
import pytest


def central_difference(func, x, h: float = 1e-5) -> np.ndarray:
    """Jacobian of ``func`` at ``x`` by central differences, one column per input."""
    x = np.asarray(x, dtype=float)
    base = np.atleast_1d(func(x))
    jac = np.zeros((base.size, x.size))
    for k in range(x.size):
        step = np.zeros_like(x)
        step[k] = h
        jac[:, k] = (np.atleast_1d(func(x + step)) - np.atleast_1d(func(x - step))) / (2 * h)
    return jac


def assert_jacobian_close(analytic, numeric, rtol: float = 1e-6, atol: float = 1e-8) -> None:
    analytic = np.atleast_2d(analytic)
    numeric = np.atleast_2d(numeric)
    scale = max(1.0, float(np.abs(numeric).max()))
    np.testing.assert_allclose(analytic, numeric, rtol=rtol, atol=atol * scale)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
