import numpy as np
import pytest

from ocbnn.network import NetworkArch


def central_diff(f, x0, step=1e-6):
    """Central finite differences of a scalar function of a vector."""
    x0 = np.asarray(x0, dtype=np.float64)
    grad = np.zeros_like(x0)
    for i in range(x0.size):
        xp = x0.copy()
        xm = x0.copy()
        xp[i] += step
        xm[i] -= step
        grad[i] = (f(xp) - f(xm)) / (2.0 * step)
    return grad


def rel_err(got, want, floor=1e-8):
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    return np.max(np.abs(got - want) / (np.abs(want) + floor))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def small_regression_arch():
    return NetworkArch(1, (5,), "regression", noise_sd=0.1)


@pytest.fixture
def small_binary_arch():
    return NetworkArch(2, (4,), "binary_logit")


@pytest.fixture
def small_kclass_arch():
    return NetworkArch(2, (4,), "k_class", n_classes=3)
