"""Kernel-level checks: jitted and pure-numpy paths agree, and both match
finite differences."""

import numpy as np
import pytest

from ocbnn import kernels

from conftest import central_diff


def _random_case(seed, sizes):
    sizes = np.asarray(sizes, dtype=np.int64)
    rng = np.random.default_rng(seed)
    m = kernels.param_count(sizes)
    w = rng.normal(0.0, 0.8, m)
    x = rng.normal(size=(6, sizes[0]))
    og = rng.normal(size=(6, sizes[-1]))
    return sizes, w, x, og


@pytest.mark.parametrize("sizes", [(1, 5, 1), (2, 4, 3), (3, 6, 4, 2)])
def test_vjp_matches_finite_differences(sizes):
    sizes, w, x, og = _random_case(1, sizes)

    def scalar(wv):
        return float(np.sum(kernels.py_forward_batch(wv, sizes, x) * og))

    _, grad = kernels.vjp_batch(w, sizes, x, og)
    fd = central_diff(scalar, w)
    assert np.max(np.abs(grad - fd) / (np.abs(fd) + 1e-7)) < 1e-5


def test_vjp_returns_forward_outputs():
    sizes, w, x, og = _random_case(2, (2, 3, 2))
    raw = kernels.forward_batch(w, sizes, x)
    raw2, _ = kernels.vjp_batch(w, sizes, x, og)
    np.testing.assert_array_equal(raw, raw2)


def test_hvp_matches_finite_differences_of_gradient():
    sizes, w, x, _ = _random_case(3, (2, 4, 3, 1))
    rng = np.random.default_rng(4)
    u = rng.normal(size=w.size)
    xv = x[0]

    def grad_fn(wv):
        _, g = kernels.py_vjp_batch(wv, sizes, xv.reshape(1, -1), np.ones((1, 1)))
        return g

    raw, gu, g, hu = kernels.hvp_single(w, sizes, xv, u)
    assert raw == pytest.approx(float(kernels.py_forward_batch(w, sizes, xv.reshape(1, -1))[0, 0]))
    assert gu == pytest.approx(float(g @ u))
    fd = (grad_fn(w + 1e-6 * u) - grad_fn(w - 1e-6 * u)) / 2e-6
    assert np.max(np.abs(hu - fd)) < 1e-6


def test_python_and_selected_paths_agree():
    # when numba is active the compiled kernels must agree with the pure
    # definitions to float rounding; with numba disabled they are identical
    sizes, w, x, og = _random_case(5, (2, 5, 3))
    raw_p, grad_p = kernels.py_vjp_batch(w, sizes, x, og)
    raw_j, grad_j = kernels.vjp_batch(w, sizes, x, og)
    np.testing.assert_allclose(raw_j, raw_p, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(grad_j, grad_p, rtol=1e-10, atol=1e-13)
    np.testing.assert_allclose(
        kernels.forward_batch(w, sizes, x),
        kernels.py_forward_batch(w, sizes, x),
        rtol=1e-12, atol=1e-14,
    )


def test_param_count():
    assert kernels.param_count(np.array([1, 1, 1])) == 1 * 1 + 1 + 1 * 1 + 1
    assert kernels.param_count(np.array([2, 10, 3])) == 2 * 10 + 10 + 10 * 3 + 3
