"""Hot numeric kernels for the RBF multilayer perceptron.

Every gradient-based routine in the package funnels through the three
functions here: a batched forward pass, a batched vector-Jacobian product
(reverse mode), and a single-point Hessian-vector product (forward over
reverse). They are written in numba-compatible numpy; when numba is
importable they are JIT-compiled, otherwise the plain-python definitions run
as-is. Set ``OCBNN_NO_NUMBA=1`` to force the pure-numpy path (e.g. to
benchmark or debug), see ``benchmarks/bench_kernels.py``.

Parameter layout: for layer sizes ``[q, h1, ..., hk, out]`` the flat vector
holds, per layer, the row-major weight matrix followed by the bias vector.
Hidden activations are ``exp(-z^2)``; the final layer is linear.
"""

import os

import numpy as np

_ENV_FLAG = "OCBNN_NO_NUMBA"


def numba_disabled() -> bool:
    return os.environ.get(_ENV_FLAG, "").strip().lower() in ("1", "true", "yes")


try:
    if numba_disabled():
        raise ImportError("numba disabled via " + _ENV_FLAG)
    from numba import njit

    NUMBA_ENABLED = True
except ImportError:
    NUMBA_ENABLED = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


def param_count(sizes: np.ndarray) -> int:
    """Number of flat parameters for the given layer-size vector."""
    total = 0
    for l in range(sizes.shape[0] - 1):
        total += int(sizes[l]) * int(sizes[l + 1]) + int(sizes[l + 1])
    return total


def py_forward_batch(w, sizes, x):
    """Raw head outputs (n, out_dim) for a batch of inputs (n, q)."""
    nl = sizes.shape[0] - 1
    a = np.ascontiguousarray(x)
    off = 0
    for l in range(nl):
        r = sizes[l]
        c = sizes[l + 1]
        wm = np.ascontiguousarray(w[off:off + r * c]).reshape(r, c)
        off += r * c
        b = w[off:off + c]
        off += c
        z = np.dot(a, wm) + b
        if l < nl - 1:
            a = np.exp(-z * z)
        else:
            a = z
    return a


def py_vjp_batch(w, sizes, x, out_grad):
    """Forward pass plus reverse-mode accumulation of a batch VJP.

    ``out_grad`` is d(scalar)/d(raw outputs), shape (n, out_dim). Returns
    ``(raw, grad)`` where ``grad`` has the flat parameter layout.
    """
    n = x.shape[0]
    nl = sizes.shape[0] - 1

    offs = np.zeros(nl + 1, np.int64)
    for l in range(nl):
        offs[l + 1] = offs[l] + sizes[l] * sizes[l + 1] + sizes[l + 1]

    acol = np.zeros(nl + 1, np.int64)
    for l in range(nl):
        acol[l + 1] = acol[l] + sizes[l]
    awidth = acol[nl] + sizes[nl]
    abuf = np.zeros((n, awidth))
    abuf[:, 0:sizes[0]] = x

    zcol = np.zeros(nl, np.int64)
    for l in range(1, nl):
        zcol[l] = zcol[l - 1] + sizes[l]
    zwidth = zcol[nl - 1] + sizes[nl]
    zbuf = np.zeros((n, zwidth))

    for l in range(nl):
        r = sizes[l]
        c = sizes[l + 1]
        wm = np.ascontiguousarray(w[offs[l]:offs[l] + r * c]).reshape(r, c)
        b = w[offs[l] + r * c:offs[l + 1]]
        a_prev = np.ascontiguousarray(abuf[:, acol[l]:acol[l] + r])
        z = np.dot(a_prev, wm) + b
        zbuf[:, zcol[l]:zcol[l] + c] = z
        if l < nl - 1:
            abuf[:, acol[l + 1]:acol[l + 1] + c] = np.exp(-z * z)
        else:
            abuf[:, acol[l + 1]:acol[l + 1] + c] = z
    raw = np.copy(abuf[:, acol[nl]:acol[nl] + sizes[nl]])

    grad = np.zeros(offs[nl])
    ones = np.ones(n)
    delta = np.ascontiguousarray(out_grad)
    for l in range(nl - 1, -1, -1):
        r = sizes[l]
        c = sizes[l + 1]
        a_prev = np.ascontiguousarray(abuf[:, acol[l]:acol[l] + r])
        gw = np.dot(np.ascontiguousarray(a_prev.T), delta)
        gb = np.dot(ones, delta)
        grad[offs[l]:offs[l] + r * c] = gw.ravel()
        grad[offs[l] + r * c:offs[l + 1]] = gb
        if l > 0:
            wm = np.ascontiguousarray(w[offs[l]:offs[l] + r * c]).reshape(r, c)
            da = np.dot(delta, np.ascontiguousarray(wm.T))
            zprev = zbuf[:, zcol[l - 1]:zcol[l - 1] + r]
            aprev = abuf[:, acol[l]:acol[l] + r]
            delta = np.ascontiguousarray(da * (-2.0 * zprev * aprev))
    return raw, grad


def py_hvp_single(w, sizes, x, u):
    """Gradient and Hessian-vector product of the (scalar) raw output.

    Requires a single-output head. Returns ``(raw, gu, g, hu)`` where ``g``
    is the parameter gradient of the output at ``x``, ``hu`` the product of
    the output's parameter Hessian with direction ``u``, and ``gu = g @ u``
    (propagated in forward mode, useful as a consistency check).
    """
    nl = sizes.shape[0] - 1

    offs = np.zeros(nl + 1, np.int64)
    for l in range(nl):
        offs[l + 1] = offs[l] + sizes[l] * sizes[l + 1] + sizes[l + 1]

    acol = np.zeros(nl + 1, np.int64)
    for l in range(nl):
        acol[l + 1] = acol[l] + sizes[l]
    awidth = acol[nl] + sizes[nl]
    abuf = np.zeros(awidth)
    adot = np.zeros(awidth)
    abuf[0:sizes[0]] = x

    zcol = np.zeros(nl, np.int64)
    for l in range(1, nl):
        zcol[l] = zcol[l - 1] + sizes[l]
    zwidth = zcol[nl - 1] + sizes[nl]
    zbuf = np.zeros(zwidth)
    zdot = np.zeros(zwidth)

    for l in range(nl):
        r = sizes[l]
        c = sizes[l + 1]
        wm = np.ascontiguousarray(w[offs[l]:offs[l] + r * c]).reshape(r, c)
        b = w[offs[l] + r * c:offs[l + 1]]
        uw = np.ascontiguousarray(u[offs[l]:offs[l] + r * c]).reshape(r, c)
        ub = u[offs[l] + r * c:offs[l + 1]]
        a_prev = np.ascontiguousarray(abuf[acol[l]:acol[l] + r])
        ad_prev = np.ascontiguousarray(adot[acol[l]:acol[l] + r])
        z = np.dot(a_prev, wm) + b
        zd = np.dot(ad_prev, wm) + np.dot(a_prev, uw) + ub
        zbuf[zcol[l]:zcol[l] + c] = z
        zdot[zcol[l]:zcol[l] + c] = zd
        if l < nl - 1:
            a = np.exp(-z * z)
            abuf[acol[l + 1]:acol[l + 1] + c] = a
            adot[acol[l + 1]:acol[l + 1] + c] = (-2.0 * z * a) * zd
        else:
            abuf[acol[l + 1]:acol[l + 1] + c] = z
            adot[acol[l + 1]:acol[l + 1] + c] = zd

    raw = abuf[acol[nl]]
    gu = adot[acol[nl]]

    g = np.zeros(offs[nl])
    hu = np.zeros(offs[nl])
    delta = np.ones(1)
    ddot = np.zeros(1)
    for l in range(nl - 1, -1, -1):
        r = sizes[l]
        c = sizes[l + 1]
        a_prev = np.ascontiguousarray(abuf[acol[l]:acol[l] + r])
        ad_prev = np.ascontiguousarray(adot[acol[l]:acol[l] + r])
        gw = np.outer(a_prev, delta)
        gwd = np.outer(ad_prev, delta) + np.outer(a_prev, ddot)
        g[offs[l]:offs[l] + r * c] = gw.ravel()
        g[offs[l] + r * c:offs[l + 1]] = delta
        hu[offs[l]:offs[l] + r * c] = gwd.ravel()
        hu[offs[l] + r * c:offs[l + 1]] = ddot
        if l > 0:
            wm = np.ascontiguousarray(w[offs[l]:offs[l] + r * c]).reshape(r, c)
            uw = np.ascontiguousarray(u[offs[l]:offs[l] + r * c]).reshape(r, c)
            da = np.dot(wm, delta)
            dad = np.dot(uw, delta) + np.dot(wm, ddot)
            zprev = zbuf[zcol[l - 1]:zcol[l - 1] + r]
            aprev = abuf[acol[l]:acol[l] + r]
            rho1 = -2.0 * zprev * aprev
            rho2 = (4.0 * zprev * zprev - 2.0) * aprev
            delta_new = rho1 * da
            ddot = rho2 * zdot[zcol[l - 1]:zcol[l - 1] + r] * da + rho1 * dad
            delta = delta_new
    return raw, gu, g, hu


if NUMBA_ENABLED:
    forward_batch = njit(cache=True)(py_forward_batch)
    vjp_batch = njit(cache=True)(py_vjp_batch)
    hvp_single = njit(cache=True)(py_hvp_single)
else:
    forward_batch = py_forward_batch
    vjp_batch = py_vjp_batch
    hvp_single = py_hvp_single
