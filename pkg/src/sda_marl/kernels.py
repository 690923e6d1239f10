"""Hot numeric kernels for the three-layer MLP engine.

Every kernel exists twice: a numba-jitted variant and a pure-numpy twin
with identical semantics.  The jitted path is used by default when numba
imports cleanly; setting the environment variable ``SDA_MARL_NO_NUMBA``
to a truthy value ("1", "true", "yes") forces the numpy path.  Both
paths operate on float64 C-contiguous arrays and produce results that
agree to machine precision, so everything downstream (tests, training,
checkpoints) is backend-agnostic.

Shapes follow one convention: activations are (batch, dim), weight
matrices are (fan_in, fan_out), biases are (fan_out,).
"""

from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("SDA_MARL_NO_NUMBA", "").strip().lower()
NUMBA_DISABLED = _FLAG in ("1", "true", "yes")

try:  # pragma: no cover - exercised implicitly at import
    if NUMBA_DISABLED:
        raise ImportError("numba disabled by SDA_MARL_NO_NUMBA")
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


# ---------------------------------------------------------------------------
# pure numpy twins
# ---------------------------------------------------------------------------


def mlp3_forward_np(x, w1, b1, w2, b2, w3, b3, tanh_out):
    """Forward pass; returns hidden activations and output.

    tanh_out selects the output head: True squashes with tanh, False
    leaves the affine output untouched.
    """
    h1 = np.maximum(np.dot(x, w1) + b1, 0.0)
    h2 = np.maximum(np.dot(h1, w2) + b2, 0.0)
    y = np.dot(h2, w3) + b3
    if tanh_out:
        y = np.tanh(y)
    return h1, h2, y


def mlp3_backward_np(x, h1, h2, y, w1, w2, w3, dy, tanh_out):
    """Reverse pass given cached activations from mlp3_forward.

    Returns (dw1, db1, dw2, db2, dw3, db3, dx).  dx is the gradient with
    respect to the input batch, needed when losses are chained through
    more than one network.
    """
    if tanh_out:
        dz3 = dy * (1.0 - y * y)
    else:
        dz3 = dy
    dw3 = np.dot(h2.T, dz3)
    db3 = np.sum(dz3, axis=0)
    dh2 = np.dot(dz3, w3.T)
    dz2 = np.where(h2 > 0.0, dh2, 0.0)
    dw2 = np.dot(h1.T, dz2)
    db2 = np.sum(dz2, axis=0)
    dh1 = np.dot(dz2, w2.T)
    dz1 = np.where(h1 > 0.0, dh1, 0.0)
    dw1 = np.dot(x.T, dz1)
    db1 = np.sum(dz1, axis=0)
    dx = np.dot(dz1, w1.T)
    return dw1, db1, dw2, db2, dw3, db3, dx


def adam_update_np(p, g, m, v, step, lr, beta1, beta2, eps):
    """One Adam step on flat views, updating p/m/v in place."""
    b1c = 1.0 - beta1 ** step
    b2c = 1.0 - beta2 ** step
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    p -= lr * (m / b1c) / (np.sqrt(v / b2c) + eps)


# ---------------------------------------------------------------------------
# numba variants
# ---------------------------------------------------------------------------


@njit(cache=True)
def mlp3_forward_nb(x, w1, b1, w2, b2, w3, b3, tanh_out):
    h1 = np.maximum(np.dot(x, w1) + b1, 0.0)
    h2 = np.maximum(np.dot(h1, w2) + b2, 0.0)
    y = np.dot(h2, w3) + b3
    if tanh_out:
        y = np.tanh(y)
    return h1, h2, y


@njit(cache=True)
def mlp3_backward_nb(x, h1, h2, y, w1, w2, w3, dy, tanh_out):
    if tanh_out:
        dz3 = dy * (1.0 - y * y)
    else:
        dz3 = dy.copy()
    dw3 = np.dot(np.ascontiguousarray(h2.T), dz3)
    db3 = np.sum(dz3, axis=0)
    dh2 = np.dot(dz3, np.ascontiguousarray(w3.T))
    dz2 = np.where(h2 > 0.0, dh2, 0.0)
    dw2 = np.dot(np.ascontiguousarray(h1.T), dz2)
    db2 = np.sum(dz2, axis=0)
    dh1 = np.dot(dz2, np.ascontiguousarray(w2.T))
    dz1 = np.where(h1 > 0.0, dh1, 0.0)
    dw1 = np.dot(np.ascontiguousarray(x.T), dz1)
    db1 = np.sum(dz1, axis=0)
    dx = np.dot(dz1, np.ascontiguousarray(w1.T))
    return dw1, db1, dw2, db2, dw3, db3, dx


@njit(cache=True)
def adam_update_nb(p, g, m, v, step, lr, beta1, beta2, eps):
    b1c = 1.0 - beta1 ** step
    b2c = 1.0 - beta2 ** step
    for i in range(p.shape[0]):
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        p[i] -= lr * (m[i] / b1c) / (np.sqrt(v[i] / b2c) + eps)


USE_NUMBA = HAS_NUMBA and not NUMBA_DISABLED

if USE_NUMBA:
    mlp3_forward = mlp3_forward_nb
    mlp3_backward = mlp3_backward_nb
    adam_update = adam_update_nb
else:
    mlp3_forward = mlp3_forward_np
    mlp3_backward = mlp3_backward_np
    adam_update = adam_update_np

BACKEND = "numba" if USE_NUMBA else "numpy"


def backend_functions(name):
    """Return the (forward, backward, adam) triple for a named backend.

    Used by the benchmark and by tests that compare the two paths
    without re-importing the module under a different environment.
    """
    if name == "numpy":
        return mlp3_forward_np, mlp3_backward_np, adam_update_np
    if name == "numba":
        if not HAS_NUMBA:
            raise RuntimeError("numba backend requested but numba is unavailable")
        return mlp3_forward_nb, mlp3_backward_nb, adam_update_nb
    raise ValueError(f"unknown kernel backend: {name!r}")


def warmup():
    """Trigger JIT compilation of the active kernels on tiny inputs.

    Call before timing anything; a cold numba call includes compile
    time.  No-op cost on the numpy path.
    """
    x = np.zeros((2, 3))
    w1 = np.zeros((3, 4))
    b1 = np.zeros(4)
    w2 = np.zeros((4, 4))
    b2 = np.zeros(4)
    w3 = np.zeros((4, 2))
    b3 = np.zeros(2)
    for flag in (True, False):
        h1, h2, y = mlp3_forward(x, w1, b1, w2, b2, w3, b3, flag)
        mlp3_backward(x, h1, h2, y, w1, w2, w3, np.ones_like(y), flag)
    p = np.zeros(4)
    adam_update(p, np.zeros(4), np.zeros(4), np.zeros(4), 1, 1e-3, 0.9, 0.999, 1e-8)
