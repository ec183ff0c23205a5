"""Hot accumulation kernels, JIT-compiled when numba is available.

The two kernels below dominate the runtime of normal-system assembly and of
the Monte Carlo campaigns that assemble many Gram matrices.  Each has a
numba ``@njit`` implementation and a pure-numpy (BLAS) fallback; the active
backend is chosen at import time:

* ``OPKER_ACCEL=numba``  force the jitted kernels (raises if numba missing)
* ``OPKER_ACCEL=numpy``  force the numpy fallback
* unset / ``auto``       numba when importable, numpy otherwise

``benchmarks/bench_accel.py`` times both backends on representative shapes.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - depends on environment
    _HAVE_NUMBA = False


def _select_backend() -> str:
    choice = os.environ.get("OPKER_ACCEL", "auto").strip().lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ValueError(f"OPKER_ACCEL must be 'numba', 'numpy' or 'auto', got {choice!r}")
    if choice == "numba" and not _HAVE_NUMBA:
        raise ImportError("OPKER_ACCEL=numba but numba is not importable")
    if choice == "auto":
        return "numba" if _HAVE_NUMBA else "numpy"
    return choice


def _normal_accumulate_np(values, outputs, a_out, b_out):
    m, n_x, n = values.shape
    flat = values.reshape(m * n_x, n)
    a_out += flat.T @ flat
    b_out += flat.T @ outputs.reshape(m * n_x)


def _gram_accumulate_np(values, a_out):
    m, n_x, n = values.shape
    flat = values.reshape(m * n_x, n)
    a_out += flat.T @ flat


if _HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def _normal_accumulate_nb(values, outputs, a_out, b_out):  # pragma: no cover - jitted
        m, n_x, n = values.shape
        for s in range(m):
            for k in range(n):
                acc_b = 0.0
                for i in range(n_x):
                    acc_b += values[s, i, k] * outputs[s, i]
                b_out[k] += acc_b
                for l in range(k, n):
                    acc = 0.0
                    for i in range(n_x):
                        acc += values[s, i, k] * values[s, i, l]
                    a_out[k, l] += acc
        for k in range(n):
            for l in range(k + 1, n):
                a_out[l, k] = a_out[k, l]

    @njit(cache=True, nogil=True)
    def _gram_accumulate_nb(values, a_out):  # pragma: no cover - jitted
        m, n_x, n = values.shape
        for s in range(m):
            for k in range(n):
                for l in range(k, n):
                    acc = 0.0
                    for i in range(n_x):
                        acc += values[s, i, k] * values[s, i, l]
                    a_out[k, l] += acc
        for k in range(n):
            for l in range(k + 1, n):
                a_out[l, k] = a_out[k, l]


BACKEND = _select_backend()


def backend() -> str:
    """Name of the active accumulation backend ('numba' or 'numpy')."""
    return BACKEND


def normal_accumulate(values, outputs, a_out, b_out, impl: str | None = None):
    """Accumulate sum_s V_s^T V_s into a_out and sum_s V_s^T f_s into b_out.

    values: (m, n_x, n) forward values of the basis slice, outputs: (m, n_x).
    The numba path fills the upper triangle then mirrors; both paths produce
    symmetric a_out contributions.
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    outputs = np.ascontiguousarray(outputs, dtype=np.float64)
    which = impl or BACKEND
    if which == "numba":
        _normal_accumulate_nb(values, outputs, a_out, b_out)
    else:
        _normal_accumulate_np(values, outputs, a_out, b_out)


def gram_accumulate(values, a_out, impl: str | None = None):
    """Accumulate sum_s V_s^T V_s into a_out (no data vector)."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    which = impl or BACKEND
    if which == "numba":
        _gram_accumulate_nb(values, a_out)
    else:
        _gram_accumulate_np(values, a_out)
