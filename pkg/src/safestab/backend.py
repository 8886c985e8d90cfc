"""Numeric kernel backends for the Gaussian-process hot path.

The per-step cost of a GP-driven controller is dominated by dense kernels:
building the training Gram matrix, evaluating the cross-kernel vector at a
query point, and multiplying by the inverse Cholesky factor for the
predictive standard deviation.  Each kernel ships in two interchangeable
flavours:

* ``numba``: fused ``@njit`` loops (default when numba imports cleanly).
* ``numpy``: vectorized numpy/BLAS fallback.

Selection is made once at import time from the ``SAFESTAB_BACKEND``
environment variable (``"numba"`` or ``"numpy"``).  Both flavours are
always reachable through :func:`get_kernels`, which is what
``benchmarks/bench_backends.py`` uses to compare them.

The triangular matvec takes a backend-prepared representation of the
inverse factor (``prep_tri_factor``): the numba flavour streams a
transposed copy in AXPY order, the numpy flavour hands the factor to BLAS
``dtrmv``.  Both compute exactly ``tril(L_inv) @ y``.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np
from scipy.linalg import blas as _blas
from scipy.linalg import solve_triangular

_ENV_VAR = "SAFESTAB_BACKEND"

try:
    from numba import njit

    _HAVE_NUMBA = True
except Exception:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False


# -- pure numpy flavour -------------------------------------------------------


def _se_gram_numpy(X, lengthscales, signal_variance):
    """Squared-exponential Gram matrix of the rows of X, shape (Q, Q)."""
    Z = X / lengthscales
    sq = np.sum(Z * Z, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (Z @ Z.T)
    np.maximum(d2, 0.0, out=d2)
    return signal_variance * np.exp(-0.5 * d2)


def _se_cross_numpy(X, z, lengthscales, signal_variance):
    """Kernel vector k(x_q, z) for every training row x_q, shape (Q,)."""
    D = (X - z) / lengthscales
    return signal_variance * np.exp(-0.5 * np.sum(D * D, axis=1))


def _solve_lower_numpy(L, rhs):
    """Solve L v = rhs with L lower triangular."""
    return solve_triangular(L, rhs, lower=True, check_finite=False)


def _prep_tri_numpy(lower_inv):
    return np.ascontiguousarray(lower_inv)


def _tri_matvec_numpy(prepped, y):
    """tril(L_inv) @ y via BLAS dtrmv."""
    return _blas.dtrmv(prepped, y, lower=1)


_NUMPY_KERNELS = SimpleNamespace(
    name="numpy",
    se_gram=_se_gram_numpy,
    se_cross=_se_cross_numpy,
    solve_lower=_solve_lower_numpy,
    prep_tri_factor=_prep_tri_numpy,
    tri_matvec=_tri_matvec_numpy,
)


# -- numba flavour ------------------------------------------------------------

if _HAVE_NUMBA:

    @njit(cache=True)
    def _se_gram_numba(X, lengthscales, signal_variance):
        q, n = X.shape
        K = np.empty((q, q))
        for i in range(q):
            K[i, i] = signal_variance
            for j in range(i + 1, q):
                d2 = 0.0
                for k in range(n):
                    t = (X[i, k] - X[j, k]) / lengthscales[k]
                    d2 += t * t
                v = signal_variance * np.exp(-0.5 * d2)
                K[i, j] = v
                K[j, i] = v
        return K

    @njit(cache=True)
    def _se_cross_numba(X, z, lengthscales, signal_variance):
        q, n = X.shape
        out = np.empty(q)
        for i in range(q):
            d2 = 0.0
            for k in range(n):
                t = (X[i, k] - z[k]) / lengthscales[k]
                d2 += t * t
            out[i] = signal_variance * np.exp(-0.5 * d2)
        return out

    @njit(cache=True)
    def _solve_lower_numba(L, rhs):
        q = L.shape[0]
        v = rhs.copy()
        for i in range(q):
            s = v[i]
            for j in range(i):
                s -= L[i, j] * v[j]
            v[i] = s / L[i, i]
        return v

    @njit(cache=True, fastmath=True)
    def _tri_matvec_numba(upper_t, y):
        # upper_t is the transposed inverse factor (row-major upper triangle);
        # accumulate in AXPY order so every pass streams one contiguous row.
        q = upper_t.shape[0]
        out = np.zeros(q)
        for j in range(q):
            yj = y[j]
            for i in range(j, q):
                out[i] += upper_t[j, i] * yj
        return out

    def _prep_tri_numba(lower_inv):
        return np.ascontiguousarray(lower_inv.T)

    _NUMBA_KERNELS = SimpleNamespace(
        name="numba",
        se_gram=_se_gram_numba,
        se_cross=_se_cross_numba,
        solve_lower=_solve_lower_numba,
        prep_tri_factor=_prep_tri_numba,
        tri_matvec=_tri_matvec_numba,
    )
else:  # pragma: no cover
    _NUMBA_KERNELS = None


def get_kernels(name: str):
    """Return the kernel namespace for ``name`` ("numba" or "numpy")."""
    if name == "numpy":
        return _NUMPY_KERNELS
    if name == "numba":
        if _NUMBA_KERNELS is None:
            raise RuntimeError("numba backend requested but numba is not importable")
        return _NUMBA_KERNELS
    raise ValueError(f"unknown backend {name!r}; expected 'numba' or 'numpy'")


def _select_default():
    requested = os.environ.get(_ENV_VAR, "").strip().lower()
    if requested in ("numba", "numpy"):
        return get_kernels(requested)
    return _NUMBA_KERNELS if _HAVE_NUMBA else _NUMPY_KERNELS


kernels = _select_default()


def active_backend() -> str:
    """Name of the backend selected at import time."""
    return kernels.name
