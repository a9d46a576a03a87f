"""Compiled inner loops for the fixed-step RK4 integrators.

The generators here are very sparse and the spaces small, so plain
scipy stepping is dominated by per-call overhead; these numba kernels run
the same arithmetic (same stage order, same CSR row accumulation) without
it.  Everything falls back to numpy/scipy loops when numba is missing.
"""

from __future__ import annotations

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a soft dependency
    HAVE_NUMBA = False


def _py_spmv(indptr, indices, data, x, out):
    for i in range(len(out)):
        acc = 0.0 + 0.0j
        for k in range(indptr[i], indptr[i + 1]):
            acc += data[k] * x[indices[k]]
        out[i] = acc
    return out


def _rk4_chunk_py(indptr, indices, data, y, dt, n_steps, int_vecs, int_vals):
    n = y.shape[0]
    k1 = np.empty(n, dtype=np.complex128)
    k2 = np.empty(n, dtype=np.complex128)
    k3 = np.empty(n, dtype=np.complex128)
    k4 = np.empty(n, dtype=np.complex128)
    for _ in range(n_steps):
        _py_spmv(indptr, indices, data, y, k1)
        y2 = y + (0.5 * dt) * k1
        _py_spmv(indptr, indices, data, y2, k2)
        y3 = y + (0.5 * dt) * k2
        _py_spmv(indptr, indices, data, y3, k3)
        y4 = y + dt * k3
        _py_spmv(indptr, indices, data, y4, k4)
        for m in range(int_vecs.shape[0]):
            f1 = np.dot(int_vecs[m], y).real
            f2 = np.dot(int_vecs[m], y2).real
            f3 = np.dot(int_vecs[m], y3).real
            f4 = np.dot(int_vecs[m], y4).real
            int_vals[m] += (dt / 6.0) * (f1 + 2.0 * f2 + 2.0 * f3 + f4)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y


def _rk4_until_threshold_py(indptr, indices, data, y, dt, n_steps, threshold):
    for step in range(n_steps):
        k1 = np.empty_like(y)
        k2 = np.empty_like(y)
        k3 = np.empty_like(y)
        k4 = np.empty_like(y)
        _py_spmv(indptr, indices, data, y, k1)
        _py_spmv(indptr, indices, data, y + (0.5 * dt) * k1, k2)
        _py_spmv(indptr, indices, data, y + (0.5 * dt) * k2, k3)
        _py_spmv(indptr, indices, data, y + dt * k3, k4)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        norm2 = float(np.real(np.vdot(y, y)))
        if norm2 <= threshold:
            return y, step + 1, True
    return y, n_steps, False


if HAVE_NUMBA:
    _sig_chunk = None  # lazy compile on first use; cache across calls

    @numba.njit(cache=True, fastmath=False)
    def _nb_spmv(indptr, indices, data, x, out):  # pragma: no cover - compiled
        for i in range(out.shape[0]):
            acc = 0.0 + 0.0j
            for k in range(indptr[i], indptr[i + 1]):
                acc += data[k] * x[indices[k]]
            out[i] = acc

    @numba.njit(cache=True, fastmath=False)
    def _rk4_chunk_nb(indptr, indices, data, y, dt, n_steps, int_vecs, int_vals):  # pragma: no cover
        n = y.shape[0]
        k1 = np.empty(n, dtype=np.complex128)
        k2 = np.empty(n, dtype=np.complex128)
        k3 = np.empty(n, dtype=np.complex128)
        k4 = np.empty(n, dtype=np.complex128)
        y2 = np.empty(n, dtype=np.complex128)
        y3 = np.empty(n, dtype=np.complex128)
        y4 = np.empty(n, dtype=np.complex128)
        m_int = int_vecs.shape[0]
        for _ in range(n_steps):
            _nb_spmv(indptr, indices, data, y, k1)
            for i in range(n):
                y2[i] = y[i] + (0.5 * dt) * k1[i]
            _nb_spmv(indptr, indices, data, y2, k2)
            for i in range(n):
                y3[i] = y[i] + (0.5 * dt) * k2[i]
            _nb_spmv(indptr, indices, data, y3, k3)
            for i in range(n):
                y4[i] = y[i] + dt * k3[i]
            _nb_spmv(indptr, indices, data, y4, k4)
            for m in range(m_int):
                f1 = 0.0
                f2 = 0.0
                f3 = 0.0
                f4 = 0.0
                for i in range(n):
                    f1 += (int_vecs[m, i] * y[i]).real
                    f2 += (int_vecs[m, i] * y2[i]).real
                    f3 += (int_vecs[m, i] * y3[i]).real
                    f4 += (int_vecs[m, i] * y4[i]).real
                int_vals[m] += (dt / 6.0) * (f1 + 2.0 * f2 + 2.0 * f3 + f4)
            for i in range(n):
                y[i] = y[i] + (dt / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        return y

    @numba.njit(cache=True, fastmath=False)
    def _rk4_until_threshold_nb(indptr, indices, data, y, dt, n_steps, threshold):  # pragma: no cover
        n = y.shape[0]
        k1 = np.empty(n, dtype=np.complex128)
        k2 = np.empty(n, dtype=np.complex128)
        k3 = np.empty(n, dtype=np.complex128)
        k4 = np.empty(n, dtype=np.complex128)
        tmp = np.empty(n, dtype=np.complex128)
        for step in range(n_steps):
            _nb_spmv(indptr, indices, data, y, k1)
            for i in range(n):
                tmp[i] = y[i] + (0.5 * dt) * k1[i]
            _nb_spmv(indptr, indices, data, tmp, k2)
            for i in range(n):
                tmp[i] = y[i] + (0.5 * dt) * k2[i]
            _nb_spmv(indptr, indices, data, tmp, k3)
            for i in range(n):
                tmp[i] = y[i] + dt * k3[i]
            _nb_spmv(indptr, indices, data, tmp, k4)
            norm2 = 0.0
            for i in range(n):
                y[i] = y[i] + (dt / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
                norm2 += (y[i].conjugate() * y[i]).real
            if norm2 <= threshold:
                return y, step + 1, True
        return y, n_steps, False


def rk4_chunk(csr, y, dt: float, n_steps: int,
              int_vecs: np.ndarray | None = None,
              int_vals: np.ndarray | None = None) -> np.ndarray:
    """Advance y by n_steps of RK4 under y' = csr @ y, accumulating the
    requested running integrals with the matching RK4 quadrature weights."""
    if int_vecs is None:
        int_vecs = np.zeros((0, y.shape[0]), dtype=np.complex128)
        int_vals = np.zeros(0)
    y = np.ascontiguousarray(y, dtype=np.complex128)
    if HAVE_NUMBA:
        return _rk4_chunk_nb(csr.indptr, csr.indices, csr.data, y.copy(),
                             float(dt), int(n_steps), int_vecs, int_vals)
    return _rk4_chunk_py(csr.indptr, csr.indices, csr.data, y.copy(),
                         float(dt), int(n_steps), int_vecs, int_vals)


def rk4_until_threshold(csr, y, dt: float, n_steps: int, threshold: float):
    """Step until the squared norm falls to `threshold` or the step budget
    runs out; returns (y, steps_taken, crossed)."""
    y = np.ascontiguousarray(y, dtype=np.complex128)
    if HAVE_NUMBA:
        return _rk4_until_threshold_nb(csr.indptr, csr.indices, csr.data, y.copy(),
                                       float(dt), int(n_steps), float(threshold))
    return _rk4_until_threshold_py(csr.indptr, csr.indices, csr.data, y.copy(),
                                   float(dt), int(n_steps), float(threshold))
