# cython: language_level=3
"""Compiled hot loops: CSR matvec, Jacobi-preconditioned CG, gating sweep.

Each routine mirrors one in ``calcwave._fallback`` and must agree with it to
roundoff. Arrays are expected C-contiguous, indices int32, values float64.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

ctypedef cnp.int32_t idx_t


cdef inline void _matvec(const idx_t[::1] indptr, const idx_t[::1] indices,
                         const double[::1] data, const double[::1] x,
                         double[::1] y) noexcept nogil:
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t i, k
    cdef double s
    for i in range(n):
        s = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            s += data[k] * x[indices[k]]
        y[i] = s


cdef inline double _dot(const double[::1] a, const double[::1] b) noexcept nogil:
    cdef Py_ssize_t i
    cdef double s = 0.0
    for i in range(a.shape[0]):
        s += a[i] * b[i]
    return s


def csr_matvec(const idx_t[::1] indptr, const idx_t[::1] indices,
               const double[::1] data, const double[::1] x, double[::1] out):
    with nogil:
        _matvec(indptr, indices, data, x, out)


def pcg(const idx_t[::1] indptr, const idx_t[::1] indices,
        const double[::1] data, const double[::1] dinv,
        const double[::1] b, double[::1] x, double tol, int maxiter,
        double[::1] history=None):
    """Solve A x = b in place; x holds the initial guess on entry.

    Returns ``(iterations, relative_residual, status)`` with status 0 on
    convergence, 1 when the iteration cap is hit and 2 on a non-positive
    curvature ``p.Ap`` (matrix not SPD). When ``history`` is given, entry k
    receives sqrt(r_k . z_k); the number of filled entries is iterations + 1.
    """
    cdef Py_ssize_t n = b.shape[0]
    cdef Py_ssize_t i
    cdef int it = 0, status = 1
    cdef double bnorm, rnorm, rz, rz_new, pap, alpha, beta, target
    cdef bint record = history is not None
    cdef double[::1] r = np.empty(n)
    cdef double[::1] z = np.empty(n)
    cdef double[::1] p = np.empty(n)
    cdef double[::1] ap = np.empty(n)

    with nogil:
        bnorm = sqrt(_dot(b, b))
        if bnorm == 0.0:
            for i in range(n):
                x[i] = 0.0
            if record:
                history[0] = 0.0
            rnorm = 0.0
            status = 0
        else:
            target = tol * bnorm
            _matvec(indptr, indices, data, x, ap)
            rz = 0.0
            for i in range(n):
                r[i] = b[i] - ap[i]
                z[i] = dinv[i] * r[i]
                p[i] = z[i]
                rz += r[i] * z[i]
            rnorm = sqrt(_dot(r, r))
            if record:
                history[0] = sqrt(rz)
            if rnorm <= target:
                status = 0
            while status == 1 and it < maxiter:
                it += 1
                _matvec(indptr, indices, data, p, ap)
                pap = _dot(p, ap)
                if not pap > 0.0:
                    status = 2
                    break
                alpha = rz / pap
                for i in range(n):
                    x[i] += alpha * p[i]
                    r[i] -= alpha * ap[i]
                rnorm = sqrt(_dot(r, r))
                if rnorm <= target:
                    # confirm against the true residual before accepting
                    _matvec(indptr, indices, data, x, ap)
                    for i in range(n):
                        r[i] = b[i] - ap[i]
                    rnorm = sqrt(_dot(r, r))
                    rz = 0.0
                    for i in range(n):
                        z[i] = dinv[i] * r[i]
                        p[i] = z[i]
                        rz += r[i] * z[i]
                    if record:
                        history[it] = sqrt(rz)
                    if rnorm <= target:
                        status = 0
                    continue
                rz_new = 0.0
                for i in range(n):
                    z[i] = dinv[i] * r[i]
                    rz_new += r[i] * z[i]
                if record:
                    history[it] = sqrt(rz_new)
                beta = rz_new / rz
                rz = rz_new
                for i in range(n):
                    p[i] = z[i] + beta * p[i]
        if bnorm == 0.0:
            bnorm = 1.0
    return it, rnorm / bnorm, status


def gating_step(double[:, ::1] q, const double[::1] u, double dt,
                double ka_plus, double ka_minus, double kb_plus,
                double kb_minus, double kc_plus, double kc_minus):
    """Backward-Euler update of (c1, o, c2) rows of ``q`` in place.

    Returns the smallest |det| seen, so callers can assert non-singularity.
    """
    cdef Py_ssize_t n = q.shape[0]
    cdef Py_ssize_t i
    cdef double uu, u3, u4, l, det, min_det = 1e300
    cdef double m00, m01, m02, m10, m11, m12, m20, m21, m22
    cdef double r0, r1, r2, x0, x1, x2
    with nogil:
        for i in range(n):
            uu = u[i]
            if not uu > 0.0:
                uu = 0.0
            u3 = uu * uu * uu
            u4 = u3 * uu
            # I - dt A(u)
            m00 = 1.0 + dt * (u4 * ka_plus + ka_minus)
            m01 = dt * ka_minus
            m02 = m01
            m10 = dt * u3 * kb_plus
            m11 = 1.0 + dt * (u3 * kb_plus + kb_minus)
            m12 = m10
            m20 = dt * kc_plus
            m21 = m20
            m22 = 1.0 + dt * (kc_plus + kc_minus)
            r0 = q[i, 0] + dt * ka_minus
            r1 = q[i, 1] + dt * u3 * kb_plus
            r2 = q[i, 2] + dt * kc_plus
            # leading minors of I - dt A are positive: no pivoting needed
            l = m10 / m00
            m11 -= l * m01
            m12 -= l * m02
            r1 -= l * r0
            l = m20 / m00
            m21 -= l * m01
            m22 -= l * m02
            r2 -= l * r0
            l = m21 / m11
            m22 -= l * m12
            r2 -= l * r1
            det = m00 * m11 * m22
            if det < 0.0:
                det = -det
            if det < min_det:
                min_det = det
            x2 = r2 / m22
            x1 = (r1 - m12 * x2) / m11
            x0 = (r0 - m01 * x1 - m02 * x2) / m00
            q[i, 0] = x0
            q[i, 1] = x1
            q[i, 2] = x2
    return min_det
