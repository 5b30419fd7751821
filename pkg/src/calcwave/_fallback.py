"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``.

Same signatures and in-place semantics; used when the extension is not
built or when ``CALCWAVE_KERNELS=python`` is set.
"""
import numpy as np


def csr_matvec(indptr, indices, data, x, out):
    prod = data * x[indices]
    # every row of an FEM operator has at least its diagonal entry
    out[:] = np.add.reduceat(prod, indptr[:-1]) if prod.size else 0.0


def pcg(indptr, indices, data, dinv, b, x, tol, maxiter, history=None):
    n = b.shape[0]
    ap = np.empty(n)
    bnorm = float(np.sqrt(b @ b))
    if bnorm == 0.0:
        x[:] = 0.0
        if history is not None:
            history[0] = 0.0
        return 0, 0.0, 0
    target = tol * bnorm
    csr_matvec(indptr, indices, data, x, ap)
    r = b - ap
    z = dinv * r
    p = z.copy()
    rz = float(r @ z)
    rnorm = float(np.sqrt(r @ r))
    if history is not None:
        history[0] = np.sqrt(rz)
    if rnorm <= target:
        return 0, rnorm / bnorm, 0

    it = 0
    status = 1
    while it < maxiter:
        it += 1
        csr_matvec(indptr, indices, data, p, ap)
        pap = float(p @ ap)
        if not pap > 0.0:
            status = 2
            break
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        rnorm = float(np.sqrt(r @ r))
        if rnorm <= target:
            csr_matvec(indptr, indices, data, x, ap)
            r = b - ap
            rnorm = float(np.sqrt(r @ r))
            z = dinv * r
            p = z.copy()
            rz = float(r @ z)
            if history is not None:
                history[it] = np.sqrt(rz)
            if rnorm <= target:
                status = 0
                break
            continue
        z = dinv * r
        rz_new = float(r @ z)
        if history is not None:
            history[it] = np.sqrt(rz_new)
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p
    return it, rnorm / bnorm, status


def gating_step(q, u, dt, ka_plus, ka_minus, kb_plus, kb_minus, kc_plus, kc_minus):
    uu = np.maximum(u, 0.0)
    uu = np.where(np.isnan(u), 0.0, uu)
    u3 = uu * uu * uu
    u4 = u3 * uu
    m00 = 1.0 + dt * (u4 * ka_plus + ka_minus)
    m01 = dt * ka_minus
    m02 = m01
    m10 = dt * u3 * kb_plus
    m11 = 1.0 + dt * (u3 * kb_plus + kb_minus)
    m12 = m10
    m20 = dt * kc_plus
    m21 = m20
    m22 = 1.0 + dt * (kc_plus + kc_minus)
    r0 = q[:, 0] + dt * ka_minus
    r1 = q[:, 1] + dt * u3 * kb_plus
    r2 = q[:, 2] + dt * kc_plus

    l = m10 / m00
    m11 = m11 - l * m01
    m12 = m12 - l * m02
    r1 = r1 - l * r0
    l = m20 / m00
    m21 = m21 - l * m01
    m22 = m22 - l * m02
    r2 = r2 - l * r0
    l = m21 / m11
    m22 = m22 - l * m12
    r2 = r2 - l * r1

    det = np.abs(m00 * m11 * m22)
    x2 = r2 / m22
    x1 = (r1 - m12 * x2) / m11
    x0 = (r0 - m01 * x1 - m02 * x2) / m00
    q[:, 0] = x0
    q[:, 1] = x1
    q[:, 2] = x2
    return float(det.min()) if det.size else 1e300
