# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
# cython: language_level=3
"""Compiled RK4 stepper for the Lindblad equation with sparse generators."""

import numpy as np
cimport numpy as cnp

ctypedef double complex cplx


cdef inline void _rhs(const cplx* x, cplx* out, Py_ssize_t d,
                      const Py_ssize_t* hr, const Py_ssize_t* hc, const cplx* hv, Py_ssize_t nh,
                      const Py_ssize_t* jr, const Py_ssize_t* jc, const cplx* jv,
                      const Py_ssize_t* jptr, Py_ssize_t nj) noexcept nogil:
    cdef Py_ssize_t p, q, i, j, a, b, k
    cdef cplx v, w, s
    cdef cplx mi = -1j
    for p in range(d * d):
        out[p] = 0
    # -i Heff x
    for p in range(nh):
        i = hr[p]
        a = hc[p]
        v = mi * hv[p]
        for j in range(d):
            out[i * d + j] += v * x[a * d + j]
    # +i x Heff^dag
    for p in range(nh):
        j = hr[p]
        b = hc[p]
        v = 1j * hv[p].conjugate()
        for i in range(d):
            out[i * d + j] += v * x[i * d + b]
    # sum_k c x c^dag
    for k in range(nj):
        for p in range(jptr[k], jptr[k + 1]):
            i = jr[p]
            a = jc[p]
            v = jv[p]
            for q in range(jptr[k], jptr[k + 1]):
                j = jr[q]
                b = jc[q]
                w = jv[q].conjugate()
                out[i * d + j] += v * x[a * d + b] * w


def _coo(m):
    r, c = np.nonzero(m)
    return (np.ascontiguousarray(r, dtype=np.intp), np.ascontiguousarray(c, dtype=np.intp),
            np.ascontiguousarray(m[r, c], dtype=np.complex128))


def rk4_propagate(cnp.ndarray rho, heff, jumps, double h, Py_ssize_t nsteps, bint hermitian=True):
    """Advance a batch of matrices ``rho[n, d, d]`` in place by ``nsteps`` RK4 steps.

    ``heff`` is the effective non-Hermitian Hamiltonian H - i/2 sum c^dag c and
    ``jumps`` a ``(k, d, d)`` stack. Both are converted to coordinate form once.
    """
    cdef Py_ssize_t n = rho.shape[0], d = rho.shape[1]
    if rho.dtype != np.complex128 or not rho.flags.c_contiguous:
        raise TypeError("rho must be C-contiguous complex128")
    heff = np.asarray(heff, dtype=np.complex128)
    jumps = np.asarray(jumps, dtype=np.complex128).reshape(-1, d, d)
    hr_, hc_, hv_ = _coo(heff)
    parts = [_coo(c) for c in jumps]
    jptr_ = np.zeros(len(parts) + 1, dtype=np.intp)
    for k, prt in enumerate(parts):
        jptr_[k + 1] = jptr_[k] + len(prt[0])
    if parts:
        jr_ = np.concatenate([p_[0] for p_ in parts])
        jc_ = np.concatenate([p_[1] for p_ in parts])
        jv_ = np.concatenate([p_[2] for p_ in parts])
    else:
        jr_ = np.zeros(1, dtype=np.intp)
        jc_ = np.zeros(1, dtype=np.intp)
        jv_ = np.zeros(1, dtype=np.complex128)

    cdef Py_ssize_t[::1] hr = hr_, hc = hc_, jr = jr_, jc = jc_, jptr = jptr_
    cdef cplx[::1] hv = hv_ if len(hv_) else np.zeros(1, dtype=np.complex128)
    cdef cplx[::1] jv = jv_
    cdef Py_ssize_t nh = len(hr_), nj = len(parts)
    cdef cplx[:, :, ::1] R = rho
    cdef cplx[:, ::1] work = np.empty((3, d * d), dtype=np.complex128)
    cdef cplx* kk = &work[0, 0]
    cdef cplx* tmp = &work[1, 0]
    cdef cplx* acc = &work[2, 0]
    cdef cplx* x
    cdef Py_ssize_t s, m, p, i, j, dd = d * d
    cdef double h2 = 0.5 * h, h6 = h / 6.0, h3 = h / 3.0
    cdef cplx u
    cdef Py_ssize_t* hr_p = &hr[0] if nh else NULL
    cdef Py_ssize_t* hc_p = &hc[0] if nh else NULL

    with nogil:
        for m in range(n):
            x = &R[m, 0, 0]
            for s in range(nsteps):
                _rhs(x, kk, d, hr_p, hc_p, &hv[0], nh, &jr[0], &jc[0], &jv[0], &jptr[0], nj)
                for p in range(dd):
                    acc[p] = x[p] + h6 * kk[p]
                    tmp[p] = x[p] + h2 * kk[p]
                _rhs(tmp, kk, d, hr_p, hc_p, &hv[0], nh, &jr[0], &jc[0], &jv[0], &jptr[0], nj)
                for p in range(dd):
                    acc[p] = acc[p] + h3 * kk[p]
                    tmp[p] = x[p] + h2 * kk[p]
                _rhs(tmp, kk, d, hr_p, hc_p, &hv[0], nh, &jr[0], &jc[0], &jv[0], &jptr[0], nj)
                for p in range(dd):
                    acc[p] = acc[p] + h3 * kk[p]
                    tmp[p] = x[p] + h * kk[p]
                _rhs(tmp, kk, d, hr_p, hc_p, &hv[0], nh, &jr[0], &jc[0], &jv[0], &jptr[0], nj)
                for p in range(dd):
                    x[p] = acc[p] + h6 * kk[p]
                if hermitian:
                    for i in range(d):
                        for j in range(i, d):
                            u = 0.5 * (x[i * d + j] + x[j * d + i].conjugate())
                            x[i * d + j] = u
                            x[j * d + i] = u.conjugate()
    return rho
