# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled RK4 flow kernels for control-affine polynomial fields."""

import numpy as np
cimport numpy as cnp

BACKEND = "compiled"


cdef inline double _ipow(double base, long e) nogil:
    cdef double out = 1.0
    while e > 0:
        if e & 1:
            out *= base
        base *= base
        e >>= 1
    return out


cdef void _field(
    const double[::1] coefs,
    const long[:, ::1] exps,
    const long[::1] ptr,
    long k,
    long n,
    const double[::1] q,
    double t,
    const double[::1] u_t,
    double[::1] out,
) nogil:
    cdef long i, m, s, term, v
    cdef double acc, val
    cdef long nvars = q.shape[0]
    for m in range(n):
        out[m] = 0.0
    for i in range(k):
        if u_t[i] == 0.0:
            continue
        for m in range(n):
            s = i * n + m
            acc = 0.0
            for term in range(ptr[s], ptr[s + 1]):
                val = coefs[term]
                for v in range(nvars):
                    if exps[term, v] > 0:
                        val *= _ipow(q[v], exps[term, v])
                if exps[term, nvars] > 0:
                    val *= _ipow(t, exps[term, nvars])
                acc += val
            out[m] += u_t[i] * acc


def flow_rk4(
    const double[::1] coefs,
    const long[:, ::1] exps,
    const long[::1] ptr,
    long k,
    long n,
    const double[:, ::1] u_nodes,
    q0,
    double t0,
    double t1,
    long nsteps,
):
    q0_arr = np.array(q0, dtype=np.float64, copy=True)
    squeeze = q0_arr.ndim == 1
    if squeeze:
        q0_arr = q0_arr[None, :]
    cdef double[:, ::1] q = q0_arr
    cdef long B = q.shape[0]
    cdef double h = (t1 - t0) / nsteps
    cdef long b, j, m
    cdef double t
    cdef double[::1] k1 = np.empty(n)
    cdef double[::1] k2 = np.empty(n)
    cdef double[::1] k3 = np.empty(n)
    cdef double[::1] k4 = np.empty(n)
    cdef double[::1] tmp = np.empty(n)
    with nogil:
        for b in range(B):
            for j in range(nsteps):
                t = t0 + j * h
                _field(coefs, exps, ptr, k, n, q[b], t, u_nodes[2 * j], k1)
                for m in range(n):
                    tmp[m] = q[b, m] + 0.5 * h * k1[m]
                _field(coefs, exps, ptr, k, n, tmp, t + 0.5 * h, u_nodes[2 * j + 1], k2)
                for m in range(n):
                    tmp[m] = q[b, m] + 0.5 * h * k2[m]
                _field(coefs, exps, ptr, k, n, tmp, t + 0.5 * h, u_nodes[2 * j + 1], k3)
                for m in range(n):
                    tmp[m] = q[b, m] + h * k3[m]
                _field(coefs, exps, ptr, k, n, tmp, t + h, u_nodes[2 * j + 2], k4)
                for m in range(n):
                    q[b, m] = q[b, m] + (h / 6.0) * (
                        k1[m] + 2.0 * k2[m] + 2.0 * k3[m] + k4[m]
                    )
    out = np.asarray(q)
    return out[0] if squeeze else out


cdef void _jac_matrix(
    const double[::1] jcoefs,
    const long[:, ::1] jexps,
    const long[::1] jptr,
    long k,
    long n,
    const double[::1] q,
    double t,
    const double[::1] u_t,
    double[:, ::1] A,
) nogil:
    cdef long i, r, c, s, term, v
    cdef double acc, val
    cdef long nvars = q.shape[0]
    for r in range(n):
        for c in range(n):
            A[r, c] = 0.0
    for i in range(k):
        if u_t[i] == 0.0:
            continue
        for r in range(n):
            for c in range(n):
                s = (i * n + r) * n + c
                acc = 0.0
                for term in range(jptr[s], jptr[s + 1]):
                    val = jcoefs[term]
                    for v in range(nvars):
                        if jexps[term, v] > 0:
                            val *= _ipow(q[v], jexps[term, v])
                    if jexps[term, nvars] > 0:
                        val *= _ipow(t, jexps[term, nvars])
                    acc += val
                A[r, c] += u_t[i] * acc


def flow_rk4_jacobian(
    const double[::1] coefs,
    const long[:, ::1] exps,
    const long[::1] ptr,
    const double[::1] jcoefs,
    const long[:, ::1] jexps,
    const long[::1] jptr,
    long k,
    long n,
    const double[:, ::1] u_nodes,
    q0,
    double t0,
    double t1,
    long nsteps,
):
    q_arr = np.array(q0, dtype=np.float64, copy=True).reshape(-1)
    J_arr = np.eye(n)
    cdef double[::1] q = q_arr
    cdef double[:, ::1] J = J_arr
    cdef double h = (t1 - t0) / nsteps
    cdef long j, m, r, c, stage
    cdef double t
    cdef double[::1] f1 = np.empty(n)
    cdef double[::1] f2 = np.empty(n)
    cdef double[::1] f3 = np.empty(n)
    cdef double[::1] f4 = np.empty(n)
    cdef double[::1] tmp = np.empty(n)
    cdef double[:, ::1] A = np.empty((n, n))
    cdef double[:, ::1] G1 = np.empty((n, n))
    cdef double[:, ::1] G2 = np.empty((n, n))
    cdef double[:, ::1] G3 = np.empty((n, n))
    cdef double[:, ::1] G4 = np.empty((n, n))
    cdef double[:, ::1] Jtmp = np.empty((n, n))
    with nogil:
        for j in range(nsteps):
            t = t0 + j * h
            # stage 1
            _field(coefs, exps, ptr, k, n, q, t, u_nodes[2 * j], f1)
            _jac_matrix(jcoefs, jexps, jptr, k, n, q, t, u_nodes[2 * j], A)
            _matmul(A, J, G1, n)
            # stage 2
            for m in range(n):
                tmp[m] = q[m] + 0.5 * h * f1[m]
            for r in range(n):
                for c in range(n):
                    Jtmp[r, c] = J[r, c] + 0.5 * h * G1[r, c]
            _field(coefs, exps, ptr, k, n, tmp, t + 0.5 * h, u_nodes[2 * j + 1], f2)
            _jac_matrix(jcoefs, jexps, jptr, k, n, tmp, t + 0.5 * h, u_nodes[2 * j + 1], A)
            _matmul(A, Jtmp, G2, n)
            # stage 3
            for m in range(n):
                tmp[m] = q[m] + 0.5 * h * f2[m]
            for r in range(n):
                for c in range(n):
                    Jtmp[r, c] = J[r, c] + 0.5 * h * G2[r, c]
            _field(coefs, exps, ptr, k, n, tmp, t + 0.5 * h, u_nodes[2 * j + 1], f3)
            _jac_matrix(jcoefs, jexps, jptr, k, n, tmp, t + 0.5 * h, u_nodes[2 * j + 1], A)
            _matmul(A, Jtmp, G3, n)
            # stage 4
            for m in range(n):
                tmp[m] = q[m] + h * f3[m]
            for r in range(n):
                for c in range(n):
                    Jtmp[r, c] = J[r, c] + h * G3[r, c]
            _field(coefs, exps, ptr, k, n, tmp, t + h, u_nodes[2 * j + 2], f4)
            _jac_matrix(jcoefs, jexps, jptr, k, n, tmp, t + h, u_nodes[2 * j + 2], A)
            _matmul(A, Jtmp, G4, n)
            for m in range(n):
                q[m] = q[m] + (h / 6.0) * (f1[m] + 2.0 * f2[m] + 2.0 * f3[m] + f4[m])
            for r in range(n):
                for c in range(n):
                    J[r, c] = J[r, c] + (h / 6.0) * (
                        G1[r, c] + 2.0 * G2[r, c] + 2.0 * G3[r, c] + G4[r, c]
                    )
    return q_arr, J_arr


cdef void _matmul(
    const double[:, ::1] A, const double[:, ::1] B, double[:, ::1] out, long n
) nogil:
    cdef long r, c, m
    cdef double acc
    for r in range(n):
        for c in range(n):
            acc = 0.0
            for m in range(n):
                acc += A[r, m] * B[m, c]
            out[r, c] = acc
