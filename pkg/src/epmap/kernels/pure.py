"""Pure-numpy fallback for the flow kernels.

Semantics match the compiled extension: classical RK4 with a fixed step on
a control-affine field  f(q, t) = sum_i u_i(t) f_i(q, t)  whose channel
fields are flattened sparse polynomials.  Batched over initial states.
"""

from __future__ import annotations

import numpy as np

BACKEND = "pure"


def _eval_channels(coefs, exps, ptr, nslices, q, t):
    """Evaluate all flattened polynomial slices at states q (B, n), time t.

    Returns (B, nslices).
    """
    B = q.shape[0]
    if coefs.size == 0:
        return np.zeros((B, nslices))
    # monomials: (B, T); overflow on diverging states becomes inf and is
    # caught by the non-finite check after integration
    mono = np.ones((B, coefs.size))
    nvars = q.shape[1]
    with np.errstate(over="ignore", invalid="ignore"):
        for v in range(nvars):
            e = exps[:, v]
            nz = e > 0
            if np.any(nz):
                mono[:, nz] *= q[:, v : v + 1] ** e[nz]
        et = exps[:, -1]
        nz = et > 0
        if np.any(nz):
            mono[:, nz] *= t ** et[nz]
        vals = mono * coefs
    out = np.add.reduceat(
        np.concatenate([vals, np.zeros((B, 1))], axis=1),
        np.minimum(ptr[:-1], vals.shape[1]),
        axis=1,
    )
    # reduceat with equal consecutive indices (empty slices) returns the
    # element at that index; patch empties to zero.
    empty = ptr[:-1] == ptr[1:]
    if np.any(empty):
        out[:, empty] = 0.0
    return out[:, :nslices]


def _field(coefs, exps, ptr, k, n, q, t, u_t):
    """Control-affine field value at (q, t) with channel weights u_t (k,)."""
    slices = _eval_channels(coefs, exps, ptr, k * n, q, t)  # (B, k*n)
    B = q.shape[0]
    comp = slices.reshape(B, k, n)
    return np.einsum("i,bin->bn", u_t, comp)


def flow_rk4(coefs, exps, ptr, k, n, u_nodes, q0, t0, t1, nsteps):
    """Propagate q' = sum_i u_i(t) f_i(q, t) from t0 to t1 in nsteps RK4 steps.

    u_nodes has shape (2*nsteps + 1, k): control samples at the half-step
    grid t0 + j*(t1-t0)/(2*nsteps).
    """
    q = np.array(q0, dtype=float, copy=True)
    squeeze = q.ndim == 1
    if squeeze:
        q = q[None, :]
    h = (t1 - t0) / nsteps
    for j in range(nsteps):
        t = t0 + j * h
        u_a = u_nodes[2 * j]
        u_m = u_nodes[2 * j + 1]
        u_b = u_nodes[2 * j + 2]
        k1 = _field(coefs, exps, ptr, k, n, q, t, u_a)
        k2 = _field(coefs, exps, ptr, k, n, q + 0.5 * h * k1, t + 0.5 * h, u_m)
        k3 = _field(coefs, exps, ptr, k, n, q + 0.5 * h * k2, t + 0.5 * h, u_m)
        k4 = _field(coefs, exps, ptr, k, n, q + h * k3, t + h, u_b)
        q = q + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return q[0] if squeeze else q


def flow_rk4_jacobian(
    coefs, exps, ptr, jcoefs, jexps, jptr, k, n, u_nodes, q0, t0, t1, nsteps
):
    """Propagate the state and the variational matrix J (dq(t)/dq0).

    The Jacobian slices hold d f_{i,row} / d x_col flattened as
    (i * n + row) * n + col.  Returns (q1, J) with J of shape (n, n).
    """
    q = np.array(q0, dtype=float, copy=True)[None, :]
    J = np.eye(n)
    h = (t1 - t0) / nsteps

    def rhs(qb, t, u_t, Jc):
        f = _field(coefs, exps, ptr, k, n, qb, t, u_t)
        slices = _eval_channels(jcoefs, jexps, jptr, k * n * n, qb, t)
        A = np.einsum("i,irc->rc", u_t, slices.reshape(1, k, n, n)[0].reshape(k, n, n))
        return f, A @ Jc

    for j in range(nsteps):
        t = t0 + j * h
        u_a, u_m, u_b = u_nodes[2 * j], u_nodes[2 * j + 1], u_nodes[2 * j + 2]
        f1, G1 = rhs(q, t, u_a, J)
        f2, G2 = rhs(q + 0.5 * h * f1, t + 0.5 * h, u_m, J + 0.5 * h * G1)
        f3, G3 = rhs(q + 0.5 * h * f2, t + 0.5 * h, u_m, J + 0.5 * h * G2)
        f4, G4 = rhs(q + h * f3, t + h, u_b, J + h * G3)
        q = q + (h / 6.0) * (f1 + 2 * f2 + 2 * f3 + f4)
        J = J + (h / 6.0) * (G1 + 2 * G2 + 2 * G3 + G4)
    return q[0], J
