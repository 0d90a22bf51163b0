"""Flow kernels: compiled extension when available, numpy fallback otherwise.

Set ``EPMAP_PURE=1`` in the environment to force the pure backend.  The
selected backend is reported by :func:`backend_name`.
"""

from __future__ import annotations

import os
from typing import Sequence

import numpy as np

from ..errors import NumericFailure
from ..polyalg import Polynomial, PolyVectorField

from . import pure as _pure

if os.environ.get("EPMAP_PURE"):
    _impl = _pure
else:
    try:
        from . import _fast as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = _pure


def backend_name() -> str:
    return _impl.BACKEND


class FieldPack:
    """Flattened sparse-polynomial data for a list of channel fields.

    Slice s = i*n + m holds the terms of component m of channel field i;
    the Jacobian variant uses slice (i*n + r)*n + c for d f_{i,r} / d x_c.
    """

    __slots__ = ("coefs", "exps", "ptr", "k", "n", "jcoefs", "jexps", "jptr")

    def __init__(self, fields: Sequence[PolyVectorField], with_jacobian: bool = False):
        fields = list(fields)
        if not fields:
            raise ValueError("empty field list")
        n = fields[0].nvars
        self.k = len(fields)
        self.n = n
        self.coefs, self.exps, self.ptr = _flatten(
            [f.components[m] for f in fields for m in range(n)], n
        )
        if with_jacobian:
            jpolys = [
                f.components[r].partial(c)
                for f in fields
                for r in range(n)
                for c in range(n)
            ]
            self.jcoefs, self.jexps, self.jptr = _flatten(jpolys, n)
        else:
            self.jcoefs = self.jexps = self.jptr = None


def _flatten(polys: Sequence[Polynomial], nvars: int):
    coefs = []
    rows = []
    ptr = [0]
    for p in polys:
        for e, c in p.items():
            coefs.append(c)
            rows.append(e)
        ptr.append(len(coefs))
    if coefs:
        exps = np.array(rows, dtype=np.int64)
    else:
        exps = np.zeros((0, nvars + 1), dtype=np.int64)
    return (
        np.asarray(coefs, dtype=np.float64),
        np.ascontiguousarray(exps),
        np.asarray(ptr, dtype=np.int64),
    )


def sample_control_nodes(control, t0: float, t1: float, nsteps: int) -> np.ndarray:
    """Control samples on the RK4 half-step grid, shape (2*nsteps + 1, k)."""
    ts = t0 + (t1 - t0) * np.arange(2 * nsteps + 1) / (2 * nsteps)
    # rk grids may overshoot [0, 1] by rounding; clamp for signal evaluation
    vals = control.eval(np.clip(ts, 0.0, 1.0))
    return np.ascontiguousarray(vals.T, dtype=np.float64)


def flow_rk4(pack: FieldPack, u_nodes: np.ndarray, q0, t0: float, t1: float, nsteps: int):
    out = _impl.flow_rk4(
        pack.coefs, pack.exps, pack.ptr, pack.k, pack.n, u_nodes, q0, t0, t1, nsteps
    )
    if not np.all(np.isfinite(out)):
        raise NumericFailure("flow integration produced a non-finite state")
    return out


def flow_rk4_jacobian(
    pack: FieldPack, u_nodes: np.ndarray, q0, t0: float, t1: float, nsteps: int
):
    if pack.jcoefs is None:
        raise ValueError("FieldPack built without Jacobian data")
    q1, J = _impl.flow_rk4_jacobian(
        pack.coefs,
        pack.exps,
        pack.ptr,
        pack.jcoefs,
        pack.jexps,
        pack.jptr,
        pack.k,
        pack.n,
        u_nodes,
        q0,
        t0,
        t1,
        nsteps,
    )
    if not (np.all(np.isfinite(q1)) and np.all(np.isfinite(J))):
        raise NumericFailure("variational integration produced a non-finite state")
    return q1, J
