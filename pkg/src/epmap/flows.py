"""Flows of non-autonomous control-affine fields and their derived objects.

Exact flows come from a symbolic Picard iteration that terminates on
nilpotent-type systems; everything else falls back to fixed-step RK4
integration (see :mod:`epmap.kernels`).  Pullback fields and flow
differentials are obtained without matrix inversion through the adjoint
series

    (Ad P^t_{t0}) X = X + int [f_u, X] + int int [f_u, [f_u, X]] + ...

iterated symbolically with the time variable frozen inside brackets.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from . import kernels
from .errors import ExactBackendUnavailable, NumericFailure
from .polyalg import Polynomial, PolyVectorField, lie_bracket
from .signals import ControlSignal, QuasiTrigPoly

DEFAULT_RK_STEP = 1e-3
DEFAULT_MAX_ITER = 16


def channel_time_polynomial(ch, nvars: int) -> Polynomial:
    """Convert a pure-monomial quasi-trig channel to a Polynomial in t."""
    if not isinstance(ch, QuasiTrigPoly):
        raise ExactBackendUnavailable(
            "piecewise channels have no polynomial representation"
        )
    terms = {}
    for (k, m, ph), c in ch.items():
        if m != 0:
            raise ExactBackendUnavailable(
                "trigonometric control channels have no polynomial representation"
            )
        e = (0,) * nvars + (k,)
        terms[e] = terms.get(e, 0.0) + c
    return Polynomial(nvars, terms)


def control_is_polynomial(u: ControlSignal) -> bool:
    return u.is_quasitrig() and all(ch.max_frequency() == 0 for ch in u.channels)


def _control_field(
    fields: Sequence[PolyVectorField], u: ControlSignal
) -> PolyVectorField:
    """f_{u(t)} = sum_i u_i(t) f_i as a polynomial field in (x, t)."""
    n = fields[0].nvars
    out = PolyVectorField.zero(n)
    for ch, f in zip(u.channels, fields):
        out = out + f.scale(channel_time_polynomial(ch, n))
    return out


@dataclass(frozen=True)
class FlowMap:
    """The flow P_{t0}^t of f_{u(t)}, exact-polynomial or numeric.

    For the exact backend, ``components`` is the polynomial map
    (x, t) -> P_{t0}^t(x).  The numeric backend keeps the integrator
    configuration and evaluates on demand.
    """

    fields: Tuple[PolyVectorField, ...]
    control: ControlSignal
    t0: float
    backend: str
    components: Tuple[Polynomial, ...] | None = None
    rk_step: float = DEFAULT_RK_STEP
    _pack: object = field(default=None, repr=False, compare=False)

    @property
    def nvars(self) -> int:
        return self.fields[0].nvars

    def is_exact(self) -> bool:
        return self.backend == "exact-polynomial"

    def __call__(self, q: Sequence[float], t: float) -> np.ndarray:
        if self.is_exact():
            return np.array([p.eval(q, t) for p in self.components])
        return rk_flow(self.fields, self.control, self.t0, q, t, step=self.rk_step)

    def jacobian(self, q: Sequence[float], t: float) -> np.ndarray:
        return pushforward_matrix(self, q, t)


def picard_flow(
    fields: Sequence[PolyVectorField],
    u: ControlSignal,
    t0: float,
    q_symbolic: bool = True,
    max_iter: int = DEFAULT_MAX_ITER,
    rk_step: float = DEFAULT_RK_STEP,
    prune_rel: float = 1e-13,
) -> FlowMap:
    """Stabilizing symbolic Picard iteration for the flow of f_{u(t)}.

    Iterates  x^{k+1}(x, t) = x + int_{t0}^t f_{u(tau)}(x^k(x, tau)) dtau
    and returns the exact backend when the iteration reaches a fixed point
    within ``max_iter`` rounds, otherwise a numeric FlowMap.  With
    ``q_symbolic`` the control must be polynomial in t.

    ``prune_rel`` drops iterate coefficients below that relative size:
    on integer-coefficient systems this is a no-op, while on systems with
    rounded coefficients (e.g. after a float change of coordinates) it lets
    the mathematically-nilpotent iteration actually reach its fixed point.
    """
    fields = tuple(fields)
    n = fields[0].nvars
    if q_symbolic:
        if not control_is_polynomial(u):
            raise ExactBackendUnavailable(
                "exact Picard flow requires polynomial-in-t control channels"
            )
        fu = _control_field(fields, u)
        comps = tuple(Polynomial.var(n, i) for i in range(n))
        # non-nilpotent systems can double their iterate degree per round;
        # cap growth so they fail over to numerics instead of exploding
        max_degree = 64 * max(
            1, max(p.total_degree() for f in fields for p in f.components)
        )
        max_terms = 50_000
        for _ in range(max_iter):
            new_comps = []
            stable = True
            for i in range(n):
                integrand = fu.components[i].compose(list(comps))
                prim = integrand.time_antiderivative()
                nxt = Polynomial.var(n, i) + prim - prim.subs_time(t0)
                nxt = nxt.prune(prune_rel * nxt.max_abs_coeff())
                # fixed point up to coefficient jitter: exact for integer
                # data, ~1e-15-relative for rounded coefficients
                diff = nxt - comps[i]
                if diff.max_abs_coeff() > prune_rel * max(nxt.max_abs_coeff(), 1.0):
                    stable = False
                new_comps.append(nxt)
            comps = tuple(new_comps)
            if stable:
                # accept only if the ODE residual sits at rounding level:
                # a convergent (non-nilpotent) series also stalls under
                # pruning but leaves a genuine truncation residual
                scale = max(max(p.max_abs_coeff() for p in comps), 1.0)
                residual = 0.0
                for i in range(n):
                    r = comps[i].partial(n) - fu.components[i].compose(list(comps))
                    residual = max(residual, r.max_abs_coeff())
                if residual <= 100.0 * np.finfo(float).eps * scale:
                    return FlowMap(fields, u, t0, "exact-polynomial", comps, rk_step)
                break
            if any(
                p.total_degree() > max_degree or len(p.terms) > max_terms
                for p in comps
            ):
                break
    return FlowMap(
        fields,
        u,
        t0,
        "numeric",
        None,
        rk_step,
        kernels.FieldPack(fields, with_jacobian=True),
    )


def rk_flow(
    fields: Sequence[PolyVectorField],
    u: ControlSignal,
    t0: float,
    q0: Sequence[float],
    t1: float,
    step: float = DEFAULT_RK_STEP,
    pack=None,
) -> np.ndarray:
    """Classical fixed-step RK4 evaluation of P_{t0}^{t1}(q0)."""
    q0 = np.asarray(q0, dtype=float)
    if t1 == t0:
        return q0.copy()
    if pack is None:
        pack = kernels.FieldPack(list(fields))
    nsteps = max(1, int(round(abs(t1 - t0) / step)))
    u_nodes = kernels.sample_control_nodes(u, t0, t1, nsteps)
    return kernels.flow_rk4(pack, u_nodes, q0, t0, t1, nsteps)


def pushforward_matrix(flow: FlowMap, q: Sequence[float], t: float) -> np.ndarray:
    """State Jacobian of the flow map at (q, t).

    Exact backend: formal differentiation of the flow polynomials.
    Numeric backend: forward variational RK4 integration.
    """
    if flow.is_exact():
        n = flow.nvars
        J = np.empty((n, n))
        for r in range(n):
            for c in range(n):
                J[r, c] = flow.components[r].partial(c).eval(q, t)
        return J
    pack = flow._pack or kernels.FieldPack(list(flow.fields), with_jacobian=True)
    if t == flow.t0:
        return np.eye(flow.nvars)
    nsteps = max(1, int(round(abs(t - flow.t0) / flow.rk_step)))
    u_nodes = kernels.sample_control_nodes(flow.control, flow.t0, t, nsteps)
    _, J = kernels.flow_rk4_jacobian(pack, u_nodes, q, flow.t0, t, nsteps)
    return J


def pullback_of(
    fields: Sequence[PolyVectorField],
    u: ControlSignal,
    X: PolyVectorField,
    t0: float = 1.0,
    max_iter: int = DEFAULT_MAX_ITER,
    prune_rel: float = 1e-13,
) -> PolyVectorField:
    """(Ad P^t_{t0}) X as a polynomial field in (x, t), by the adjoint series.

    Terms T_0 = X, T_{j+1}(x, t) = int_{t0}^t [f_{u(tau)}, T_j(. , tau)](x) dtau
    are accumulated until they vanish; non-nilpotent systems raise.  Terms
    are pruned at ``prune_rel`` times the series scale so rounding dust
    cannot keep a nilpotent series alive (no-op on integer coefficients).
    """
    fields = tuple(fields)
    n = fields[0].nvars
    if not control_is_polynomial(u):
        raise ExactBackendUnavailable(
            "symbolic pullback requires polynomial-in-t control channels"
        )
    fu = _control_field(fields, u)
    total = X
    term = X
    scale = max(X.max_abs_coeff(), fu.max_abs_coeff(), 1.0)
    for _ in range(max_iter):
        bracket = lie_bracket(fu, term).prune(prune_rel * scale)
        if bracket.is_zero():
            return total
        comps = []
        for i in range(n):
            prim = bracket.components[i].time_antiderivative()
            comps.append(prim - prim.subs_time(t0))
        term = PolyVectorField(comps).prune(prune_rel * scale)
        if term.is_zero():
            return total
        total = total + term
        scale = max(scale, total.max_abs_coeff())
    raise ExactBackendUnavailable(
        f"adjoint series did not stabilize in {max_iter} iterations"
    )


def pullback_field(
    fields: Sequence[PolyVectorField],
    u: ControlSignal,
    i: int,
    t0: float = 1.0,
    max_iter: int = DEFAULT_MAX_ITER,
) -> PolyVectorField:
    """g_i^t = (P_t^{t0})_* f_i as a polynomial field in (x, t)."""
    return pullback_of(fields, u, fields[i], t0=t0, max_iter=max_iter)


def pullback_matrix_polys(
    fields: Sequence[PolyVectorField],
    u: ControlSignal,
    t0: float = 1.0,
    max_iter: int = DEFAULT_MAX_ITER,
) -> List[List[Polynomial]]:
    """Columns of the inverse flow differential as polynomial fields.

    Column j is (Ad P^t_{t0}) d/dx_j; evaluated at a point x these columns
    assemble the matrix [d_x P_{t0}^t]^{-1}.
    """
    n = fields[0].nvars
    cols = []
    for j in range(n):
        g = pullback_of(fields, u, PolyVectorField.coordinate(n, j), t0, max_iter)
        cols.append(list(g.components))
    return cols


@dataclass(frozen=True)
class AdjointCurve:
    """Covector curve lambda(t) = M(t)^T lambda1 with M(t) = (P_t^{t0})_*.

    Exact curves store each component as a polynomial in t (zero state
    variables); numeric curves store grid samples and interpolate linearly.
    """

    lam1: Tuple[float, ...]
    time_polys: Tuple[Polynomial, ...] | None = None
    grid: np.ndarray | None = None
    samples: np.ndarray | None = None

    def is_exact(self) -> bool:
        return self.time_polys is not None

    def eval(self, t: float) -> np.ndarray:
        if self.time_polys is not None:
            return np.array([p.eval([], t) for p in self.time_polys])
        idx = np.searchsorted(self.grid, t)
        idx = np.clip(idx, 1, len(self.grid) - 1)
        t0, t1 = self.grid[idx - 1], self.grid[idx]
        w = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
        return (1 - w) * self.samples[idx - 1] + w * self.samples[idx]

    __call__ = eval


def adjoint_curve(
    flow: FlowMap,
    lam1: Sequence[float],
    q1: Sequence[float],
    grid: Sequence[float] | None = None,
) -> AdjointCurve:
    """Adjoint curve through q1 = gamma(t0) of the anchored reference flow.

    ``flow`` must be the reference flow based at its anchor time (t0 = 1
    for end-point problems).  The exact route uses pullback columns; the
    numeric route integrates the costate equation backward along the
    trajectory.
    """
    lam1 = tuple(float(v) for v in lam1)
    n = flow.nvars
    if flow.is_exact():
        try:
            cols = pullback_matrix_polys(flow.fields, flow.control, flow.t0)
        except ExactBackendUnavailable:
            cols = None
        if cols is not None:
            # lambda(t)_j = sum_m M(t)_{m j} lam1_m evaluated at x = q1
            comps = []
            for j in range(n):
                acc = Polynomial.zero(n)
                for m in range(n):
                    acc = acc + cols[j][m].scale(lam1[m])
                comps.append(acc.eval_state(list(q1)))
            return AdjointCurve(lam1, time_polys=tuple(comps))
    if grid is None:
        grid = np.linspace(0.0, 1.0, 101)
    grid = np.asarray(grid, dtype=float)
    samples = _numeric_adjoint(flow, lam1, q1, grid)
    return AdjointCurve(lam1, grid=grid, samples=samples)


def _numeric_adjoint(
    flow: FlowMap, lam1: Sequence[float], q1: Sequence[float], grid: np.ndarray
) -> np.ndarray:
    """Backward RK4 on (q, lambda): qdot = f_u(q), lamdot = -Df_u(q)^T lam."""
    n = flow.nvars
    fields = list(flow.fields)
    jacs = [f.jacobian() for f in fields]
    t_anchor = flow.t0

    def rhs(state, t):
        q, lam = state[:n], state[n:]
        uvals = flow.control.eval(min(max(t, 0.0), 1.0))
        dq = np.zeros(n)
        A = np.zeros((n, n))
        for i, f in enumerate(fields):
            if uvals[i] == 0.0:
                continue
            dq += uvals[i] * f.eval(q, t)
            for r in range(n):
                for c in range(n):
                    A[r, c] += uvals[i] * jacs[i][r][c].eval(q, t)
        return np.concatenate([dq, -A.T @ lam])

    # integrate from t_anchor down over the sorted grid
    order = np.argsort(grid)[::-1]
    samples = np.empty((len(grid), n))
    state = np.concatenate([np.asarray(q1, dtype=float), np.asarray(lam1)])
    t_cur = t_anchor
    substep = flow.rk_step
    for idx in order:
        t_target = grid[idx]
        nsteps = max(1, int(round(abs(t_target - t_cur) / substep)))
        h = (t_target - t_cur) / nsteps
        for j in range(nsteps):
            t = t_cur + j * h
            k1 = rhs(state, t)
            k2 = rhs(state + 0.5 * h * k1, t + 0.5 * h)
            k3 = rhs(state + 0.5 * h * k2, t + 0.5 * h)
            k4 = rhs(state + h * k3, t + h)
            state = state + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(state)):
            raise NumericFailure("adjoint integration diverged")
        t_cur = t_target
        samples[idx] = state[n:]
    return samples


# -- closed-form flows in the signal algebra -----------------------------------


def signal_flow(
    fields: Sequence[PolyVectorField],
    w: ControlSignal,
    q0: Sequence[float],
    t0: float = 0.0,
    max_iter: int = DEFAULT_MAX_ITER,
) -> List[QuasiTrigPoly]:
    """Trajectory t -> q(t) as quasi-trig signals, by Picard iteration.

    Exact (up to rounding) whenever the iteration stabilizes; requires
    quasi-trig control channels.  Used for high-accuracy end-point
    evaluations where integrator error would drown the quantities of
    interest.
    """
    if not w.is_quasitrig():
        raise ExactBackendUnavailable("signal flow requires quasi-trig channels")
    fields = tuple(fields)
    n = fields[0].nvars
    q0 = [float(v) for v in q0]
    state = [QuasiTrigPoly.const(v) for v in q0]
    for _ in range(max_iter):
        new_state = []
        for m in range(n):
            integrand = QuasiTrigPoly.zero()
            for i, f in enumerate(fields):
                ch = w.channels[i]
                if ch.is_zero():
                    continue
                integrand = integrand + ch * _poly_at_signals(
                    f.components[m], state
                )
            prim = integrand.antiderivative()
            if t0 != 0.0:
                prim = prim - prim.eval(t0)
            new_state.append(QuasiTrigPoly.const(q0[m]) + prim)
        if new_state == state:
            return state
        state = new_state
    raise ExactBackendUnavailable(
        f"signal Picard iteration did not stabilize in {max_iter} iterations"
    )


def _poly_at_signals(p: Polynomial, args: Sequence[QuasiTrigPoly]) -> QuasiTrigPoly:
    """Evaluate a Polynomial at quasi-trig state arguments (t stays t)."""
    out = QuasiTrigPoly.zero()
    for e, c in p.items():
        term = QuasiTrigPoly.const(c)
        for sig, k in zip(args, e):
            for _ in range(k):
                term = term * sig
        if e[-1]:
            term = term * QuasiTrigPoly.monomial(e[-1])
        out = out + term
    return out


def _shifted_expansion(
    p: Polynomial, reference: Sequence[QuasiTrigPoly]
) -> List[Tuple[Tuple[int, ...], QuasiTrigPoly]]:
    """Multi-binomial layers of p(ref(t) + D) by D-monomial.

    Returns [(j, c_j)] with p(ref + D) = sum_j c_j(t) * prod_v D_v^{j_v};
    the j = 0 layer is p(ref(t)) itself.  Expanding structurally keeps the
    cancellation p(ref + D) - p(ref) exact in coefficient space no matter
    how large the reference coefficients are.
    """
    from math import comb

    n = p.nvars
    layers: dict = {}
    for e, c in p.items():
        base = QuasiTrigPoly.const(c)
        if e[-1]:
            base = base * QuasiTrigPoly.monomial(e[-1])
        # expand prod_v (ref_v + D_v)^{e_v} over per-variable binomial choices
        partial: List[Tuple[Tuple[int, ...], QuasiTrigPoly]] = [((), base)]
        for v in range(n):
            ev = e[v]
            if ev == 0:
                partial = [(j + (0,), coef) for j, coef in partial]
                continue
            ref_pows = [QuasiTrigPoly.const(1.0)]
            for _ in range(ev):
                ref_pows.append(ref_pows[-1] * reference[v])
            nxt = []
            for j, coef in partial:
                for jv in range(ev + 1):
                    factor = ref_pows[ev - jv].scale(float(comb(ev, jv)))
                    nxt.append((j + (jv,), coef * factor))
            partial = nxt
        for j, coef in partial:
            if j in layers:
                layers[j] = layers[j] + coef
            else:
                layers[j] = coef
    return sorted(layers.items())


def signal_flow_delta(
    fields: Sequence[PolyVectorField],
    reference: Sequence[QuasiTrigPoly],
    u_ref: ControlSignal,
    phi: ControlSignal,
    max_iter: int = DEFAULT_MAX_ITER,
) -> List[QuasiTrigPoly]:
    """Difference trajectory D(t) = q_{u+phi}(t) - q_ref(t) in the signal algebra.

    Solves  D' = f_{u+phi}(q_ref + D) - f_u(q_ref)  by Picard iteration
    with D(0) = 0, never forming u + phi or f(q_ref + D) - f(q_ref) as
    float differences: the reference-only strata are removed structurally,
    so the result has no O(1) rounding floor.  This is what the
    open-mapping verification needs at machine scale.
    """
    fields = tuple(fields)
    n = fields[0].nvars
    if not (phi.is_quasitrig() and u_ref.is_quasitrig()):
        raise ExactBackendUnavailable("signal flow requires quasi-trig channels")
    # per (channel, component): D-monomial layers of f_{i,m}(ref + D)
    expansions = [
        [_shifted_expansion(f.components[m], reference) for m in range(n)]
        for f in fields
    ]
    zero_j = tuple([0] * n)
    delta = [QuasiTrigPoly.zero() for _ in range(n)]
    for _ in range(max_iter):
        # powers of the current iterate, shared across components
        pows: List[List[QuasiTrigPoly]] = []
        maxdeg = max(
            (max(j[v] for j, _ in layers) if layers else 0)
            for exp_i in expansions
            for layers in exp_i
            for v in range(n)
        )
        for v in range(n):
            row = [QuasiTrigPoly.const(1.0)]
            for _ in range(maxdeg):
                row.append(row[-1] * delta[v])
            pows.append(row)

        def monomial(j: Tuple[int, ...]) -> QuasiTrigPoly:
            out = QuasiTrigPoly.const(1.0)
            for v, jv in enumerate(j):
                if jv:
                    out = out * pows[v][jv]
            return out

        new_delta = []
        for m in range(n):
            integrand = QuasiTrigPoly.zero()
            for i in range(len(fields)):
                u_i = u_ref.channels[i]
                phi_i = phi.channels[i]
                for j, coef in expansions[i][m]:
                    if j == zero_j:
                        # reference stratum: only the phi-weighted part survives
                        if not phi_i.is_zero():
                            integrand = integrand + phi_i * coef
                        continue
                    term = coef * monomial(j)
                    if not u_i.is_zero():
                        integrand = integrand + u_i * term
                    if not phi_i.is_zero():
                        integrand = integrand + phi_i * term
            new_delta.append(integrand.antiderivative())
        if new_delta == delta:
            return delta
        delta = new_delta
    raise ExactBackendUnavailable(
        f"difference Picard iteration did not stabilize in {max_iter} iterations"
    )
