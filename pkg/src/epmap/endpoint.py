"""End-point and perturbation maps: cokernel, scalarized differentials.

Everything is anchored at a reference control u with trajectory gamma and
end point q1.  The pullback fields g_i^t (reference-flow conjugates of the
control fields) are polynomial in (x, t) on nilpotent-type systems; their
decomposition into time-monomial layers

    g_i^t = sum_a t^a G_{i,a}(x)

turns every iterated simplex integral of bracket/composition scalarizations
into a finite sum of one-dimensional chained antiderivatives in the signal
algebra.  That is the closed-form path.  The numeric path runs the same
integrands through adaptive simplex quadrature.

Simplex orientation is {0 <= tau_d <= ... <= tau_1 <= 1} throughout; the
first slot of a bracket/composition carries the smallest time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from . import kernels
from .errors import (
    DimensionMismatch,
    ExactBackendUnavailable,
    MembershipError,
)
from .flows import (
    FlowMap,
    control_is_polynomial,
    picard_flow,
    pullback_field,
    rk_flow,
)
from .polyalg import Polynomial, PolyVectorField, lie_bracket
from .signals import ControlSignal, QuasiTrigPoly

DEFAULT_SVD_TOL = 1e-9
DEFAULT_MEMBERSHIP_TOL = 1e-8
DEFAULT_PROBE_MAX_FREQ = 8
DEFAULT_GRID_SIZE = 101


class EndpointProblem:
    """Reference data for the perturbation map G^u at q1 = F(q0, u).

    Holds the control fields, the reference control/end point, the
    reference flow anchored at t0 = 1, and (when the system is
    nilpotent-type) the exact pullback fields with their time-layer
    tensors, built lazily and cached.
    """

    def __init__(
        self,
        fields: Sequence[PolyVectorField],
        u_ref: ControlSignal,
        q0: Sequence[float],
        flow: FlowMap,
        q1: np.ndarray,
        pullbacks: Tuple[PolyVectorField, ...] | None,
        rk_step: float = 1e-3,
    ):
        self.fields = tuple(fields)
        self.u_ref = u_ref
        self.q0 = np.asarray(q0, dtype=float)
        self.flow = flow
        self.q1 = np.asarray(q1, dtype=float)
        self.pullbacks = pullbacks
        self.rk_step = rk_step
        self._slots: List[Tuple[int, int, PolyVectorField]] | None = None
        self._b2: np.ndarray | None = None
        self._b3: np.ndarray | None = None
        self._c2: np.ndarray | None = None
        self._c3: np.ndarray | None = None
        self._pack = kernels.FieldPack(list(fields), with_jacobian=True)

    @property
    def n(self) -> int:
        return self.fields[0].nvars

    @property
    def k(self) -> int:
        return len(self.fields)

    def is_exact(self) -> bool:
        return self.pullbacks is not None

    def require_exact(self, what: str) -> None:
        if not self.is_exact():
            raise ExactBackendUnavailable(
                f"{what} requires exact (nilpotent-type) pullback fields"
            )

    # -- time-layer decomposition and bracket/composition tensors ----------

    def slots(self) -> List[Tuple[int, int, PolyVectorField]]:
        """Flattened (channel, time power, time-free field) layers."""
        self.require_exact("time-layer decomposition")
        if self._slots is None:
            slots = []
            for i, g in enumerate(self.pullbacks):
                layers: Dict[int, List[Polynomial]] = {}
                per_comp = [p.time_coefficients() for p in g.components]
                degrees = sorted({a for tc in per_comp for a in tc})
                for a in degrees:
                    comps = [
                        tc.get(a, Polynomial.zero(self.n)) for tc in per_comp
                    ]
                    slots.append((i, a, PolyVectorField(comps)))
            self._slots = slots
        return self._slots

    def bracket2_tensor(self) -> np.ndarray:
        """B2[p, q, :] = [G_p, G_q](q1)."""
        if self._b2 is None:
            slots = self.slots()
            P = len(slots)
            out = np.zeros((P, P, self.n))
            for p, (_, _, Gp) in enumerate(slots):
                for q, (_, _, Gq) in enumerate(slots):
                    out[p, q] = lie_bracket(Gp, Gq).eval(self.q1)
            self._b2 = out
        return self._b2

    def bracket3_tensor(self) -> np.ndarray:
        """B3[p, q, r, :] = [G_p, [G_q, G_r]](q1)."""
        if self._b3 is None:
            slots = self.slots()
            P = len(slots)
            inner = [
                [lie_bracket(Gq, Gr) for (_, _, Gr) in slots]
                for (_, _, Gq) in slots
            ]
            out = np.zeros((P, P, P, self.n))
            for p, (_, _, Gp) in enumerate(slots):
                for q in range(P):
                    for r in range(P):
                        br = inner[q][r]
                        if br.is_zero():
                            continue
                        out[p, q, r] = lie_bracket(Gp, br).eval(self.q1)
            self._b3 = out
        return self._b3

    def comp2_tensor(self) -> np.ndarray:
        """C2[p, q, m] = (G_p applied to component m of G_q)(q1)."""
        if self._c2 is None:
            slots = self.slots()
            P = len(slots)
            out = np.zeros((P, P, self.n))
            for p, (_, _, Gp) in enumerate(slots):
                for q, (_, _, Gq) in enumerate(slots):
                    for m in range(self.n):
                        out[p, q, m] = Gp.apply_to(Gq.components[m]).eval(self.q1)
            self._c2 = out
        return self._c2

    def comp3_tensor(self) -> np.ndarray:
        """C3[p, q, r, m] = (G_p(G_q(G_r components)))(q1)."""
        if self._c3 is None:
            slots = self.slots()
            P = len(slots)
            out = np.zeros((P, P, P, self.n))
            for q, (_, _, Gq) in enumerate(slots):
                for r, (_, _, Gr) in enumerate(slots):
                    mids = [Gq.apply_to(Gr.components[m]) for m in range(self.n)]
                    for p, (_, _, Gp) in enumerate(slots):
                        for m in range(self.n):
                            out[p, q, r, m] = Gp.apply_to(mids[m]).eval(self.q1)
            self._c3 = out
        return self._c3

    # -- pullback evaluation -------------------------------------------------

    def pullback_values(self, times: Sequence[float]) -> np.ndarray:
        """g_i^t(q1) for t in times, shape (len(times), k, n).

        Exact route evaluates the polynomial pullbacks; the numeric route
        integrates the variational equation progressively along the
        reference trajectory.
        """
        times = np.asarray(times, dtype=float)
        out = np.empty((len(times), self.k, self.n))
        if self.is_exact():
            for j, t in enumerate(times):
                for i, g in enumerate(self.pullbacks):
                    out[j, i] = g.eval(self.q1, t)
            return out
        order = np.argsort(times)[::-1]
        t_cur = 1.0
        q_cur = self.q1.copy()
        J_total = np.eye(self.n)
        for idx in order:
            t = times[idx]
            if t != t_cur:
                nsteps = max(1, int(round(abs(t - t_cur) / self.rk_step)))
                u_nodes = kernels.sample_control_nodes(self.u_ref, t_cur, t, nsteps)
                q_cur, J_seg = kernels.flow_rk4_jacobian(
                    self._pack, u_nodes, q_cur, t_cur, t, nsteps
                )
                J_total = J_seg @ J_total
                t_cur = t
            # gamma(t) = P_1^t(q1); J_total = d P_1^t at q1; pullback is its inverse
            for i, f in enumerate(self.fields):
                out[idx, i] = np.linalg.solve(J_total, f.eval(q_cur, t))
        return out

    def pullback_coeff_polys(self) -> List[List[Polynomial]]:
        """g_i^t(q1) componentwise as time polynomials (zero state vars)."""
        self.require_exact("pullback coefficient polynomials")
        return [
            [p.eval_state(self.q1) for p in g.components] for g in self.pullbacks
        ]


def make_problem(
    fields: Sequence[PolyVectorField],
    u_ref: ControlSignal,
    q0: Sequence[float],
    rk_step: float = 1e-3,
    max_iter: int = 16,
) -> EndpointProblem:
    """Build the reference data (flow at base time 1, q1, pullbacks)."""
    fields = tuple(fields)
    if len(u_ref.channels) != len(fields):
        raise DimensionMismatch("control channel count != number of fields")
    symbolic = control_is_polynomial(u_ref)
    flow1 = picard_flow(fields, u_ref, t0=1.0, q_symbolic=symbolic, rk_step=rk_step)
    if flow1.is_exact():
        flow0 = picard_flow(fields, u_ref, t0=0.0, q_symbolic=True, rk_step=rk_step)
        q1 = flow0(q0, 1.0)
    else:
        q1 = rk_flow(fields, u_ref, 0.0, q0, 1.0, step=rk_step)
    pullbacks: Tuple[PolyVectorField, ...] | None
    if flow1.is_exact():
        try:
            pullbacks = tuple(
                pullback_field(fields, u_ref, i, t0=1.0, max_iter=max_iter)
                for i in range(len(fields))
            )
        except ExactBackendUnavailable:
            pullbacks = None
    else:
        pullbacks = None
    return EndpointProblem(fields, u_ref, q0, flow1, q1, pullbacks, rk_step)


# -- probe basis ----------------------------------------------------------------


def probe_basis(k: int, max_freq: int = DEFAULT_PROBE_MAX_FREQ) -> List[ControlSignal]:
    """Per-channel trig basis: constants plus sin/cos up to max_freq."""
    probes = []
    for c in range(k):
        channel_sigs = [QuasiTrigPoly.const(1.0)]
        for j in range(1, max_freq + 1):
            channel_sigs.append(QuasiTrigPoly.trig(j, "sin"))
            channel_sigs.append(QuasiTrigPoly.trig(j, "cos"))
        for sig in channel_sigs:
            chans = [QuasiTrigPoly.zero() for _ in range(k)]
            chans[c] = sig
            probes.append(ControlSignal(chans))
    return probes


# -- chained simplex integrals ----------------------------------------------------


def _timepoly_to_qtp(p: Polynomial) -> QuasiTrigPoly:
    if any(e[:-1] != (0,) * (len(e) - 1) for e in p.terms):
        raise ValueError("polynomial still depends on state variables")
    return QuasiTrigPoly({(e[-1], 0, 0): c for e, c in p.terms.items()})


def _chain_integral(slots: Sequence[Tuple[QuasiTrigPoly, int]]) -> float:
    """Iterated integral over the ordered simplex, innermost slot first.

    slots = [(sig_d, a_d), ..., (sig_1, a_1)] computes
    int_0^1 sig_1 t^{a_1} int_0^{tau} sig_2 t^{a_2} ... dtau chains.
    """
    acc: QuasiTrigPoly | None = None
    for sig, a in slots:
        f = sig if a == 0 else sig * QuasiTrigPoly.monomial(a)
        if acc is not None:
            f = f * acc
        acc = f.antiderivative()
    return acc.eval(1.0)


def simplex_integrate(
    integrand: Callable,
    d: int,
    tol: float = 1e-9,
    max_order: int = 128,
) -> Tuple[float, float]:
    """Adaptive quadrature of ``integrand(tau_1, ..., tau_d)`` over the
    ordered simplex {0 <= tau_d <= ... <= tau_1 <= 1}.

    Maps the simplex to the unit cube (tau_j = s_1 * ... * s_j) and refines
    a tensor Gauss-Legendre rule in order until two consecutive estimates
    agree to ``tol``.  Returns (value, estimated error); the estimate is
    reported even when refinement did not converge.
    """
    if d < 1 or d > 3:
        raise ValueError("simplex_integrate supports orders 1..3")

    def transformed(*s):
        taus = []
        prod = np.ones_like(s[0])
        for sj in s:
            prod = prod * sj
            taus.append(prod)
        jac = np.ones_like(s[0])
        for j, sj in enumerate(s):
            power = d - 1 - j
            if power > 0:
                jac = jac * sj**power
        # integrand slots are (tau_1, ..., tau_d) with tau_1 the largest
        return integrand(*taus) * jac

    prev = None
    err = math.inf
    order = 8
    value = 0.0
    while order <= max_order:
        nodes, weights = np.polynomial.legendre.leggauss(order)
        x = 0.5 * (nodes + 1.0)
        w = 0.5 * weights
        grids = np.meshgrid(*([x] * d), indexing="ij")
        try:
            vals = transformed(*grids)
            vals = np.asarray(vals, dtype=float)
            if vals.shape != grids[0].shape:
                raise ValueError
        except Exception:
            fn = np.vectorize(lambda *s: float(transformed(*map(np.asarray, s))))
            vals = fn(*grids)
        wgrid = np.ones_like(grids[0])
        for axis in range(d):
            shape = [1] * d
            shape[axis] = order
            wgrid = wgrid * w.reshape(shape)
        value = float(np.sum(vals * wgrid))
        if prev is not None:
            err = abs(value - prev)
            if err <= max(tol, tol * abs(value)):
                return value, err
        prev = value
        order *= 2
    return value, err


# -- operations -------------------------------------------------------------------


def first_diff(P: EndpointProblem, v: ControlSignal) -> np.ndarray:
    """d_0 G^u(v) = int_0^1 sum_i v_i(t) g_i^t(q1) dt."""
    if v.k != P.k:
        raise DimensionMismatch("control channel count != number of fields")
    if P.is_exact():
        if v.is_quasitrig():
            coeffs = P.pullback_coeff_polys()
            out = np.zeros(P.n)
            for i in range(P.k):
                ch = v.channels[i]
                if ch.is_zero():
                    continue
                for m in range(P.n):
                    c = _timepoly_to_qtp(coeffs[i][m])
                    if c.is_zero():
                        continue
                    out[m] += (ch * c).antiderivative().eval(1.0)
            return out
        # piecewise channels: adaptive quadrature with the jumps as panels
        from scipy.integrate import quad

        coeffs = P.pullback_coeff_polys()
        out = np.zeros(P.n)
        for i in range(P.k):
            ch = v.channels[i]
            breaks = []
            if hasattr(ch, "breakpoints"):
                breaks = [b for b in ch.breakpoints() if 0.0 < b < 1.0]
            for m in range(P.n):
                poly = coeffs[i][m]
                if poly.is_zero():
                    continue
                val, _ = quad(
                    lambda t: float(ch.eval(t)) * poly.eval([], t),
                    0.0,
                    1.0,
                    points=breaks or None,
                    limit=200,
                    epsabs=1e-12,
                )
                out[m] += val
        return out
    ts = np.linspace(0.0, 1.0, 2049)
    gv = P.pullback_values(ts)  # (T, k, n)
    vv = np.stack([np.atleast_1d(ch.eval(ts)) for ch in v.channels], axis=1)
    integrand = np.einsum("ti,tin->tn", vv, gv)
    from scipy.integrate import simpson

    return simpson(integrand, x=ts, axis=0)


@dataclass(frozen=True)
class CokernelBasis:
    """Orthonormal rows spanning Im(d_0 G)^perp, with SVD diagnostics."""

    lambdas: np.ndarray  # (corank, n)
    corank: int
    singular_values: np.ndarray
    threshold: float

    def __iter__(self):
        return iter(self.lambdas)


def cokernel(
    P: EndpointProblem,
    probe_grid: Sequence[float] | None = None,
    threshold: float = DEFAULT_SVD_TOL,
) -> CokernelBasis:
    """SVD cokernel of the sampled image {g_i^t(q1)}.

    corank = n - numerical rank at the relative singular-value threshold.
    Basis rows are sign-normalized (largest-magnitude entry positive).
    """
    if probe_grid is None:
        probe_grid = np.linspace(0.0, 1.0, DEFAULT_GRID_SIZE)
    probe_grid = np.asarray(probe_grid, dtype=float)
    if probe_grid.size == 0:
        raise ValueError("probe grid must be nonempty")
    vals = P.pullback_values(probe_grid)  # (T, k, n)
    A = vals.reshape(-1, P.n).T  # n x (T*k)
    U, s, _ = np.linalg.svd(A, full_matrices=True)
    smax = s[0] if s.size else 0.0
    rank = int(np.sum(s > threshold * smax)) if smax > 0 else 0
    corank = P.n - rank
    lambdas = U[:, rank:].T.copy()
    for row in lambdas:
        pivot = np.argmax(np.abs(row))
        if row[pivot] < 0:
            row *= -1.0
    return CokernelBasis(lambdas, corank, s, threshold)


def _require_kernel(P: EndpointProblem, v: ControlSignal, tol: float, name: str):
    resid = float(np.linalg.norm(first_diff(P, v)))
    if resid > tol:
        raise MembershipError(
            f"{name} not in ker(d_0 G): |d_0 G| = {resid:.3e} > {tol:.1e}"
        )


def _signal_slot(P: EndpointProblem, v: ControlSignal, slot_idx: int):
    i, a, _ = P.slots()[slot_idx]
    return v.channels[i], a


def hessian_scalar(
    P: EndpointProblem,
    lam: Sequence[float],
    v: ControlSignal,
    w: ControlSignal,
    enforce_kernel: bool = True,
    tol: float = DEFAULT_MEMBERSHIP_TOL,
) -> float:
    """Polarized scalarized intrinsic Hessian

    (1/2) int_{Sigma_2} <lam, [g_{v(tau2)}, g_{w(tau1)}] + [g_{w(tau2)}, g_{v(tau1)}]>(q1)
    """
    P.require_exact("hessian_scalar")
    lam = np.asarray(lam, dtype=float)
    if enforce_kernel:
        _require_kernel(P, v, tol, "v")
        _require_kernel(P, w, tol, "w")
    B2 = P.bracket2_tensor()
    S = B2 @ lam  # (P, P)
    slots = P.slots()
    if v.is_quasitrig() and w.is_quasitrig():
        total = 0.0
        for p in range(len(slots)):
            ip, ap, _ = slots[p]
            for q in range(len(slots)):
                iq, aq, _ = slots[q]
                coeff = S[p, q]
                if coeff == 0.0:
                    continue
                term = _chain_integral(
                    [(v.channels[ip], ap), (w.channels[iq], aq)]
                ) + _chain_integral([(w.channels[ip], ap), (v.channels[iq], aq)])
                total += 0.5 * coeff * term
        return total

    def integrand(t1, t2):
        # t2 <= t1; slot p carries t2, slot q carries t1
        acc = 0.0
        for p in range(len(slots)):
            ip, ap, _ = slots[p]
            for q in range(len(slots)):
                iq, aq, _ = slots[q]
                coeff = S[p, q]
                if coeff == 0.0:
                    continue
                acc = acc + 0.5 * coeff * (
                    v.channels[ip].eval(t2) * t2**ap * w.channels[iq].eval(t1) * t1**aq
                    + w.channels[ip].eval(t2) * t2**ap * v.channels[iq].eval(t1) * t1**aq
                )
        return acc

    value, _ = simplex_integrate(integrand, 2, tol=1e-10)
    return value


def _third_chain(
    P: EndpointProblem,
    lam: np.ndarray,
    assign: Sequence[ControlSignal],
    representation: str,
) -> float:
    """Core triple integral with per-slot control assignment.

    assign = (control at tau3, control at tau2, control at tau1); the
    'ascending' representation puts the first bracket slot at the smallest
    time tau3 (the explicit third-differential formula), 'descending' puts
    it at the largest time (the equivalent reversed representation).
    """
    B3 = P.bracket3_tensor()
    S = B3 @ lam  # (P, P, P)
    slots = P.slots()
    nP = len(slots)
    va, vb, vc = assign
    if all(s.is_quasitrig() for s in assign):
        total = 0.0
        for p in range(nP):
            ip, ap, _ = slots[p]
            for q in range(nP):
                iq, aq, _ = slots[q]
                for r in range(nP):
                    ir, ar, _ = slots[r]
                    coeff = S[p, q, r]
                    if coeff == 0.0:
                        continue
                    if representation == "ascending":
                        chain = [
                            (va.channels[ip], ap),
                            (vb.channels[iq], aq),
                            (vc.channels[ir], ar),
                        ]
                    else:
                        chain = [
                            (va.channels[ir], ar),
                            (vb.channels[iq], aq),
                            (vc.channels[ip], ap),
                        ]
                    total += coeff * _chain_integral(chain)
        return total

    def integrand(t1, t2, t3):
        acc = 0.0
        if representation == "ascending":
            ta, tb, tc = t3, t2, t1
        else:
            ta, tb, tc = t1, t2, t3
        for p in range(nP):
            ip, ap, _ = slots[p]
            for q in range(nP):
                iq, aq, _ = slots[q]
                for r in range(nP):
                    ir, ar, _ = slots[r]
                    coeff = S[p, q, r]
                    if coeff == 0.0:
                        continue
                    acc = acc + coeff * (
                        va.channels[ip].eval(ta)
                        * ta**ap
                        * vb.channels[iq].eval(tb)
                        * tb**aq
                        * vc.channels[ir].eval(tc)
                        * tc**ar
                    )
        return acc

    value, _ = simplex_integrate(integrand, 3, tol=1e-10)
    return value


def third_scalar(
    P: EndpointProblem,
    lam: Sequence[float],
    v: ControlSignal,
    enforce_domain: bool = True,
    lambdas: Sequence[Sequence[float]] | None = None,
    probes: Sequence[ControlSignal] | None = None,
    tol: float = DEFAULT_MEMBERSHIP_TOL,
    representation: str = "ascending",
) -> float:
    """lambda D^3_0 G(v) = 2 int_{Sigma_3} <lam, [g, [g, g]]>(q1).

    Off the domain of the third differential the value depends on the
    bracket representation; ``enforce_domain=False`` computes it anyway
    (callers then report the representation used).
    """
    P.require_exact("third_scalar")
    lam = np.asarray(lam, dtype=float)
    if enforce_domain:
        lam_set = lambdas if lambdas is not None else [lam]
        if not dom3_membership(P, lam_set, v, probes, tol=tol):
            raise MembershipError("v is not in dom(D^3_0 G) at the given tolerance")
    return 2.0 * _third_chain(P, lam, (v, v, v), representation)


def trilinear(
    P: EndpointProblem,
    lam: Sequence[float],
    v1: ControlSignal,
    v2: ControlSignal,
    v3: ControlSignal,
    enforce_domain: bool = True,
    lambdas: Sequence[Sequence[float]] | None = None,
    probes: Sequence[ControlSignal] | None = None,
    tol: float = DEFAULT_MEMBERSHIP_TOL,
    representation: str = "ascending",
) -> float:
    """Trilinear map lambda T(v1, v2, v3): average over the 6 slot assignments.

    Normalization: trilinear(v, v, v) == third_scalar(v).  (The polarization
    test pins this factor; see the package notes on conventions.)
    """
    P.require_exact("trilinear")
    lam = np.asarray(lam, dtype=float)
    if enforce_domain:
        lam_set = lambdas if lambdas is not None else [lam]
        for vv, name in ((v1, "v1"), (v2, "v2"), (v3, "v3")):
            if not dom3_membership(P, lam_set, vv, probes, tol=tol):
                raise MembershipError(f"{name} is not in dom(D^3_0 G)")
    total = 0.0
    from itertools import permutations

    for perm in permutations((v1, v2, v3)):
        total += _third_chain(P, lam, perm, representation)
    return total / 3.0


def dom3_membership(
    P: EndpointProblem,
    lambdas: Sequence[Sequence[float]],
    v: ControlSignal,
    probes: Sequence[ControlSignal] | None = None,
    tol: float = DEFAULT_MEMBERSHIP_TOL,
) -> bool:
    """True iff d_0 G(v) ~ 0 and the polarized Hessian pairing with every
    probe vanishes for every cokernel direction."""
    resid = float(np.linalg.norm(first_diff(P, v)))
    if resid > tol:
        return False
    if probes is None:
        probes = probe_basis(P.k, DEFAULT_PROBE_MAX_FREQ)
    for lam in lambdas:
        for x in probes:
            val = hessian_scalar(P, lam, v, x, enforce_kernel=False)
            if abs(val) > tol:
                return False
    return True


# -- chart (coordinate) differentials -----------------------------------------


def chart_second_vector(
    P: EndpointProblem, a: ControlSignal, b: ControlSignal
) -> np.ndarray:
    """d^2_0 G(a, b) in the global chart: the full n-vector, polarized."""
    P.require_exact("chart_second_vector")
    C2 = P.comp2_tensor()
    slots = P.slots()
    out = np.zeros(P.n)
    for p in range(len(slots)):
        ip, ap, _ = slots[p]
        for q in range(len(slots)):
            iq, aq, _ = slots[q]
            vec = C2[p, q]
            if not vec.any():
                continue
            term = _chain_integral(
                [(a.channels[ip], ap), (b.channels[iq], aq)]
            ) + _chain_integral([(b.channels[ip], ap), (a.channels[iq], aq)])
            out = out + vec * term
    return out


def chart_third_vector(P: EndpointProblem, v: ControlSignal) -> np.ndarray:
    """d^3_0 G(v) in the global chart (cubic, not polarized)."""
    P.require_exact("chart_third_vector")
    C3 = P.comp3_tensor()
    slots = P.slots()
    out = np.zeros(P.n)
    for p in range(len(slots)):
        ip, ap, _ = slots[p]
        for q in range(len(slots)):
            iq, aq, _ = slots[q]
            for r in range(len(slots)):
                ir, ar, _ = slots[r]
                vec = C3[p, q, r]
                if not vec.any():
                    continue
                out = out + 6.0 * vec * _chain_integral(
                    [
                        (v.channels[ip], ap),
                        (v.channels[iq], aq),
                        (v.channels[ir], ar),
                    ]
                )
    return out


def chart_third_trilinear(
    P: EndpointProblem, a: ControlSignal, b: ControlSignal, c: ControlSignal
) -> np.ndarray:
    """Symmetric trilinear form of the chart cubic d^3_0 G."""
    P.require_exact("chart_third_trilinear")
    from itertools import permutations

    C3 = P.comp3_tensor()
    slots = P.slots()
    out = np.zeros(P.n)
    for sa, sb, sc in permutations((a, b, c)):
        for p in range(len(slots)):
            ip, ap, _ = slots[p]
            for q in range(len(slots)):
                iq, aq, _ = slots[q]
                for r in range(len(slots)):
                    ir, ar, _ = slots[r]
                    vec = C3[p, q, r]
                    if not vec.any():
                        continue
                    out = out + vec * _chain_integral(
                        [
                            (sa.channels[ip], ap),
                            (sb.channels[iq], aq),
                            (sc.channels[ir], ar),
                        ]
                    )
    return out


@dataclass(frozen=True)
class ScalarizedForm:
    """Bundle of lambda-scalarized differential values for reporting."""

    lam: Tuple[float, ...]
    hessian: float
    third: float
    in_domain: bool
    representation: str = "ascending"
