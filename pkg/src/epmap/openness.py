"""Numerical instantiation of the third-order open-mapping constructions.

Two perturbation families are built from an end-point problem:

* corank one -- phi_eps(x, y) mixes a domain control v (with nonzero third
  differential) at order eps^3 with correctors z0, z1 at orders eps^6 /
  eps^9, solved so the sixth and lower ninth-order Taylor blocks cancel;
* general corank -- phi_eps(r, s, t) per the multi-block construction with
  auxiliary controls solved from the order-12..19 cancellation equations.

The combinatorial constants multiplying F''/F''' blocks are computed from
the Taylor-composition partition recursion, never hard-coded.

``ball_cover_verify`` then drives the scaled composition toward a grid of
targets in a small image ball by the fixed-point iteration
chi^xi(z) = xi + z - Psi_hat(z) and reports the reached fraction.  This is
numerical evidence with explicit parameters, not a proof.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Sequence, Tuple

import numpy as np

from . import kernels
from .endpoint import (
    EndpointProblem,
    chart_second_vector,
    chart_third_trilinear,
    chart_third_vector,
    dom3_membership,
    first_diff,
    hessian_scalar,
    probe_basis,
    third_scalar,
    trilinear,
    _timepoly_to_qtp,
)
from .errors import ConstructionError, ExactBackendUnavailable, MembershipError
from .flows import picard_flow, signal_flow_delta
from .polyalg import Polynomial, PolyVectorField
from .signals import ControlSignal, combine


# -- Taylor composition constants -------------------------------------------------


def taylor_composition_terms(k: int, max_order: int = 3) -> Dict[Tuple[int, ...], int]:
    """Coefficients of d^k/de^k F(phi(e))|_0 grouped by derivative multisets.

    Returns {(b_1 <= ... <= b_j): c} so that

        Phi^{(k)}(0) = sum_B c_B * F^{(j)}[phi^{(b_1)}, ..., phi^{(b_j)}],

    with c_B = k! / (prod b_i! * prod_m mult_m!): the partition form of the
    Faa di Bruno recursion, restricted to j <= max_order blocks.
    """
    out: Dict[Tuple[int, ...], int] = {}

    def partitions(total: int, parts: int, minimum: int):
        if parts == 1:
            if total >= minimum:
                yield (total,)
            return
        for first in range(minimum, total // parts + 1):
            for rest in partitions(total - first, parts - 1, first):
                yield (first,) + rest

    for j in range(1, max_order + 1):
        for block in partitions(k, j, 1):
            c = math.factorial(k)
            for b in block:
                c //= math.factorial(b)
            mult: Dict[int, int] = {}
            for b in block:
                mult[b] = mult.get(b, 0) + 1
            for m in mult.values():
                c //= math.factorial(m)
            out[block] = c
    return out


def composition_series_check(
    k: int, orders: Sequence[int], seed: int = 0
) -> Tuple[Fraction, Fraction]:
    """Exact-rational cross-check of the partition coefficients.

    Composes F(x) = a1 x + a2 x^2 + a3 x^3 with phi(e) = sum b_h e^h / h!
    (random small-integer coefficients on the given orders) and returns the
    k-th derivative of the composition at 0 computed two ways: by direct
    series expansion and by the partition formula.
    """
    rng = np.random.default_rng(seed)
    a = {j: Fraction(int(rng.integers(-5, 6))) for j in (1, 2, 3)}
    b = {h: Fraction(int(rng.integers(-5, 6))) for h in orders}

    # phi as a dense coefficient list of e^h
    deg = k
    phi = [Fraction(0)] * (deg + 1)
    for h, bh in b.items():
        if h <= deg:
            phi[h] = bh / math.factorial(h)

    def series_mul(p, q):
        out = [Fraction(0)] * (deg + 1)
        for i, pi in enumerate(p):
            if pi == 0:
                continue
            for j, qj in enumerate(q):
                if i + j > deg or qj == 0:
                    continue
                out[i + j] += pi * qj
        return out

    phi2 = series_mul(phi, phi)
    phi3 = series_mul(phi2, phi)
    composed = [
        a[1] * phi[i] + a[2] * phi2[i] + a[3] * phi3[i] for i in range(deg + 1)
    ]
    direct = composed[k] * math.factorial(k)

    total = Fraction(0)
    for block, c in taylor_composition_terms(k).items():
        j = len(block)
        if any(h not in b for h in block):
            continue
        prod = Fraction(c) * a[j] * math.factorial(j)
        # F^{(j)} of a1 x + a2 x^2 + a3 x^3 as a j-linear form is j! * a_j
        for h in block:
            prod *= b[h]
        total += prod
    return direct, total


def _pair_constant(k: int, h: int) -> int:
    return taylor_composition_terms(k, max_order=2)[tuple(sorted((h, k - h)))]


def _triple_constant(k: int, block: Tuple[int, int, int]) -> int:
    return taylor_composition_terms(k, max_order=3)[tuple(sorted(block))]


# -- end-point evaluators -----------------------------------------------------------


class ExactDeltaEvaluator:
    """F(u + phi) - q1 through the closed-form signal-algebra flow.

    The difference trajectory is integrated symbolically, so order-one
    cancellations happen in coefficient space and the result is accurate
    at the scale of the perturbation itself.
    """

    name = "exact-signal"

    def __init__(self, P: EndpointProblem):
        P.require_exact("ExactDeltaEvaluator")
        self.P = P
        flow0 = picard_flow(P.fields, P.u_ref, t0=0.0)
        if not flow0.is_exact():
            raise ExactBackendUnavailable("reference flow is not exact-polynomial")
        self.reference = [
            _timepoly_to_qtp(p.eval_state(P.q0)) for p in flow0.components
        ]

    def __call__(self, controls: Sequence[ControlSignal]) -> np.ndarray:
        out = np.empty((len(controls), self.P.n))
        for b, phi in enumerate(controls):
            delta = signal_flow_delta(
                self.P.fields, self.reference, self.P.u_ref, phi
            )
            out[b] = [d.eval(1.0) for d in delta]
        return out


class NumericDeltaEvaluator:
    """F(u + phi) - q1 by batched RK4 on the symbolically shifted system.

    The difference field  w' = f_{u+phi}(q_ref(t) + w) - f_u(q_ref(t))  is
    assembled with the reference trajectory substituted as polynomials, so
    the constant-in-w parts cancel exactly and only integration error
    remains.  Requires an exact reference flow.
    """

    name = "numeric-rk4"

    def __init__(self, P: EndpointProblem, step: float = 1e-4):
        self.P = P
        self.step = step
        flow0 = picard_flow(P.fields, P.u_ref, t0=0.0)
        if not flow0.is_exact():
            raise ExactBackendUnavailable("reference flow is not exact-polynomial")
        n = P.n
        gamma = [p.compose([Polynomial.const(n, float(v)) for v in P.q0])
                 for p in flow0.components]
        # shifted channel fields F_i(w, t) = f_i(gamma(t) + w)
        shifted: List[PolyVectorField] = []
        for f in P.fields:
            comps = [
                p.compose([gamma[m] + Polynomial.var(n, m) for m in range(n)])
                for p in f.components
            ]
            shifted.append(PolyVectorField(comps))
        # difference channels D_i(w, t) = F_i(w, t) - F_i(0, t)
        diff: List[PolyVectorField] = []
        for g in shifted:
            comps = [
                p - p.compose([Polynomial.zero(n)] * n) for p in g.components
            ]
            diff.append(PolyVectorField(comps))
        self._channels = diff + shifted
        self._pack = kernels.FieldPack(self._channels)

    def __call__(self, controls: Sequence[ControlSignal]) -> np.ndarray:
        P = self.P
        nsteps = max(1, int(round(1.0 / self.step)))
        out = np.empty((len(controls), P.n))
        w0 = np.zeros(P.n)
        for b, phi in enumerate(controls):
            stacked = ControlSignal(list(P.u_ref.channels) + list(phi.channels))
            u_nodes = kernels.sample_control_nodes(stacked, 0.0, 1.0, nsteps)
            out[b] = kernels.flow_rk4(self._pack, u_nodes, w0, 0.0, 1.0, nsteps)
        return out


def make_evaluator(P: EndpointProblem, prefer: str = "exact", step: float = 1e-4):
    if prefer == "exact":
        try:
            return ExactDeltaEvaluator(P)
        except ExactBackendUnavailable:
            return NumericDeltaEvaluator(P, step)
    return NumericDeltaEvaluator(P, step)


# -- perturbation families ------------------------------------------------------------


@dataclass(frozen=True)
class PerturbationFamily:
    """A solved map phi_eps from ball coordinates to control perturbations."""

    kind: str  # 'corank1' | 'general'
    problem: EndpointProblem
    controls: Dict[str, object]  # named ControlSignals / lists of them
    principal: np.ndarray  # L: R^m -> R^n, the leading linear block
    scale_power: int  # eps exponent normalizing the composition
    constants: Dict[str, int]
    residuals: Dict[str, float]
    block_dims: Tuple[int, ...]

    @property
    def z_dim(self) -> int:
        return self.principal.shape[1]

    def control_at(self, eps: float, z: np.ndarray) -> ControlSignal:
        if self.kind == "corank1":
            return self._corank1_control(eps, z)
        return self._general_control(eps, z)

    def _corank1_control(self, eps: float, z: np.ndarray) -> ControlSignal:
        m = self.z_dim
        x, y = z[: m - 1], float(z[m - 1])
        yr = math.copysign(abs(y) ** (1.0 / 9.0), y)
        v: ControlSignal = self.controls["v"]
        z0: ControlSignal = self.controls["z0"]
        z1: ControlSignal = self.controls["z1"]
        basis: List[ControlSignal] = self.controls["E1"]
        phi = v.scale(eps**3 * yr**3 / 6.0)
        phi = phi + z0.scale(eps**6 * yr**6 / 720.0)
        phi = phi + z1.scale(eps**9 * yr**9 / math.factorial(9))
        for xi, e in zip(x, basis):
            if xi != 0.0:
                phi = phi + e.scale(eps**9 * xi / math.factorial(9))
        return phi

    def _general_control(self, eps: float, z: np.ndarray) -> ControlSignal:
        m1, m2, m3 = self.block_dims
        r = z[:m1]
        s = z[m1 : m1 + m2]
        t = z[m1 + m2 :]
        c = self.controls
        f = math.factorial
        phi = c["v0"].scale(eps**6 / f(6))
        phi = phi + c["w0"].scale(eps**8 / f(8))
        phi = phi + c["nu"].scale(eps**12 / f(12))
        phi = phi + c["xi"].scale(eps**14 / f(14))
        phi = phi + c["mu"].scale(eps**16 / f(16))
        phi = phi + c["zeta"].scale(eps**18 / f(18))
        for ti, e in zip(t, c["E3"]):
            phi = phi + e.scale(eps**7 * ti / f(7))
        for sl, e in zip(s, c["E2"]):
            phi = phi + e.scale(eps**11 * sl / f(11))
        for ri, e in zip(r, c["E1"]):
            phi = phi + e.scale(eps**19 * ri / f(19))
        for ti, eta in zip(t, c["eta_i"]):
            phi = phi + eta.scale(eps**13 * ti / f(13))
        for ti, xi_i in zip(t, c["xi_i"]):
            phi = phi + xi_i.scale(eps**15 * ti / f(15))
        for ti, mu_i in zip(t, c["mu_i"]):
            phi = phi + mu_i.scale(eps**19 * ti / f(19))
        for sl, zl in zip(s, c["zeta_l"]):
            phi = phi + zl.scale(eps**17 * sl / f(17))
        for i, ti in enumerate(t):
            for j, tj in enumerate(t):
                phi = phi + c["eta_ij"][i][j].scale(eps**14 * ti * tj / f(14))
            for l, sl in enumerate(s):
                phi = phi + c["zeta_il"][i][l].scale(eps**18 * ti * sl / f(18))
        return phi


def _image_solver(P: EndpointProblem, probes: Sequence[ControlSignal]):
    """Least-squares machinery over the probe span of d_0 G."""
    A = np.stack([first_diff(P, x) for x in probes], axis=1)  # (n, P)

    def solve(rhs: np.ndarray) -> Tuple[ControlSignal, float]:
        coeffs, *_ = np.linalg.lstsq(A, rhs, rcond=None)
        residual = float(np.linalg.norm(A @ coeffs - rhs))
        return combine(coeffs, probes), residual

    return A, solve


def _orthonormal_image_basis(A: np.ndarray, svd_tol: float = 1e-9) -> np.ndarray:
    U, s, _ = np.linalg.svd(A, full_matrices=False)
    smax = s[0] if s.size else 0.0
    rank = int(np.sum(s > svd_tol * smax)) if smax > 0 else 0
    return U[:, :rank]


def build_corank1_family(
    P: EndpointProblem,
    lam: Sequence[float],
    v: ControlSignal,
    probes: Sequence[ControlSignal] | None = None,
    domain_probes: Sequence[ControlSignal] | None = None,
    tol: float = 1e-8,
) -> PerturbationFamily:
    """Solve the corank-one correctors z0, z1 and assemble phi_eps(x, y).

    Requires corank one, v in dom(D^3) and a nonzero third differential;
    z0 solves d_0 F(z0) = -10 d^2_0 F(v, v) and z1 solves
    d_0 F(z1) = -84 d^2_0 F(v, z0) over the probe span.  Corrector solves
    default to a compact low-frequency basis (enough to span the image and
    cheap to push through the end-point evaluator); domain membership is
    checked against the standard rich probe basis.
    """
    lam = np.asarray(lam, dtype=float)
    if probes is None:
        probes = probe_basis(P.k, max_freq=2)
    if domain_probes is None:
        domain_probes = probe_basis(P.k)
    A, solve = _image_solver(P, probes)
    B = _orthonormal_image_basis(A)
    if B.shape[1] != P.n - 1:
        raise ConstructionError(
            f"corank-one construction needs rank n-1, got rank {B.shape[1]}"
        )
    if not dom3_membership(P, [lam], v, domain_probes, tol=tol):
        raise MembershipError("v is not in dom(D^3_0 G)")
    third = third_scalar(P, lam, v, enforce_domain=False)
    if abs(third) <= tol:
        raise ConstructionError("third differential vanishes; construction inapplicable")

    c33 = _pair_constant(6, 3)  # the '10'
    c36 = _pair_constant(9, 3)  # the '84'
    c333 = _triple_constant(9, (3, 3, 3))  # the '280'

    d2vv = chart_second_vector(P, v, v)
    z0, r0 = solve(-float(c33) * d2vv)
    d2vz0 = chart_second_vector(P, v, z0)
    z1, r1 = solve(-float(c36) * d2vz0)
    residuals = {"z0": r0, "z1": r1}
    e_basis: List[ControlSignal] = []
    for j in range(B.shape[1]):
        e, re = solve(B[:, j])
        residuals[f"e{j}"] = re
        e_basis.append(e)
    bad = {k: r for k, r in residuals.items() if r > tol}
    if bad:
        raise ConstructionError(f"corrector solves exceeded tolerance: {bad}")

    d3v = chart_third_vector(P, v)
    L = np.zeros((P.n, P.n))
    L[:, : P.n - 1] = B / math.factorial(9)
    L[:, P.n - 1] = float(c333) * d3v / math.factorial(9)
    return PerturbationFamily(
        kind="corank1",
        problem=P,
        controls={"v": v, "z0": z0, "z1": z1, "E1": e_basis},
        principal=L,
        scale_power=9,
        constants={"c33": c33, "c36": c36, "c333": c333},
        residuals=residuals,
        block_dims=(P.n - 1, 0, 1),
    )


def _constrained_solver(
    A_rows: np.ndarray, target_rows: np.ndarray, probes: Sequence[ControlSignal],
    constraint: np.ndarray, svd_tol: float = 1e-9,
):
    """Solve target_rows @ c = rhs subject to constraint @ c = 0 (nullspace)."""
    U, s, Vt = np.linalg.svd(constraint, full_matrices=True)
    smax = s[0] if s.size else 0.0
    rank = int(np.sum(s > svd_tol * smax)) if smax > 0 else 0
    K = Vt[rank:].T  # (P, nullity)

    def solve(rhs: np.ndarray) -> Tuple[ControlSignal, float]:
        M = target_rows @ K
        zz, *_ = np.linalg.lstsq(M, rhs, rcond=None)
        c = K @ zz
        res = float(np.linalg.norm(target_rows @ c - rhs))
        return combine(c, probes), res

    return solve


def build_general_family(
    P: EndpointProblem,
    cokernel_basis: np.ndarray,
    w0: ControlSignal,
    v0: ControlSignal,
    probes: Sequence[ControlSignal] | None = None,
    tol: float = 1e-8,
) -> PerturbationFamily:
    """Solve the multi-block family phi_eps(r, s, t) for arbitrary corank.

    E2 spans controls whose w0-Hessian pairings realize Im(G,2,w0); E3
    spans domain controls whose projected v0-trilinear images realize
    coker(G,2,w0); the remaining auxiliaries solve the order-12..19
    cancellation equations by least squares over the probe span.  A
    right-hand side outside the numeric image (residual above tolerance)
    raises, signalling a violated domain hypothesis.
    """
    lambdas = np.atleast_2d(np.asarray(cokernel_basis, dtype=float))
    corank = lambdas.shape[0]
    if probes is None:
        probes = probe_basis(P.k)
    if not dom3_membership(P, lambdas, v0, probes, tol=tol):
        raise MembershipError("v0 is not in dom(D^3_0 G)")
    for lam in lambdas:
        if abs(hessian_scalar(P, lam, w0, w0, enforce_kernel=False)) > tol:
            raise MembershipError("w0 is not isotropic for the intrinsic Hessian")

    A, solve_E1 = _image_solver(P, probes)
    B = _orthonormal_image_basis(A)
    m1 = B.shape[1]

    # Im(G,2,w0) in cokernel coordinates, and E2 realizing it inside ker(d0G)
    Mw = np.zeros((corank, len(probes)))
    for j, x in enumerate(probes):
        for r, lam in enumerate(lambdas):
            Mw[r, j] = hessian_scalar(P, lam, w0, x, enforce_kernel=False)
    Uw, sw, _ = np.linalg.svd(Mw, full_matrices=True)
    swmax = sw[0] if sw.size else 0.0
    m2 = int(np.sum(sw > max(tol, 1e-9 * swmax))) if swmax > 0 else 0
    im2 = Uw[:, :m2]
    coker2 = Uw[:, m2:]
    residuals: Dict[str, float] = {}
    solve_ker = _constrained_solver(A, Mw, probes, A)
    E2: List[ControlSignal] = []
    for l in range(m2):
        e, res = solve_ker(im2[:, l])
        residuals[f"E2_{l}"] = res
        E2.append(e)

    # E3: domain controls with projected trilinear images spanning coker2
    m3 = coker2.shape[1]
    Td = np.zeros((m3, len(probes)))
    for j, x in enumerate(probes):
        vec = np.array(
            [trilinear(P, lam, v0, v0, x, enforce_domain=False) for lam in lambdas]
        )
        Td[:, j] = coker2.T @ vec
    # domain constraint rows: first differential plus all Hessian pairings
    dom_rows = [A]
    for lam in lambdas:
        H = np.zeros((len(probes), len(probes)))
        for i, xi in enumerate(probes):
            for j in range(i, len(probes)):
                H[i, j] = H[j, i] = hessian_scalar(
                    P, lam, xi, probes[j], enforce_kernel=False
                )
        dom_rows.append(H)
    dom_constraint = np.vstack(dom_rows)
    solve_dom = _constrained_solver(A, Td, probes, dom_constraint)
    E3: List[ControlSignal] = []
    for i in range(m3):
        e, res = solve_dom(np.eye(m3)[:, i])
        residuals[f"E3_{i}"] = res
        E3.append(e)

    if m1 + m2 + m3 != P.n:
        raise ConstructionError(
            f"block dimensions {m1}+{m2}+{m3} do not fill the state dimension {P.n}"
        )

    f = math.factorial
    consts = {
        "c66": _pair_constant(12, 6),
        "c67": _pair_constant(13, 6),
        "c68": _pair_constant(14, 6),
        "c77": _pair_constant(14, 7),
        "c78": _pair_constant(15, 7),
        "c88": _pair_constant(16, 8),
        "c6_11": _pair_constant(17, 6),
        "c6_12": _pair_constant(18, 6),
        "c7_11": _pair_constant(18, 7),
        "c6_13": _pair_constant(19, 6),
        "c7_12": _pair_constant(19, 7),
        "c8_11": _pair_constant(19, 8),
        "c666": _triple_constant(18, (6, 6, 6)),
        "c667": _triple_constant(19, (6, 6, 7)),
    }

    def solved(name: str, rhs: np.ndarray) -> ControlSignal:
        ctrl, res = solve_E1(rhs)
        residuals[name] = res
        return ctrl

    nu = solved("nu", -consts["c66"] * chart_second_vector(P, v0, v0))
    eta_i = [
        solved(f"eta_{i}", -consts["c67"] * chart_second_vector(P, v0, e))
        for i, e in enumerate(E3)
    ]
    xi = solved("xi", -consts["c68"] * chart_second_vector(P, v0, w0))
    eta_ij = [
        [
            solved(
                f"eta_{i}{j}", -consts["c77"] * chart_second_vector(P, ei, ej)
            )
            for j, ej in enumerate(E3)
        ]
        for i, ei in enumerate(E3)
    ]
    xi_i = [
        solved(f"xi_{i}", -consts["c78"] * chart_second_vector(P, e, w0))
        for i, e in enumerate(E3)
    ]
    mu = solved("mu", -consts["c88"] * chart_second_vector(P, w0, w0))
    zeta_l = [
        solved(f"zeta_{l}", -consts["c6_11"] * chart_second_vector(P, v0, e))
        for l, e in enumerate(E2)
    ]
    zeta = solved(
        "zeta",
        -consts["c6_12"] * chart_second_vector(P, v0, nu)
        - consts["c666"] * chart_third_vector(P, v0),
    )
    zeta_il = [
        [
            solved(
                f"zeta_{i}{l}", -consts["c7_11"] * chart_second_vector(P, ei, el)
            )
            for l, el in enumerate(E2)
        ]
        for i, ei in enumerate(E3)
    ]
    mu_i = [
        solved(
            f"mu_{i}",
            -consts["c6_13"] * chart_second_vector(P, v0, eta_i[i])
            - consts["c7_12"] * chart_second_vector(P, E3[i], nu),
        )
        for i in range(m3)
    ]
    E1: List[ControlSignal] = []
    for j in range(m1):
        e, res = solve_E1(B[:, j])
        residuals[f"E1_{j}"] = res
        E1.append(e)

    bad = {k: r for k, r in residuals.items() if r > tol}
    if bad:
        raise ConstructionError(
            f"right-hand sides outside the numeric image of d_0 F: {bad}"
        )

    L = np.zeros((P.n, m1 + m2 + m3))
    L[:, :m1] = B / f(19)
    for l, e in enumerate(E2):
        L[:, m1 + l] = consts["c8_11"] * chart_second_vector(P, w0, e) / f(19)
    for i, e in enumerate(E3):
        L[:, m1 + m2 + i] = (
            consts["c667"] * chart_third_trilinear(P, v0, v0, e) / f(19)
        )
    controls = {
        "v0": v0,
        "w0": w0,
        "nu": nu,
        "xi": xi,
        "mu": mu,
        "zeta": zeta,
        "E1": E1,
        "E2": E2,
        "E3": E3,
        "eta_i": eta_i,
        "xi_i": xi_i,
        "mu_i": mu_i,
        "zeta_l": zeta_l,
        "eta_ij": eta_ij,
        "zeta_il": zeta_il,
    }
    return PerturbationFamily(
        kind="general",
        problem=P,
        controls=controls,
        principal=L,
        scale_power=19,
        constants=consts,
        residuals=residuals,
        block_dims=(m1, m2, m3),
    )


# -- ball-cover verification -----------------------------------------------------------


@dataclass(frozen=True)
class BallCoverVerdict:
    coverage: float
    reached: np.ndarray
    residuals: np.ndarray
    iterations: np.ndarray
    targets: np.ndarray
    delta: float
    eps: float
    tolerance: float
    evaluator: str

    def to_dict(self) -> dict:
        return {
            "coverage": float(self.coverage),
            "n_targets": int(len(self.reached)),
            "n_reached": int(np.sum(self.reached)),
            "delta": float(self.delta),
            "eps": float(self.eps),
            "tolerance": float(self.tolerance),
            "max_residual": float(np.max(self.residuals)),
            "max_iterations": int(np.max(self.iterations)),
            "evaluator": self.evaluator,
        }


def _target_grid(m: int, radius: float, samples: int) -> np.ndarray:
    per_axis = max(2, int(round(samples ** (1.0 / m))))
    c = radius / math.sqrt(m)  # lattice cube inscribed in the ball
    axes = [np.linspace(-c, c, per_axis) for _ in range(m)]
    grid = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grid], axis=1)


def ball_cover_verify(
    family: PerturbationFamily,
    evaluator,
    delta: float,
    eps: float,
    samples: int = 125,
    tol: float = 1e-6,
    max_iter: int = 200,
) -> BallCoverVerdict:
    """Drive Psi_hat toward every target in a grid inside B_{delta/2}.

    Per target xi the iteration z <- xi + z - Psi_hat(z) runs (batched over
    targets) until the step, which equals the residual Psi_hat(z) - xi,
    drops below tolerance; targets whose iterates leave 3*B_delta or hit
    the iteration cap count as unreached.
    """
    m = family.z_dim
    targets = _target_grid(m, delta / 2.0, samples)
    B = targets.shape[0]
    z = np.zeros((B, m))
    reached = np.zeros(B, dtype=bool)
    alive = np.ones(B, dtype=bool)
    residuals = np.full(B, np.inf)
    iterations = np.zeros(B, dtype=int)
    Linv = np.linalg.inv(family.principal)
    scale = eps**family.scale_power
    for _ in range(max_iter):
        idx = np.where(alive & ~reached)[0]
        if idx.size == 0:
            break
        controls = [family.control_at(eps, z[b]) for b in idx]
        Phi = evaluator(controls)  # (B', n)
        psi_hat = (Linv @ (Phi.T / scale)).T
        resid = psi_hat - targets[idx]
        z_new = z[idx] - resid
        rnorm = np.linalg.norm(resid, axis=1)
        residuals[idx] = rnorm
        iterations[idx] += 1
        done = rnorm <= tol
        reached[idx[done]] = True
        diverged = np.linalg.norm(z_new, axis=1) > 3.0 * delta
        alive[idx[diverged]] = False
        z[idx] = z_new
    coverage = float(np.sum(reached)) / B
    return BallCoverVerdict(
        coverage,
        reached,
        residuals,
        iterations,
        targets,
        delta,
        eps,
        tol,
        getattr(evaluator, "name", "custom"),
    )


def expansion_order_check(
    family: PerturbationFamily,
    evaluator,
    eps_list: Sequence[float] = (0.4, 0.2, 0.1, 0.05),
    z: Sequence[float] | None = None,
) -> Tuple[float, np.ndarray]:
    """Log-log slope of || Phi_eps(x, y) - principal term || against eps.

    For the corank-one family the principal term is
    (eps^9 / 9!) (d_0 F(x) + 280 y^9 d^3_0 F(v)); the remainder must decay
    at least like eps^10, so the fitted slope should reach 9.5+.
    """
    if family.kind != "corank1":
        raise ValueError("expansion order check applies to the corank-one family")
    m = family.z_dim
    if z is None:
        z = np.full(m, 0.7)
        z[-1] = 0.9
    z = np.asarray(z, dtype=float)
    x, y = z[: m - 1], z[m - 1]
    # the unsubstituted family: y enters phi as literal powers y^3, y^6, y^9
    zsub = np.concatenate([x, [y**9]])  # control_at applies the 1/9 root
    norms = []
    for eps in eps_list:
        phi = family.control_at(eps, zsub)
        Phi = evaluator([phi])[0]
        principal = (eps**9 / math.factorial(9)) * (
            family.principal @ np.concatenate([x, [y**9]]) * math.factorial(9)
        )
        norms.append(float(np.linalg.norm(Phi - principal)))
    norms = np.asarray(norms)
    slope = float(
        np.polyfit(np.log(np.asarray(eps_list)), np.log(np.maximum(norms, 1e-300)), 1)[0]
    )
    return slope, norms
