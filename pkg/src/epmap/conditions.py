"""Necessary-condition checkers along a reference trajectory.

All pairings <lambda(t), h(gamma(t))> with h a bracket of the control
fields are evaluated through the identity

    <lambda(t), h(gamma(t))> = <lambda(1), ((Ad P^t_1) h)(q1)>,

so on nilpotent-type systems each check reduces to a polynomial in t whose
vanishing is decided exactly (term cancellation); the reported violation is
then a true zero rather than a rounding artifact.  Numeric problems fall
back to grid evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .endpoint import EndpointProblem, first_diff, probe_basis
from .errors import MembershipError, ValidationError
from .flows import AdjointCurve, adjoint_curve, pullback_of
from .polyalg import Polynomial, PolyVectorField, lie_bracket
from .signals import ControlSignal

DEFAULT_TOL = 1e-8


@dataclass(frozen=True)
class ConditionVerdict:
    name: str
    holds: bool
    max_violation: float
    witness: Tuple[float, Tuple[int, ...]]
    tolerance: float
    symbolic: bool
    notes: Tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "holds": bool(self.holds),
            "max_violation": float(self.max_violation),
            "witness_time": float(self.witness[0]),
            "witness_indices": list(self.witness[1]),
            "tolerance": float(self.tolerance),
            "symbolic": bool(self.symbolic),
            "notes": list(self.notes),
        }


def make_adjoint(P: EndpointProblem, lam: Sequence[float]) -> AdjointCurve:
    """Adjoint curve lambda(t) = (P_t^1)^* lambda through the reference."""
    return adjoint_curve(P.flow, lam, P.q1)


def _normalized(curve: AdjointCurve) -> Tuple[AdjointCurve, float]:
    lam1 = np.asarray(curve.lam1, dtype=float)
    norm = float(np.linalg.norm(lam1))
    if norm == 0.0:
        raise ValidationError("adjoint curve has zero terminal covector")
    if norm == 1.0:
        return curve, norm
    if curve.time_polys is not None:
        polys = tuple(p.scale(1.0 / norm) for p in curve.time_polys)
        return AdjointCurve(tuple(lam1 / norm), time_polys=polys), norm
    return (
        AdjointCurve(
            tuple(lam1 / norm), grid=curve.grid, samples=curve.samples / norm
        ),
        norm,
    )


def _pairing_time_poly(
    P: EndpointProblem, curve: AdjointCurve, h: PolyVectorField
) -> Polynomial | None:
    """<lambda(t), h(gamma(t))> as an exact polynomial in t, if available."""
    if not (P.flow.is_exact() and curve.is_exact()):
        return None
    try:
        hbar = pullback_of(P.fields, P.u_ref, h, t0=1.0)
    except Exception:
        return None
    lam1 = curve.lam1
    acc = Polynomial.zero(0)
    for m in range(P.n):
        if lam1[m] == 0.0:
            continue
        acc = acc + hbar.components[m].eval_state(P.q1).scale(lam1[m])
    return acc


def _grid_pairing(
    P: EndpointProblem, curve: AdjointCurve, h: PolyVectorField, grid: np.ndarray
) -> np.ndarray:
    gamma = np.array([P.flow(P.q1, t) for t in grid])
    return np.array(
        [float(np.dot(curve.eval(t), h.eval(gamma[j], t))) for j, t in enumerate(grid)]
    )


def _run_check(
    name: str,
    P: EndpointProblem,
    curve: AdjointCurve,
    items: Sequence[Tuple[Tuple[int, ...], PolyVectorField]],
    grid: Sequence[float] | None,
    tol: float,
    notes: Tuple[str, ...] = (),
) -> ConditionVerdict:
    curve, _ = _normalized(curve)
    if grid is None:
        grid = np.linspace(0.0, 1.0, 101)
    grid = np.asarray(grid, dtype=float)
    worst = 0.0
    witness = (0.0, items[0][0] if items else ())
    symbolic = True
    for indices, h in items:
        poly = _pairing_time_poly(P, curve, h)
        if poly is not None:
            if poly.is_zero():
                continue
            vals = np.abs([poly.eval([], t) for t in grid])
        else:
            symbolic = False
            vals = np.abs(_grid_pairing(P, curve, h, grid))
        j = int(np.argmax(vals))
        if vals[j] > worst:
            worst = float(vals[j])
            witness = (float(grid[j]), indices)
    return ConditionVerdict(
        name=name,
        holds=worst <= tol,
        max_violation=worst,
        witness=witness,
        tolerance=tol,
        symbolic=symbolic,
        notes=notes,
    )


def pmp_check(
    P: EndpointProblem,
    lam_curve: AdjointCurve,
    grid: Sequence[float] | None = None,
    tol: float = DEFAULT_TOL,
) -> ConditionVerdict:
    """max over the grid and j of |<lambda(t), f_j(gamma(t))>|."""
    items = [((j,), f) for j, f in enumerate(P.fields)]
    return _run_check("pmp", P, lam_curve, items, grid, tol)


def goh_check(
    P: EndpointProblem,
    lam_curve: AdjointCurve,
    grid: Sequence[float] | None = None,
    tol: float = DEFAULT_TOL,
) -> ConditionVerdict:
    """max over the grid and i < j of |<lambda(t), [f_i, f_j](gamma(t))>|."""
    items = []
    for i in range(P.k):
        for j in range(i + 1, P.k):
            items.append(((i, j), lie_bracket(P.fields[i], P.fields[j])))
    if not items:
        items = [((0, 0), PolyVectorField.zero(P.n))]
    return _run_check("goh", P, lam_curve, items, grid, tol)


def third_order_condition(
    P: EndpointProblem,
    lam_curve: AdjointCurve,
    grid: Sequence[float] | None = None,
    tol: float = DEFAULT_TOL,
    corank: int | None = None,
) -> ConditionVerdict:
    """Pointwise third-order condition for singular minimizers of corank one:

    max over (i, j, l) of |<lam(t), [f_i,[f_j,f_l]] + [f_l,[f_j,f_i]] (gamma(t))>|.
    """
    notes: Tuple[str, ...] = ()
    if corank is not None and corank != 1:
        notes = (f"corank is {corank}; the pointwise condition assumes corank 1",)
    items = []
    for i in range(P.k):
        for j in range(P.k):
            for l in range(P.k):
                h = lie_bracket(P.fields[i], lie_bracket(P.fields[j], P.fields[l]))
                h2 = lie_bracket(P.fields[l], lie_bracket(P.fields[j], P.fields[i]))
                items.append(((i, j, l), h + h2))
    return _run_check("third_order", P, lam_curve, items, grid, tol, notes)


# -- singularity classification ---------------------------------------------------


@dataclass(frozen=True)
class SingularityClass:
    label: str  # 'regular' | 'singular' | 'strictly singular'
    annihilators: np.ndarray  # rows in R^{n+1}, last slot = length component
    singular_values: np.ndarray
    max_length_component: float

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "annihilators": self.annihilators.tolist(),
            "singular_values": self.singular_values.tolist(),
            "max_length_component": float(self.max_length_component),
        }


def _length_row(P: EndpointProblem, probes: Sequence[ControlSignal]) -> np.ndarray:
    """dJ(x) = int <u/|u|, x> dt per probe, via high-order Gauss-Legendre."""
    nodes, weights = np.polynomial.legendre.leggauss(128)
    ts = 0.5 * (nodes + 1.0)
    w = 0.5 * weights
    uvals = np.stack([np.atleast_1d(ch.eval(ts)) for ch in P.u_ref.channels], axis=0)
    norms = np.sqrt(np.sum(uvals**2, axis=0))
    if np.min(norms) <= 1e-12:
        raise ValidationError(
            "reference control vanishes on the grid; length differential undefined"
        )
    unit = uvals / norms
    out = np.empty(len(probes))
    for r, x in enumerate(probes):
        xv = np.stack([np.atleast_1d(ch.eval(ts)) for ch in x.channels], axis=0)
        out[r] = float(np.sum(w * np.sum(unit * xv, axis=0)))
    return out


def singularity_classify(
    P: EndpointProblem,
    probes: Sequence[ControlSignal] | None = None,
    svd_tol: float = 1e-9,
    zero_tol: float = 1e-7,
) -> SingularityClass:
    """Classify the reference control through the extended (F, J) differential.

    Builds columns (d_0 G(x), dJ(x)) over the probe basis, extracts the
    annihilator subspace W by SVD, and classifies:

    * W = 0                          -> regular (extended map is a submersion)
    * W inside {length component 0}  -> strictly singular
    * dim W >= 2                     -> singular
    * otherwise                      -> regular (normal: the unique
                                        annihilator has nonzero length slot)
    """
    if probes is None:
        probes = probe_basis(P.k)
    cols = np.empty((P.n + 1, len(probes)))
    for r, x in enumerate(probes):
        cols[: P.n, r] = first_diff(P, x)
    cols[P.n, :] = _length_row(P, probes)
    U, s, _ = np.linalg.svd(cols, full_matrices=True)
    smax = s[0] if s.size else 0.0
    rank = int(np.sum(s > svd_tol * smax)) if smax > 0 else 0
    W = U[:, rank:].T.copy()
    for row in W:
        pivot = np.argmax(np.abs(row))
        if row[pivot] < 0:
            row *= -1.0
    if W.shape[0] == 0:
        label = "regular"
        max_len = 0.0
    else:
        max_len = float(np.max(np.abs(W[:, -1])))
        if max_len <= zero_tol:
            label = "strictly singular"
        elif W.shape[0] >= 2:
            label = "singular"
        else:
            label = "regular"
    return SingularityClass(label, W, s, max_len)


# -- calibration inequality spot check ---------------------------------------------


@dataclass(frozen=True)
class CalibrationVerdict:
    holds: bool
    slack: float
    lhs: float
    tau: float
    precondition_violations: dict
    notes: Tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "holds": bool(self.holds),
            "slack": float(self.slack),
            "lhs": float(self.lhs),
            "tau": float(self.tau),
            "precondition_violations": {
                k: float(v) for k, v in self.precondition_violations.items()
            },
            "notes": list(self.notes),
        }


def calibration_inequality(
    p: int,
    ts: Sequence[float],
    u: np.ndarray,
    tol: float = 1e-6,
    arc_tol: float = 1e-3,
    enforce: bool = True,
) -> CalibrationVerdict:
    """Check int u2 (1 - eta_1) dt <= tau on a sampled arc-length curve.

    ``ts`` is an increasing sample grid on [0, tau]; ``u`` has shape
    (len(ts), 2).  The zero-mean preconditions (int u1 = 0,
    int u2 eta_1^p = 0) are verified to ``tol``; the unit-speed condition
    is verified in the L1-mean sense to ``arc_tol``, since sampled data
    cannot certify an a.e. property beyond its resolution (jump nodes of
    piecewise controls carry averaged values).  Violations raise unless
    ``enforce=False``; either way they are recorded in the verdict.
    """
    if p % 2 != 0:
        raise ValueError("the calibration inequality spot check needs even p")
    ts = np.asarray(ts, dtype=float)
    u = np.asarray(u, dtype=float)
    if u.shape != (len(ts), 2):
        raise ValueError("u must have shape (len(ts), 2)")
    tau = float(ts[-1] - ts[0])
    from scipy.integrate import cumulative_trapezoid, trapezoid

    eta1 = np.concatenate([[0.0], cumulative_trapezoid(u[:, 0], ts)])
    arc = float(trapezoid(np.abs(np.sum(u**2, axis=1) - 1.0), ts) / tau)
    mean_u1 = abs(trapezoid(u[:, 0], ts))
    mean_u2e = abs(trapezoid(u[:, 1] * eta1**p, ts))
    violations = {
        "arclength_L1": float(arc),
        "int_u1": float(mean_u1),
        "int_u2_eta1^p": float(mean_u2e),
    }
    notes: List[str] = []
    t0 = 2.0 / (p + 1)
    if tau > t0:
        notes.append(
            f"tau = {tau:g} exceeds t0 = 2/(p+1) = {t0:g}; outside the proof range"
        )
    mean_worst = max(mean_u1, mean_u2e)
    if enforce and (mean_worst > tol or arc > arc_tol):
        raise MembershipError(
            f"calibration preconditions violated (means {mean_worst:.3e} vs {tol:.1e}, "
            f"arclength {arc:.3e} vs {arc_tol:.1e})"
        )
    lhs = float(trapezoid(u[:, 1] * (1.0 - eta1), ts))
    slack = tau - lhs
    return CalibrationVerdict(
        holds=slack >= -tol,
        slack=slack,
        lhs=lhs,
        tau=tau,
        precondition_violations=violations,
        notes=tuple(notes),
    )


def sample_admissible_curve(
    p: int, tau: float, seed: int, nsamples: int = 4000, kind: str | None = None
) -> Tuple[np.ndarray, np.ndarray]:
    """Deterministic admissible test curves satisfying the zero-mean constraints.

    'reference' returns u = (0, 1) (the equality case).  'loop' makes a
    piecewise excursion in x1 with compensated heights so the x3-mean
    vanishes for even p (jumps land on grid nodes and carry averaged
    values, which keeps trapezoid integration of the means exact).  'trig'
    uses a midpoint-symmetric steering angle; both constraints vanish by
    parity, so an even sample count keeps them exact to rounding.
    """
    rng = np.random.default_rng(seed)
    if kind is None:
        kind = ["loop", "trig"][int(rng.integers(2))]
    if kind == "reference":
        ts = np.linspace(0.0, tau, nsamples + 1)
        u = np.column_stack([np.zeros_like(ts), np.ones_like(ts)])
        return ts, u
    if kind == "loop":
        N = nsamples - (nsamples % 8)  # panels divisible by the segment layout
        ts = np.linspace(0.0, tau, N + 1)
        nd = int(rng.integers(N // 20, N // 8))  # x1-leg length, in panels
        ne = (N - 4 * nd) // 2
        nd = (N - 2 * ne) // 4
        marks = np.cumsum([0, nd, ne, 2 * nd, ne, N - (4 * nd + 2 * ne) + nd])
        segvals = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0), (1.0, 0.0)]
        u = np.zeros((N + 1, 2))
        for s, (a, b) in enumerate(segvals):
            u[marks[s] : marks[s + 1] + 1] = (a, b)
        for m in marks[1:-1]:  # interior jump nodes take the two-sided average
            left = segvals[list(marks[1:]).index(m)]
            right = segvals[list(marks[1:]).index(m) + 1]
            u[m] = ((left[0] + right[0]) / 2.0, (left[1] + right[1]) / 2.0)
        return ts, u
    if kind == "trig":
        N = nsamples + (nsamples % 2)  # even: no node at tau/2
        ts = np.linspace(0.0, tau, N)
        j = int(rng.integers(1, 4))
        amp = float(rng.uniform(0.2, 1.2))
        theta = amp * np.sin(2.0 * math.pi * j * ts / tau)
        u1 = np.sin(theta)
        sign = np.where(ts < tau / 2.0, 1.0, -1.0)
        u2 = sign * np.sqrt(np.maximum(0.0, 1.0 - u1**2))
        return ts, np.column_stack([u1, u2])
    raise ValueError(f"unknown curve kind {kind!r}")
