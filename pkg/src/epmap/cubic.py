"""Vector-valued cubic maps: regular zeros, isotropic vectors, openness checks.

A cubic map P: R^N -> R^n is carried by its symmetric trilinear tensor T,
P(v) = T(v, v, v).  Searches are stochastic multi-start local methods with
per-attempt seeds derived from a master seed; a 'none found' outcome is
inconclusive, never a nonexistence proof.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy import optimize

from .endpoint import (
    EndpointProblem,
    dom3_membership,
    first_diff,
    hessian_scalar,
    probe_basis,
    third_scalar,
    trilinear,
)
from .errors import DimensionMismatch
from .signals import ControlSignal


class SymmetricTrilinear:
    """Tensor T[a][i][j][k], symmetric in (i, j, k) for each output a."""

    __slots__ = ("tensor",)

    def __init__(self, tensor: np.ndarray, symmetrize: bool = True):
        tensor = np.asarray(tensor, dtype=float)
        if tensor.ndim != 4 or tensor.shape[1] != tensor.shape[2] != tensor.shape[3]:
            raise DimensionMismatch("tensor must have shape (n, N, N, N)")
        if symmetrize:
            tensor = symmetrize_cubic(tensor)
        self.tensor = tensor

    @property
    def n(self) -> int:
        return self.tensor.shape[0]

    @property
    def N(self) -> int:
        return self.tensor.shape[1]

    def __call__(self, u, v, w) -> np.ndarray:
        return np.einsum("aijk,i,j,k->a", self.tensor, u, v, w)

    @classmethod
    def from_array(cls, arr) -> "SymmetricTrilinear":
        return cls(np.asarray(arr, dtype=float))


def symmetrize_cubic(tensor: np.ndarray) -> np.ndarray:
    """Average over the six permutations of the input slots."""
    t = np.asarray(tensor, dtype=float)
    out = (
        t
        + t.transpose(0, 1, 3, 2)
        + t.transpose(0, 2, 1, 3)
        + t.transpose(0, 2, 3, 1)
        + t.transpose(0, 3, 1, 2)
        + t.transpose(0, 3, 2, 1)
    )
    return out / 6.0


def load_tensor_json(path) -> SymmetricTrilinear:
    """Load a tensor from a JSON array [a][i][j][k]; symmetry enforced."""
    with open(path) as fh:
        data = json.load(fh)
    return SymmetricTrilinear(np.asarray(data, dtype=float))


def cubic_eval_and_diff(
    T: SymmetricTrilinear, v: Sequence[float]
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """P(v) = T(v,v,v), dP_v = 3 T(v,v,.), d2P_v = 6 T(v,.,.)."""
    v = np.asarray(v, dtype=float)
    if v.shape != (T.N,):
        raise DimensionMismatch(f"vector of length {v.shape}, expected {T.N}")
    P = np.einsum("aijk,i,j,k->a", T.tensor, v, v, v)
    dP = 3.0 * np.einsum("aijk,i,j->ak", T.tensor, v, v)
    d2P = 6.0 * np.einsum("aijk,i->ajk", T.tensor, v)
    return P, dP, d2P


def _attempt_seeds(seed: int, attempts: int) -> List[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(attempts)]


def regular_zero_search(
    T: SymmetricTrilinear,
    attempts: int = 100,
    seed: int = 0,
    residual_tol: float = 1e-10,
    sigma_min_tol: float = 1e-6,
    max_steps: int = 60,
) -> np.ndarray | None:
    """Multi-start damped Newton on {P(v) = 0, |v| = 1}, then surjectivity.

    Returns a unit vector v with |P(v)| <= residual_tol and
    sigma_min(dP_v) >= max(sigma_min_tol, sigma_min_tol * sigma_max), or
    None when no attempt certifies (which proves nothing).
    """
    for rng in _attempt_seeds(seed, attempts):
        v = rng.standard_normal(T.N)
        v /= np.linalg.norm(v)
        for _ in range(max_steps):
            P, dP, _ = cubic_eval_and_diff(T, v)
            H = np.concatenate([P, [v @ v - 1.0]])
            normH = np.linalg.norm(H)
            if normH <= 1e-14:
                break
            J = np.vstack([dP, 2.0 * v])
            step, *_ = np.linalg.lstsq(J, -H, rcond=None)
            alpha = 1.0
            improved = False
            for _ in range(20):
                cand = v + alpha * step
                Pc, _, _ = cubic_eval_and_diff(T, cand)
                Hc = np.concatenate([Pc, [cand @ cand - 1.0]])
                if np.linalg.norm(Hc) < (1.0 - 0.25 * alpha) * normH:
                    v = cand
                    improved = True
                    break
                alpha *= 0.5
            if not improved:
                break
        nv = np.linalg.norm(v)
        if nv == 0.0:
            continue
        v = v / nv
        P, dP, _ = cubic_eval_and_diff(T, v)
        if np.linalg.norm(P) > residual_tol:
            continue
        s = np.linalg.svd(dP, compute_uv=False)
        smin = s[-1] if len(s) >= T.n else 0.0
        if len(s) and smin >= max(sigma_min_tol, sigma_min_tol * s[0]):
            return v
    return None


def common_isotropic_test(
    T: SymmetricTrilinear,
    lam: Sequence[float],
    attempts: int = 100,
    seed: int = 0,
    found_tol: float = 1e-8,
) -> np.ndarray | None:
    """Search for x != 0 with Q_i(x) = lam . d^3 P(e_i, x, x) = 0 for all i.

    Minimizes sum_i Q_i(x)^2 on the unit sphere from seeded multi-starts.
    Returns a witness (unit norm) or None when every attempt stays above
    tolerance.
    """
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (T.n,):
        raise DimensionMismatch(f"covector of length {lam.shape}, expected {T.n}")
    if not np.any(lam):
        raise ValueError("lambda must be nonzero")
    S = 6.0 * np.einsum("a,aijk->ijk", lam, T.tensor)  # Q_i(x) = x^T S[i] x

    def objective(x):
        # scale-invariant residual plus a sphere penalty so the minimizer
        # cannot collapse to the origin
        r2 = float(x @ x)
        if r2 == 0.0:
            return 1.0, -2.0 * np.ones_like(x)
        xu = x / np.sqrt(r2)
        Q = np.einsum("ijk,j,k->i", S, xu, xu)
        val = float(Q @ Q) + (r2 - 1.0) ** 2
        G = 4.0 * np.einsum("i,ijk,k->j", Q, S, xu)
        G = (G - (G @ xu) * xu) / np.sqrt(r2)
        G = G + 4.0 * (r2 - 1.0) * x
        return val, G

    def polish(x):
        # damped least-squares Newton on {Q_i(x) = 0, |x|^2 = 1}; handles
        # quartically flat zeros where quasi-Newton descent stalls
        for _ in range(80):
            Q = np.einsum("ijk,j,k->i", S, x, x)
            H = np.concatenate([Q, [x @ x - 1.0]])
            if np.max(np.abs(H)) <= found_tol * 1e-2:
                break
            J = np.vstack([2.0 * np.einsum("ijk,k->ij", S, x), 2.0 * x])
            step, *_ = np.linalg.lstsq(J, -H, rcond=None)
            normH = np.linalg.norm(H)
            alpha, moved = 1.0, False
            for _ in range(25):
                cand = x + alpha * step
                Qc = np.einsum("ijk,j,k->i", S, cand, cand)
                Hc = np.concatenate([Qc, [cand @ cand - 1.0]])
                if np.linalg.norm(Hc) < normH:
                    x, moved = cand, True
                    break
                alpha *= 0.5
            if not moved:
                break
        return x / np.linalg.norm(x)

    for rng in _attempt_seeds(seed, attempts):
        x0 = rng.standard_normal(T.N)
        x0 /= np.linalg.norm(x0)
        res = optimize.minimize(
            objective, x0, jac=True, method="L-BFGS-B", options={"maxiter": 400}
        )
        x = polish(res.x / np.linalg.norm(res.x))
        Q = np.einsum("ijk,j,k->i", S, x, x)
        if np.max(np.abs(Q)) <= found_tol:
            return x
    return None


# -- w0-regular-zero verdict on an end-point problem ----------------------------


@dataclass(frozen=True)
class W0Verdict:
    certified: bool
    route: str
    precondition_ok: bool
    reasons: Tuple[str, ...]
    corank: int
    w0_isotropy_violation: float
    v0_in_domain: bool
    im2_dim: int
    coker2_dim: int
    third_proj_norm: float
    surjective: bool
    sigma_min: float
    dom_probe_dim: int
    dim_inequality_holds: bool

    def to_dict(self) -> dict:
        return {
            "certified": bool(self.certified),
            "route": self.route,
            "precondition_ok": bool(self.precondition_ok),
            "reasons": list(self.reasons),
            "corank": int(self.corank),
            "w0_isotropy_violation": float(self.w0_isotropy_violation),
            "v0_in_domain": bool(self.v0_in_domain),
            "im2_dim": int(self.im2_dim),
            "coker2_dim": int(self.coker2_dim),
            "third_proj_norm": float(self.third_proj_norm),
            "surjective": bool(self.surjective),
            "sigma_min": float(self.sigma_min),
            "dom_probe_dim": int(self.dom_probe_dim),
            "dim_inequality_holds": bool(self.dim_inequality_holds),
        }


def domain_probe_dimension(
    P: EndpointProblem,
    lambdas: np.ndarray,
    probes: Sequence[ControlSignal],
    tol: float = 1e-8,
) -> int:
    """Dimension of the probe-coefficient space mapping into dom(D^3_0 G).

    Stacks the linear constraints (first differential rows and every
    Hessian pairing against every probe) on probe coefficients and counts
    the SVD nullity.  A finite surrogate for the true domain dimension.
    """
    nprobes = len(probes)
    fd = np.stack([first_diff(P, x) for x in probes], axis=1)  # (n, nprobes)
    rows = [fd]
    for lam in lambdas:
        H = np.empty((nprobes, nprobes))
        for i, xi in enumerate(probes):
            for j in range(i, nprobes):
                H[i, j] = H[j, i] = hessian_scalar(
                    P, lam, xi, probes[j], enforce_kernel=False
                )
        rows.append(H)
    M = np.vstack(rows)
    s = np.linalg.svd(M, compute_uv=False)
    smax = s[0] if s.size else 0.0
    if smax == 0.0:
        return nprobes
    return int(np.sum(s <= tol * smax)) + max(0, nprobes - len(s))


def w0_regular_zero_check(
    P: EndpointProblem,
    cokernel_basis: np.ndarray,
    w0: ControlSignal,
    v0: ControlSignal,
    probes: Sequence[ControlSignal] | None = None,
    tol: float = 1e-8,
    sigma_rel: float = 1e-6,
) -> W0Verdict:
    """Check whether (w0, v0) certifies openness through third-order data.

    Computes Im(G,2,w0) inside the cokernel, then (a) the projection of
    D^3_0 G(v0) onto coker(G,2,w0), (b) surjectivity of
    x -> pi(D^3_0 G(v0,v0,x)) over the probe basis, plus the dimension
    inequality surrogate.  A corank-one problem with a nonzero third
    differential certifies through the corank-one route instead.
    Precondition failures produce a non-certified verdict, not an
    exception.
    """
    lambdas = np.atleast_2d(np.asarray(cokernel_basis, dtype=float))
    corank = lambdas.shape[0] if lambdas.size else 0
    if probes is None:
        probes = probe_basis(P.k)
    reasons: List[str] = []

    if corank == 0:
        return W0Verdict(
            True, "submersion", True, ("corank 0: the differential is onto",),
            0, 0.0, True, 0, 0, 0.0, True, np.inf, len(probes), True,
        )

    # preconditions
    w0_ker = float(np.linalg.norm(first_diff(P, w0)))
    iso_violation = 0.0
    for lam in lambdas:
        iso_violation = max(
            iso_violation, abs(hessian_scalar(P, lam, w0, w0, enforce_kernel=False))
        )
    precondition_ok = True
    if w0_ker > tol:
        precondition_ok = False
        reasons.append(f"w0 not in ker(d_0 G): residual {w0_ker:.3e}")
    if iso_violation > tol:
        precondition_ok = False
        reasons.append(f"w0 not isotropic: |D^2(w0, w0)| = {iso_violation:.3e}")
    v0_dom = dom3_membership(P, lambdas, v0, probes, tol=tol)
    if not v0_dom:
        precondition_ok = False
        reasons.append("v0 not in dom(D^3_0 G)")

    # second-order image of w0 in cokernel coordinates
    im_vecs = np.zeros((len(probes), corank))
    if precondition_ok:
        for j, x in enumerate(probes):
            for r, lam in enumerate(lambdas):
                im_vecs[j, r] = hessian_scalar(P, lam, w0, x, enforce_kernel=False)
    U, s, _ = np.linalg.svd(im_vecs.T, full_matrices=True) if im_vecs.size else (
        np.eye(corank), np.zeros(0), None,
    )
    smax = s[0] if s.size else 0.0
    im2_dim = int(np.sum(s > max(tol, sigma_rel * smax))) if smax > 0 else 0
    coker2 = U[:, im2_dim:]  # (corank, coker2_dim)
    coker2_dim = coker2.shape[1]

    third_proj_norm = np.inf
    surjective = False
    sigma_min = 0.0
    if precondition_ok:
        d3 = np.array(
            [third_scalar(P, lam, v0, enforce_domain=False) for lam in lambdas]
        )
        third_proj_norm = float(np.linalg.norm(coker2.T @ d3))
        cols = np.zeros((coker2_dim, len(probes)))
        for j, x in enumerate(probes):
            vec = np.array(
                [
                    trilinear(P, lam, v0, v0, x, enforce_domain=False)
                    for lam in lambdas
                ]
            )
            cols[:, j] = coker2.T @ vec
        if coker2_dim == 0:
            surjective = True
            sigma_min = np.inf
        else:
            sv = np.linalg.svd(cols, compute_uv=False)
            sigma_min = float(sv[coker2_dim - 1]) if len(sv) >= coker2_dim else 0.0
            surjective = sigma_min >= max(tol, sigma_rel * (sv[0] if len(sv) else 0.0))
        if third_proj_norm > tol:
            reasons.append(
                f"projection of D^3(v0) onto coker(G,2,w0) is {third_proj_norm:.3e}"
            )
        if not surjective:
            reasons.append("x -> pi(D^3(v0,v0,x)) not surjective over the probes")

    dom_dim = domain_probe_dimension(P, lambdas, probes, tol=tol)
    dim_ok = im2_dim + dom_dim > P.n

    w0_route = (
        precondition_ok and third_proj_norm <= tol and surjective and coker2_dim > 0
    )
    corank1_route = False
    if corank == 1 and v0_dom:
        third_val = abs(third_scalar(P, lambdas[0], v0, enforce_domain=False))
        corank1_route = third_val > tol
        if not corank1_route:
            reasons.append("corank-one route needs a nonzero third differential")
    certified = bool(w0_route or corank1_route)
    route = (
        "corank1-third"
        if corank1_route
        else ("w0-regular-zero" if w0_route else "none")
    )
    return W0Verdict(
        certified,
        route,
        precondition_ok,
        tuple(reasons),
        corank,
        iso_violation,
        v0_dom,
        im2_dim,
        coker2_dim,
        third_proj_norm if third_proj_norm is not np.inf else float("inf"),
        surjective,
        sigma_min,
        dom_dim,
        dim_ok,
    )
