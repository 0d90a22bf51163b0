import math

import numpy as np
import pytest

from epmap.cubic import SymmetricTrilinear, regular_zero_search
from epmap.endpoint import (
    cokernel,
    first_diff,
    hessian_scalar,
    make_problem,
    probe_basis,
    third_scalar,
    trilinear,
)
from epmap.errors import ConstructionError, MembershipError
from epmap.openness import (
    ExactDeltaEvaluator,
    NumericDeltaEvaluator,
    ball_cover_verify,
    build_corank1_family,
    build_general_family,
    composition_series_check,
    expansion_order_check,
    taylor_composition_terms,
)
from epmap.polyalg import Polynomial, PolyVectorField
from epmap.signals import ControlSignal, QuasiTrigPoly, combine, parse_control

from conftest import example_problem, example_v


class TestCompositionConstants:
    def test_known_values(self):
        assert taylor_composition_terms(6)[(3, 3)] == 10
        assert taylor_composition_terms(9)[(3, 6)] == 84
        assert taylor_composition_terms(9)[(3, 3, 3)] == 280
        assert taylor_composition_terms(12)[(6, 6)] == 462
        assert taylor_composition_terms(13)[(6, 7)] == 1716
        assert taylor_composition_terms(14)[(7, 7)] == 1716
        assert taylor_composition_terms(16)[(8, 8)] == 6435
        assert taylor_composition_terms(19)[(8, 11)] == 75582
        assert taylor_composition_terms(18)[(6, 6, 6)] == 2858856
        assert (
            taylor_composition_terms(19)[(6, 6, 7)]
            == math.factorial(19) // (math.factorial(6) ** 2 * math.factorial(7)) // 2
        )

    @pytest.mark.parametrize("k", [6, 9, 12, 19])
    def test_against_exact_series_composition(self, k):
        for seed in range(3):
            direct, partition = composition_series_check(
                k, orders=[3, 6, 7, 8, 9, 11, 12, 13], seed=seed
            )
            assert direct == partition


@pytest.fixture(scope="module")
def family3():
    P = example_problem(3)
    lam = cokernel(P).lambdas[0]
    return build_corank1_family(P, lam, example_v())


@pytest.fixture(scope="module")
def evaluator3():
    return ExactDeltaEvaluator(example_problem(3))


class TestCorank1Family:
    def test_residuals_within_tolerance(self, family3):
        assert all(r < 1e-8 for r in family3.residuals.values())

    def test_constants_are_computed(self, family3):
        assert family3.constants == {"c33": 10, "c36": 84, "c333": 280}

    def test_z0_exists_because_rhs_in_image(self, family3):
        # the cokernel projection of d^2F(v, v) vanishes, so z0 exists
        P = example_problem(3)
        lam = cokernel(P).lambdas[0]
        from epmap.endpoint import chart_second_vector

        d2vv = chart_second_vector(P, example_v(), example_v())
        assert abs(float(lam @ d2vv)) < 1e-12

    def test_zero_third_differential_rejected(self):
        P = example_problem(3)
        lam = cokernel(P).lambdas[0]
        with pytest.raises(ConstructionError):
            build_corank1_family(P, lam, ControlSignal.zero(2))

    def test_corank_zero_rejected(self):
        n = 2
        f1 = PolyVectorField.coordinate(n, 0)
        f2 = PolyVectorField.coordinate(n, 1)
        P = make_problem([f1, f2], parse_control(["1", "1"]), [0, 0])
        with pytest.raises(ConstructionError):
            build_corank1_family(P, np.array([1.0, 0.0]), ControlSignal.zero(2))

    def test_off_domain_control_rejected(self):
        P = example_problem(2)
        lam = cokernel(P).lambdas[0]
        with pytest.raises(MembershipError):
            build_corank1_family(P, lam, example_v())


class TestBallCover:
    def test_full_coverage_small_grid(self, family3, evaluator3):
        verdict = ball_cover_verify(
            family3, evaluator3, delta=1e-3, eps=0.3, samples=27, tol=1e-6
        )
        assert verdict.coverage == 1.0
        assert np.max(verdict.residuals) <= 1e-6

    def test_numeric_evaluator_agrees(self, family3):
        # the shifted-field RK4 evaluator reproduces the exact one
        P = example_problem(3)
        exact = ExactDeltaEvaluator(P)
        numeric = NumericDeltaEvaluator(P, step=1e-3)
        controls = [family3.control_at(0.3, z) for z in np.eye(3) * 2e-4]
        a = exact(controls)
        b = numeric(controls)
        assert np.max(np.abs(a - b)) < 1e-12

    def test_large_delta_partial_coverage_reported(self, family3, evaluator3):
        verdict = ball_cover_verify(
            family3, evaluator3, delta=0.8, eps=0.3, samples=27, tol=1e-6, max_iter=40
        )
        assert 0.0 <= verdict.coverage <= 1.0  # reported, not asserted

    def test_expansion_order(self, family3, evaluator3):
        slope, norms = expansion_order_check(family3, evaluator3)
        assert slope >= 9.5
        assert np.all(np.diff(norms) < 0)


def _sblock_toy():
    """3-state corank-1 toy with an indefinite intrinsic Hessian.

    f2 = d2 + x1^2 (x2 - 1/2) d3 makes the channel-1 Hessian kernel change
    sign, so nontrivial isotropic controls with nonzero second-order image
    exist and the s-block of the general family is exercised.
    """
    n = 3
    x1, x2 = Polynomial.var(n, 0), Polynomial.var(n, 1)
    one, zero = Polynomial.const(n, 1.0), Polynomial.zero(n)
    f1 = PolyVectorField([one, zero, zero])
    f2 = PolyVectorField([zero, one, x1**2 * (x2 - 0.5)])
    return make_problem([f1, f2], parse_control(["0", "1"]), [0, 0, 0])


def _isotropic_with_image(P, lam, probes):
    """Mix top +/- eigenvectors of the kernel-restricted Hessian form."""
    A = np.stack([first_diff(P, x) for x in probes], axis=1)
    _, s, Vt = np.linalg.svd(A)
    K = Vt[int(np.sum(s > 1e-9 * s[0])) :].T
    H = np.array(
        [
            [hessian_scalar(P, lam, a, b, enforce_kernel=False) for b in probes]
            for a in probes
        ]
    )
    eig, vec = np.linalg.eigh(K.T @ H @ K)
    wp = vec[:, -1] / math.sqrt(eig[-1])
    wn = vec[:, 0] / math.sqrt(-eig[0])
    return combine(K @ (wp + wn), probes)


class TestGeneralFamily:
    def test_sblock_toy_builds_with_small_residuals(self):
        P = _sblock_toy()
        ck = cokernel(P)
        assert ck.corank == 1
        lam = ck.lambdas[0]
        probes = probe_basis(2, max_freq=4)
        w0 = _isotropic_with_image(P, lam, probes)
        assert abs(hessian_scalar(P, lam, w0, w0, enforce_kernel=False)) < 1e-8
        v0 = ControlSignal([QuasiTrigPoly.zero(), QuasiTrigPoly.trig(1, "sin")])
        family = build_general_family(P, ck.lambdas, w0, v0, probes)
        assert family.kind == "general"
        assert family.block_dims == (2, 1, 0)  # nonzero Hessian image fills coker
        assert all(r < 1e-8 for r in family.residuals.values())
        assert np.linalg.cond(family.principal) < 1e12  # invertible despite 1/19! scale

    def test_corank2_toy_via_regular_zero_pipeline(self):
        # 4-state corank-2 system whose two third-order kernels are
        # independent; a regular zero of the probe-space cubic supplies v0
        n = 4
        x1 = Polynomial.var(n, 0)
        one, zero, tv = Polynomial.const(n, 1.0), Polynomial.zero(n), Polynomial.time(n)
        f1 = PolyVectorField([one, zero, zero, zero])
        f2 = PolyVectorField([zero, one, x1**3, tv * x1**3])
        P = make_problem([f1, f2], parse_control(["0", "1"]), [0, 0, 0, 0])
        ck = cokernel(P)
        assert ck.corank == 2
        probes = probe_basis(2, max_freq=3)
        # kernel-of-d0G probe combinations (channel-2 constants excluded)
        base = [
            ControlSignal([QuasiTrigPoly.trig(j, ph), QuasiTrigPoly.zero()])
            for j in (1, 2, 3)
            for ph in ("sin", "cos")
        ]
        N = len(base)
        T = np.zeros((2, N, N, N))
        for r, lam in enumerate(ck.lambdas):
            for i in range(N):
                for j in range(N):
                    for k in range(N):
                        T[r, i, j, k] = trilinear(
                            P, lam, base[i], base[j], base[k], enforce_domain=False
                        )
        zero_hat = regular_zero_search(SymmetricTrilinear(T), attempts=40, seed=3)
        assert zero_hat is not None
        v0 = combine(zero_hat, base)
        for lam in ck.lambdas:
            assert abs(third_scalar(P, lam, v0, enforce_domain=False)) < 1e-9
        w0 = ControlSignal.zero(2)
        family = build_general_family(P, ck.lambdas, w0, v0, probes)
        assert family.block_dims == (2, 0, 2)
        assert all(r < 1e-8 for r in family.residuals.values())
        assert np.linalg.cond(family.principal) < 1e12

    def test_example3_with_nonzero_third_fails_order18(self):
        # D^3(v) = 15 != 0 puts the order-18 right-hand side outside the
        # image: a violated domain hypothesis, reported as an error
        P = example_problem(3)
        ck = cokernel(P)
        with pytest.raises(ConstructionError):
            build_general_family(
                P, ck.lambdas, ControlSignal.zero(2), example_v(),
                probe_basis(2, max_freq=3),
            )

    def test_zero_v0_cannot_span(self):
        # v0 = 0 makes all trilinear images vanish: the E3 block cannot be
        # realized and the construction reports failure (not certified)
        P = example_problem(3)
        ck = cokernel(P)
        with pytest.raises(ConstructionError):
            build_general_family(
                P, ck.lambdas, ControlSignal.zero(2), ControlSignal.zero(2),
                probe_basis(2, max_freq=3),
            )

    def test_sblock_w0_not_isotropic_rejected(self):
        P = _sblock_toy()
        ck = cokernel(P)
        probes = probe_basis(2, max_freq=3)
        # a kernel control with nonzero Hessian square is not isotropic
        A = np.stack([first_diff(P, x) for x in probes], axis=1)
        _, s, Vt = np.linalg.svd(A)
        K = Vt[int(np.sum(s > 1e-9 * s[0])) :].T
        w_bad = combine(K[:, 0], probes)
        if abs(hessian_scalar(P, ck.lambdas[0], w_bad, w_bad, enforce_kernel=False)) > 1e-8:
            with pytest.raises(MembershipError):
                build_general_family(
                    P, ck.lambdas, w_bad,
                    ControlSignal([QuasiTrigPoly.zero(), QuasiTrigPoly.trig(1, "sin")]),
                    probes,
                )
