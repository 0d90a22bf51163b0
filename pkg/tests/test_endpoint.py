import numpy as np
import pytest
from scipy.integrate import quad

from epmap.endpoint import (  # noqa: F401 - probe_basis used in helpers
    chart_second_vector,
    chart_third_trilinear,
    chart_third_vector,
    cokernel,
    dom3_membership,
    first_diff,
    hessian_scalar,
    make_problem,
    probe_basis,
    simplex_integrate,
    third_scalar,
    trilinear,
)
from epmap.errors import MembershipError
from epmap.polyalg import Polynomial, PolyVectorField
from epmap.signals import ControlSignal, QuasiTrigPoly, parse_control

from conftest import example_fields, example_problem, example_v, random_kernel_control

TWO_PI = 2.0 * np.pi


class TestFirstDiff:
    def test_worked_example_kernel_control(self):
        P = example_problem(3)
        assert np.max(np.abs(first_diff(P, example_v()))) < 1e-14

    def test_general_formula(self, rng):
        # d_0 G(v) = (int v1, int {(t-1) v1 + v2}, 0)
        P = example_problem(3)
        for _ in range(3):
            v = ControlSignal(
                [
                    QuasiTrigPoly.trig(1, "cos", c=float(rng.uniform(-2, 2)))
                    + QuasiTrigPoly.const(float(rng.uniform(-1, 1))),
                    QuasiTrigPoly.trig(2, "sin", c=float(rng.uniform(-2, 2))),
                ]
            )
            got = first_diff(P, v)
            i1, _ = quad(lambda t: v.channels[0].eval(t), 0, 1, epsabs=1e-13)
            i2, _ = quad(
                lambda t: (t - 1) * v.channels[0].eval(t) + v.channels[1].eval(t),
                0,
                1,
                epsabs=1e-13,
            )
            assert got == pytest.approx([i1, i2, 0.0], abs=1e-10)

    def test_zero_control(self):
        P = example_problem(3)
        assert first_diff(P, ControlSignal.zero(2)) == pytest.approx([0, 0, 0])


class TestCokernel:
    @pytest.mark.parametrize("p", [2, 3, 5])
    def test_corank_one_generator(self, p):
        ck = cokernel(example_problem(p))
        assert ck.corank == 1
        assert ck.lambdas[0] == pytest.approx([0.0, 0.0, 1.0], abs=1e-12)

    def test_heisenberg_full_rank(self):
        n = 3
        x1 = Polynomial.var(n, 0)
        one, zero = Polynomial.const(n, 1.0), Polynomial.zero(n)
        f1 = PolyVectorField([one, zero, zero])
        f2 = PolyVectorField([zero, one, x1])
        u = parse_control(["1", "t"])
        P = make_problem([f1, f2], u, [0, 0, 0])
        ck = cokernel(P)
        assert ck.corank == 0
        # cross-check: three sampled image vectors are linearly independent
        vals = P.pullback_values([0.0, 0.5, 1.0]).reshape(-1, 3)
        assert np.linalg.matrix_rank(vals, tol=1e-9) == 3

    def test_coordinate_fields_full_rank(self):
        n = 2
        f1 = PolyVectorField.coordinate(n, 0)
        f2 = PolyVectorField.coordinate(n, 1)
        P = make_problem([f1, f2], parse_control(["1", "1"]), [0, 0])
        assert cokernel(P).corank == 0


class TestHessian:
    def test_identically_zero_at_p3(self, rng):
        P = example_problem(3)
        lam = cokernel(P).lambdas[0]
        for _ in range(10):
            v = random_kernel_control(rng)
            assert abs(hessian_scalar(P, lam, v, v)) <= 1e-10

    def test_p2_value_closed_form(self):
        # int_{Sigma_2} 2 (tau2 - tau1) v1(tau2) v1(tau1) = 3 for the worked-example control
        P = example_problem(2)
        lam = cokernel(P).lambdas[0]
        v = example_v()
        val = hessian_scalar(P, lam, v, v)
        assert val == pytest.approx(3.0, abs=1e-12)

    def test_p2_quadrature_oracle(self):
        P = example_problem(2)
        lam = cokernel(P).lambdas[0]
        v = example_v()
        closed = hessian_scalar(P, lam, v, v)

        def integrand(t1, t2):
            v1 = lambda t: TWO_PI * np.sin(TWO_PI * t)
            return 2.0 * (t2 - t1) * v1(t2) * v1(t1)

        oracle, err = simplex_integrate(integrand, 2, tol=1e-12)
        assert closed == pytest.approx(oracle, abs=1e-9)

    def test_one_sign_across_trig_family(self):
        P = example_problem(2)
        lam = cokernel(P).lambdas[0]
        for j in (1, 2, 3):
            v1 = QuasiTrigPoly.trig(j, "sin", c=TWO_PI)
            moment = ((QuasiTrigPoly.monomial(1) - 1.0) * v1).antiderivative().eval(1.0)
            v = ControlSignal([v1, QuasiTrigPoly.const(-moment)])
            assert hessian_scalar(P, lam, v, v) > 0.0

    def test_zero_control(self):
        P = example_problem(2)
        lam = cokernel(P).lambdas[0]
        assert hessian_scalar(P, lam, ControlSignal.zero(2), ControlSignal.zero(2)) == 0.0

    def test_kernel_membership_enforced(self):
        P = example_problem(2)
        lam = cokernel(P).lambdas[0]
        bad = ControlSignal([QuasiTrigPoly.const(1.0), QuasiTrigPoly.zero()])
        with pytest.raises(MembershipError):
            hessian_scalar(P, lam, bad, bad)


class TestThird:
    def test_golden_value(self):
        P = example_problem(3)
        lam = cokernel(P).lambdas[0]
        assert third_scalar(P, lam, example_v()) == pytest.approx(15.0, abs=1e-12)

    def test_golden_value_descending_representation(self):
        P = example_problem(3)
        lam = cokernel(P).lambdas[0]
        val = third_scalar(P, lam, example_v(), representation="descending")
        assert val == pytest.approx(15.0, abs=1e-12)

    def test_p2_formula_value_off_domain(self):
        # v is not in dom(D^3) at p = 2 (the Hessian pairing is nonzero), so
        # the formula value is representation data, not an intrinsic number.
        # Both computed representations give 9, not the 0 one might expect
        # from the vanishing of the pure-channel-1 triple bracket.
        P = example_problem(2)
        lam = cokernel(P).lambdas[0]
        v = example_v()
        with pytest.raises(MembershipError):
            third_scalar(P, lam, v)
        val = third_scalar(P, lam, v, enforce_domain=False)
        assert val == pytest.approx(9.0, abs=1e-10)

        def integrand(t1, t2, t3):
            v1 = lambda t: TWO_PI * np.sin(TWO_PI * t)
            # nonzero scalarized triples: (1,1,2) -> +2 and (1,2,1) -> -2
            return 2.0 * (2.0 * v1(t3) * v1(t2) - 2.0 * v1(t3) * v1(t1))

        oracle, _ = simplex_integrate(integrand, 3, tol=1e-12)
        assert val == pytest.approx(oracle, abs=1e-9)

    def test_zero_control(self):
        P = example_problem(3)
        lam = cokernel(P).lambdas[0]
        assert third_scalar(P, lam, ControlSignal.zero(2)) == 0.0

    def test_quadrature_oracle(self):
        P = example_problem(3)
        lam = cokernel(P).lambdas[0]
        closed = third_scalar(P, lam, example_v())

        def integrand(t1, t2, t3):
            v1 = lambda t: TWO_PI * np.sin(TWO_PI * t)
            return 2.0 * 6.0 * (t2 - t1) * v1(t1) * v1(t2) * v1(t3)

        oracle, err = simplex_integrate(integrand, 3, tol=1e-12)
        assert closed == pytest.approx(oracle, abs=1e-9)


class TestTrilinear:
    def test_polarization_factor_is_one(self, rng):
        # trilinear(v, v, v) recovers third_scalar(v) with factor exactly 1
        P = example_problem(3)
        lam = cokernel(P).lambdas[0]
        for _ in range(3):
            v = random_kernel_control(rng)
            a = trilinear(P, lam, v, v, v)
            b = third_scalar(P, lam, v)
            assert a == pytest.approx(b, abs=1e-10 * max(1, abs(b)))

    def test_multilinearity_zero_argument(self):
        P = example_problem(3)
        lam = cokernel(P).lambdas[0]
        z = ControlSignal.zero(2)
        assert trilinear(P, lam, example_v(), z, example_v(), enforce_domain=False) == 0.0

    def test_permutation_symmetry(self, rng):
        from itertools import permutations

        P = example_problem(3)
        lam = cokernel(P).lambdas[0]
        vs = [random_kernel_control(rng) for _ in range(3)]
        vals = [
            trilinear(P, lam, *perm, enforce_domain=False)
            for perm in permutations(vs)
        ]
        assert max(vals) - min(vals) <= 1e-10 * max(1.0, abs(vals[0]))

    def test_mixed_probe_against_quadrature(self):
        P = example_problem(3)
        lam = cokernel(P).lambdas[0]
        v = example_v()
        x = ControlSignal([QuasiTrigPoly.trig(2, "sin", c=TWO_PI), QuasiTrigPoly.zero()])
        closed = trilinear(P, lam, v, v, x, enforce_domain=False)

        v1 = lambda t: TWO_PI * np.sin(TWO_PI * t)
        x1 = lambda t: TWO_PI * np.sin(2 * TWO_PI * t)

        def integrand(t1, t2, t3):
            total = 0.0
            for a, b, c in [(v1, v1, x1), (v1, x1, v1), (x1, v1, v1)]:
                # channel-1 triple bracket kernel: 6 (t2 - t1), slots ascending
                total += 2.0 * a(t3) * b(t2) * c(t1)
            return 6.0 * (t2 - t1) * total / 3.0

        oracle, _ = simplex_integrate(integrand, 3, tol=1e-12)
        assert closed == pytest.approx(oracle, abs=1e-9)


class TestDomain:
    def test_kernel_controls_in_domain_at_p3(self, rng):
        P = example_problem(3)
        lams = cokernel(P).lambdas
        for _ in range(3):
            assert dom3_membership(P, lams, random_kernel_control(rng))

    def test_nonkernel_not_in_domain(self):
        P = example_problem(3)
        lams = cokernel(P).lambdas
        bad = ControlSignal([QuasiTrigPoly.const(1.0), QuasiTrigPoly.zero()])
        assert not dom3_membership(P, lams, bad)

    def test_p2_example_control_not_in_domain(self):
        P = example_problem(2)
        lams = cokernel(P).lambdas
        assert not dom3_membership(P, lams, example_v())


class TestSimplexIntegrate:
    def test_volumes(self):
        v3, _ = simplex_integrate(lambda t1, t2, t3: np.ones_like(t1), 3)
        v2, _ = simplex_integrate(lambda t1, t2: np.ones_like(t1), 2)
        assert v3 == pytest.approx(1 / 6, abs=1e-12)
        assert v2 == pytest.approx(0.5, abs=1e-12)

    def test_golden_integrand(self):
        v1 = lambda t: TWO_PI * np.sin(TWO_PI * t)

        def integrand(t1, t2, t3):
            return 6.0 * v1(t1) * v1(t2) * v1(t3) * (t2 - t3)

        val, err = simplex_integrate(integrand, 3, tol=1e-9)
        assert 2.0 * val == pytest.approx(15.0, abs=1e-6)

    def test_error_estimate_reported(self):
        val, err = simplex_integrate(lambda t1: np.abs(t1 - 0.377), 1, tol=1e-14, max_order=16)
        assert err > 0.0  # refinement stopped; estimate is reported


class TestRepresentationEquivalence:
    def test_two_representations_agree_on_domain(self, rng):
        P = example_problem(3)
        lam = cokernel(P).lambdas[0]
        for _ in range(5):
            v = random_kernel_control(rng)
            a = third_scalar(P, lam, v, representation="ascending")
            b = third_scalar(P, lam, v, representation="descending")
            assert abs(a - b) <= 1e-8 * max(1.0, abs(a))


class TestChartConsistency:
    def test_lambda_projection_of_chart_third(self, rng):
        P = example_problem(3)
        lam = cokernel(P).lambdas[0]
        for _ in range(3):
            v = random_kernel_control(rng)
            vec = chart_third_vector(P, v)
            assert float(lam @ vec) == pytest.approx(
                third_scalar(P, lam, v), abs=1e-9
            )

    def test_chart_second_cokernel_projection_vanishes_p3(self, rng):
        P = example_problem(3)
        lam = cokernel(P).lambdas[0]
        v = random_kernel_control(rng)
        vec = chart_second_vector(P, v, v)
        assert abs(float(lam @ vec)) < 1e-10

    def test_trilinear_chart_diagonal(self, rng):
        P = example_problem(3)
        v = random_kernel_control(rng)
        a = chart_third_trilinear(P, v, v, v)
        b = chart_third_vector(P, v)
        assert np.max(np.abs(a - b)) < 1e-9 * max(1.0, np.max(np.abs(b)))


class TestAffineInvariance:
    def test_third_scalar_under_affine_change(self, rng):
        # x -> A x + b applied to fields, q0 and lambda leaves the
        # scalarized third differential unchanged
        A = np.array([[1.0, 0.5, 0.0], [-0.3, 2.0, 0.1], [0.2, 0.0, 1.5]])
        b = np.array([0.4, -1.0, 0.7])
        Ainv = np.linalg.inv(A)
        n = 3

        def transform_field(f):
            # f~(y) = A f(A^{-1}(y - b))
            subs = []
            for r in range(n):
                acc = Polynomial.const(n, float(-(Ainv @ b)[r]))
                for c in range(n):
                    acc = acc + Polynomial.var(n, c).scale(float(Ainv[r, c]))
                subs.append(acc)
            new_comps = []
            for r in range(n):
                acc = Polynomial.zero(n)
                for c in range(n):
                    acc = acc + f.components[c].compose(subs).scale(float(A[r, c]))
                new_comps.append(acc)
            return PolyVectorField(new_comps)

        fields = example_fields(3)
        u = parse_control(["0", "1"])
        P = make_problem(fields, u, [0, 0, 0])
        lam = cokernel(P).lambdas[0]
        tfields = [transform_field(f) for f in fields]
        q0t = A @ np.zeros(3) + b
        Pt = make_problem(tfields, u, q0t)
        lam_t = lam @ Ainv  # covectors pull back through the inverse
        v = example_v()
        val = third_scalar(P, lam, v)
        val_t = third_scalar(Pt, lam_t, v, enforce_domain=False)
        assert val_t == pytest.approx(val, abs=1e-8)


class TestClosedFormVsQuadrature:
    def test_twenty_random_integrands(self, rng):
        # p = 2 keeps the Hessian integrands nonzero (at p = 3 they vanish
        # identically and the comparison would be vacuous)
        P = example_problem(2)
        lam = cokernel(P).lambdas[0]
        count = 0
        while count < 20:
            v = random_kernel_control(rng)
            w = random_kernel_control(rng)
            closed_h = hessian_scalar(P, lam, v, w, enforce_kernel=False)
            slots = P.slots()
            B2 = P.bracket2_tensor() @ lam

            def h_int(t1, t2):
                acc = 0.0
                for pi in range(len(slots)):
                    ip, ap, _ = slots[pi]
                    for qi in range(len(slots)):
                        iq, aq, _ = slots[qi]
                        cc = B2[pi, qi]
                        if cc == 0.0:
                            continue
                        acc = acc + 0.5 * cc * (
                            v.channels[ip].eval(t2) * t2**ap
                            * w.channels[iq].eval(t1) * t1**aq
                            + w.channels[ip].eval(t2) * t2**ap
                            * v.channels[iq].eval(t1) * t1**aq
                        )
                return acc

            oracle, _ = simplex_integrate(h_int, 2, tol=1e-12)
            assert closed_h == pytest.approx(oracle, abs=1e-9)
            count += 1


class TestPiecewiseNumericPath:
    def test_hessian_with_piecewise_channel(self):
        # mixed signal kinds route through simplex quadrature; oracle is
        # nested scipy integration with the jump as a breakpoint
        from epmap.signals import PiecewiseConstant, parse_channel

        P = example_problem(2)
        lam = cokernel(P).lambdas[0]
        v1 = parse_channel("2*pi*sin(2*pi*t)")
        pw = PiecewiseConstant([(0.0, 0.5, 1.0), (0.5, 1.0, -1.0)])
        v = ControlSignal([v1, QuasiTrigPoly.const(1.0)])
        w = ControlSignal([pw, QuasiTrigPoly.zero()])
        got = hessian_scalar(P, lam, v, w, enforce_kernel=False)

        def kernel(t2, t1):
            # scalarized channel-(1,1) bracket at p = 2: 2 (t2 - t1)
            a = 2.0 * np.pi * np.sin(2.0 * np.pi * t2)
            b = 1.0 if t1 <= 0.5 else -1.0
            c = 2.0 * np.pi * np.sin(2.0 * np.pi * t1)
            d = 1.0 if t2 <= 0.5 else -1.0
            return 0.5 * 2.0 * (t2 - t1) * (a * b + d * c)

        def inner(t1):
            val, _ = quad(lambda t2: kernel(t2, t1), 0, t1,
                          points=[0.5] if t1 > 0.5 else None, epsabs=1e-12)
            return val

        oracle, _ = quad(inner, 0, 1, points=[0.5], epsabs=1e-11, limit=200)
        assert got == pytest.approx(oracle, abs=5e-4)

    def test_first_diff_with_piecewise_channel(self):
        from epmap.signals import PiecewiseConstant

        P = example_problem(3)
        pw = PiecewiseConstant([(0.0, 0.5, 1.0), (0.5, 1.0, -1.0)])
        v = ControlSignal([pw, QuasiTrigPoly.zero()])
        got = first_diff(P, v)
        # components: (int v1, int (t-1) v1, 0); exact values 0 and -1/4
        assert got[0] == pytest.approx(0.0, abs=1e-10)
        assert got[1] == pytest.approx(-0.25, abs=1e-10)
        assert got[2] == pytest.approx(0.0, abs=1e-12)
