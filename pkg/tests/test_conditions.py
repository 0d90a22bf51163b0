import numpy as np
import pytest

from epmap.conditions import (
    calibration_inequality,
    goh_check,
    make_adjoint,
    pmp_check,
    sample_admissible_curve,
    singularity_classify,
    third_order_condition,
)
from epmap.endpoint import make_problem
from epmap.errors import MembershipError, ValidationError
from epmap.flows import AdjointCurve
from epmap.polyalg import PolyVectorField, lie_bracket
from epmap.signals import parse_control

from conftest import example_fields, example_problem


def adjoint_for(p, lam=(0.0, 0.0, 1.0)):
    P = example_problem(p)
    return P, make_adjoint(P, lam)


class TestPMP:
    def test_holds_exactly_on_example(self):
        for p in (2, 3):
            P, curve = adjoint_for(p)
            v = pmp_check(P, curve)
            assert v.holds and v.max_violation == 0.0 and v.symbolic

    def test_fails_for_wrong_covector(self):
        # the transported covector (0,1,0) pairs to 1 against f_2 (and the
        # f_1 pairing reaches 1 at t=0 as well)
        P, curve = adjoint_for(3, lam=(0.0, 1.0, 0.0))
        v = pmp_check(P, curve)
        assert not v.holds
        assert v.max_violation == pytest.approx(1.0)

    def test_zero_fields_hold_trivially(self):
        n = 2
        zero = PolyVectorField.zero(n)
        P = make_problem([zero, zero], parse_control(["1", "1"]), [0, 0])
        curve = make_adjoint(P, [1.0, 0.0])
        v = pmp_check(P, curve)
        assert v.holds and v.max_violation == 0.0


class TestGoh:
    def test_holds_p3(self):
        P, curve = adjoint_for(3)
        v = goh_check(P, curve)
        assert v.holds and v.max_violation == 0.0 and v.symbolic

    def test_holds_p2(self):
        P, curve = adjoint_for(2)
        v = goh_check(P, curve)
        assert v.holds and v.max_violation == 0.0

    def test_fails_p1(self):
        P, curve = adjoint_for(1)
        v = goh_check(P, curve)
        assert not v.holds
        assert v.max_violation == pytest.approx(1.0)


class TestThirdOrderCondition:
    def test_holds_exactly_p3(self):
        # the pointwise condition evaluates to zero along the curve even
        # though the third differential is nonzero; both facts are reported
        # side by side at the report level
        P, curve = adjoint_for(3)
        v = third_order_condition(P, curve, corank=1)
        assert v.holds and v.max_violation == 0.0 and v.symbolic

    def test_expression_symmetric_in_outer_indices(self):
        fields = example_fields(3)
        for i in range(2):
            for j in range(2):
                for l in range(2):
                    h1 = lie_bracket(fields[i], lie_bracket(fields[j], fields[l]))
                    h2 = lie_bracket(fields[l], lie_bracket(fields[j], fields[i]))
                    swapped1 = lie_bracket(fields[l], lie_bracket(fields[j], fields[i]))
                    swapped2 = lie_bracket(fields[i], lie_bracket(fields[j], fields[l]))
                    assert h1 + h2 == swapped1 + swapped2

    def test_diagonal_terms_vanish(self):
        fields = example_fields(3)
        for i in range(2):
            h = lie_bracket(fields[i], lie_bracket(fields[i], fields[i]))
            assert h.is_zero()

    def test_corank_warning_note(self):
        P, curve = adjoint_for(3)
        v = third_order_condition(P, curve, corank=2)
        assert any("corank" in note for note in v.notes)


class TestRescaleInvariance:
    def test_verdicts_invariant_under_scaling(self):
        P = example_problem(3)
        for c in (3.0, -0.5):
            base = goh_check(P, make_adjoint(P, [0, 0, 1.0]))
            scaled = goh_check(P, make_adjoint(P, [0, 0, c]))
            assert base.holds == scaled.holds
            assert base.max_violation == pytest.approx(scaled.max_violation)
        p1 = example_problem(1)
        for c in (2.0, -4.0):
            base = goh_check(p1, make_adjoint(p1, [0, 0, 1.0]))
            scaled = goh_check(p1, make_adjoint(p1, [0, 0, c]))
            assert base.holds == scaled.holds  # both fail
            assert base.max_violation == pytest.approx(scaled.max_violation)

    def test_zero_covector_rejected(self):
        P = example_problem(3)
        with pytest.raises(ValidationError):
            goh_check(P, make_adjoint(P, [0.0, 0.0, 0.0]))


class TestClassification:
    @pytest.mark.parametrize("p", [2, 3])
    def test_strictly_singular(self, p):
        cls = singularity_classify(example_problem(p))
        assert cls.label == "strictly singular"
        assert cls.max_length_component <= 1e-9

    def test_full_rank_regular(self):
        n = 2
        f1 = PolyVectorField.coordinate(n, 0)
        f2 = PolyVectorField.coordinate(n, 1)
        P = make_problem([f1, f2], parse_control(["1", "1"]), [0, 0])
        # state corank 0 and the length row dependent: the only extended
        # annihilator mixes the length slot -> normal, classified regular
        cls = singularity_classify(P)
        assert cls.label == "regular"

    def test_normal_regular_unique_annihilator(self):
        n = 2
        f1 = PolyVectorField.coordinate(n, 0)
        f2 = PolyVectorField.coordinate(n, 1)
        P = make_problem([f1, f2], parse_control(["1", "0"]), [0, 0])
        cls = singularity_classify(P)
        assert cls.label == "regular"
        assert cls.annihilators.shape[0] == 1
        assert abs(cls.annihilators[0][-1]) > 0.1

    def test_vanishing_control_reported(self):
        n = 2
        f1 = PolyVectorField.coordinate(n, 0)
        f2 = PolyVectorField.coordinate(n, 1)
        P = make_problem([f1, f2], parse_control(["0", "0"]), [0, 0])
        with pytest.raises(ValidationError):
            singularity_classify(P)


class TestCalibration:
    def test_reference_equality(self):
        ts, u = sample_admissible_curve(2, 0.5, 0, kind="reference")
        v = calibration_inequality(2, ts, u)
        assert v.holds
        assert v.slack == pytest.approx(0.0, abs=1e-12)

    def test_loop_strict_inequality(self):
        for seed in range(5):
            ts, u = sample_admissible_curve(2, 0.5, seed, kind="loop")
            v = calibration_inequality(2, ts, u, arc_tol=1e-2)
            assert v.holds
            assert v.slack > 1e-3

    def test_trig_family_strict(self):
        # spot check over a family of admissible perturbations
        for seed in range(100):
            ts, u = sample_admissible_curve(2, 0.5, seed, kind="trig")
            v = calibration_inequality(2, ts, u)
            assert v.holds
            assert v.slack > 1e-6

    def test_out_of_range_tau_warns(self):
        ts, u = sample_admissible_curve(2, 0.9, 0, kind="reference")
        v = calibration_inequality(2, ts, u)
        assert any("outside the proof range" in note for note in v.notes)

    def test_odd_p_rejected(self):
        ts, u = sample_admissible_curve(2, 0.5, 0, kind="reference")
        with pytest.raises(ValueError):
            calibration_inequality(3, ts, u)

    def test_precondition_violation_raises(self):
        ts = np.linspace(0, 0.5, 101)
        u = np.column_stack([np.ones_like(ts), np.zeros_like(ts)])  # int u1 != 0
        with pytest.raises(MembershipError):
            calibration_inequality(2, ts, u)


class TestNumericConditionPath:
    def test_numeric_adjoint_grid_verdicts(self):
        # force the numeric branch through a sampled adjoint curve
        P = example_problem(3)
        exact = make_adjoint(P, [0.0, 0.0, 1.0])
        grid = np.linspace(0, 1, 41)
        samples = np.array([exact.eval(t) for t in grid])
        curve = AdjointCurve((0.0, 0.0, 1.0), grid=grid, samples=samples)
        v = pmp_check(P, curve, grid)
        assert v.holds
        assert not v.symbolic
