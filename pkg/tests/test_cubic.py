import json

import numpy as np
import pytest

from epmap.cubic import (
    SymmetricTrilinear,
    common_isotropic_test,
    cubic_eval_and_diff,
    load_tensor_json,
    regular_zero_search,
    symmetrize_cubic,
    w0_regular_zero_check,
)
from epmap.endpoint import cokernel, probe_basis
from epmap.errors import DimensionMismatch
from epmap.signals import ControlSignal

from conftest import example_problem, example_v


def harmonic_tensor():
    """P(x, y) = x^3 - 3 x y^2 (real part of (x + iy)^3), N=2, n=1."""
    T = np.zeros((1, 2, 2, 2))
    T[0, 0, 0, 0] = 1.0
    T[0, 0, 1, 1] = T[0, 1, 0, 1] = T[0, 1, 1, 0] = -1.0
    return SymmetricTrilinear(T)


def cube_tensor(N=1):
    """P = x1^3 as a map R^N -> R."""
    T = np.zeros((1, N, N, N))
    T[0, 0, 0, 0] = 1.0
    return SymmetricTrilinear(T)


def xyz_tensor():
    """P(x, y, z) = xyz."""
    T = np.zeros((1, 3, 3, 3))
    for i, j, k in [(0, 1, 2)]:
        T[0, i, j, k] = 1.0
    return SymmetricTrilinear(T)  # symmetrized on construction


class TestEvalAndDiff:
    def test_scalar_cube(self):
        T = cube_tensor()
        P, dP, d2P = cubic_eval_and_diff(T, [2.0])
        assert P == pytest.approx([8.0])
        assert np.allclose(dP, [[12.0]])
        # d2P(v)[x, y] pairing: 6 T(v, ., .) = 12 at v = 2
        assert np.allclose(d2P, np.full((1, 1, 1), 12.0))

    def test_harmonic_gradient(self):
        T = harmonic_tensor()
        P, dP, _ = cubic_eval_and_diff(T, [0.0, 1.0])
        assert P == pytest.approx([0.0])
        assert np.allclose(dP, [[-3.0, 0.0]])

    def test_zero_vector(self):
        T = harmonic_tensor()
        P, dP, d2P = cubic_eval_and_diff(T, [0.0, 0.0])
        assert not P.any() and not dP.any() and not d2P.any()

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            cubic_eval_and_diff(harmonic_tensor(), [1.0, 2.0, 3.0])


class TestRegularZero:
    def test_harmonic_has_certified_zero(self):
        T = harmonic_tensor()
        v = regular_zero_search(T, attempts=20, seed=0)
        assert v is not None
        P, dP, _ = cubic_eval_and_diff(T, v)
        assert np.linalg.norm(P) <= 1e-10
        s = np.linalg.svd(dP, compute_uv=False)
        assert s[-1] >= 1e-6
        assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-12)

    def test_perfect_cube_none_found(self):
        v = regular_zero_search(cube_tensor(), attempts=100, seed=0)
        assert v is None

    def test_zero_map_none_found(self):
        T = SymmetricTrilinear(np.zeros((1, 2, 2, 2)))
        assert regular_zero_search(T, attempts=10, seed=0) is None


class TestCommonIsotropic:
    def test_harmonic_pair_has_none(self):
        # Q_1 = 6(x^2 - y^2), Q_2 = -12 x y: only common zero is the origin
        T = harmonic_tensor()
        assert common_isotropic_test(T, [1.0], attempts=100, seed=0) is None

    def test_degenerate_cube_has_witness(self):
        # P = x^3 on R^2: Q_1 = 6 x^2, Q_2 = 0; witness (0, 1)
        T = cube_tensor(N=2)
        w = common_isotropic_test(T, [1.0], attempts=20, seed=0)
        assert w is not None
        # Q_1 = 6 x^2 <= tol bounds |x| by sqrt(tol / 6)
        assert abs(w[0]) < 1e-4
        assert abs(abs(w[1]) - 1.0) < 1e-8

    def test_xyz_has_witness(self):
        T = xyz_tensor()
        w = common_isotropic_test(T, [1.0], attempts=30, seed=0)
        assert w is not None
        Q = np.einsum("ijk,j,k->i", 6.0 * T.tensor[0][None, :, :, :][0], w, w)
        assert np.max(np.abs(Q)) < 1e-8

    def test_zero_lambda_rejected(self):
        with pytest.raises(ValueError):
            common_isotropic_test(harmonic_tensor(), [0.0])


class TestTensorInvariants:
    def test_symmetrize_idempotent(self, rng):
        T = rng.standard_normal((2, 3, 3, 3))
        S = symmetrize_cubic(T)
        assert np.max(np.abs(symmetrize_cubic(S) - S)) < 1e-14

    def test_finite_difference_gradient(self, rng):
        T = SymmetricTrilinear(rng.standard_normal((2, 4, 4, 4)))
        h = 1e-6
        for _ in range(20):
            v = rng.standard_normal(4)
            _, dP, _ = cubic_eval_and_diff(T, v)
            for j in range(4):
                e = np.zeros(4)
                e[j] = h
                fp, _, _ = cubic_eval_and_diff(T, v + e)
                fm, _, _ = cubic_eval_and_diff(T, v - e)
                fd = (fp - fm) / (2 * h)
                assert np.max(np.abs(fd - dP[:, j])) < 1e-6 * max(
                    1.0, np.max(np.abs(dP))
                )

    def test_cycling_identity(self, rng):
        # lam T(u, v, w) = <u, lam L(v) w> with L(x) = d^3 P(x, ., .)
        T = SymmetricTrilinear(rng.standard_normal((3, 4, 4, 4)))
        lam = rng.standard_normal(3)
        for _ in range(10):
            u, v, w = (rng.standard_normal(4) for _ in range(3))
            lhs = float(lam @ T(u, v, w))
            L_v = 6.0 * np.einsum("a,aijk,i->jk", lam, T.tensor, v)
            rhs = float(u @ (L_v @ w)) / 6.0
            assert lhs == pytest.approx(rhs, rel=1e-10)

    def test_json_roundtrip(self, tmp_path):
        T = harmonic_tensor()
        path = tmp_path / "tensor.json"
        path.write_text(json.dumps(T.tensor.tolist()))
        back = load_tensor_json(path)
        assert np.max(np.abs(back.tensor - T.tensor)) == 0.0


class TestW0RegularZeroCheck:
    def test_example3_certified_via_corank_one_route(self):
        P = example_problem(3)
        ck = cokernel(P)
        probes = probe_basis(2, max_freq=4)
        w0 = ControlSignal.zero(2)
        verdict = w0_regular_zero_check(P, ck.lambdas, w0, example_v(), probes)
        assert verdict.certified
        assert verdict.route == "corank1-third"
        assert verdict.im2_dim == 0
        assert verdict.coker2_dim == 1
        assert verdict.dim_inequality_holds

    def test_degenerate_third_not_certified(self):
        # p = 5: the Hessian and all triple-bracket scalarizations vanish at
        # q1, so neither route certifies
        P = example_problem(5)
        ck = cokernel(P)
        probes = probe_basis(2, max_freq=3)
        w0 = ControlSignal.zero(2)
        verdict = w0_regular_zero_check(P, ck.lambdas, w0, example_v(), probes)
        assert not verdict.certified
        assert verdict.route == "none"
        assert not verdict.surjective

    def test_non_isotropic_w0_precondition(self):
        P = example_problem(2)
        ck = cokernel(P)
        probes = probe_basis(2, max_freq=3)
        verdict = w0_regular_zero_check(P, ck.lambdas, example_v(), example_v(), probes)
        assert not verdict.precondition_ok
        assert not verdict.certified
        assert any("isotropic" in r for r in verdict.reasons)
        assert verdict.w0_isotropy_violation == pytest.approx(3.0, abs=1e-10)

    def test_corank_zero_submersion(self):
        from epmap.endpoint import make_problem
        from epmap.polyalg import PolyVectorField
        from epmap.signals import parse_control

        n = 2
        f1 = PolyVectorField.coordinate(n, 0)
        f2 = PolyVectorField.coordinate(n, 1)
        P = make_problem([f1, f2], parse_control(["1", "1"]), [0, 0])
        verdict = w0_regular_zero_check(
            P, np.zeros((0, 2)), ControlSignal.zero(2), ControlSignal.zero(2)
        )
        assert verdict.certified
        assert verdict.route == "submersion"
