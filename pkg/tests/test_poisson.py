import numpy as np
import pytest

from localstar.poisson import (
    AdmissibleStructure,
    BundleSpec,
    DualBasisSpec,
    as_admissible_action,
    build_shrunken_fields,
    build_theta,
    standard_symplectic_matrix,
)

J2 = np.array([[0.0, 1.0], [-1.0, 0.0]])


def wedge_matrix(u, v):
    return np.outer(u, v) - np.outer(v, u)


class TestBundleSpec:
    def test_metric_positive_definite_required(self):
        with pytest.raises(ValueError):
            BundleSpec(base_dim=0, fiber_dim=2, metric=np.diag([1.0, -1.0]))

    def test_ball_must_fit_neighbourhood(self):
        # unit h-ball for h = I/100 has Euclidean radius 10
        with pytest.raises(ValueError):
            BundleSpec(base_dim=0, fiber_dim=2, metric=0.01 * np.eye(2), u_radius=1.5)

    def test_base_dependent_metric(self):
        spec = BundleSpec(
            base_dim=1,
            fiber_dim=2,
            metric=lambda p: np.eye(2) * (1.0 + 0.5 * p[0] ** 2),
            base_sample=np.linspace(-1, 1, 5)[:, None],
        )
        h = spec.metric_at(np.array([1.0]))
        assert h[0, 0] == pytest.approx(1.5)


class TestDualBasis:
    def test_canonical_reconstructs(self):
        basis = DualBasisSpec.canonical(3)
        assert basis.reconstruction_residual(np.zeros(0)) < 1e-15

    def test_overcomplete_basis(self):
        # three sections spanning R^2 with matching covectors
        E = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]])
        F = np.linalg.pinv(E)
        basis = DualBasisSpec(
            sections=tuple(E[:, i] for i in range(3)),
            covectors=tuple(F[i] for i in range(3)),
            fiber_dim=2,
        )
        basis.validate(np.zeros((1, 0)))
        assert basis.d == 3

    def test_broken_basis_rejected(self):
        basis = DualBasisSpec(
            sections=(np.array([1.0, 0.0]), np.array([0.0, 1.0])),
            covectors=(np.array([1.0, 0.0]), np.array([0.0, 0.5])),
            fiber_dim=2,
        )
        with pytest.raises(ValueError):
            basis.validate(np.zeros((1, 0)))


class TestShrunkenFields:
    def test_line_bundle_vertical_lift_inside(self):
        bundle = BundleSpec(base_dim=0, fiber_dim=1)
        basis = DualBasisSpec.canonical(1)
        struct = build_shrunken_fields(basis, bundle)
        val = struct.field_value(np.zeros(0), 1, np.array([0.3]))[0]
        assert val[0] == pytest.approx(1.0, abs=1e-14)

    def test_vanishes_outside_unit_ball(self):
        bundle = BundleSpec(base_dim=0, fiber_dim=1)
        struct = build_shrunken_fields(DualBasisSpec.canonical(1), bundle)
        val = struct.field_value(np.zeros(0), 1, np.array([1.5]))[0]
        assert val[0] == 0.0

    def test_metric_ellipse_support(self):
        h = np.diag([4.0, 1.0])
        bundle = BundleSpec(base_dim=0, fiber_dim=2, metric=h)
        struct = build_shrunken_fields(DualBasisSpec.canonical(2), bundle)
        box = struct.support_box(np.zeros(0))
        assert box[0] == pytest.approx((-0.5, 0.5))
        assert box[1] == pytest.approx((-1.0, 1.0))
        # dense sampling outside the ellipse: field vanishes
        rng = np.random.default_rng(0)
        pts = rng.uniform(-1.5, 1.5, size=(4000, 2))
        hr2 = np.einsum("ki,ij,kj->k", pts, h, pts)
        vals = struct.field_value(np.zeros(0), 1, pts[hr2 > 1.0])
        assert np.array_equal(vals, np.zeros_like(vals))
        # strictly inside (below the shell where values underflow doubles);
        # max-abs instead of the 2-norm, whose squares underflow first
        inside = hr2 < 0.998**2
        vals_in = struct.field_value(np.zeros(0), 2, pts[inside])
        assert np.all(np.max(np.abs(vals_in), axis=1) > 0.0)


class TestBuildTheta:
    def test_zero_gamma_zero_theta(self):
        bundle = BundleSpec(base_dim=0, fiber_dim=2)
        struct = build_theta(np.zeros((2, 2)), DualBasisSpec.canonical(2), bundle)
        th = struct.eval_theta(np.zeros(0), np.array([0.2, 0.1]))
        assert np.array_equal(th, np.zeros((2, 2)))

    def test_symplectic_at_origin(self):
        # single fiber R^2, gamma^{12} = 1: theta at 0 equals e1 /\ e2
        bundle = BundleSpec(base_dim=0, fiber_dim=2)
        struct = build_theta(J2, DualBasisSpec.canonical(2), bundle)
        th = struct.eval_theta(np.zeros(0), np.zeros(2))
        expected = wedge_matrix(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
        assert np.allclose(th, expected, atol=1e-12)

    def test_zero_outside_ball(self):
        bundle = BundleSpec(base_dim=0, fiber_dim=2)
        struct = build_theta(J2, DualBasisSpec.canonical(2), bundle)
        th = struct.eval_theta(np.zeros(0), np.array([1.4, 0.2]))
        assert np.array_equal(th, np.zeros((2, 2)))

    def test_coincides_with_vertical_lift_on_shrunken_ball(self):
        bundle = BundleSpec(base_dim=0, fiber_dim=2)
        struct = build_theta(J2, DualBasisSpec.canonical(2), bundle)
        rng = np.random.default_rng(1)
        expected = wedge_matrix(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
        for _ in range(50):
            x = rng.uniform(-0.35, 0.35, size=2)
            if np.linalg.norm(x) >= 0.5:
                continue
            th = struct.eval_theta(np.zeros(0), x)
            assert np.max(np.abs(th - expected)) < 1e-10

    def test_non_skew_gamma_rejected(self):
        bundle = BundleSpec(base_dim=0, fiber_dim=2)
        with pytest.raises(ValueError):
            build_theta(np.eye(2), DualBasisSpec.canonical(2), bundle)

    def test_base_dependent_gamma(self):
        bundle = BundleSpec(
            base_dim=1, fiber_dim=2, base_sample=np.linspace(-1, 1, 3)[:, None]
        )
        gamma = [[0.0, lambda p: p[0]], [lambda p: -p[0], 0.0]]
        struct = build_theta(gamma, DualBasisSpec.canonical(2), bundle)
        th0 = struct.eval_theta(np.array([0.0]), np.zeros(2))
        th1 = struct.eval_theta(np.array([1.0]), np.zeros(2))
        assert np.allclose(th0, 0.0, atol=1e-14)
        assert th1[0, 1] == pytest.approx(1.0, abs=1e-12)


class TestAdmissibleAction:
    def test_zero_theta(self):
        bundle = BundleSpec(base_dim=0, fiber_dim=2)
        fields = build_shrunken_fields(DualBasisSpec.canonical(2), bundle)
        struct = as_admissible_action(fields, np.zeros((2, 2)))
        th = struct.eval_theta(np.zeros(0), np.array([0.3, -0.1]))
        assert np.array_equal(th, np.zeros((2, 2)))

    def test_hbar_theta_at_origin(self):
        hbar = 0.1
        bundle = BundleSpec(base_dim=0, fiber_dim=2)
        fields = build_shrunken_fields(DualBasisSpec.canonical(2), bundle)
        struct = as_admissible_action(fields, J2, hbar=hbar)
        th = struct.eval_theta(np.zeros(0), np.zeros(2))
        assert np.allclose(th, hbar * J2, atol=1e-14)

    def test_theta_scaling_linear(self):
        bundle = BundleSpec(base_dim=0, fiber_dim=2)
        fields = build_shrunken_fields(DualBasisSpec.canonical(2), bundle)
        s1 = as_admissible_action(fields, J2)
        s2 = as_admissible_action(fields, 2.0 * J2)
        rng = np.random.default_rng(2)
        for _ in range(20):
            x = rng.uniform(-0.9, 0.9, size=2)
            assert np.allclose(
                2.0 * s1.eval_theta(np.zeros(0), x), s2.eval_theta(np.zeros(0), x), atol=1e-12
            )

    def test_non_skew_rejected(self):
        bundle = BundleSpec(base_dim=0, fiber_dim=2)
        fields = build_shrunken_fields(DualBasisSpec.canonical(2), bundle)
        with pytest.raises(ValueError):
            as_admissible_action(fields, np.array([[0.0, 1.0], [-1.0, 0.1]]))


class TestPresentationsAgree:
    def test_theta_presentations_match(self):
        # constant gamma: the companion-field and constant-coupling routes
        # give the same bivector everywhere
        bundle = BundleSpec(base_dim=0, fiber_dim=2)
        basis = DualBasisSpec.canonical(2)
        via_gamma = build_theta(J2, basis, bundle)
        via_theta = as_admissible_action(build_shrunken_fields(basis, bundle), J2)
        rng = np.random.default_rng(3)
        for _ in range(30):
            x = rng.uniform(-1.1, 1.1, size=2)
            a = via_gamma.eval_theta(np.zeros(0), x)
            b = via_theta.eval_theta(np.zeros(0), x)
            assert np.max(np.abs(a - b)) < 1e-12

    def test_standard_symplectic_matrix(self):
        J = standard_symplectic_matrix(2)
        assert np.array_equal(J.T, -J)
        assert J[0, 2] == 1.0 and J[2, 0] == -1.0

    def test_flow_commutation_across_companions(self):
        # the X and Y flows commute: Jacobi identity holds structurally
        bundle = BundleSpec(base_dim=0, fiber_dim=2)
        struct = build_theta(J2, DualBasisSpec.canonical(2), bundle)
        action = struct.action_at(np.zeros(0))
        rng = np.random.default_rng(4)
        for _ in range(20):
            x = rng.uniform(-0.8, 0.8, size=2)
            s, t = rng.uniform(-1.0, 1.0, size=2)
            i, j = rng.choice(action.d, size=2, replace=False) + 1
            a = action.flow(i, s, action.flow(j, t, x))
            b = action.flow(j, t, action.flow(i, s, x))
            assert np.linalg.norm(a - b) < 1e-9
