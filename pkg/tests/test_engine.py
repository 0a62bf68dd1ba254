import numpy as np
import pytest

from localstar.action import AdmissibleAction
from localstar.engine import (
    SEMICLASSICAL_CONSTANT,
    EngineConfig,
    ProductEngine,
    TorusMarginError,
)
from localstar.gridfn import (
    GriddedFunction,
    bump_profile,
    constant_profile,
    gaussian_profile,
)
from localstar.kernels import twisted_convolve

AX = ((-1.4, 1.4, 128), (-1.4, 1.4, 128))
J2 = np.array([[0.0, 1.0], [-1.0, 0.0]])


@pytest.fixture(scope="module")
def action():
    return AdmissibleAction(2, np.eye(2), J2, hbar=0.1)


@pytest.fixture(scope="module")
def engine(action):
    return ProductEngine(action, AX, EngineConfig(torus_size=7.0, torus_res=256, mode_cutoff=64))


@pytest.fixture(scope="module")
def pair():
    f = GriddedFunction.from_callable(bump_profile((0.05, 0.0), 0.5, 1.0), AX)
    g = GriddedFunction.from_callable(bump_profile((-0.05, 0.1), 0.45, 1.2), AX)
    return f, g


def mode_array(p, window):
    arr = np.zeros((2 * window + 1, 2 * window + 1), dtype=np.complex128)
    arr[p[0] + window, p[1] + window] = 1.0
    return arr, (-window, -window)


class TestTwistedConvolution:
    def test_zero_twist_is_convolution(self):
        rng = np.random.default_rng(0)
        fk = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
        gk = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
        out, off = twisted_convolve(fk, (-2, -2), gk, (-2, -2), np.zeros((2, 2)))
        from scipy.signal import convolve2d

        assert np.max(np.abs(out - convolve2d(fk, gk))) < 1e-13
        assert off == (-4, -4)

    def test_plane_wave_phase(self):
        theta_eff = 0.013 * J2
        p, q = (2, -1), (1, 3)
        fk, foff = mode_array(p, 4)
        gk, goff = mode_array(q, 4)
        out, ooff = twisted_convolve(fk, foff, gk, goff, theta_eff)
        idx = (p[0] + q[0] - ooff[0], p[1] + q[1] - ooff[1])
        expected = np.exp(-2j * np.pi * (np.array(p) @ theta_eff @ np.array(q)))
        assert abs(out[idx] - expected) < 1e-13
        mask = np.ones(out.shape, dtype=bool)
        mask[idx] = False
        assert np.max(np.abs(out[mask])) == 0.0

    def test_plane_wave_commutator(self):
        theta_eff = 0.02 * J2
        p, q = (3, 1), (-1, 2)
        fk, foff = mode_array(p, 4)
        gk, goff = mode_array(q, 4)
        ab, ooff = twisted_convolve(fk, foff, gk, goff, theta_eff)
        ba, _ = twisted_convolve(gk, goff, fk, foff, theta_eff)
        idx = (p[0] + q[0] - ooff[0], p[1] + q[1] - ooff[1])
        expected = -2j * np.sin(2 * np.pi * (np.array(p) @ theta_eff @ np.array(q)))
        assert abs((ab - ba)[idx] - expected) < 1e-13

    def test_exact_associativity(self):
        rng = np.random.default_rng(1)
        theta_eff = 0.007 * J2
        arrs = []
        for _ in range(3):
            a = rng.normal(size=(7, 7)) + 1j * rng.normal(size=(7, 7))
            arrs.append((a, (-3, -3)))
        (a, ao), (b, bo), (c, co) = arrs
        ab, abo = twisted_convolve(a, ao, b, bo, theta_eff)
        left, lo = twisted_convolve(ab, abo, c, co, theta_eff)
        bc, bco = twisted_convolve(b, bo, c, co, theta_eff)
        right, ro = twisted_convolve(a, ao, bc, bco, theta_eff)
        assert lo == ro
        scale = np.max(np.abs(right))
        assert np.max(np.abs(left - right)) < 1e-12 * scale

    def test_one_dimensional_plain(self):
        fk = np.array([1.0, 2.0, 0.5], dtype=complex)
        gk = np.array([0.5, 1.0], dtype=complex)
        out, off = twisted_convolve(fk, (-1,), gk, (0,), np.zeros((1, 1)))
        assert np.allclose(out, np.convolve(fk, gk))
        assert off == (-1,)

    def test_rejects_non_skew(self):
        with pytest.raises(ValueError):
            twisted_convolve(np.ones((3, 3), complex), (0, 0), np.ones((3, 3), complex), (0, 0), np.eye(2))


class TestEngineBasics:
    def test_theta_zero_pointwise_bitwise(self, engine, pair):
        f, g = pair
        eng0 = engine.with_hbar(0.0)
        assert np.array_equal(eng0.deformed_product(f, g).values, (f * g).values)

    def test_unit_bitwise(self, engine, pair):
        f, _ = pair
        one = GriddedFunction.from_callable(constant_profile(1.0), AX)
        assert np.array_equal(engine.deformed_product(one, f).values, (one * f).values)
        assert np.array_equal(engine.deformed_product(f, one).values, (f * one).values)

    def test_fixed_function_central_exact(self, engine, pair):
        # support outside K: both orderings reduce to the pointwise product
        f, g = pair
        far = GriddedFunction.from_callable(bump_profile((1.2, 1.2), 0.15), AX)
        lhs = engine.deformed_product(far, g)
        rhs = engine.deformed_product(g, far)
        pointwise = (far * g).values
        assert np.array_equal(lhs.values, pointwise)
        assert np.array_equal(rhs.values, pointwise)

    def test_noncommutative_inside(self, engine, pair):
        f, g = pair
        fg = engine.deformed_product(f, g)
        gf = engine.deformed_product(g, f)
        assert np.max(np.abs(fg.values - gf.values)) > 1e-2

    def test_invariant_cutoff(self, engine):
        assert engine.invariant_cutoff_residual() <= 1e-12

    def test_margin_error_reports_required_size(self, action):
        cfg = EngineConfig(torus_size=4.0, torus_res=128, mode_cutoff=48)
        eng = ProductEngine(action, AX, cfg)
        fat = GriddedFunction.from_callable(gaussian_profile((0.0, 0.0), 0.28), AX)
        g = GriddedFunction.from_callable(bump_profile((0.0, 0.0), 0.4), AX)
        with pytest.raises(TorusMarginError) as exc:
            eng.deformed_product(fat, g)
        assert exc.value.required_size > 4.0

    def test_grid_mismatch_rejected(self, engine):
        other = GriddedFunction.from_callable(
            bump_profile((0.0, 0.0), 0.3), ((-1.4, 1.4, 64), (-1.4, 1.4, 64))
        )
        with pytest.raises(ValueError):
            engine.deformed_product(other, other)


class TestAlgebraicProperties:
    def test_involution(self, engine, pair):
        f, g = pair
        lhs = engine.deformed_product(f, g).conj()
        rhs = engine.deformed_product(g.conj(), f.conj())
        assert np.max(np.abs(lhs.values - rhs.values)) < 1e-10

    def test_involution_complex_inputs(self, engine):
        f = GriddedFunction.from_callable(
            lambda p: bump_profile((0.1, 0.0), 0.45, 1.0)(p) * np.exp(2j * np.pi * (p @ np.array([0.8, -0.4]))),
            AX,
        )
        g = GriddedFunction.from_callable(
            lambda p: bump_profile((-0.1, 0.05), 0.4, 1.3)(p) * (1.0 + 0.5j),
            AX,
        )
        lhs = engine.deformed_product(f, g).conj()
        rhs = engine.deformed_product(g.conj(), f.conj())
        assert np.max(np.abs(lhs.values - rhs.values)) < 1e-10

    def test_associativity_relative(self, engine):
        rng = np.random.default_rng(7)
        fs = []
        for _ in range(3):
            c = rng.uniform(-0.08, 0.08, size=2)
            fs.append(GriddedFunction.from_callable(bump_profile(c, rng.uniform(0.35, 0.5), 1.0), AX))
        f, g, h = fs
        left = engine.deformed_product(engine.deformed_product(f, g), h)
        right = engine.deformed_product(f, engine.deformed_product(g, h))
        scale = np.max(np.abs(right.values))
        assert np.max(np.abs(left.values - right.values)) / scale < 1e-8

    def test_bilinearity(self, engine, pair):
        f, g = pair
        h = GriddedFunction.from_callable(bump_profile((0.0, -0.1), 0.4), AX)
        lhs = engine.deformed_product(f + h, g)
        rhs = engine.deformed_product(f, g) + engine.deformed_product(h, g)
        scale = max(np.max(np.abs(rhs.values)), 1.0)
        assert np.max(np.abs(lhs.values - rhs.values)) / scale < 1e-11


class TestSupportInclusion:
    def test_disjoint_outside_k(self, engine):
        f = GriddedFunction.from_callable(bump_profile((1.25, 0.0), 0.1), AX)
        g = GriddedFunction.from_callable(bump_profile((-1.25, 0.0), 0.1), AX)
        ok, offending, star = engine.support_inclusion_check(f, g)
        assert ok
        assert np.max(np.abs(star.values)) == 0.0

    def test_overlap_outside_k(self, engine):
        f = GriddedFunction.from_callable(bump_profile((1.18, 0.6), 0.18), AX)
        g = GriddedFunction.from_callable(bump_profile((1.1, 0.75), 0.18), AX)
        ok, offending, star = engine.support_inclusion_check(f, g)
        assert ok
        # product supported in the intersection of the support boxes
        box = star.support_box(1e-9)
        if box is not None:
            fb, gb = f.support_box(), g.support_box()
            for ax in range(2):
                assert box[ax][0] >= max(fb[ax][0], gb[ax][0]) - 0.05
                assert box[ax][1] <= min(fb[ax][1], gb[ax][1]) + 0.05

    def test_random_pairs_inclusion(self, engine):
        # supports confined so the warped image fits the torus embedding
        rng = np.random.default_rng(3)
        for _ in range(6):
            c1 = rng.uniform(-0.12, 0.12, size=2)
            c2 = rng.uniform(-0.12, 0.12, size=2)
            f = GriddedFunction.from_callable(bump_profile(c1, rng.uniform(0.3, 0.45)), AX)
            g = GriddedFunction.from_callable(bump_profile(c2, rng.uniform(0.3, 0.45)), AX)
            ok, offending, _ = engine.support_inclusion_check(f, g)
            assert ok, offending


class TestDeltaStates:
    def test_outside_k_exact(self, engine, pair):
        f, g = pair
        assert engine.delta_state_residual(np.array([1.2, 0.3]), f, g) == 0.0

    def test_rejects_moving_point(self, engine, pair):
        f, g = pair
        with pytest.raises(ValueError):
            engine.delta_state_residual(np.array([0.2, 0.1]), f, g)

    def test_unit_factor_zero(self, engine, pair):
        f, _ = pair
        one = GriddedFunction.from_callable(constant_profile(1.0), AX)
        assert engine.delta_state_residual(np.array([1.3, 0.0]), one, f) == 0.0

    def test_vanishing_directions_commutative(self):
        # all sections zero: every point is fixed and the product collapses
        act = AdmissibleAction(2, np.zeros((2, 2)), J2, hbar=0.1)
        eng = ProductEngine(act, AX, EngineConfig(torus_size=7.0, torus_res=128, mode_cutoff=32))
        f = GriddedFunction.from_callable(bump_profile((0.1, 0.0), 0.4), AX)
        g = GriddedFunction.from_callable(bump_profile((0.0, 0.1), 0.4), AX)
        star = eng.deformed_product(f, g)
        assert np.array_equal(star.values, (f * g).values)
        assert eng.delta_state_residual(np.array([0.0, 0.0]), f, g) == 0.0


class TestSemiclassical:
    def test_theta_zero(self, engine, pair):
        f, g = pair
        assert engine.semiclassical_residual(f, g, hbar=0.0) == 0.0

    def test_constant_rederived_from_plane_waves(self):
        # commutator of torus plane waves: -2i sin(2 pi h p.Jq) e_{p+q};
        # leading term over h against the bracket gives c = i/pi
        p = np.array([3, -2])
        q = np.array([1, 4])
        pq = float(p @ J2 @ q)
        hs = np.array([1e-3, 5e-4, 2.5e-4])
        cs = []
        for h in hs:
            comm = -2j * np.sin(2 * np.pi * h * pq) / h
            bracket = (2j * np.pi) ** 2 * pq  # X(e_p) X(e_q) coefficient contraction
            cs.append(comm / bracket)
        cs = np.array(cs)
        assert np.allclose(cs, SEMICLASSICAL_CONSTANT, rtol=5e-3)
        # convergence towards the constant is second order
        errs = np.abs(cs - SEMICLASSICAL_CONSTANT)
        assert errs[2] < errs[0] / 10

    def test_order_at_least_1_9(self):
        # perturbative regime: moderate section strength keeps the phases
        # small across the hbar sweep for ball-confined inputs
        act = AdmissibleAction(2, 0.45 * np.eye(2), J2, hbar=0.1)
        eng = ProductEngine(act, AX, EngineConfig(torus_size=8.0, torus_res=256, mode_cutoff=72))
        f = GriddedFunction.from_callable(
            lambda p: gaussian_profile((0.04, 0.0), 0.2)(p) * bump_profile((0.0, 0.0), 0.58, 3.0)(p),
            AX,
        )
        g = GriddedFunction.from_callable(
            lambda p: gaussian_profile((-0.04, 0.05), 0.2)(p) * bump_profile((0.0, 0.0), 0.58, 3.0)(p),
            AX,
        )
        res = [eng.semiclassical_residual(f, g, hbar=h) for h in (0.2, 0.1, 0.05)]
        orders = [np.log2(res[0] / res[1]), np.log2(res[1] / res[2])]
        assert min(orders) >= 1.9


class TestEvaluateProductAt:
    def test_outside_pointwise(self, engine, pair):
        f, g = pair
        star = engine.deformed_product(f, g)
        pts = np.array([[1.3, 0.2], [-1.2, -0.5]])
        vals = engine.evaluate_product_at(star, f, g, pts)
        direct = f.eval_at(pts) * g.eval_at(pts)
        assert np.array_equal(vals, direct)

    def test_matches_grid_samples(self, engine, pair):
        f, g = pair
        star = engine.deformed_product(f, g)
        pts = star.grid_points()[5000:5100]
        vals = engine.evaluate_product_at(star, f, g, pts)
        assert np.max(np.abs(vals - star.values.reshape(-1)[5000:5100])) < 1e-12
