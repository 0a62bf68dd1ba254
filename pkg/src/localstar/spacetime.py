"""Tower of deformed products over a base manifold.

A vertical action on the tangent bundle induces products fiber by fiber;
geodesic relative coordinates (exp_p(-v), exp_p(v)) carry them to a
neighbourhood of the diagonal in M x M, and per-point exponential charts
carry them down to M itself, where each point owns a small noncommutative
neighbourhood.

Fibers are handled in unit-ball coordinates: the fiber metric rescales the
tangent space so every fiber shares one grid and one cutoff geometry; the
geometric tangent vector is recovered through ``fiber_scale``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .action import AdmissibleAction
from .engine import EngineConfig, ProductEngine
from .gridfn import Axis, GriddedFunction, _as_axes

__all__ = [
    "FlatGeometry",
    "HyperbolicDisk",
    "UserGeometry",
    "FiberedProductFamily",
    "TMFunction",
]


# -- base geometries --------------------------------------------------------


class FlatGeometry:
    """R^m with exp_p(v) = p + v."""

    kind = "flat"

    def __init__(self, dim):
        self.dim = dim

    def exp(self, p, v):
        return np.asarray(p, dtype=float) + np.asarray(v, dtype=float)

    def log(self, p, q):
        return np.asarray(q, dtype=float) - np.asarray(p, dtype=float)

    def conformal_factor(self, p):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        return np.ones(p.shape[0])

    def contains(self, p):
        return np.ones(np.atleast_2d(p).shape[0], dtype=bool)


def _mobius_add(a, b):
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    ab = np.sum(a * b, axis=-1, keepdims=True)
    a2 = np.sum(a * a, axis=-1, keepdims=True)
    b2 = np.sum(b * b, axis=-1, keepdims=True)
    num = (1.0 + 2.0 * ab + b2) * a + (1.0 - a2) * b
    den = 1.0 + 2.0 * ab + a2 * b2
    return num / den


class HyperbolicDisk:
    """Poincare disk (curvature -1) with closed-form exponential map."""

    kind = "hyperbolic"
    dim = 2

    def conformal_factor(self, p):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        return 2.0 / (1.0 - np.sum(p * p, axis=-1))

    def contains(self, p):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        return np.sum(p * p, axis=-1) < 1.0

    def exp(self, p, v):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        v = np.atleast_2d(np.asarray(v, dtype=float))
        lam = self.conformal_factor(p)[:, None]
        norm = np.linalg.norm(v, axis=-1, keepdims=True)
        small = norm < 1e-300
        direction = np.where(small, 0.0, v / np.where(small, 1.0, norm))
        step = np.tanh(0.5 * lam * norm) * direction
        return _mobius_add(p, step)

    def log(self, p, q):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        q = np.atleast_2d(np.asarray(q, dtype=float))
        w = _mobius_add(-p, q)
        norm = np.linalg.norm(w, axis=-1, keepdims=True)
        small = norm < 1e-300
        direction = np.where(small, 0.0, w / np.where(small, 1.0, norm))
        lam = self.conformal_factor(p)[:, None]
        return (2.0 / lam) * np.arctanh(np.clip(norm, 0.0, 1.0 - 1e-15)) * direction


class UserGeometry:
    """Closed-form exponential/logarithm pair supplied by the caller."""

    kind = "user"

    def __init__(self, dim, exp, log, conformal_factor=None, check_points=None):
        self.dim = dim
        self._exp = exp
        self._log = log
        self._conf = conformal_factor
        if check_points is not None:
            p, v = check_points
            back = self.log(p, self.exp(p, v))
            if np.max(np.abs(back - v)) > 1e-8:
                raise ValueError("user exp/log pair fails the round-trip check")

    def exp(self, p, v):
        return np.asarray(self._exp(p, v), dtype=float)

    def log(self, p, q):
        return np.asarray(self._log(p, q), dtype=float)

    def conformal_factor(self, p):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        if self._conf is None:
            return np.ones(p.shape[0])
        return np.asarray(self._conf(p), dtype=float).reshape(p.shape[0])

    def contains(self, p):
        return np.ones(np.atleast_2d(p).shape[0], dtype=bool)


# -- tangent-bundle functions -------------------------------------------


@dataclass(frozen=True)
class TMFunction:
    """Samples over base x fiber grids (fiber in unit-ball coordinates)."""

    base_axes: tuple
    fiber_axes: tuple
    values: np.ndarray
    profile: object = None  # (p, w) -> complex, both (N, m)

    def __post_init__(self):
        object.__setattr__(self, "base_axes", _as_axes(self.base_axes))
        object.__setattr__(self, "fiber_axes", _as_axes(self.fiber_axes))
        shape = tuple(a.n for a in self.base_axes) + tuple(a.n for a in self.fiber_axes)
        vals = np.asarray(self.values, dtype=np.complex128)
        if vals.shape != shape:
            raise ValueError("sample shape does not match base x fiber axes")
        object.__setattr__(self, "values", vals)

    @property
    def base_shape(self):
        return tuple(a.n for a in self.base_axes)

    @property
    def fiber_shape(self):
        return tuple(a.n for a in self.fiber_axes)

    def fiber_slice(self, base_index):
        prof = None
        if self.profile is not None:
            p = np.array([a.coords()[i] for a, i in zip(self.base_axes, base_index)])
            m = len(self.base_axes)
            base = self.profile
            prof = lambda w, p=p, m=m: base(np.broadcast_to(p, (np.atleast_2d(w).shape[0], m)), np.atleast_2d(w))
        return GriddedFunction(self.fiber_axes, self.values[base_index], profile=prof)


# -- the fibered family ------------------------------------------------------


class FiberedProductFamily:
    """Per-fiber actions, engines, and tower maps over a sampled base.

    Parameters
    ----------
    geometry : FlatGeometry | HyperbolicDisk | UserGeometry
    base_axes : tuple of (lo, hi, n)
        Base sample grid (also the chart for M-level products).
    fiber_axes : tuple of (lo, hi, n)
        Common fiber grid in unit-ball coordinates.
    section_scale : callable p -> float or float
        Strength of the canonical sections in unit coordinates.
    theta : skew d x d coupling, hbar scale as in the fiber actions.
    u_radius : radius of the neighbourhood U_p in unit coordinates.
    """

    def __init__(
        self,
        geometry,
        base_axes,
        fiber_axes,
        theta,
        hbar=0.1,
        section_scale=0.5,
        u_radius=1.3,
        engine_config: EngineConfig = None,
        fiber_scale=None,
    ):
        self.geometry = geometry
        self.base_axes = _as_axes(base_axes)
        self.fiber_axes = _as_axes(fiber_axes)
        self.m = len(self.base_axes)
        if geometry.dim != self.m:
            raise ValueError("base grid dimension does not match the geometry")
        self.theta = np.asarray(theta, dtype=float)
        self.hbar = float(hbar)
        self.section_scale = section_scale if callable(section_scale) else (lambda p, s=float(section_scale): s)
        self.u_radius = float(u_radius)
        self.config = engine_config or EngineConfig(torus_size=6.0, torus_res=128, mode_cutoff=40)
        if self.u_radius < self.config.chi_outer:
            raise ValueError("neighbourhood radius must contain the cutoff support")
        self._fiber_scale = fiber_scale
        self._engines = {}
        self.base_points = GriddedFunction._grid_points_static(self.base_axes)

    # unit-ball coordinates w relate to tangent vectors by v = scale(p) * w
    def fiber_scale(self, p):
        if self._fiber_scale is not None:
            return float(self._fiber_scale(np.asarray(p, dtype=float)))
        lam = float(self.geometry.conformal_factor(np.asarray(p, dtype=float)[None, :])[0])
        return 2.0 / lam if self.geometry.kind == "hyperbolic" else 1.0

    def action_at(self, p):
        p = np.asarray(p, dtype=float)
        s = float(self.section_scale(p))
        directions = s * np.eye(self.m)
        return AdmissibleAction(self.m, directions, self.theta, hbar=self.hbar)

    def engine_at(self, p):
        key = tuple(np.round(np.asarray(p, dtype=float), 12))
        if key not in self._engines:
            self._engines[key] = ProductEngine(self.action_at(p), self.fiber_axes, self.config)
        return self._engines[key]

    # -- the Phi chart ---------------------------------------------------

    def phi(self, p, w):
        """Geodesic relative coordinates of (p, w); returns (a, b) pairs."""
        p = np.atleast_2d(np.asarray(p, dtype=float))
        w = np.atleast_2d(np.asarray(w, dtype=float))
        scale = np.array([self.fiber_scale(pi) for pi in p])[:, None]
        v = scale * w
        return self.geometry.exp(p, -v), self.geometry.exp(p, v)

    def phi_inverse(self, a, b):
        a = np.atleast_2d(np.asarray(a, dtype=float))
        b = np.atleast_2d(np.asarray(b, dtype=float))
        if self.geometry.kind == "flat":
            p = 0.5 * (a + b)
            v = 0.5 * (b - a)
        elif self.geometry.kind == "hyperbolic":
            w_ab = _mobius_add(-a, b)
            norm = np.linalg.norm(w_ab, axis=-1, keepdims=True)
            small = norm < 1e-300
            direction = np.where(small, 0.0, w_ab / np.where(small, 1.0, norm))
            half = np.tanh(0.5 * np.arctanh(np.clip(norm, 0.0, 1.0 - 1e-15))) * direction
            p = _mobius_add(a, half)
            v = self.geometry.log(p, b)
        else:
            raise NotImplementedError("phi_inverse requires a midpoint construction")
        scale = np.array([self.fiber_scale(pi) for pi in p])[:, None]
        return p, v / scale

    def phi_round_trip_residual(self, sample=200, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        lo = np.array([a.lo for a in self.base_axes])
        hi = np.array([a.hi for a in self.base_axes])
        p = rng.uniform(lo, hi, size=(sample, self.m))
        w = rng.uniform(-0.9, 0.9, size=(sample, self.m))
        w = w[np.linalg.norm(w, axis=1) < self.u_radius]
        p = p[: w.shape[0]]
        a, b = self.phi(p, w)
        p2, w2 = self.phi_inverse(a, b)
        return float(max(np.max(np.abs(p2 - p)), np.max(np.abs(w2 - w))))

    def in_v_neighbourhood(self, a, b):
        """Membership of (a, b) pairs in V = Phi(U)."""
        p, w = self.phi_inverse(a, b)
        return np.linalg.norm(w, axis=-1) < self.u_radius

    # -- products on TM ----------------------------------------------------

    def star_tm(self, f: TMFunction, g: TMFunction):
        """Fiberwise deformed product on the dense TM grid."""
        self._check_tm(f)
        self._check_tm(g)
        out = np.empty_like(f.values)
        for idx in np.ndindex(*f.base_shape):
            p = np.array([self.base_axes[k].coords()[idx[k]] for k in range(self.m)])
            eng = self.engine_at(p)
            out[idx] = eng.deformed_product(f.fiber_slice(idx), g.fiber_slice(idx)).values
        return TMFunction(f.base_axes, f.fiber_axes, out)

    def star_tm_evaluate(self, f_prof, g_prof, w_points):
        """Streamed fiberwise product of closed forms on TM.

        Returns values of (f * g) at every sampled base point and the given
        unit-fiber points, shape ``base_shape + (n_w,)``; per-fiber torus
        data is discarded after evaluation.
        """
        w_points = np.atleast_2d(np.asarray(w_points, dtype=float))
        base_shape = tuple(a.n for a in self.base_axes)
        out = np.empty(base_shape + (w_points.shape[0],), dtype=np.complex128)
        for idx in np.ndindex(*base_shape):
            p = np.array([self.base_axes[k].coords()[idx[k]] for k in range(self.m)])
            eng = self.engine_at(p)
            fp = self._restrict_profile(f_prof, p)
            gp = self._restrict_profile(g_prof, p)
            ff = GriddedFunction.from_callable(fp, self.fiber_axes)
            gg = GriddedFunction.from_callable(gp, self.fiber_axes)
            star = eng.deformed_product(ff, gg)
            out[idx] = eng.evaluate_product_at(star, ff, gg, w_points)
        return out

    def _restrict_profile(self, prof, p):
        def fiber_prof(w, p=p):
            w = np.atleast_2d(w)
            pp = np.broadcast_to(p, (w.shape[0], self.m))
            return prof(pp, w)

        return fiber_prof

    def _check_tm(self, f: TMFunction):
        if f.base_axes != self.base_axes or f.fiber_axes != self.fiber_axes:
            raise ValueError("TM function grids do not match the family")

    def tm_from_profile(self, prof):
        base_shape = tuple(a.n for a in self.base_axes)
        fiber_pts = GriddedFunction._grid_points_static(self.fiber_axes)
        vals = np.empty(base_shape + tuple(a.n for a in self.fiber_axes), dtype=np.complex128)
        for idx in np.ndindex(*base_shape):
            p = np.array([self.base_axes[k].coords()[idx[k]] for k in range(self.m)])
            pp = np.broadcast_to(p, (fiber_pts.shape[0], self.m))
            vals[idx] = prof(pp, fiber_pts).reshape(tuple(a.n for a in self.fiber_axes))
        return TMFunction(self.base_axes, self.fiber_axes, vals, profile=prof)

    # -- restriction to a fiber (Prop on i_p) --------------------------------

    def restrict_to_fiber(self, base_index, f: TMFunction):
        return f.fiber_slice(base_index)

    def homomorphism_residual_ip(self, f: TMFunction, g: TMFunction, base_index):
        """Residual of restrict(f * g) against restrict(f) * restrict(g).

        Both sides run the same fiber engine; the residual measures
        bookkeeping only.
        """
        star = self.star_tm_single(f, g, base_index)
        p = np.array([self.base_axes[k].coords()[base_index[k]] for k in range(self.m)])
        eng = self.engine_at(p)
        direct = eng.deformed_product(f.fiber_slice(base_index), g.fiber_slice(base_index))
        return float(np.max(np.abs(star - direct.values)))

    def star_tm_single(self, f: TMFunction, g: TMFunction, base_index):
        p = np.array([self.base_axes[k].coords()[base_index[k]] for k in range(self.m)])
        eng = self.engine_at(p)
        return eng.deformed_product(f.fiber_slice(base_index), g.fiber_slice(base_index)).values

    # -- products on M x M -----------------------------------------------

    def pullback_phi(self, mxm_prof):
        """Closed form on M x M composed with Phi: a profile on TM."""

        def prof(p, w):
            a, b = self.phi(p, w)
            return mxm_prof(a, b)

        return prof

    def star_mxm_evaluate(self, f_prof, g_prof, a_pts, b_pts):
        """(f tilde-star g) at M x M pairs: pointwise outside V, conjugated
        through Phi inside."""
        a_pts = np.atleast_2d(np.asarray(a_pts, dtype=float))
        b_pts = np.atleast_2d(np.asarray(b_pts, dtype=float))
        p, w = self.phi_inverse(a_pts, b_pts)
        inside = np.linalg.norm(w, axis=-1) < self.u_radius
        out = np.empty(a_pts.shape[0], dtype=np.complex128)
        if np.any(~inside):
            out[~inside] = f_prof(a_pts[~inside], b_pts[~inside]) * g_prof(
                a_pts[~inside], b_pts[~inside]
            )
        if np.any(inside):
            fp = self.pullback_phi(f_prof)
            gp = self.pullback_phi(g_prof)
            out[inside] = self._star_off_sample(fp, gp, p[inside], w[inside])
        return out

    def _star_off_sample(self, f_prof, g_prof, p_pts, w_pts):
        """Exact per-point products at arbitrary base points (fresh engines)."""
        out = np.empty(p_pts.shape[0], dtype=np.complex128)
        for k in range(p_pts.shape[0]):
            p = p_pts[k]
            eng = self.engine_at(p)
            ff = GriddedFunction.from_callable(self._restrict_profile(f_prof, p), self.fiber_axes)
            gg = GriddedFunction.from_callable(self._restrict_profile(g_prof, p), self.fiber_axes)
            star = eng.deformed_product(ff, gg)
            out[k] = eng.evaluate_product_at(star, ff, gg, w_pts[k][None, :])[0]
        return out

    def homomorphism_residual_phi(self, f_prof, g_prof, queries, order=5):
        """Prop-style residual for the Phi pullback at off-sample points.

        The M x M product is represented by its values over the sampled
        fibers and interpolated across the base; the TM side computes the
        product exactly at the query fiber.  The residual is the
        cross-base interpolation defect of the product.
        """
        p_star, w_star = queries
        p_star = np.atleast_2d(np.asarray(p_star, dtype=float))
        w_star = np.atleast_2d(np.asarray(w_star, dtype=float))
        residuals = []
        for k in range(p_star.shape[0]):
            table = self.star_tm_evaluate(f_prof, g_prof, w_star[k][None, :])[..., 0]
            interp = self._base_interpolate(table, p_star[k], order=order)
            exact = self._star_off_sample(f_prof, g_prof, p_star[k][None, :], w_star[k][None, :])[0]
            residuals.append(abs(interp - exact))
        return float(np.max(residuals))

    def _base_interpolate(self, table, p, order=5):
        idx = np.empty((self.m, 1))
        for k, a in enumerate(self.base_axes):
            idx[k, 0] = (p[k] - a.lo) / a.step
        re = ndimage.map_coordinates(table.real, idx, order=order, mode="nearest")
        im = ndimage.map_coordinates(table.imag, idx, order=order, mode="nearest")
        return complex(re[0] + 1j * im[0])

    # -- products on M ------------------------------------------------------

    def v_p_membership(self, p, x_pts):
        """Points of M inside V_p = exp_p(U_p)."""
        p = np.asarray(p, dtype=float)
        x_pts = np.atleast_2d(np.asarray(x_pts, dtype=float))
        v = self.geometry.log(np.broadcast_to(p, x_pts.shape), x_pts)
        w = v / self.fiber_scale(p)
        return np.linalg.norm(w, axis=-1) < self.u_radius, w

    def star_p_on_m(self, p, f_prof, g_prof, m_axes):
        """(f tilde-star_p g) sampled on an M grid.

        Pointwise outside V_p; inside, the fiber product at p conjugated by
        the exponential chart.
        """
        p = np.asarray(p, dtype=float)
        m_axes = _as_axes(m_axes)
        pts = GriddedFunction._grid_points_static(m_axes)
        inside, w = self.v_p_membership(p, pts)
        vals = np.empty(pts.shape[0], dtype=np.complex128)
        if np.any(~inside):
            vals[~inside] = f_prof(pts[~inside]) * g_prof(pts[~inside])
        if np.any(inside):
            eng = self.engine_at(p)
            fp = self._chart_profile(f_prof, p)
            gp = self._chart_profile(g_prof, p)
            ff = GriddedFunction.from_callable(fp, self.fiber_axes)
            gg = GriddedFunction.from_callable(gp, self.fiber_axes)
            star = eng.deformed_product(ff, gg)
            vals[inside] = eng.evaluate_product_at(star, ff, gg, w[inside])
        return GriddedFunction(m_axes, vals.reshape(tuple(a.n for a in m_axes)))

    def _chart_profile(self, m_prof, p):
        def prof(w, p=p):
            w = np.atleast_2d(w)
            x = self.geometry.exp(np.broadcast_to(p, w.shape), self.fiber_scale(p) * w)
            return m_prof(x)

        return prof

    def residual_expp(self, p, f_prof, g_prof, m_axes, order=5):
        """exp_p^*(f tstar_p g) against exp_p^*f star_p exp_p^*g.

        The M-side product is materialized on the chart grid and resampled
        at exponential images of the fiber grid; the fiber side computes
        the product directly.  The residual measures the chart grid's
        interpolation quality.
        """
        p = np.asarray(p, dtype=float)
        star_m = self.star_p_on_m(p, f_prof, g_prof, m_axes)
        eng = self.engine_at(p)
        ff = GriddedFunction.from_callable(self._chart_profile(f_prof, p), self.fiber_axes)
        gg = GriddedFunction.from_callable(self._chart_profile(g_prof, p), self.fiber_axes)
        direct = eng.deformed_product(ff, gg)
        w_pts = GriddedFunction._grid_points_static(self.fiber_axes)
        keep = np.linalg.norm(w_pts, axis=-1) < self.u_radius * 0.92
        x = self.geometry.exp(np.broadcast_to(p, w_pts[keep].shape), self.fiber_scale(p) * w_pts[keep])
        lhs = star_m.eval_at(x, order=order)
        rhs = direct.values.reshape(-1)[keep]
        return float(np.max(np.abs(lhs - rhs)))

    def commutator_outside_vp(self, p, f_prof, g_prof, m_axes):
        """Sup of the tilde-star_p commutator outside V_p (zero bitwise)."""
        fg = self.star_p_on_m(p, f_prof, g_prof, m_axes)
        gf = self.star_p_on_m(p, g_prof, f_prof, m_axes)
        pts = fg.grid_points()
        inside, _ = self.v_p_membership(p, pts)
        comm = (fg.values - gf.values).reshape(-1)
        return float(np.max(np.abs(comm[~inside]))) if np.any(~inside) else 0.0

    # -- restriction homomorphism (crop to the neighbourhood U) ---------------

    def restriction_homomorphism_check(self, f: TMFunction, g: TMFunction, base_index):
        """Residual of restrict-then-multiply against multiply-then-restrict.

        Restriction to U zeroes samples beyond the neighbourhood radius;
        the product only reads values inside the unit ball and at the
        evaluation point itself, so on U the two routes agree up to the
        spline bookkeeping of the cropped samples.
        """
        p = np.array([self.base_axes[k].coords()[base_index[k]] for k in range(self.m)])
        eng = self.engine_at(p)
        ff = f.fiber_slice(base_index)
        gg = g.fiber_slice(base_index)
        w_pts = GriddedFunction._grid_points_static(self.fiber_axes)
        mask = (np.linalg.norm(w_pts, axis=-1) < self.u_radius).reshape(ff.values.shape)
        f_crop = GriddedFunction(self.fiber_axes, np.where(mask, ff.values, 0.0))
        g_crop = GriddedFunction(self.fiber_axes, np.where(mask, gg.values, 0.0))
        full = eng.deformed_product(ff, gg)
        cropped = eng.deformed_product(f_crop, g_crop)
        diff = np.abs(full.values - cropped.values)[mask]
        return float(np.max(diff))
