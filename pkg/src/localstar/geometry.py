"""Radial diffeomorphism between the open unit ball and R^n.

The construction is driven by a one-dimensional profile ``psi`` that is the
identity below 1/2 and blows up like exp(1/(1-t)) towards 1.  Gluing the two
branches with a smooth cutoff gives an O(n)-equivariant diffeomorphism
``Psi(x) = psi(|x|) * x/|x|`` whose pulled-back frame fields extend smoothly
by zero outside the ball.  Flows conjugated through ``Psi`` are exact
translations, which is what every other module relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CutoffProfile",
    "RadialProfile",
    "RadialDiffeo",
    "smooth_step",
    "smooth_step_derivative",
]

# exp(1/(1-t)) overflows double precision for t above ~1 - 1/709; beyond
# that radius the frame fields are sub-denormal and points are treated as
# numerically fixed.
SATURATION_RADIUS = 1.0 - 1.0 / 700.0


def _stable_norm(x, axis=-1):
    """Euclidean norm that survives components whose squares overflow."""
    x = np.asarray(x, dtype=float)
    m = np.max(np.abs(x), axis=axis)
    safe = np.where(m == 0.0, 1.0, m)
    scaled = x / np.expand_dims(safe, axis)
    return m * np.sqrt(np.sum(scaled * scaled, axis=axis))


def _sigma(u):
    """exp(-1/u) for u > 0, zero otherwise (the standard mollifier factor)."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    pos = u > 0.0
    with np.errstate(over="ignore", under="ignore", divide="ignore"):
        out[pos] = np.exp(-1.0 / u[pos])
    return out


def smooth_step(u):
    """Smooth step S(u) = sigma(u) / (sigma(u) + sigma(1-u)).

    Equals 0 for u <= 0 and 1 for u >= 1, strictly increasing in between,
    with all derivatives vanishing at both endpoints.
    """
    u = np.asarray(u, dtype=float)
    a = _sigma(u)
    b = _sigma(1.0 - u)
    den = a + b
    # den > 0 on (0,1); at the endpoints a or b is exactly 0/1-dominant.
    out = np.where(u <= 0.0, 0.0, np.where(u >= 1.0, 1.0, a / np.where(den == 0.0, 1.0, den)))
    return out


def smooth_step_derivative(u):
    """Derivative of :func:`smooth_step`, zero outside (0, 1)."""
    u = np.asarray(u, dtype=float)
    a = _sigma(u)
    b = _sigma(1.0 - u)
    den = a + b
    inside = (u > 0.0) & (u < 1.0)
    out = np.zeros_like(u)
    with np.errstate(divide="ignore", invalid="ignore", under="ignore"):
        da = np.where(inside, a / np.maximum(u, 1e-300) ** 2, 0.0)
        db = np.where(inside, b / np.maximum(1.0 - u, 1e-300) ** 2, 0.0)
        val = (da * b + a * db) / np.where(den == 0.0, 1.0, den) ** 2
    out[inside] = val[inside]
    return out


@dataclass(frozen=True)
class CutoffProfile:
    """Monotone cutoff chi with chi = 1 on [0, 1/2] and chi = 0 on [3/4, inf).

    The transition is the exponential smooth step reparametrized to
    [plateau_end, support_end]; all derivatives vanish at both junctions.
    """

    plateau_end: float = 0.5
    support_end: float = 0.75

    def __post_init__(self):
        if not 0.0 < self.plateau_end < self.support_end:
            raise ValueError("require 0 < plateau_end < support_end")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0.0):
            raise ValueError("chi is defined for t >= 0")
        u = (self.support_end - t) / (self.support_end - self.plateau_end)
        return smooth_step(u)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        w = self.support_end - self.plateau_end
        u = (self.support_end - t) / w
        return -smooth_step_derivative(u) / w


@dataclass(frozen=True)
class RadialProfile:
    """Strictly increasing bijection psi: [0, 1) -> [0, inf).

    psi(t) = t * chi(t) + (1 - chi(t)) * exp(1/(1-t)); the identity branch
    below the cutoff plateau, the exponential branch beyond its support.
    Strict monotonicity is verified on a dense grid at construction.
    """

    cutoff: CutoffProfile = field(default_factory=CutoffProfile)
    check_points: int = 100_000
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        # beyond the saturation radius exp(1/(1-t)) leaves double range
        t = np.linspace(0.0, SATURATION_RADIUS, self.check_points)
        dpsi = self.derivative(t)
        min_slope = float(dpsi.min())
        if min_slope <= 0.0:
            raise ValueError(f"psi is not strictly increasing (min psi' = {min_slope:.3e})")
        vals = self(t)
        if np.any(np.diff(vals) <= 0.0):
            raise ValueError("psi failed the sampled monotonicity check")
        self.diagnostics["min_psi_prime"] = min_slope
        self.diagnostics["argmin_psi_prime"] = float(t[int(np.argmin(dpsi))])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if np.any((t < 0.0) | (t >= 1.0)):
            raise ValueError("psi is defined on [0, 1)")
        out = np.array(t, dtype=float, copy=True)
        band = (t > self.cutoff.plateau_end) & (t < self.cutoff.support_end)
        tail = t >= self.cutoff.support_end
        if np.any(band):
            tb = t[band]
            chi = self.cutoff(tb)
            out[band] = tb * chi + (1.0 - chi) * np.exp(1.0 / (1.0 - tb))
        if np.any(tail):
            with np.errstate(over="ignore"):
                out[tail] = np.exp(1.0 / (1.0 - t[tail]))
        return out

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        out = np.ones_like(t)
        band = (t > self.cutoff.plateau_end) & (t < self.cutoff.support_end)
        tail = t >= self.cutoff.support_end
        if np.any(band):
            tb = t[band]
            chi = self.cutoff(tb)
            dchi = self.cutoff.derivative(tb)
            expo = np.exp(1.0 / (1.0 - tb))
            out[band] = chi + tb * dchi - dchi * expo + (1.0 - chi) * expo / (1.0 - tb) ** 2
        if np.any(tail):
            tt = t[tail]
            with np.errstate(over="ignore"):
                out[tail] = np.exp(1.0 / (1.0 - tt)) / (1.0 - tt) ** 2
        return out

    def inverse(self, s, tol=1e-14, max_iter=120):
        """Invert psi by safeguarded Newton iteration.

        Exact on both closed-form branches: s <= plateau_end returns s, and
        s >= psi(support_end) returns 1 - 1/log(s).  The transition band is
        solved on the bracket [plateau_end, support_end], inside which the
        root provably lies.
        """
        s = np.asarray(s, dtype=float)
        if np.any(s < 0.0) or not np.all(np.isfinite(s)):
            raise ValueError("psi_inverse is defined for finite s >= 0")
        lo_cut = self.cutoff.plateau_end
        hi_cut = self.cutoff.support_end
        s_hi = float(np.exp(1.0 / (1.0 - hi_cut)))
        out = np.array(s, dtype=float, copy=True)
        exp_branch = s >= s_hi
        with np.errstate(divide="ignore"):
            out[exp_branch] = 1.0 - 1.0 / np.log(s[exp_branch])
        mid = (s > lo_cut) & (s < s_hi)
        if np.any(mid):
            target = s[mid]
            lo = np.full(target.shape, lo_cut)
            hi = np.full(target.shape, hi_cut)
            t = 0.5 * (lo + hi)
            active = np.arange(t.size)
            for _ in range(max_iter):
                ta = t[active]
                val = self(ta) - target[active]
                hi[active] = np.where(val > 0.0, ta, hi[active])
                lo[active] = np.where(val <= 0.0, ta, lo[active])
                t_new = ta - val / self.derivative(ta)
                bad = (t_new <= lo[active]) | (t_new >= hi[active]) | ~np.isfinite(t_new)
                t_new = np.where(bad, 0.5 * (lo[active] + hi[active]), t_new)
                moved = np.abs(t_new - ta) >= tol
                t[active] = t_new
                active = active[moved]
                if active.size == 0:
                    break
            out[mid] = t
        return out


@dataclass(frozen=True)
class RadialDiffeo:
    """O(n)-equivariant diffeomorphism Psi from the open unit ball onto R^n.

    Psi(x) = psi(|x|) x / |x| with Psi(0) = 0.  Equals the identity on the
    closed ball of radius 1/2 (returned bitwise), and its Jacobian decomposes
    radially/tangentially, so frame fields are assembled analytically.
    """

    dimension: int
    profile: RadialProfile = field(default_factory=RadialProfile)

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be a positive integer")

    def _radii(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[-1] != self.dimension:
            raise ValueError(f"expected points in R^{self.dimension}")
        return x, _stable_norm(x, axis=-1)

    def apply(self, x):
        """Forward map; rejects |x| >= 1."""
        x, r = self._radii(x)
        if np.any(r >= 1.0):
            raise ValueError("Psi is defined on the open unit ball")
        out = x.copy()
        far = r > self.profile.cutoff.plateau_end
        if np.any(far):
            scale = self.profile(r[far]) / r[far]
            out[far] = x[far] * scale[:, None]
        return out

    def apply_inverse(self, y):
        y, s = self._radii(y)
        out = y.copy()
        far = s > self.profile.cutoff.plateau_end
        if np.any(far):
            t = self.profile.inverse(s[far])
            out[far] = y[far] * (t / s[far])[:, None]
        return out

    def frame_field(self, i, x):
        """Pulled-back coordinate frame (DPsi)^{-1} e_i, zero outside the ball.

        DPsi = psi'(r) P_r + (psi(r)/r) P_perp, so the inverse acts with
        reciprocal coefficients on the radial/tangential parts of e_i.
        """
        if not 1 <= i <= self.dimension:
            raise ValueError("frame index out of range")
        x, r = self._radii(x)
        out = np.zeros_like(x)
        e = np.zeros(self.dimension)
        e[i - 1] = 1.0
        inner = r <= self.profile.cutoff.plateau_end
        out[inner] = e
        mid = (~inner) & (r < 1.0) & (r < SATURATION_RADIUS)
        if np.any(mid):
            xm, rm = x[mid], r[mid]
            xhat = xm / rm[:, None]
            radial = xhat[:, i - 1]
            psi_r = self.profile(rm)
            dpsi_r = self.profile.derivative(rm)
            out[mid] = (radial / dpsi_r)[:, None] * xhat + (rm / psi_r)[:, None] * (
                e[None, :] - radial[:, None] * xhat
            )
        return out

    def apply_one(self, x):
        return self.apply(np.asarray(x, dtype=float)[None, :])[0]

    def apply_inverse_one(self, y):
        return self.apply_inverse(np.asarray(y, dtype=float)[None, :])[0]
