"""Complex-valued functions sampled on regular box grids.

``GriddedFunction`` is the computational stand-in for bounded continuous
functions: samples on a uniform grid, a tight support box, and a provenance
flag.  Closed-form inputs keep their callable so that downstream resampling
can evaluate them exactly; everything else goes through a cached cubic
spline.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

SUPPORT_FLOOR = 1e-14

__all__ = [
    "GriddedFunction",
    "bump_profile",
    "gaussian_profile",
    "plane_wave_profile",
    "constant_profile",
]


@dataclass(frozen=True)
class Axis:
    lo: float
    hi: float
    n: int

    def __post_init__(self):
        if self.n < 2 or not self.hi > self.lo:
            raise ValueError("axis needs hi > lo and at least two samples")

    @property
    def step(self):
        return (self.hi - self.lo) / (self.n - 1)

    def coords(self):
        return np.linspace(self.lo, self.hi, self.n)


def _as_axes(axes):
    return tuple(a if isinstance(a, Axis) else Axis(*a) for a in axes)


@dataclass(frozen=True)
class GriddedFunction:
    """Samples of a function on a regular box grid.

    Parameters
    ----------
    axes : tuple of (lo, hi, n)
        Inclusive per-axis ranges and sample counts.
    values : ndarray
        Complex samples with shape ``tuple(n per axis)``.
    profile : callable, optional
        Closed-form evaluator ``points (N, dim) -> (N,)``; present exactly
        when ``provenance == "closed-form"``.
    """

    axes: tuple
    values: np.ndarray
    profile: object = None
    provenance: str = "resampled"
    torus_rep: object = field(default=None, compare=False)
    _spline_cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        axes = _as_axes(self.axes)
        object.__setattr__(self, "axes", axes)
        vals = np.asarray(self.values, dtype=np.complex128)
        if vals.shape != tuple(a.n for a in axes):
            raise ValueError("sample shape does not match axes")
        if not np.all(np.isfinite(vals)):
            raise ValueError("samples must be finite")
        object.__setattr__(self, "values", vals)
        if self.profile is not None and self.provenance != "closed-form":
            object.__setattr__(self, "provenance", "closed-form")

    # -- construction -----------------------------------------------------

    @classmethod
    def from_callable(cls, fn, axes, keep_profile=True):
        axes = _as_axes(axes)
        pts = cls._grid_points_static(axes)
        vals = np.asarray(fn(pts), dtype=np.complex128).reshape(tuple(a.n for a in axes))
        return cls(axes=axes, values=vals, profile=fn if keep_profile else None,
                   provenance="closed-form" if keep_profile else "resampled")

    @classmethod
    def constant(cls, value, axes):
        return cls.from_callable(constant_profile(value), axes)

    # -- geometry ----------------------------------------------------------

    @property
    def ndim(self):
        return len(self.axes)

    @property
    def domain_box(self):
        return tuple((a.lo, a.hi) for a in self.axes)

    @staticmethod
    def _grid_points_static(axes):
        grids = np.meshgrid(*[a.coords() for a in axes], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def grid_points(self):
        return self._grid_points_static(self.axes)

    def support_box(self, floor=SUPPORT_FLOOR):
        """Tight bounding box of samples above ``floor``; None when empty."""
        mask = np.abs(self.values) > floor
        if not mask.any():
            return None
        box = []
        for k, a in enumerate(self.axes):
            other = tuple(j for j in range(self.ndim) if j != k)
            line = mask.any(axis=other) if other else mask
            idx = np.nonzero(line)[0]
            c = a.coords()
            box.append((float(c[idx[0]]), float(c[idx[-1]])))
        return tuple(box)

    # -- evaluation ---------------------------------------------------------

    def _spline_coeffs(self, order):
        key = order
        if key not in self._spline_cache:
            self._spline_cache[key] = ndimage.spline_filter(
                self.values, order=order, mode="grid-constant", output=np.complex128
            )
        return self._spline_cache[key]

    def eval_at(self, points, order=3, force_spline=False):
        """Evaluate at arbitrary points: exact for closed forms, spline else."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.profile is not None and not force_spline:
            return np.asarray(self.profile(points), dtype=np.complex128).reshape(points.shape[0])
        idx = np.empty((self.ndim, points.shape[0]))
        for k, a in enumerate(self.axes):
            idx[k] = (points[:, k] - a.lo) / a.step
        coeffs = self._spline_coeffs(order)
        return ndimage.map_coordinates(
            coeffs, idx, order=order, prefilter=False, mode="grid-constant", cval=0.0
        )

    # -- algebra -------------------------------------------------------------

    def _check_same_grid(self, other):
        if self.axes != other.axes:
            raise ValueError("grids do not match")

    def __mul__(self, other):
        if isinstance(other, GriddedFunction):
            self._check_same_grid(other)
            prof = None
            if self.profile is not None and other.profile is not None:
                f, g = self.profile, other.profile
                prof = lambda pts: np.asarray(f(pts)) * np.asarray(g(pts))
            return GriddedFunction(self.axes, self.values * other.values, profile=prof)
        return GriddedFunction(
            self.axes,
            self.values * other,
            profile=None if self.profile is None else (lambda pts, c=other, f=self.profile: c * np.asarray(f(pts))),
        )

    __rmul__ = __mul__

    def __add__(self, other):
        self._check_same_grid(other)
        prof = None
        if self.profile is not None and other.profile is not None:
            f, g = self.profile, other.profile
            prof = lambda pts: np.asarray(f(pts)) + np.asarray(g(pts))
        return GriddedFunction(self.axes, self.values + other.values, profile=prof)

    def __sub__(self, other):
        self._check_same_grid(other)
        prof = None
        if self.profile is not None and other.profile is not None:
            f, g = self.profile, other.profile
            prof = lambda pts: np.asarray(f(pts)) - np.asarray(g(pts))
        return GriddedFunction(self.axes, self.values - other.values, profile=prof)

    def conj(self):
        prof = None
        if self.profile is not None:
            f = self.profile
            prof = lambda pts: np.conj(np.asarray(f(pts)))
        return GriddedFunction(self.axes, np.conj(self.values), profile=prof)

    def with_values(self, values, provenance="resampled"):
        return GriddedFunction(self.axes, values, provenance=provenance)

    def sup_norm(self):
        return float(np.max(np.abs(self.values)))


# -- closed-form profile factories ---------------------------------------


def constant_profile(value):
    def f(pts):
        pts = np.atleast_2d(pts)
        return np.full(pts.shape[0], value, dtype=np.complex128)

    return f


def gaussian_profile(center, sigma, amplitude=1.0):
    center = np.asarray(center, dtype=float)

    def f(pts):
        pts = np.atleast_2d(pts)
        d2 = np.sum((pts - center) ** 2, axis=-1)
        return amplitude * np.exp(-0.5 * d2 / sigma**2) + 0.0j

    return f


def bump_profile(center, radius, sharpness=1.0, amplitude=1.0):
    """Smooth bump exactly supported on the ball |x - c| < radius.

    exp(sharpness * (1 - 1/(1 - (r/radius)^2))) inside, zero outside; all
    derivatives vanish at the support boundary.
    """
    center = np.asarray(center, dtype=float)

    def f(pts):
        pts = np.atleast_2d(pts)
        q = np.sum((pts - center) ** 2, axis=-1) / radius**2
        out = np.zeros(pts.shape[0], dtype=np.complex128)
        inside = q < 1.0
        out[inside] = amplitude * np.exp(sharpness * (1.0 - 1.0 / (1.0 - q[inside])))
        return out

    return f


def plane_wave_profile(freq, amplitude=1.0):
    freq = np.asarray(freq, dtype=float)

    def f(pts):
        pts = np.atleast_2d(pts)
        return amplitude * np.exp(2j * np.pi * (pts @ freq))

    return f
