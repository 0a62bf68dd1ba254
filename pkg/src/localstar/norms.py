"""Deformed seminorm estimation through the left-regular representation.

For function algebras the Hilbert-module operator norm scalarizes: at each
base point q the orbit symbol v -> a(orbit_q(v)) acts on L^2 of the group
by the translation-twisted product, and the seminorm over a compactum is
the sup of the scalar operator norms over sampled points.  Truncation to a
finite Fourier window and point sampling both bias the estimate downward,
so estimates are compared against lower bounds and convergence trends.

Orbit symbols of points inside the moving region are translates of a
single centered symbol; translating a symbol conjugates the truncated
matrix by a diagonal unitary, so the centered representative is used
verbatim (this realizes the isometry of the action at the matrix level).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .action import AdmissibleAction, OrbitMap
from .gridfn import GriddedFunction

__all__ = [
    "ModuleVectorBasis",
    "SeminormFamily",
    "orbit_symbol",
    "left_operator_matrix",
    "deformed_seminorm",
    "cstar_identity_residual",
    "restriction_compatibility",
    "hermite_multiplication_norm",
]

GRAM_CONDITION_BOUND = 1e8


@dataclass(frozen=True)
class ModuleVectorBasis:
    """Fourier modes on a group-side torus, ordered by |m|^2 then lexicographically.

    Parameters
    ----------
    group_dim : int
        Dimension d of the acting group.
    size : float
        Torus edge length on the group side.
    count : int
        Number of retained basis functions (nested truncation).
    grid : int
        Samples per axis used to take symbol Fourier coefficients.
    """

    group_dim: int
    size: float
    count: int
    grid: int = 256

    def __post_init__(self):
        modes = self._mode_table(self.group_dim, self.count)
        max_mode = int(np.max(np.abs(modes)))
        if self.grid < 4 * max_mode + 4:
            raise ValueError("symbol grid too coarse for the requested mode window")
        object.__setattr__(self, "_modes", modes)

    @staticmethod
    def _mode_table(d, count):
        radius = 1
        while (2 * radius + 1) ** d < count:
            radius += 1
        axes = np.arange(-radius, radius + 1)
        grids = np.meshgrid(*([axes] * d), indexing="ij")
        flat = np.stack([g.ravel() for g in grids], axis=-1)
        order = np.lexsort(tuple(flat[:, k] for k in range(d - 1, -1, -1)))
        flat = flat[order]
        key = np.sum(flat**2, axis=1)
        sel = np.argsort(key, kind="stable")[:count]
        return flat[sel]

    @property
    def modes(self):
        return self._modes

    def truncate(self, count):
        if count > self.count:
            raise ValueError("cannot grow a basis by truncation")
        return ModuleVectorBasis(self.group_dim, self.size, count, self.grid)

    def grid_points(self):
        step = self.size / self.grid
        coords = -0.5 * self.size + step * np.arange(self.grid)
        if self.group_dim == 1:
            return coords[:, None]
        grids = np.meshgrid(*([coords] * self.group_dim), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)


def orbit_symbol(a: GriddedFunction, q, action: AdmissibleAction, basis: ModuleVectorBasis):
    """Centered orbit symbol of a at q, sampled on the basis grid.

    Fixed points give the constant a(q).  Moving points give the translate
    v -> a(orbit_q(v + w_q)) with w_q carrying the orbit to the fiber
    origin; since translation conjugates the truncated matrix by a diagonal
    unitary, the centered representative a(warp^{-1}(E v)) is sampled
    directly (never through w_q, whose cancellation is catastrophic for
    points near the sphere).
    """
    q = np.asarray(q, dtype=float)
    orbit = OrbitMap(action, q)
    v = basis.grid_points()
    if orbit.is_fixed:
        val = a.eval_at(q[None, :])[0]
        return np.full((basis.grid,) * basis.group_dim, val, dtype=np.complex128)
    E_w = action.warped_directions
    if np.linalg.matrix_rank(E_w, tol=1e-10) < action.dimension:
        # orbit cannot reach the fiber origin: sample around q instead
        vals = a.eval_at(orbit(v))
        return vals.reshape((basis.grid,) * basis.group_dim)
    A_inv = np.linalg.inv(action.coord_map)
    pts = action.diffeo.apply_inverse(v @ E_w.T) @ A_inv.T
    vals = a.eval_at(pts)
    return vals.reshape((basis.grid,) * basis.group_dim)


def left_operator_matrix(a, q, action, basis: ModuleVectorBasis):
    """Compression of the left-regular operator to the basis window.

    Entries <b_i, symbol * b_j> with the translation-twisted product on the
    group torus; the bicharacter couples integer modes through
    hbar * Theta / size^2.
    """
    sym = orbit_symbol(a, q, action, basis)
    coeffs = np.fft.fftn(sym) / sym.size
    theta_eff = (action.hbar / basis.size**2) * action.theta
    modes = basis.modes
    diff = modes[:, None, :] - modes[None, :, :]
    phase = np.exp(-2j * np.pi * np.einsum("ija,ab,jb->ij", diff, theta_eff, modes))
    idx = tuple(np.moveaxis(diff % basis.grid, -1, 0))
    return coeffs[idx] * phase


def _sample_lattice(a: GriddedFunction, box, density):
    """Deterministic sub-lattice of the fiber grid inside the box.

    The lattice is global (stride fixed by the grid, not by the box), so
    nested boxes produce nested samples and estimates stay monotone.
    """
    pts = a.grid_points()
    stride = max(1, a.axes[0].n // density)
    keep = np.ones(pts.shape[0], dtype=bool)
    mesh = np.unravel_index(np.arange(pts.shape[0]), a.values.shape)
    for ax_idx in mesh:
        keep &= (ax_idx % stride) == 0
    for k, (lo, hi) in enumerate(box):
        keep &= (pts[:, k] >= lo) & (pts[:, k] <= hi)
    return pts[keep]


def deformed_seminorm(a, box, action, basis, density=16, return_diagnostics=False):
    """Estimate of the deformed seminorm over the compact box.

    Max over sampled points of the largest singular value of the truncated
    left-regular matrix; both the truncation and the sampling only decrease
    the value, so this is a lower-bounded estimator.
    """
    pts = _sample_lattice(a, box, density)
    if pts.shape[0] == 0:
        return (0.0, {}) if return_diagnostics else 0.0
    best = 0.0
    best_q = None
    r = action.h_norm(pts)
    moving = r < 1.0
    seen_moving = False
    for q, m in zip(pts, moving):
        if m:
            # all moving points share the singular values of the centered
            # symbol; evaluate once
            if seen_moving:
                continue
            seen_moving = True
        mat = left_operator_matrix(a, q, action, basis)
        top = float(np.linalg.svd(mat, compute_uv=False)[0])
        if top > best:
            best = top
            best_q = q
    if return_diagnostics:
        curve = {}
        for count in (max(4, basis.count // 4), max(6, basis.count // 2), basis.count):
            sub = basis.truncate(count)
            vals = []
            seen = False
            for q, m in zip(pts, moving):
                if m:
                    if seen:
                        continue
                    seen = True
                vals.append(float(np.linalg.svd(left_operator_matrix(a, q, action, sub), compute_uv=False)[0]))
            curve[count] = max(vals) if vals else 0.0
        return best, {"argmax_point": best_q, "truncation_curve": curve, "samples": int(pts.shape[0])}
    return best


def cstar_identity_residual(a, box, action, basis, engine, density=16):
    """Relative defect of ||a* x a|| = ||a||^2 under the estimator."""
    norm_a = deformed_seminorm(a, box, action, basis, density)
    if norm_a < 1e-12:
        raise ValueError("seminorm of a is degenerate")
    astar_a = engine.deformed_product(a.conj(), a)
    norm_aa = deformed_seminorm(astar_a, box, action, basis, density)
    return abs(norm_aa - norm_a**2) / norm_a**2


def restriction_compatibility(a, inner_box, outer_box, action, basis, density=16):
    """Residual between the seminorm of the restriction and the seminorm.

    The coherence maps of the compacta lattice are restrictions; cropping
    the samples to the inner box and estimating there must agree with the
    inner-box seminorm of the full function whenever the orbit closure of
    the support stays inside.
    """
    for (li, hi_), (lo, ho) in zip(inner_box, outer_box):
        if li < lo or hi_ > ho:
            raise ValueError("inner box must sit inside the outer box")
    pts = a.grid_points()
    mask = np.ones(pts.shape[0], dtype=bool)
    for k, (lo, hi_) in enumerate(inner_box):
        mask &= (pts[:, k] >= lo) & (pts[:, k] <= hi_)
    cropped_vals = np.where(mask.reshape(a.values.shape), a.values, 0.0)
    cropped = GriddedFunction(a.axes, cropped_vals)
    # compare through the same sample-based route (identical boxes must
    # agree bitwise, independent of closed-form provenance)
    plain = GriddedFunction(a.axes, a.values)
    lhs = deformed_seminorm(cropped, inner_box, action, basis, density)
    rhs = deformed_seminorm(plain, inner_box, action, basis, density)
    return abs(lhs - rhs)


@dataclass
class SeminormFamily:
    """Nested compacta with their seminorm estimates (inverse-limit ledger)."""

    boxes: list
    action: AdmissibleAction
    basis: ModuleVectorBasis
    density: int = 16
    estimates: dict = field(default_factory=dict)

    def __post_init__(self):
        for small, big in zip(self.boxes, self.boxes[1:]):
            for (ls, hs), (lb, hb) in zip(small, big):
                if ls < lb or hs > hb:
                    raise ValueError("compacta must be nested")

    def estimate(self, a: GriddedFunction):
        out = []
        for box in self.boxes:
            key = tuple(map(tuple, box))
            val = deformed_seminorm(a, box, self.action, self.basis, self.density)
            self.estimates.setdefault(key, {})[id(a)] = val
            out.append(val)
        return out

    def monotone(self, values, tol=1e-9):
        return all(b >= a - tol for a, b in zip(values, values[1:]))


def hermite_multiplication_norm(symbol_vals, grid_pts, count, width=1.0):
    """Cross-check basis: largest generalized singular value of
    multiplication by the symbol in a Hermite frame under quadrature.

    One-dimensional, commutative case; the Gram matrix of the sampled
    frame must stay better conditioned than the documented bound.
    """
    v = grid_pts[:, 0]
    dv = v[1] - v[0]
    funcs = []
    h_prev = np.ones_like(v)
    h_curr = 2 * v / width
    for k in range(count):
        if k == 0:
            h = h_prev
        elif k == 1:
            h = h_curr
        else:
            h_prev, h_curr = h_curr, 2 * (v / width) * h_curr - 2 * (k - 1) * h_prev
            h = h_curr
        fn = h * np.exp(-0.5 * (v / width) ** 2)
        funcs.append(fn / np.sqrt(np.sum(np.abs(fn) ** 2) * dv))
    B = np.stack(funcs, axis=1)
    gram = (B.conj().T @ B) * dv
    cond = np.linalg.cond(gram)
    if cond > GRAM_CONDITION_BOUND:
        raise ValueError(f"Hermite Gram condition {cond:.2e} exceeds bound")
    M = (B.conj().T @ (symbol_vals[:, None] * B)) * dv
    chol = np.linalg.cholesky(gram)
    white = np.linalg.solve(chol, np.linalg.solve(chol, M.conj().T).conj().T)
    return float(np.linalg.svd(white, compute_uv=False)[0])
