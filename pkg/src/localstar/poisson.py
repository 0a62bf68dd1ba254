"""Admissible vertical Poisson structures on trivialized vector bundles.

Given a dual basis of sections and a fibre metric, the shrunken fields are
pullbacks of vertical lifts through the fibrewise radial diffeomorphism in
metric-orthonormal coordinates.  Two presentations of the bivector are
supported: companion fields Y_i = (1/2) sum_j gamma^{ij} X_j, and the
constant-coupling form (1/2) sum Theta^{ij} X_i /\ X_j; both reduce to the
same per-fiber action data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .action import AdmissibleAction

__all__ = [
    "BundleSpec",
    "DualBasisSpec",
    "AdmissibleStructure",
    "build_shrunken_fields",
    "build_theta",
    "as_admissible_action",
    "standard_symplectic_matrix",
]

RECONSTRUCTION_TOL = 1e-12


def standard_symplectic_matrix(d):
    """Skew 2d x 2d block matrix pairing X_i with its companion Y_i."""
    J = np.zeros((2 * d, 2 * d))
    J[:d, d:] = np.eye(d)
    J[d:, :d] = -np.eye(d)
    return J


def _as_matrix_fn(h, n):
    if callable(h):
        return h
    h = np.asarray(h, dtype=float)
    if h.shape != (n, n):
        raise ValueError("fibre metric must be n x n")
    return lambda p, h=h: h


def _as_vector_fn(v, n):
    if callable(v):
        return v
    v = np.asarray(v, dtype=float).reshape(n)
    return lambda p, v=v: v


def _as_scalar_fn(g):
    if callable(g):
        return g
    g = float(g)
    return lambda p, g=g: g


@dataclass(frozen=True)
class BundleSpec:
    """Trivialized rank-n bundle over an m-dimensional base sample.

    The fibre metric may be constant or base-dependent; the neighbourhood
    radius fixes the fibre balls that must contain the unit metric ball.
    """

    base_dim: int
    fiber_dim: int
    metric: object = None
    u_radius: float = 1.5
    base_sample: np.ndarray = None

    def __post_init__(self):
        metric = self.metric if self.metric is not None else np.eye(self.fiber_dim)
        object.__setattr__(self, "metric", _as_matrix_fn(metric, self.fiber_dim))
        sample = self.base_sample
        if sample is None:
            sample = np.zeros((1, max(self.base_dim, 1)))[:, : self.base_dim]
        sample = np.atleast_2d(np.asarray(sample, dtype=float))
        if self.base_dim == 0:
            sample = np.zeros((1, 0))
        elif sample.shape[1] != self.base_dim:
            raise ValueError("base sample points must have base_dim coordinates")
        object.__setattr__(self, "base_sample", sample)
        for p in sample:
            h = self.metric_at(p)
            w = np.linalg.eigvalsh(h)
            if w.min() <= 0.0:
                raise ValueError("fibre metric is not positive definite on the base sample")
            # the unit h-ball has Euclidean radius 1/sqrt(lambda_min)
            if 1.0 / np.sqrt(w.min()) > self.u_radius + 1e-12:
                raise ValueError("unit metric ball does not fit inside the neighbourhood")

    def metric_at(self, p):
        return np.asarray(self.metric(np.asarray(p, dtype=float)), dtype=float)


@dataclass(frozen=True)
class DualBasisSpec:
    """Sections e_i with covectors f^i reconstructing every fibre vector."""

    sections: tuple
    covectors: tuple
    fiber_dim: int

    def __post_init__(self):
        if len(self.sections) != len(self.covectors):
            raise ValueError("need as many covectors as sections")
        object.__setattr__(
            self, "sections", tuple(_as_vector_fn(e, self.fiber_dim) for e in self.sections)
        )
        object.__setattr__(
            self, "covectors", tuple(_as_vector_fn(f, self.fiber_dim) for f in self.covectors)
        )

    @classmethod
    def canonical(cls, n):
        eye = np.eye(n)
        return cls(sections=tuple(eye[:, i] for i in range(n)),
                   covectors=tuple(eye[i] for i in range(n)),
                   fiber_dim=n)

    @property
    def d(self):
        return len(self.sections)

    def section_matrix(self, p):
        """n x d matrix [e_1(p) ... e_d(p)]."""
        return np.stack([np.asarray(e(p), dtype=float) for e in self.sections], axis=1)

    def covector_matrix(self, p):
        return np.stack([np.asarray(f(p), dtype=float) for f in self.covectors], axis=0)

    def reconstruction_residual(self, p):
        E = self.section_matrix(p)
        F = self.covector_matrix(p)
        return float(np.max(np.abs(E @ F - np.eye(self.fiber_dim))))

    def validate(self, base_sample):
        for p in np.atleast_2d(base_sample):
            res = self.reconstruction_residual(p)
            if res > RECONSTRUCTION_TOL:
                raise ValueError(
                    f"dual basis reconstruction residual {res:.3e} exceeds {RECONSTRUCTION_TOL}"
                )


@dataclass(frozen=True)
class AdmissibleStructure:
    """Vertical bivector presented through commuting shrunken fields.

    ``coupling_at(p)`` is the effective skew D x D matrix pairing the listed
    fields; ``theta`` of the constant-coupling presentation or the symplectic
    pairing of the (X_i, Y_i) presentation.  All bivector components live in
    fibre coordinates; base components vanish structurally.
    """

    bundle: BundleSpec
    basis: DualBasisSpec
    direction_fn: object          # p -> n x D image-direction matrix
    coupling_fn: object           # p -> skew D x D
    hbar: float = 1.0
    shrink_radius: float = 0.5    # theta equals the vertical lift inside this h-ball
    kind: str = "theta"
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def action_at(self, p):
        """Per-fiber admissible action realizing the structure over p."""
        key = tuple(np.asarray(p, dtype=float).ravel())
        if key not in self._cache:
            self._cache[key] = AdmissibleAction(
                dimension=self.bundle.fiber_dim,
                directions=self.direction_fn(p),
                theta=self.coupling_fn(p),
                metric=self.bundle.metric_at(p),
                hbar=self.hbar,
            )
        return self._cache[key]

    def eval_theta(self, p, x):
        """Skew n x n bivector matrix at fibre point x over base point p."""
        action = self.action_at(p)
        x = np.asarray(x, dtype=float)
        V = np.stack(
            [action.field_value(i + 1, x[None, :])[0] for i in range(action.d)], axis=1
        )
        return self.hbar * (V @ self.coupling_fn(p) @ V.T)

    def field_value(self, p, i, x):
        return self.action_at(p).field_value(i, np.atleast_2d(x))

    def support_box(self, p):
        return self.action_at(p).support_box()


def build_shrunken_fields(basis: DualBasisSpec, bundle: BundleSpec):
    """Commuting vertical fields agreeing with the lifted sections inside
    the half metric ball and supported in the unit metric ball.

    Returns the structure with zero coupling; combine with
    :func:`build_theta` or :func:`as_admissible_action` to install a
    bivector.
    """
    if basis.fiber_dim != bundle.fiber_dim:
        raise ValueError("basis and bundle fibre dimensions differ")
    basis.validate(bundle.base_sample)
    d = basis.d
    return AdmissibleStructure(
        bundle=bundle,
        basis=basis,
        direction_fn=basis.section_matrix,
        coupling_fn=lambda p, d=d: np.zeros((d, d)),
        kind="fields",
    )


def build_theta(gamma, basis: DualBasisSpec, bundle: BundleSpec, hbar=1.0):
    """Structure with companions Y_i = (1/2) sum_j gamma^{ij}(p) X_j.

    gamma is a d x d skew matrix of constants or scalar callables of the
    base point; theta = sum_i X_i /\\ Y_i equals the vertical lift of
    (1/2) gamma^{ij} e_i /\\ e_j on the half metric ball.
    """
    if basis.fiber_dim != bundle.fiber_dim:
        raise ValueError("basis and bundle fibre dimensions differ")
    basis.validate(bundle.base_sample)
    d = basis.d
    gamma = np.asarray(gamma, dtype=object) if not callable(gamma) else gamma
    if callable(gamma):
        gamma_fn = gamma
    else:
        if gamma.shape != (d, d):
            raise ValueError("gamma must be d x d")
        entries = [[_as_scalar_fn(gamma[i][j]) for j in range(d)] for i in range(d)]
        gamma_fn = lambda p: np.array([[entries[i][j](p) for j in range(d)] for i in range(d)])
    for p in bundle.base_sample:
        g = np.asarray(gamma_fn(p), dtype=float)
        if not np.allclose(g.T, -g, atol=1e-14):
            raise ValueError("gamma must be skew-symmetric at every base point")

    # fields (X_1..X_d, Y_1..Y_d) with the standard symplectic pairing give
    # theta = sum_i X_i /\ Y_i = (1/2) gamma^{ij} X_i /\ X_j
    def directions(p):
        E = basis.section_matrix(p)
        g = np.asarray(gamma_fn(p), dtype=float)
        Y = 0.5 * (E @ g.T)
        return np.concatenate([E, Y], axis=1)

    return AdmissibleStructure(
        bundle=bundle,
        basis=basis,
        direction_fn=directions,
        coupling_fn=lambda p, d=d: standard_symplectic_matrix(d),
        hbar=hbar,
        kind="theta",
    )


def as_admissible_action(structure: AdmissibleStructure, theta, hbar=1.0):
    """Constant-coupling presentation theta = (1/2) Theta^{ij} X_i /\\ X_j."""
    theta = np.asarray(theta, dtype=float)
    d = structure.basis.d
    if theta.shape != (d, d):
        raise ValueError("Theta must be d x d for the basis fields")
    if not np.array_equal(theta.T, -theta):
        raise ValueError("Theta matrix must be skew-symmetric")
    return AdmissibleStructure(
        bundle=structure.bundle,
        basis=structure.basis,
        direction_fn=structure.basis.section_matrix,
        coupling_fn=lambda p, theta=theta: theta,
        hbar=hbar,
        kind="admissible",
    )
