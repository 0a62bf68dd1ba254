"""Twisted convolution of Fourier coefficients and mode-sum evaluation.

The bicharacter phase for a skew matrix M couples an input mode k with the
output mode m = k + l through exp(-2*pi*i * k^T M m); the k^T M k term drops
out by skewness, which is what makes the pairwise phase depend only on
(k, m) and keeps the convolution exactly associative on the mode lattice.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

__all__ = ["twisted_convolve", "mode_sum_eval"]


@njit(cache=True, parallel=True)
def _twisted_convolve_2d(fk, gk, f0, f1, g0, g1, mu, keep_f, keep_g):
    F0, F1 = fk.shape
    G0, G1 = gk.shape
    O0 = F0 + G0 - 1
    O1 = F1 + G1 - 1
    out = np.zeros((O0, O1), dtype=np.complex128)
    o0 = f0 + g0
    o1 = f1 + g1
    two_pi_mu = 2.0 * np.pi * mu
    for a in prange(O0):
        m0 = o0 + a
        pa = np.empty(F1, dtype=np.complex128)  # exp(+i 2pi mu k1 m0)
        for j in range(F1):
            ang = two_pi_mu * (f1 + j) * m0
            pa[j] = complex(np.cos(ang), np.sin(ang))
        for b in range(O1):
            m1 = o1 + b
            acc = 0.0 + 0.0j
            for i in range(max(0, a - G0 + 1), min(F0, a + 1)):
                if not keep_f[i]:
                    continue
                k0 = f0 + i
                ang = -two_pi_mu * k0 * m1
                pb = complex(np.cos(ang), np.sin(ang))
                row_f = fk[i]
                row_g = gk[a - i]
                jlo = max(0, b - G1 + 1)
                jhi = min(F1, b + 1)
                s = 0.0 + 0.0j
                for j in range(jlo, jhi):
                    c = row_f[j]
                    if c.real == 0.0 and c.imag == 0.0:
                        continue
                    s += c * pa[j] * row_g[b - j]
                acc += s * pb
            out[a, b] = acc
    return out


@njit(cache=True)
def _convolve_1d(fk, gk):
    F = fk.shape[0]
    G = gk.shape[0]
    out = np.zeros(F + G - 1, dtype=np.complex128)
    for i in range(F):
        c = fk[i]
        if c.real == 0.0 and c.imag == 0.0:
            continue
        for j in range(G):
            out[i + j] += c * gk[j]
    return out


def twisted_convolve(fk, f_off, gk, g_off, theta_eff, prune=0.0):
    """Convolve coefficient arrays with the bicharacter phase of theta_eff.

    Parameters
    ----------
    fk, gk : complex arrays (1d or 2d)
        Fourier coefficients; entry ``[i, j]`` carries mode
        ``(f_off[0] + i, f_off[1] + j)``.
    theta_eff : skew matrix coupling integer modes
        Phase on a pair (p, q) is exp(-2*pi*i p^T theta_eff q); for torus
        functions of period S this is M / S**2.
    prune : float
        Relative magnitude below which input modes are skipped.

    Returns
    -------
    (out, out_off) : coefficients on the sum lattice, exactly associative.
    """
    fk = np.ascontiguousarray(fk, dtype=np.complex128)
    gk = np.ascontiguousarray(gk, dtype=np.complex128)
    theta_eff = np.atleast_2d(np.asarray(theta_eff, dtype=float))
    if not np.array_equal(theta_eff.T, -theta_eff):
        raise ValueError("theta_eff must be skew-symmetric")
    if fk.ndim != gk.ndim:
        raise ValueError("coefficient arrays must have matching rank")
    if fk.ndim == 1:
        # 1x1 skew matrix vanishes: plain convolution
        out = _convolve_1d(fk, gk)
        return out, (f_off[0] + g_off[0],)
    if fk.ndim != 2:
        raise ValueError("only 1d and 2d mode lattices are supported")
    mu = float(theta_eff[0, 1])
    if prune > 0.0:
        fmax = np.max(np.abs(fk))
        keep_f = (np.abs(fk).max(axis=1) > prune * fmax) if fmax > 0 else np.zeros(fk.shape[0], bool)
        fk = np.where(np.abs(fk) > prune * fmax, fk, 0.0) if fmax > 0 else fk
        gmax = np.max(np.abs(gk))
        gk = np.where(np.abs(gk) > prune * gmax, gk, 0.0) if gmax > 0 else gk
    else:
        keep_f = np.ones(fk.shape[0], dtype=bool)
    keep_g = np.ones(gk.shape[0], dtype=bool)
    out = _twisted_convolve_2d(
        fk, gk, int(f_off[0]), int(f_off[1]), int(g_off[0]), int(g_off[1]), mu,
        keep_f, keep_g,
    )
    return out, (f_off[0] + g_off[0], f_off[1] + g_off[1])


def mode_sum_eval(coeffs, off, period, origin, pts):
    """Evaluate sum_m coeffs[m] exp(2 pi i m . (y - origin) / period) at pts.

    Exact nonuniform evaluation of the truncated Fourier series; used to
    unwarp torus-side products back onto fiber grids.
    """
    coeffs = np.asarray(coeffs, dtype=np.complex128)
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    ndim = coeffs.ndim
    if pts.shape[1] != ndim:
        raise ValueError("point dimension does not match coefficient rank")
    phases = []
    for ax in range(ndim):
        modes = off[ax] + np.arange(coeffs.shape[ax])
        ang = 2.0 * np.pi * np.outer(pts[:, ax] - origin[ax], modes) / period
        phases.append(np.exp(1j * ang))
    if ndim == 1:
        return phases[0] @ coeffs
    # chunk over points to bound the (pts x modes) workspace
    out = np.empty(pts.shape[0], dtype=np.complex128)
    step = max(1, 8_000_000 // max(1, coeffs.shape[1]))
    for lo in range(0, pts.shape[0], step):
        hi = min(pts.shape[0], lo + step)
        t = phases[0][lo:hi] @ coeffs
        out[lo:hi] = np.einsum("pm,pm->p", t, phases[1][lo:hi])
    return out
