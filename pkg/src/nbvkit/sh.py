"""Real spherical harmonics up to degree 7 (64 coefficients).

Orthonormal on the unit sphere, without the Condon-Shortley phase. Coefficient
``(l, m)`` lives at index ``l*l + l + m``.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .errors import ContractViolation, RankDeficiencyError

L_MAX = 7
N_COEFFS = (L_MAX + 1) ** 2
HISTORY_KAPPA = 10.0
MAX_CONDITION = 1e6


def sh_index(l: int, m: int) -> int:
    return l * l + l + m


@lru_cache(maxsize=None)
def _norms():
    k = np.zeros(N_COEFFS)
    for l in range(L_MAX + 1):
        for m in range(-l, l + 1):
            am = abs(m)
            k[sh_index(l, m)] = math.sqrt((2 * l + 1) / (4 * math.pi)
                                          * math.factorial(l - am) / math.factorial(l + am))
            if m != 0:
                k[sh_index(l, m)] *= math.sqrt(2.0)
    return k


def sh_basis_batch(dirs) -> np.ndarray:
    """Basis values for unit directions of shape (N, 3) -> (N, 64). No norm check."""
    d = np.atleast_2d(np.asarray(dirs, dtype=float))
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    n = len(d)
    out = np.empty((n, N_COEFFS))
    # (x + iy)^m carries the sin^m(theta) factor; q holds P_l^m / sin^m(theta)
    cos_m = np.ones(n)
    sin_m = np.zeros(n)
    q_mm = np.ones(n)
    k = _norms()
    for m in range(L_MAX + 1):
        if m > 0:
            cos_m, sin_m = cos_m * x - sin_m * y, cos_m * y + sin_m * x
            q_mm = q_mm * (2 * m - 1)
        q_prev2 = None
        q_prev = q_mm
        for l in range(m, L_MAX + 1):
            if l == m:
                q = q_mm
            elif l == m + 1:
                q = z * (2 * m + 1) * q_mm
            else:
                q = ((2 * l - 1) * z * q_prev - (l + m - 1) * q_prev2) / (l - m)
            if l > m:
                q_prev2, q_prev = q_prev, q
            if m == 0:
                out[:, sh_index(l, 0)] = k[sh_index(l, 0)] * q
            else:
                out[:, sh_index(l, m)] = k[sh_index(l, m)] * q * cos_m
                out[:, sh_index(l, -m)] = k[sh_index(l, -m)] * q * sin_m
    return out


def _check_unit(d, tol=1e-9):
    nrm = np.linalg.norm(np.atleast_2d(d), axis=1)
    if np.any(np.abs(nrm - 1.0) > tol):
        raise ContractViolation("direction must be a unit vector")


def sh_basis(d) -> np.ndarray:
    _check_unit(d)
    return sh_basis_batch(np.asarray(d, dtype=float).reshape(1, 3))[0]


def sh_eval(coeffs, d) -> float:
    """Value of the expansion ``coeffs`` in direction ``d``."""
    return float(np.asarray(coeffs, dtype=float) @ sh_basis(d))


def eval_many(coeffs, dirs) -> np.ndarray:
    """Row-wise evaluation: coeffs (N, 64) against dirs (N, 3), or one coeff vector
    against many directions."""
    coeffs = np.asarray(coeffs, dtype=float)
    basis = sh_basis_batch(dirs)
    if coeffs.ndim == 1:
        return basis @ coeffs
    return np.einsum("ij,ij->i", coeffs, basis)


def fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    r = np.sqrt(np.maximum(0.0, 1 - z * z))
    phi = np.pi * (3 - math.sqrt(5)) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _design_pinv(dirs):
    a = sh_basis_batch(dirs)
    s = np.linalg.svd(a, compute_uv=False)
    cond = s[0] / s[-1] if s[-1] > 0 else np.inf
    if len(dirs) < N_COEFFS or cond >= MAX_CONDITION:
        raise RankDeficiencyError(f"design matrix condition number {cond:.3g} (n={len(dirs)})")
    return np.linalg.pinv(a)


def project(dirs, values) -> np.ndarray:
    """Least-squares SH coefficients of samples ``values`` taken at unit ``dirs``."""
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    _check_unit(dirs)
    return _design_pinv(dirs) @ np.asarray(values, dtype=float)


class Projector:
    """Least-squares projection onto a fixed direction set, reused across many functions."""

    def __init__(self, n_dirs: int = 1000):
        self.dirs = fibonacci_sphere(n_dirs)
        self.pinv = _design_pinv(self.dirs)

    def __call__(self, values) -> np.ndarray:
        """values (..., n_dirs) -> coefficients (..., 64)."""
        return np.asarray(values, dtype=float) @ self.pinv.T


@lru_cache(maxsize=8)
def kernel_degree_weights(kappa: float = HISTORY_KAPPA) -> np.ndarray:
    """Funk-Hecke weights of exp(kappa (d.u - 1)) for degrees 0..7."""
    t, w = np.polynomial.legendre.leggauss(96)
    f = np.exp(kappa * (t - 1))
    lam = np.empty(L_MAX + 1)
    for l in range(L_MAX + 1):
        pl = np.polynomial.legendre.Legendre.basis(l)(t)
        lam[l] = 2 * math.pi * np.sum(w * f * pl)
    return np.repeat(lam, [2 * l + 1 for l in range(L_MAX + 1)])


def kernel_coeffs(axes, kappa: float = HISTORY_KAPPA) -> np.ndarray:
    """Exact degree-7 projection of the lobe exp(kappa (d.u - 1)) centred on each unit ``u``."""
    return sh_basis_batch(axes) * kernel_degree_weights(kappa)


def camera_history_feature(x, positions, visible_mask=None, kappa: float = HISTORY_KAPPA) -> np.ndarray:
    """SH encoding of the directions from ``x`` towards past camera positions.

    ``visible_mask`` selects which positions had ``x`` inside their frustum
    (all of them when omitted). No selected camera gives the zero vector.
    """
    return history_features(np.asarray(x, dtype=float).reshape(1, 3), positions,
                            None if visible_mask is None else np.asarray(visible_mask).reshape(-1, 1),
                            kappa)[0]


def history_features(points, positions, visible=None, kappa: float = HISTORY_KAPPA) -> np.ndarray:
    """Batched history features. ``visible`` has shape (n_cams, n_points)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.zeros((len(points), N_COEFFS))
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    for i, c in enumerate(positions):
        u = c - points
        nrm = np.linalg.norm(u, axis=1, keepdims=True)
        sel = nrm[:, 0] > 0
        if visible is not None:
            sel &= np.asarray(visible[i], dtype=bool)
        if sel.any():
            out[sel] += kernel_coeffs(u[sel] / nrm[sel], kappa)
    return out
