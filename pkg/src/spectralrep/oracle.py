"""Exact truncated SVD of the normalized operator and subspace comparison metrics."""

import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import subspace_angles

from .dist import t_matrix
from .errors import RankDeficient, RankOutOfBounds

CLUSTER_GAP = 1e-9


@dataclass(frozen=True)
class SpectralBasis:
    """Top-``d`` singular triplets of a normalized operator.

    ``u`` and ``v`` have orthonormal columns.  Each column of ``u`` has its
    first nonzero entry positive and the matching ``v`` column is flipped with
    it, so the basis serializes deterministically.
    """

    sigma: np.ndarray
    u: np.ndarray
    v: np.ndarray

    @property
    def d(self):
        return self.sigma.size


@dataclass(frozen=True)
class SubspaceMetric:
    principal_angles: np.ndarray
    chordal_distance: float

    @property
    def max_angle(self):
        return float(self.principal_angles[-1]) if self.principal_angles.size else 0.0


def _as_t(t):
    return t.t if hasattr(t, "t") else np.asarray(t, dtype=float)


def _check_rank(d, shape):
    if not 1 <= d <= min(shape):
        raise RankOutOfBounds(f"rank {d} outside [1, {min(shape)}]")


def _fix_signs(u, v, tol=1e-12):
    u = u.copy()
    v = v.copy()
    for c in range(u.shape[1]):
        nz = np.flatnonzero(np.abs(u[:, c]) > tol)
        if nz.size and u[nz[0], c] < 0:
            u[:, c] *= -1
            v[:, c] *= -1
    return u, v


def svd_truncated(t, d):
    """Return the top-``d`` singular triplets of ``t``.

    Parameters
    ----------
    t : TMatrix or ndarray
    d : int
        Number of triplets kept, ``1 <= d <= min(n, m)``.
    """
    t = _as_t(t)
    _check_rank(d, t.shape)
    u, s, vt = np.linalg.svd(t, full_matrices=False)
    u, v = _fix_signs(u[:, :d], vt[:d].T)
    return SpectralBasis(s[:d].copy(), u, v)


def singular_values(t):
    return np.linalg.svd(_as_t(t), compute_uv=False)


def eckart_young_tail(t, d):
    """Optimal rank-``d`` squared Frobenius residual ``sum_{i>d} sigma_i^2``."""
    t = _as_t(t)
    _check_rank(d, t.shape)
    s = singular_values(t)
    return float(np.sum(s[d:] ** 2))


def numerical_rank(t, tol=1e-8):
    return int(np.sum(singular_values(t) > tol))


def principal_angles(A, B, weight=None):
    """Principal angles between the column spans of ``diag(w) A`` and ``diag(w) B``.

    Returns
    -------
    SubspaceMetric
        Angles in ascending order and the chordal distance
        ``sqrt(sum sin^2)``.

    Raises
    ------
    RankDeficient
        If a weighted input has smallest singular value below ``1e-10``
        times its largest.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if B.ndim == 1:
        B = B[:, None]
    if weight is not None:
        w = np.asarray(weight, dtype=float)[:, None]
        A = w * A
        B = w * B
    for M in (A, B):
        s = np.linalg.svd(M, compute_uv=False)
        if s.size == 0 or s[-1] < 1e-10 * s[0] or s[0] == 0:
            raise RankDeficient("weighted basis is numerically rank deficient")
    ang = np.sort(subspace_angles(A, B))
    ang = np.clip(ang, 0.0, np.pi / 2)
    return SubspaceMetric(ang, float(np.sqrt(np.sum(np.sin(ang) ** 2))))


def fit_residual(j, phi, psi):
    """Squared Frobenius error ``||t - diag(sqrt px) phi psi^T diag(sqrt py)||^2``."""
    tm = t_matrix(j)
    phi = np.asarray(phi, dtype=float).reshape(j.shape[0], -1)
    psi = np.asarray(psi, dtype=float).reshape(j.shape[1], -1)
    approx = (tm.sqrt_px[:, None] * phi) @ (tm.sqrt_py[:, None] * psi).T
    return float(np.sum((tm.t - approx) ** 2))


def oracle_factors(j, d):
    """Factors ``phi, psi`` with ``phi psi^T`` the best rank-``d`` fit of the ratio.

    ``phi = diag(px)^{-1/2} U diag(sigma)^{1/2}`` and likewise for ``psi``.
    """
    tm = t_matrix(j)
    b = svd_truncated(tm, d)
    rs = np.sqrt(b.sigma)
    return b.u * rs / tm.sqrt_px[:, None], b.v * rs / tm.sqrt_py[:, None]


def oracle_angle(j, phi, d=None, side="x"):
    """Principal angles between the weighted span of ``phi`` and the oracle top-``d`` span.

    ``side`` selects the row domain (``"x"``, compared with ``u``) or the
    column domain (``"y"``, compared with ``v``).
    """
    phi = np.asarray(phi, dtype=float)
    d = phi.shape[1] if d is None else d
    tm = t_matrix(j)
    b = svd_truncated(tm, d)
    if side == "x":
        w, basis = tm.sqrt_px, b.u
    else:
        w, basis = tm.sqrt_py, b.v
    return principal_angles(phi, basis / w[:, None], weight=w)


def basis_to_json(b):
    return json.dumps({"sigma": b.sigma.tolist(), "u": b.u.tolist(), "v": b.v.tolist()}, indent=1)


def basis_from_json(text):
    o = json.loads(text)
    return SpectralBasis(np.array(o["sigma"], dtype=float), np.array(o["u"], dtype=float), np.array(o["v"], dtype=float))
