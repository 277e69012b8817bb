"""Classical component analyses read as spectral decompositions: PCA, MDS,
Laplacian embedding, locality preserving projections, CCA, NCA and SNE.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import pdist, squareform

from .dist import JointTable, make_rng, t_matrix
from .errors import Disconnected, NegativeEigenvalueWarning, RankOutOfBounds, SingularGram, ZeroVector
from .linobj import LossReport
from .optim import minimize
from .oracle import svd_truncated

RIDGE = 1e-10
COND_LIMIT = 1e12


@dataclass(frozen=True)
class PointCloud:
    """Data matrix ``x`` (n x p) with optional nonnegative row weights."""

    x: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError("point cloud must be a nonempty 2-D array")
        if not np.all(np.isfinite(x)):
            raise ValueError("point cloud has non-finite entries")
        object.__setattr__(self, "x", x)

    @property
    def w(self):
        n = self.x.shape[0]
        if self.weights is None:
            return np.full(n, 1.0 / n)
        w = np.asarray(self.weights, dtype=float)
        return w / w.sum()


@dataclass(frozen=True)
class NeighborGraph:
    """Symmetric nonnegative weights ``w`` and degrees ``d = w 1``."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError("graph weights must be square")
        if np.any(w < 0) or np.max(np.abs(w - w.T)) > 1e-12:
            raise ValueError("graph weights must be symmetric and nonnegative")
        object.__setattr__(self, "w", w)

    @property
    def d(self):
        return self.w.sum(axis=1)


def epsilon_graph(pc, epsilon, bandwidth=None):
    """Gaussian weights ``exp(-||xi - xj||^2 / (2 h^2))`` kept where the distance is at most ``epsilon``.

    The bandwidth ``h`` defaults to the median pairwise distance.
    """
    dist = squareform(pdist(pc.x))
    if bandwidth is None:
        off = dist[np.triu_indices(len(dist), 1)]
        bandwidth = float(np.median(off)) if off.size and np.median(off) > 0 else 1.0
    w = np.exp(-(dist**2) / (2 * bandwidth**2))
    w[dist > epsilon] = 0.0
    return NeighborGraph(w)


def _top_eigh(M, d, B=None):
    vals, vecs = eigh(M) if B is None else eigh(M, B)
    order = np.argsort(-vals, kind="stable")[:d]
    vecs = vecs[:, order]
    # sign convention: largest-magnitude entry of each column positive
    idx = np.argmax(np.abs(vecs), axis=0)
    vecs = vecs * np.sign(vecs[idx, np.arange(vecs.shape[1])])
    return vals[order], vecs


def pca(pc, d):
    """Top-``d`` eigenpairs of the weighted centered covariance.

    Returns
    -------
    components : ndarray, shape (p, d)
    eigenvalues : ndarray, shape (d,)
        Descending.
    """
    p = pc.x.shape[1]
    if not 1 <= d <= p:
        raise RankOutOfBounds(f"d={d} must lie in [1, {p}]")
    w = pc.w
    xc = pc.x - w @ pc.x
    cov = (w[:, None] * xc).T @ xc
    vals, vecs = _top_eigh(cov, d)
    return vecs, vals


def pca_scores(pc, d):
    """Centered data projected on the top-``d`` components."""
    comps, _ = pca(pc, d)
    return (pc.x - pc.w @ pc.x) @ comps


def mds(pc, d, return_eigenvalues=False):
    """Classical scaling of ``H K H`` with ``K = -(squared distances)``.

    The embedding is the top-``d`` eigenvectors scaled by the square root of
    their eigenvalues.  Coordinates with a negative eigenvalue are dropped
    with a :class:`NegativeEigenvalueWarning`.
    """
    return mds_dissimilarity(squareform(pdist(pc.x, "sqeuclidean")), d, return_eigenvalues)


def mds_dissimilarity(D2, d, return_eigenvalues=False):
    """Classical scaling from a symmetric matrix of squared dissimilarities.

    Non-Euclidean dissimilarities can give negative retained eigenvalues.
    Their coordinates are dropped with a :class:`NegativeEigenvalueWarning`,
    so the embedding may have fewer than ``d`` columns.
    """
    D2 = np.asarray(D2, dtype=float)
    n = D2.shape[0]
    if D2.shape != (n, n) or np.max(np.abs(D2 - D2.T)) > 1e-12:
        raise ValueError("dissimilarities must form a symmetric matrix")
    if not 1 <= d <= max(n - 1, 1):
        raise RankOutOfBounds(f"d={d} must lie in [1, {max(n - 1, 1)}]")
    H = np.eye(n) - 1.0 / n
    B = -H @ D2 @ H
    vals, vecs = _top_eigh(0.5 * (B + B.T), d)
    scale = max(1.0, float(np.max(np.abs(vals))))
    neg = vals < -1e-10 * scale
    if np.any(neg):
        warnings.warn(f"{int(neg.sum())} retained eigenvalue(s) negative; coordinates dropped",
                      NegativeEigenvalueWarning, stacklevel=2)
    vals_k = np.clip(vals[~neg], 0.0, None)
    emb = vecs[:, ~neg] * np.sqrt(vals_k)
    return (emb, vals) if return_eigenvalues else emb


def laplacian_embed(g, d, return_eigenvalues=False):
    """Top-``d`` eigenvectors of the random-walk matrix ``D^{-1} W``.

    The problem is solved through the similar symmetric matrix
    ``D^{-1/2} W D^{-1/2}``; eigenvectors map back by ``D^{-1/2}``.  The
    first eigenvalue is 1 with a constant eigenvector.

    Raises
    ------
    Disconnected
        If the support of the graph has more than one component, so that
        eigenvalue 1 is repeated.
    """
    deg = g.d
    support = deg > 0
    n_sup = int(support.sum())
    if not 1 <= d <= n_sup:
        raise RankOutOfBounds(f"d={d} must lie in [1, {n_sup}]")
    ncomp, _ = connected_components(g.w[np.ix_(support, support)] > 0, directed=False)
    if ncomp > 1:
        raise Disconnected(f"graph support has {ncomp} components")
    w = g.w[np.ix_(support, support)]
    s = 1.0 / np.sqrt(deg[support])
    vals, u = _top_eigh(s[:, None] * w * s[None, :], d)
    y = s[:, None] * u
    y = y / np.linalg.norm(y, axis=0)
    emb = np.zeros((len(deg), d))
    emb[support] = y
    return (emb, vals) if return_eigenvalues else emb


def lpp(pc, g, d, return_eigenvalues=False):
    """Linear projections maximizing ``tr(V X^T D^{-1} W X V^T)`` under ``E[V x x^T V^T] = I``.

    The trace depends only on the symmetric part of ``X^T D^{-1} W X``, so
    the problem is the symmetric generalized eigenproblem of that part
    against ``(1/n) X^T X``.  A ridge of ``1e-10`` is added, with a
    :class:`SingularGram` warning, only when that matrix is ill-conditioned.

    Returns
    -------
    projection : ndarray, shape (p, d)
        Columns are orthonormal under ``(1/n) X^T X``.
    """
    X = pc.x
    n, p = X.shape
    if not 1 <= d <= p:
        raise RankOutOfBounds(f"d={d} must lie in [1, {p}]")
    deg = g.d
    if np.any(deg <= 0):
        raise Disconnected("graph has isolated points")
    A = X.T @ (g.w / deg[:, None]) @ X
    A = 0.5 * (A + A.T)
    B = X.T @ X / n
    ev = np.linalg.eigvalsh(B)
    if ev[0] <= ev[-1] / COND_LIMIT:
        warnings.warn("ill-conditioned data Gram matrix; ridge applied", SingularGram, stacklevel=2)
        B = B + RIDGE * np.eye(p)
    vals, V = _top_eigh(A, d, B)
    return (V, vals) if return_eigenvalues else V


def _inv_sqrt(C):
    ev, U = np.linalg.eigh(C)
    if ev[0] <= ev[-1] / COND_LIMIT:
        warnings.warn("ill-conditioned covariance; ridge applied", SingularGram, stacklevel=3)
    ev = ev + RIDGE
    return (U / np.sqrt(ev)) @ U.T


def cca(data, d):
    """Canonical correlations and transforms.

    Parameters
    ----------
    data : JointTable or tuple of PointCloud
        A finite joint table, or paired clouds with equal row counts.

    Returns
    -------
    a, b : ndarray
        For a table, the feature tables ``phi`` (n x d) and ``mu`` (m x d)
        with unit second moments.  For clouds, linear maps (p x d, q x d).
    correlations : ndarray, shape (d,)
        Descending.  For a table these are the singular values after the
        trivial first one.
    """
    if isinstance(data, JointTable):
        n, m = data.shape
        if not 1 <= d <= min(n, m) - 1:
            raise RankOutOfBounds(f"d={d} must lie in [1, {min(n, m) - 1}]")
        tm = t_matrix(data)
        basis = svd_truncated(tm.t, d + 1)
        a = basis.u[:, 1:] / tm.sqrt_px[:, None]
        b = basis.v[:, 1:] / tm.sqrt_py[:, None]
        return a, b, basis.sigma[1:]
    px_cloud, py_cloud = data
    X, Y = px_cloud.x, py_cloud.x
    if X.shape[0] != Y.shape[0]:
        raise ValueError("paired clouds must have equal row counts")
    if not 1 <= d <= min(X.shape[1], Y.shape[1]):
        raise RankOutOfBounds("d exceeds the data dimension")
    n = X.shape[0]
    Xc = X - X.mean(axis=0)
    Yc = Y - Y.mean(axis=0)
    Wx = _inv_sqrt(Xc.T @ Xc / n)
    Wy = _inv_sqrt(Yc.T @ Yc / n)
    U, s, Vt = np.linalg.svd(Wx @ (Xc.T @ Yc / n) @ Wy)
    return Wx @ U[:, :d], Wy @ Vt.T[:, :d], np.clip(s[:d], 0.0, 1.0)


# ---------------------------------------------------------------------------
# neighbor-embedding losses


def _ranking_sum(P, S, k=None, mask=None):
    """``-sum P s + sum_x px log(candidate mass)`` and ``dV/dS``.

    With ``k=None`` the candidate mass is ``sum_j exp(s(x, j))`` over the
    allowed candidates.  With an integer ``k`` it is
    ``exp(s(x, x')) + (k - 1) mean_j exp(s(x, j))`` in expectation over
    positives.
    """
    allowed = np.ones_like(S, dtype=bool) if mask is None else mask
    px = P.sum(axis=1)
    mx = np.max(np.where(allowed, S, -np.inf), axis=1, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    E = np.where(allowed, np.exp(S - mx), 0.0)
    if k is None:
        tot = E.sum(axis=1)
        live = px > 0
        value = -float(np.sum(P * np.where(allowed, S, 0.0)))
        value += float(np.sum(px[live] * (np.log(tot[live]) + mx[live, 0])))
        G = -P + px[:, None] * E / np.where(tot > 0, tot, 1.0)[:, None]
        return value, G
    cnt = allowed.sum(axis=1, keepdims=True)
    mean = E.sum(axis=1, keepdims=True) / cnt
    den = np.exp(S - mx) + (k - 1) * mean
    A = np.where(P > 0, P / den, 0.0)
    value = -float(np.sum(P * S)) + float(np.sum(np.where(P > 0, P * (np.log(np.where(P > 0, den, 1.0)) + mx), 0.0)))
    G = -P + A * np.exp(S - mx) + (k - 1) * A.sum(axis=1, keepdims=True) * E / cnt
    return value, G


def nca_loss(pc, pos, W, k=None):
    """Ranking NCE on cosine scores of the linear map ``W``.

    Scores are ``(Wx / ||Wx||)^T (Wx' / ||Wx'||)``.  ``pos`` is an n x n
    nonnegative weight table over point indices giving the positive pairs.
    With ``k=None`` every point of the cloud is a candidate.

    Returns
    -------
    LossReport
        ``grad_phi`` and ``grad_psi`` both hold the gradient in ``W``.

    Raises
    ------
    ZeroVector
        If some ``Wx`` vanishes.
    """
    X = pc.x
    W = np.asarray(W, dtype=float)
    P = np.asarray(pos, dtype=float)
    Y = X @ W.T
    norms = np.linalg.norm(Y, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ZeroVector("a projected point is zero; cosine scores undefined")
    Yb = Y / norms
    value, G = _ranking_sum(P, Yb @ Yb.T, k)
    gYb = (G + G.T) @ Yb
    gY = (gYb - np.sum(gYb * Yb, axis=1, keepdims=True) * Yb) / norms
    g = gY.T @ X
    return LossReport(value, g, g)


def sne_loss(sim, Y):
    """Ranking NCE with scores ``-||y_i - y_j||^2`` over candidates ``j != i``.

    Returns the value and the gradient in ``Y``.  A single point has no
    candidates and loss 0.
    """
    P = np.asarray(sim.p if isinstance(sim, JointTable) else sim, dtype=float)
    n = P.shape[0]
    Y = np.asarray(Y, dtype=float)
    if n == 1:
        return 0.0, np.zeros_like(Y)
    S = -squareform(pdist(Y, "sqeuclidean"))
    mask = ~np.eye(n, dtype=bool)
    Pm = np.where(mask, P, 0.0)
    value, G = _ranking_sum(Pm, S, None, mask)
    Gs = G + G.T
    grad = -2.0 * (Gs.sum(axis=1, keepdims=True) * Y - Gs @ Y)
    return value, grad


def sne_embed(sim, d, iters=2000, alpha=0.1, seed=0, return_trace=False):
    """Free per-point embeddings fitted by backtracked descent on :func:`sne_loss`.

    The initial embedding is standard normal times ``1e-2`` drawn from
    ``seed``.  Every accepted step satisfies an Armijo decrease, so the loss
    trace is nonincreasing.
    """
    P = np.asarray(sim.p if isinstance(sim, JointTable) else sim, dtype=float)
    if np.max(np.abs(P - P.T)) > 1e-12:
        raise ValueError("similarity table must be symmetric")
    n = P.shape[0]
    if n == 1:
        Y = np.zeros((1, d))
        return (Y, [0.0]) if return_trace else Y
    y0 = 1e-2 * make_rng(seed).standard_normal(n * d)

    def fun(y):
        v, g = sne_loss(P, y.reshape(n, d))
        return v, g.ravel()

    trace = []
    res = minimize(fun, y0, max_iters=iters, tol=1e-10, step0=alpha,
                   callback=lambda it, x, f, gn: trace.append(f))
    Y = res.x.reshape(n, d)
    return (Y, trace) if return_trace else Y
