"""Latent-variable representations: softmax posteriors, k-means/EM clustering,
Sinkhorn equipartition and teacher-student posterior distillation.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp, softmax

from .dist import conditional, make_rng


@dataclass(frozen=True)
class LatentParams:
    """Softmax posterior ``P(z|x) = softmax(upsilon(x)^T W + b)``.

    ``centroids`` (d x k) and ``sigma2`` describe the Gaussian form, see
    :func:`gaussian_params`.
    """

    upsilon: np.ndarray
    W: np.ndarray
    b: np.ndarray
    centroids: np.ndarray = None
    sigma2: float = 1.0

    def __post_init__(self):
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")

    @property
    def k(self):
        return self.W.shape[1]


@dataclass(frozen=True)
class AssignmentPlan:
    """Transport plan ``q[x, z]`` with rows summing to ``1/n`` and columns to ``1/k``."""

    q: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray
    converged: bool
    sweeps: int
    residual: float

    @property
    def posterior(self):
        return self.q / self.q.sum(axis=1, keepdims=True)


def logits(params):
    return params.upsilon @ params.W + params.b


def posterior(params, x=None):
    """Posterior table (n x k), or the row for element ``x``."""
    post = softmax(logits(params), axis=1)
    return post if x is None else post[x]


def gaussian_params(upsilon, centroids, sigma2):
    """Linear-softmax parameters equivalent to an isotropic Gaussian posterior.

    ``W_z = C_z / sigma2`` and ``b_z = -||C_z||^2 / (2 sigma2)``, so that
    ``softmax(upsilon W + b)`` equals ``softmax(-||C_z - upsilon||^2 / (2 sigma2))``.
    """
    C = np.asarray(centroids, dtype=float)
    return LatentParams(
        upsilon=np.asarray(upsilon, dtype=float),
        W=C / sigma2,
        b=-np.sum(C**2, axis=0) / (2 * sigma2),
        centroids=C,
        sigma2=sigma2,
    )


# ---------------------------------------------------------------------------
# k-means E-step


def _assign(X, C):
    d2 = np.sum((X[:, None, :] - C[None, :, :]) ** 2, axis=2)
    # argmin returns the first minimum, which is the lowest cluster index
    a = np.argmin(d2, axis=1)
    return a, d2


def _plusplus(X, k, rng):
    n = X.shape[0]
    idx = [int(rng.integers(n))]
    for _ in range(1, k):
        d2 = np.min(np.sum((X[:, None, :] - X[idx][None, :, :]) ** 2, axis=2), axis=1)
        tot = d2.sum()
        if tot <= 0:
            idx.append(int(rng.integers(n)))
            continue
        idx.append(int(rng.choice(n, p=d2 / tot)))
    return X[idx].copy()


def kmeans(X, k, n_restarts=5, seed=0, max_iters=300):
    """Lloyd's algorithm with k-means++ seeding and restarts.

    Ties in assignment go to the lowest cluster index.  An empty cluster is
    re-seeded at the point farthest from its current centroid.  The restart
    with the lowest distortion wins, earliest restart first on ties.

    Returns
    -------
    assignments : ndarray of int
    centers : ndarray, shape (k, p)
    distortion : float
    """
    X = np.asarray(X, dtype=float)
    if not 1 <= k <= X.shape[0]:
        raise ValueError("k must lie in [1, n]")
    rng = make_rng(seed)
    best = None
    for _ in range(max(1, n_restarts)):
        C = _plusplus(X, k, rng)
        a = None
        for _ in range(max_iters):
            a_new, d2 = _assign(X, C)
            for z in range(k):
                if not np.any(a_new == z):
                    far = int(np.argmax(d2[np.arange(len(X)), a_new]))
                    C[z] = X[far]
                    a_new, d2 = _assign(X, C)
            C = np.array([X[a_new == z].mean(axis=0) if np.any(a_new == z) else C[z] for z in range(k)])
            if a is not None and np.array_equal(a, a_new):
                break
            a = a_new
        a, d2 = _assign(X, C)
        dist = float(np.sum(d2[np.arange(len(X)), a]))
        if best is None or dist < best[2]:
            best = (a, C, dist)
    return best


def deepcluster_e_step(params, data=None, k=None, n_restarts=5, seed=0):
    """Cluster the feature rows with k-means.

    Returns
    -------
    assignments : ndarray of int
        One cluster id per selected row.
    centroids : ndarray, shape (d, k)
    """
    k = params.k if k is None else k
    X = params.upsilon if data is None else params.upsilon[np.asarray(data)]
    a, C, _ = kmeans(X, k, n_restarts, seed)
    return a, C.T


def ce_loss(params, targets, weights=None):
    """Weighted cross-entropy ``-sum_x w_x sum_z t[x, z] log P(z|x)``.

    ``targets`` is an n x k table or a vector of cluster ids.  ``weights``
    defaults to ``1/n`` per row.

    Returns
    -------
    value : float
    grads : dict
        Gradients for ``upsilon``, ``W`` and ``b``.
    """
    L = logits(params)
    n, k = L.shape
    T = np.asarray(targets)
    if T.ndim == 1:
        T = np.eye(k)[T]
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    logp = L - logsumexp(L, axis=1, keepdims=True)
    wT = w[:, None] * T
    value = -float(np.sum(wT * logp))
    R = wT.sum(axis=1, keepdims=True) * np.exp(logp) - wT
    return value, {"upsilon": R @ params.W.T, "W": params.upsilon.T @ R, "b": R.sum(axis=0)}


def _apply(params, grads, a):
    return replace(params, upsilon=params.upsilon - a * grads["upsilon"], W=params.W - a * grads["W"], b=params.b - a * grads["b"])


def _backtracked(params, value, grads, fn, alpha, max_halvings=50):
    a = alpha
    for _ in range(max_halvings):
        cand = _apply(params, grads, a)
        v = fn(cand)
        if np.isfinite(v) and v <= value:
            return cand, v
        a *= 0.5
    return params, value


def deepcluster_m_step(params, assignments, max_iters=100, alpha=1.0, weights=None):
    """Gradient steps on the cross-entropy of the cluster assignments.

    Each step halves ``alpha`` until the loss does not increase, so the loss
    sequence is nonincreasing.
    """
    v, g = ce_loss(params, assignments, weights)
    for _ in range(max_iters):
        params, v_new = _backtracked(params, v, g, lambda p: ce_loss(p, assignments, weights)[0], alpha)
        if v_new == v:
            break
        v = v_new
        g = ce_loss(params, assignments, weights)[1]
    return params


# ---------------------------------------------------------------------------
# Sinkhorn equipartition


def sela_e_step(log_posteriors, epsilon=0.05, max_sweeps=10000, tol=1e-8):
    """Entropic transport of ``exp(log_posteriors / epsilon)`` onto equal marginals.

    Rows are scaled to ``1/n`` and columns to ``1/k`` in the log domain.
    Iteration stops when both marginal residuals are at most ``tol``.
    """
    K = np.asarray(log_posteriors, dtype=float) / epsilon
    n, k = K.shape
    lr, lc = np.log(1.0 / n), np.log(1.0 / k)
    f = np.zeros(n)
    g = np.zeros(k)
    resid = np.inf
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        f = lr - logsumexp(K + g[None, :], axis=1)
        g = lc - logsumexp(K + f[:, None], axis=0)
        q = np.exp(K + f[:, None] + g[None, :])
        resid = max(np.max(np.abs(q.sum(axis=1) - 1.0 / n)), np.max(np.abs(q.sum(axis=0) - 1.0 / k)))
        if resid <= tol:
            break
    q = np.exp(K + f[:, None] + g[None, :])
    return AssignmentPlan(q, q.sum(axis=1), q.sum(axis=0), bool(resid <= tol), sweeps, float(resid))


# ---------------------------------------------------------------------------
# teacher-student distillation


def _table(teacher):
    return posterior(teacher) if isinstance(teacher, LatentParams) else np.asarray(teacher, dtype=float)


def dino_targets(j, teacher_post):
    """Symmetric propagated targets and their row weights.

    ``t(x) = sum_x' P(x, x') Pt(.|x') + sum_x' P(x', x) Pt(.|x')``.
    """
    T = j.p @ teacher_post + j.p.T @ teacher_post
    return T, T.sum(axis=1)


def dino_loss(j, student, teacher):
    """Cross-entropy of the student posterior against propagated teacher posteriors.

    ``-E_p[sum_z Pt(z|x') log Ps(z|x) + sum_z Pt(z|x) log Ps(z|x')]``.
    """
    T, w = dino_targets(j, _table(teacher))
    L = logits(student)
    logp = L - logsumexp(L, axis=1, keepdims=True)
    value = -float(np.sum(T * logp))
    R = w[:, None] * np.exp(logp) - T
    return value, {"upsilon": R @ student.W.T, "W": student.upsilon.T @ R, "b": R.sum(axis=0)}


def dino_step(j, student, teacher, alpha=1.0, teacher_mode="previous", epsilon=0.05):
    """One backtracked student step, then a teacher refresh.

    ``previous`` makes the teacher the new student.  ``sinkhorn`` makes the
    teacher the row-normalized Sinkhorn projection of the new student's log
    posterior, returned as an n x k table.

    Returns
    -------
    (student, teacher)
    """
    v, g = dino_loss(j, student, teacher)
    student, _ = _backtracked(student, v, g, lambda p: dino_loss(j, p, teacher)[0], alpha)
    if teacher_mode == "previous":
        return student, student
    if teacher_mode == "sinkhorn":
        L = logits(student)
        plan = sela_e_step(L - logsumexp(L, axis=1, keepdims=True), epsilon)
        return student, plan.posterior
    raise ValueError(f"unknown teacher mode {teacher_mode!r}")


def dino_grad_norm(j, student, teacher):
    _, g = dino_loss(j, student, teacher)
    return float(np.sqrt(sum(np.sum(v**2) for v in g.values())))


def stationarity_residual(j, posterior_table):
    """``max |sum_x' P(x'|x) Q(z|x') - Q(z|x)|`` over ``(x, z)``."""
    Q = np.asarray(posterior_table, dtype=float)
    return float(np.max(np.abs(conditional(j) @ Q - Q)))


def permutation_error(est, truth):
    """Max-abs error after the best column permutation (Hungarian matching on overlap)."""
    est = np.asarray(est, dtype=float)
    truth = np.asarray(truth, dtype=float)
    _, cols = linear_sum_assignment(-(truth.T @ est))
    return float(np.max(np.abs(est[:, cols] - truth))), cols


def em_run(params, rounds=20, mode="deepcluster", seed=0, n_restarts=5, m_iters=100, alpha=1.0,
           epsilon=0.05, weights=None):
    """Alternate an E-step and a cross-entropy M-step.

    ``deepcluster`` assigns by k-means on the current features and stops
    once the assignments repeat.  ``sela`` uses the row-normalized Sinkhorn
    plan of the current log posteriors as soft targets.

    Returns
    -------
    params : LatentParams
    targets : ndarray
        Final hard assignments (``deepcluster``) or soft n x k targets (``sela``).
    losses : list of float
        Cross-entropy after each M-step.
    """
    losses = []
    prev = None
    targets = None
    for _ in range(rounds):
        if mode == "deepcluster":
            targets, C = deepcluster_e_step(params, k=params.k, n_restarts=n_restarts, seed=seed)
            params = replace(params, centroids=C)
        elif mode == "sela":
            L = logits(params)
            targets = sela_e_step(L - logsumexp(L, axis=1, keepdims=True), epsilon).posterior
        else:
            raise ValueError(f"unknown EM mode {mode!r}")
        params = deepcluster_m_step(params, targets, m_iters, alpha, weights)
        losses.append(ce_loss(params, targets, weights)[0])
        if mode == "deepcluster" and prev is not None and np.array_equal(prev, targets):
            break
        prev = targets
    return params, targets, losses
