"""Downstream uses of spectral features: least-squares regression, Bayes-risk
classification, an attention-form regressor, primal-dual instrumental-variable
regression and least-squares policy evaluation in a linear MDP.
"""

from dataclasses import dataclass

import numpy as np

from .dist import JointTable, conditional
from .errors import DegenerateDenominator, NotConverged, RepresentationMismatch, SpanViolation
from .oracle import oracle_factors

RIDGE = 1e-12
SPAN_TOL = 1e-8


@dataclass(frozen=True)
class SupervisedTable:
    """Joint table over ``(x, y)`` with real label values and optional costs.

    ``risk_matrix[i, j]`` is the cost of predicting class ``i`` when the
    truth is class ``j``.
    """

    joint: JointTable
    y_values: np.ndarray = None
    risk_matrix: np.ndarray = None

    def __post_init__(self):
        m = self.joint.shape[1]
        y = np.arange(m, dtype=float) if self.y_values is None else np.asarray(self.y_values, dtype=float)
        if y.shape != (m,):
            raise ValueError("y_values must have one entry per label")
        object.__setattr__(self, "y_values", y)
        if self.risk_matrix is not None:
            R = np.asarray(self.risk_matrix, dtype=float)
            if R.shape != (m, m) or not np.all(np.isfinite(R)):
                raise ValueError("risk_matrix must be a finite m x m matrix")
            object.__setattr__(self, "risk_matrix", R)


@dataclass(frozen=True)
class PolicyTable:
    """Row-stochastic ``pi[s, a]``."""

    pi: np.ndarray

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float)
        if np.any(pi < 0) or not np.allclose(pi.sum(axis=1), 1.0, atol=1e-12, rtol=0):
            raise ValueError("policy rows must be probability vectors")
        object.__setattr__(self, "pi", pi)


# ---------------------------------------------------------------------------
# regression and classification


def conditional_mean(st):
    """``E[y|x]`` from the table."""
    return conditional(st.joint) @ st.y_values


def bayes_mse(st):
    """``E[(y - E[y|x])^2]``, the smallest achievable mean squared error."""
    m = conditional_mean(st)
    dev = st.y_values[None, :] - m[:, None]
    return float(np.sum(st.joint.p * dev**2))


def fit_linear_regressor(st, phi):
    """Weighted least squares of ``E[y|x]`` on ``phi`` under ``px``.

    Returns
    -------
    w : ndarray, shape (d,)
    mse : float
        ``E_px[(E[y|x] - w^T phi(x))^2]``.  Adding :func:`bayes_mse` gives
        the mean squared error against ``y`` itself.
    """
    phi = np.asarray(phi, dtype=float)
    px = st.joint.px
    if phi.shape[0] != len(px):
        raise ValueError("phi must have one row per x")
    m = conditional_mean(st)
    G = phi.T @ (px[:, None] * phi)
    w = np.linalg.solve(G + RIDGE * np.eye(G.shape[0]), phi.T @ (px * m))
    return w, float(px @ (m - phi @ w) ** 2)


def posterior_factors(j, phi, psi):
    """``mu(y) = py(y) psi(y)``, so that ``phi mu^T = P(y|x)`` when ``phi psi^T`` is the ratio."""
    return j.py[:, None] * np.asarray(psi, dtype=float)


def bayes_classify(st, phi, mu_y, tol=1e-6):
    """Minimum conditional-risk classes from a linear posterior representation.

    The posterior is ``phi mu_y^T`` and the risk of class ``i`` is
    ``sum_j risk[i, j] P(j|x)``.  Classes are 0-based; ties go to the
    lowest index.  Without a risk matrix the 0-1 cost is used.

    Returns
    -------
    classes : ndarray of int, shape (n,)
    risk : ndarray, shape (n, k)
        Conditional risk of every class at every ``x``.

    Raises
    ------
    RepresentationMismatch
        If ``phi mu_y^T`` differs from the table's posterior by more than ``tol``.
    """
    post = np.asarray(phi, dtype=float) @ np.asarray(mu_y, dtype=float).T
    err = float(np.max(np.abs(post - conditional(st.joint))))
    if err > tol:
        raise RepresentationMismatch(f"features miss the posterior by {err:.3g}")
    k = post.shape[1]
    R = 1.0 - np.eye(k) if st.risk_matrix is None else st.risk_matrix
    risk = post @ R.T
    return np.argmin(risk, axis=1), risk


# ---------------------------------------------------------------------------
# attention-form regressor


def attention_regressor(st, upsilon, anchors):
    """Attention-form predictions ``sum_i b_i k_i(x) / sum_j a_j k_j(x)``.

    Here ``k_i(x) = exp(upsilon(x_i')^T upsilon(x))`` over the anchors.  The
    denominator weights ``a`` are the ``px``-weighted least-squares fit of
    ``K a = 1``.  The numerator weights ``b`` are then the ``px``-weighted
    least-squares fit of the prediction itself to ``E[y|x]``.

    Raises
    ------
    DegenerateDenominator
        If a denominator is at most ``1e-300``.
    """
    anchors = np.atleast_1d(np.asarray(anchors, dtype=int))
    if anchors.size == 0:
        raise ValueError("anchors must be nonempty")
    U = np.asarray(upsilon, dtype=float)
    px = st.joint.px
    sw = np.sqrt(px)
    K = np.exp(U @ U[anchors].T)
    a = np.linalg.lstsq(sw[:, None] * K, sw, rcond=None)[0]
    den = K @ a
    if np.any(den <= 1e-300):
        raise DegenerateDenominator("attention denominator is not positive")
    F = K / den[:, None]
    m = conditional_mean(st)
    b = np.linalg.lstsq(sw[:, None] * F, sw * m, rcond=None)[0]
    return F @ b


# ---------------------------------------------------------------------------
# instrumental-variable regression


def iv_features(iv, d):
    """Oracle factors with ``P(x|z) = P(x) <phi(x), mu(z)>`` at rank ``d``.

    Returns
    -------
    phi : ndarray, shape (|X|, d)
    mu : ndarray, shape (|Z|, d)
    """
    mu, phi = oracle_factors(iv.p_zx, d)
    return phi, mu


def iv_direct_solve(iv):
    """Solve ``E f = E[y|z]`` with ``E`` the conditional-expectation matrix."""
    return np.linalg.solve(iv.cond_x_given_z, iv.ey_z)


def iv_gradients(iv, phi, mu, v, w, lambda_=0.0):
    """Gradients of the linear primal-dual objective.

    ``L(v, w) = E[w^T mu(z) (y - v^T phi(x)) - (w^T mu(z))^2 / 2] + lambda E_px (v^T phi)^2``.

    Returns
    -------
    grad_v, grad_w : ndarray
    """
    j = iv.p_zx
    P = j.p
    b = (P * iv.ey_zx).sum(axis=1)
    Cz = mu.T @ (j.px[:, None] * mu)
    Cx = phi.T @ (j.py[:, None] * phi)
    A = mu.T @ P @ phi
    gw = mu.T @ b - A @ v - Cz @ w
    gv = -A.T @ w + 2 * lambda_ * Cx @ v
    return gv, gw


def iv_saddle_solve(iv, phi, mu, lambda_=0.0, iters=100000, alpha=0.05, method="extragradient", tol=1e-8):
    """Primal-dual IV regression with ``f = v^T phi`` and ``g = w^T mu``.

    ``method`` is ``"extragradient"`` (default) or ``"simultaneous"``
    gradient descent-ascent.  Iteration stops once both gradient norms are
    at most ``tol``.

    Returns
    -------
    f_hat : ndarray, shape (|X|,)
    g_hat : ndarray, shape (|Z|,)

    Raises
    ------
    NotConverged
        With the final gradient norms, if ``iters`` is exhausted.
    """
    phi = np.asarray(phi, dtype=float)
    mu = np.asarray(mu, dtype=float)
    v = np.zeros(phi.shape[1])
    w = np.zeros(mu.shape[1])
    for _ in range(iters):
        gv, gw = iv_gradients(iv, phi, mu, v, w, lambda_)
        if max(np.linalg.norm(gv), np.linalg.norm(gw)) <= tol:
            return phi @ v, mu @ w
        if method == "extragradient":
            vh, wh = v - alpha * gv, w + alpha * gw
            gv, gw = iv_gradients(iv, phi, mu, vh, wh, lambda_)
        elif method != "simultaneous":
            raise ValueError(f"unknown method {method!r}")
        v, w = v - alpha * gv, w + alpha * gw
    gv, gw = iv_gradients(iv, phi, mu, v, w, lambda_)
    norms = (float(np.linalg.norm(gv)), float(np.linalg.norm(gw)))
    if max(norms) <= tol:
        return phi @ v, mu @ w
    raise NotConverged("primal-dual iteration did not converge", norms)


# ---------------------------------------------------------------------------
# linear-MDP policy evaluation


def policy_transition(mdp, pi):
    """State-action transition matrix ``P_pi[(s, a), (s', a')] = P(s'|s, a) pi(a'|s')``."""
    nS, nA = mdp.n_states, mdp.n_actions
    Pi = np.zeros((nS, nS * nA))
    for s in range(nS):
        Pi[s, s * nA:(s + 1) * nA] = pi.pi[s]
    return mdp.transition @ Pi


def q_direct(mdp, pi):
    """``Q = (I - gamma P_pi)^{-1} r``."""
    P = policy_transition(mdp, pi)
    return np.linalg.solve(np.eye(len(P)) - mdp.gamma * P, mdp.reward)


def uniform_stationary(mdp):
    """Stationary state-action distribution under the uniform policy."""
    nA = mdp.n_actions
    P = policy_transition(mdp, PolicyTable(np.full((mdp.n_states, nA), 1.0 / nA)))
    n = len(P)
    A = np.vstack([P.T - np.eye(n), np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    return np.linalg.lstsq(A, rhs, rcond=None)[0]


def mdp_features(mdp, d):
    """Rank-``d`` SVD factors of the transition matrix with the reward appended.

    Returns ``|S||A| x (d + 1)`` features whose span holds every transition
    column and the reward once ``d`` reaches the transition rank.
    """
    U, s, _ = np.linalg.svd(mdp.transition, full_matrices=False)
    return np.column_stack([U[:, :d] * s[:d], mdp.reward])


def _span_residual(F, M):
    coef = np.linalg.lstsq(F, M, rcond=None)[0]
    return float(np.max(np.abs(F @ coef - M)))


def lstd_policy_eval(mdp, pi, features, rho=None):
    """Solve the ``rho``-weighted projected Bellman equation for ``eta``.

    ``eta = (F^T R (F - gamma P_pi F))^{-1} F^T R r`` with ``R = diag(rho)``.
    ``rho`` defaults to :func:`uniform_stationary`.

    Raises
    ------
    SpanViolation
        If the transition columns or the reward leave the span of the
        features by more than ``1e-8``.
    """
    F = np.asarray(features, dtype=float)
    r = np.asarray(mdp.reward, dtype=float)
    resid = max(_span_residual(F, mdp.transition), _span_residual(F, r))
    if resid > SPAN_TOL:
        raise SpanViolation(f"linear-MDP conditions violated by {resid:.3g}")
    rho = uniform_stationary(mdp) if rho is None else np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise ValueError("rho must be positive")
    P = policy_transition(mdp, pi)
    A = F.T @ (rho[:, None] * (F - mdp.gamma * P @ F))
    return np.linalg.lstsq(A, F.T @ (rho * r), rcond=None)[0]
