"""Power-iteration learners: the Hebbian MINC rule, BYOL's alternating regressions
and a generalized variational power iteration driven by NCE or KL matching.

All updates use exact tabular expectations under the joint table.  The
learners operate on a shared domain, so the table must be square.
"""

import json
import warnings
from dataclasses import dataclass, replace

import numpy as np

from ._common import positive_scores
from .dist import t_matrix
from .errors import NonPositiveScore, SingularGram
from .linobj import kl_score_grad, ranking_score_grad

RIDGE = 1e-10
COND_LIMIT = 1e12


@dataclass(frozen=True)
class PowerState:
    """State of a power-iteration learner.

    Attributes
    ----------
    xi : ndarray, shape (n, d)
        Student representation (``psi`` for the generalized iteration).
    lam : ndarray, shape (d, d)
        Eigenvalue estimate.
    a_mat : ndarray, shape (d, d)
        Mixing matrix of the generalized iteration.
    target_xi : ndarray, shape (n, d)
        Teacher copy treated as constant by every update.
    beta : float
        EMA coefficient for ``lam`` (MINC) or for the BYOL target.
    step : int
        Number of updates applied.
    """

    xi: np.ndarray
    lam: np.ndarray
    a_mat: np.ndarray
    target_xi: np.ndarray
    beta: float = 0.9
    step: int = 0


def init_state(xi, beta=0.9, lam=None, a_mat=None):
    xi = np.array(xi, dtype=float)
    d = xi.shape[1]
    return PowerState(
        xi=xi,
        lam=np.zeros((d, d)) if lam is None else np.array(lam, dtype=float),
        a_mat=np.eye(d) if a_mat is None else np.array(a_mat, dtype=float),
        target_xi=xi.copy(),
        beta=beta,
    )


def _lower(M):
    return np.tril(M)


def fixed_point_residual(j, xi, lam):
    """``||T diag(sqrt py) xi - diag(sqrt px) xi lam^T||_F``."""
    tm = t_matrix(j)
    return float(np.linalg.norm(tm.t @ (tm.sqrt_py[:, None] * xi) - (tm.sqrt_px[:, None] * xi) @ lam.T))


def minc_step(j, s, alpha):
    """One Hebbian update with lower-triangular decay.

    ``lam <- beta lam + (1 - beta) xi^T D xi`` and then
    ``xi <- xi + alpha (P xi - D xi LT(lam)^T)``, where ``D = diag(px)`` and
    ``LT`` zeroes the entries above the diagonal.  The fixed point is
    ``xi = D^{-1/2} U Sigma^{1/2}`` with ``lam = Sigma``.
    """
    P = j.p
    px = j.px
    xi = s.xi
    lam = s.beta * s.lam + (1 - s.beta) * (xi.T @ (px[:, None] * xi))
    lam = 0.5 * (lam + lam.T)
    new = xi + alpha * (P @ xi - (px[:, None] * xi) @ _lower(lam).T)
    return replace(s, xi=new, lam=lam, target_xi=new.copy(), step=s.step + 1)


def byol_lambda_step(j, s):
    """Closed-form ``lam = argmin E_p ||lam xi(x) - xi_t(x')||^2``.

    The normal equations ``lam (xi^T D xi) = xi_t^T P^T xi`` are solved with
    a ridge of ``1e-10``.  A :class:`SingularGram` warning is issued when the
    Gram matrix has condition number above ``1e12``.
    """
    xi, xt = s.xi, s.target_xi
    G = xi.T @ (j.px[:, None] * xi)
    if not np.all(np.isfinite(G)):
        raise FloatingPointError("non-finite Gram matrix in BYOL regression")
    ev = np.linalg.eigvalsh(G)
    if ev[0] <= ev[-1] / COND_LIMIT:
        warnings.warn("ill-conditioned Gram matrix in BYOL regression", SingularGram, stacklevel=2)
    R = xt.T @ j.p.T @ xi
    d = G.shape[0]
    lam = np.linalg.solve(G + RIDGE * np.eye(d), R.T).T
    return replace(s, lam=lam)


def byol_xi_grad(j, s):
    """Gradient in ``xi`` of ``E_p ||lam xi(x) - xi_t(x')||^2`` with the target held fixed."""
    xi, lam = s.xi, s.lam
    return 2 * ((j.px[:, None] * xi) @ lam.T @ lam - j.p @ s.target_xi @ lam)


def byol_xi_step(j, s, alpha, tau=0.0):
    """Gradient step on ``xi`` followed by a target refresh.

    ``tau = 0`` copies the new ``xi`` into the target.  ``tau > 0`` keeps an
    exponential moving average ``target <- tau target + (1 - tau) xi``.
    """
    new = s.xi - alpha * byol_xi_grad(j, s)
    target = tau * s.target_xi + (1 - tau) * new
    return replace(s, xi=new, target_xi=target, step=s.step + 1)


def byol_step(j, s, alpha, tau=0.0):
    return byol_xi_step(j, byol_lambda_step(j, s), alpha, tau)


# ---------------------------------------------------------------------------
# generalized variational power iteration


def gvpi_objective(j, s, loss_kind="kl", k=None, score="raw"):
    """Matching objective with the teacher ``xi_t`` frozen.

    Scores are ``u(x, x') = (A psi(x))^T psi_t(x')``.  ``loss_kind`` selects
    the KL form ``-(E_p log u - E_{px py} u)`` or the ranking-NCE form
    (``nce_ranking``, with candidate count ``k``; ``None`` is the
    population limit).

    Returns
    -------
    value : float
    grad_xi : ndarray
    grad_a : ndarray
    """
    psi, A, pt = s.xi, s.a_mat, s.target_xi
    S = psi @ A.T @ pt.T
    u, du = positive_scores(S, score)
    if loss_kind == "kl":
        value, G = kl_score_grad(j.p, np.outer(j.px, j.py), u)
    elif loss_kind in ("nce_ranking", "nce"):
        value, G = ranking_score_grad(j.p, j.px, j.py, u, k)
    else:
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    G = G * du
    return value, G @ pt @ A, pt.T @ G.T @ psi


def gvpi_step(j, s, loss_kind="kl", alpha=0.1, round_length=1, k=None, score="raw", max_halvings=60):
    """One backtracked gradient step on ``(psi, A)`` with the teacher frozen.

    The step is halved until the objective does not increase and every score
    stays positive.  After every ``round_length`` steps the teacher is set to
    the current ``psi``.

    Raises
    ------
    NonPositiveScore
        If the scores at the incoming state are not all positive.
    """
    value, gx, ga = gvpi_objective(j, s, loss_kind, k, score)
    a = alpha
    new = s
    for _ in range(max_halvings):
        cand = replace(s, xi=s.xi - a * gx, a_mat=s.a_mat - a * ga)
        try:
            v_new = gvpi_objective(j, cand, loss_kind, k, score)[0]
        except NonPositiveScore:
            v_new = np.inf
        if np.isfinite(v_new) and v_new <= value:
            new = cand
            break
        a *= 0.5
    step = s.step + 1
    target = new.xi.copy() if step % round_length == 0 else s.target_xi
    return replace(new, target_xi=target, step=step)


def gvpi_conditional(j, s, loss_kind="kl", score="raw"):
    """Fitted ``P(x'|x)`` implied by the current scores.

    The KL form models ``P(x'|x) = py(x') u(x, x')`` directly.  The ranking
    form only identifies ``u`` up to a factor per row, so its rows are
    normalized.
    """
    S = s.xi @ s.a_mat.T @ s.target_xi.T
    u, _ = positive_scores(S, score)
    c = j.py[None, :] * u
    if loss_kind == "kl":
        return c
    return c / c.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# checkpoints


def state_to_json(s):
    return json.dumps(
        {
            "xi": s.xi.tolist(),
            "lam": s.lam.tolist(),
            "a_mat": s.a_mat.tolist(),
            "target_xi": s.target_xi.tolist(),
            "beta": s.beta,
            "step": s.step,
        },
        indent=1,
    )


def state_from_json(text):
    o = json.loads(text)
    return PowerState(
        xi=np.array(o["xi"], dtype=float),
        lam=np.array(o["lam"], dtype=float),
        a_mat=np.array(o["a_mat"], dtype=float),
        target_xi=np.array(o["target_xi"], dtype=float),
        beta=float(o["beta"]),
        step=int(o["step"]),
    )
