"""Direct spectral objectives on tabular factor parameters.

Every loss takes a :class:`~spectralrep.dist.JointTable` and a
:class:`ReprParams` and returns a :class:`LossReport` holding the value in
minimized form and its exact gradient.  Expectations are full weighted sums
over the table unless a :class:`~spectralrep.dist.PairBatch` is passed, in
which case they become sample means over the batch.

Scores are ``S = phi psi^T``.  Objectives that take a logarithm of the score
use ``u = softplus(S)`` by default; ``score="raw"`` uses ``u = S`` and raises
:class:`~spectralrep.errors.NonPositiveScore` on any ``u <= 0``.
"""

from dataclasses import dataclass

import numpy as np

from ._common import offdiag, pair_weights, positive_scores, xlogy_sum
from .dist import alias_draw, alias_table, make_rng, t_matrix

OBJECTIVES = (
    "spectral_contrastive",
    "barlow_twins",
    "vicreg_hinge",
    "vicreg_square",
    "nce_binary",
    "nce_ranking",
    "fdiv_kl",
    "fdiv_chisq",
)


@dataclass(frozen=True)
class ReprParams:
    """Tabular factors ``phi`` (n x d) and ``psi`` (m x d).

    Leaving ``psi`` as ``None`` ties the two factors, which is only valid for
    a square table over a shared domain.
    """

    phi: np.ndarray
    psi: np.ndarray = None

    @property
    def tied(self):
        return self.psi is None

    @property
    def right(self):
        return self.phi if self.psi is None else self.psi


@dataclass(frozen=True)
class LossReport:
    """Loss value and gradients.

    For tied parameters ``grad_phi`` is the total derivative with respect to
    the shared factor and ``grad_psi`` is the same array.
    """

    value: float
    grad_phi: np.ndarray
    grad_psi: np.ndarray


def _swap(a):
    return np.swapaxes(a, -1, -2)


def _report(value, gphi, gpsi, params):
    if params.tied:
        g = gphi + gpsi
        return LossReport(float(value), g, g)
    return LossReport(float(value), gphi, gpsi)


def _from_score_grad(value, G, params):
    """Chain a gradient ``G = dV/dS`` through ``S = phi psi^T``."""
    phi, psi = params.phi, params.right
    return _report(value, G @ psi, G.T @ phi, params)


def t_norm_sq(j):
    return float(np.sum(t_matrix(j).t ** 2))


# ---------------------------------------------------------------------------
# batch-friendly cores: P, Q, px may carry a leading trial axis


def _sc_core(P, Q, phi, psi, const):
    S = phi @ psi.T
    value = const - 2 * np.sum(P * S, axis=(-2, -1)) + np.sum(Q * S**2, axis=(-2, -1))
    G = -2 * P + 2 * Q * S
    return value, G @ psi, _swap(G) @ phi


def _bt_core(P, phi, psi, lam):
    d = phi.shape[1]
    eye = np.eye(d)
    C = phi.T @ P @ psi
    diag = np.sum(C * eye, axis=-1)
    value = np.sum((1 - diag) ** 2, axis=-1) + lam * np.sum((C * (1 - eye)) ** 2, axis=(-2, -1))
    M = 2 * (C - eye) * eye + 2 * lam * C * (1 - eye)
    return value, P @ psi @ _swap(M), _swap(P) @ phi @ M


def _gram_penalty(w, f, lam):
    """``lam ||f^T diag(w) f - I||^2`` and its gradient in ``f``."""
    d = f.shape[1]
    wf = w[..., :, None] * f
    E = f.T @ wf - np.eye(d)
    return lam * np.sum(E**2, axis=(-2, -1)), 4 * lam * wf @ E


def _vsq_core(P, px, py, phi, psi, lam, tied):
    S = phi @ psi.T
    value = -2 * np.sum(P * S, axis=(-2, -1))
    gphi = -2 * P @ psi
    gpsi = -2 * _swap(P) @ phi
    if tied:
        r, g = _gram_penalty(px, phi, lam)
        return value + r, gphi + g, gpsi
    rx, gx = _gram_penalty(px, phi, lam / 2)
    ry, gy = _gram_penalty(py, psi, lam / 2)
    return value + rx + ry, gphi + gx, gpsi + gy


# ---------------------------------------------------------------------------
# objectives


def loss_spectral_contrastive(j, params, batch=None):
    """Squared fit of the normalized operator by ``diag(sqrt px) phi psi^T diag(sqrt py)``.

    ``||T||_F^2 - 2 E_p[phi^T psi'] + E_{px py}[(phi^T psi')^2]``.  The
    constant ``||T||_F^2`` is always exact, so the global minimum over rank
    ``d`` factors equals the Eckart-Young tail.
    """
    P, Q, _, _ = pair_weights(j, batch)
    v, gphi, gpsi = _sc_core(P, Q, params.phi, params.right, t_norm_sq(j))
    return _report(v, gphi, gpsi, params)


def loss_barlow_twins(j, params, lambda_=1.0, batch=None):
    """Cross-correlation loss ``sum_i (1 - C_ii)^2 + lambda sum_{i != j} C_ij^2``.

    ``C = E_p[phi(x) psi(x')^T]`` is built from the raw factors.
    """
    P, _, _, _ = pair_weights(j, batch)
    v, gphi, gpsi = _bt_core(P, params.phi, params.right, lambda_)
    return _report(v, gphi, gpsi, params)


def _hinge_side(w, f, lam, eta, eps):
    d = f.shape[1]
    K = np.diag(w) - np.outer(w, w)
    cov = f.T @ K @ f
    off = offdiag(cov)
    var = np.diag(cov)
    root = np.sqrt(np.maximum(var, 0) + eps)
    hinge = np.maximum(0.0, 1.0 - root)
    value = eta / d * np.sum(off**2) + lam / d * np.sum(hinge)
    dh = np.where(hinge > 0, -0.5 / root, 0.0)
    grad = 4 * eta / d * K @ f @ off + 2 * lam / d * (K @ f) * dh[None, :]
    return value, grad


def loss_vicreg(j, params, lambda_=1.0, eta=1.0, form="square", eps=1e-4, batch=None):
    """Variance/invariance/covariance objective in hinge or square form.

    ``square``: ``-2 E_p[phi^T psi'] + lambda ||E_px[phi phi^T] - I||_F^2``.
    With untied factors the penalty is split evenly between the two sides.

    ``hinge``: ``E_p ||phi(x) - psi(x')||^2`` plus, for each side,
    ``(eta/d) sum_{i != j} cov_ij^2 + (lambda/d) sum_i max(0, 1 - sqrt(var_i + eps))``
    where the covariance is centered by the side's mean.
    """
    P, _, px, py = pair_weights(j, batch)
    phi, psi = params.phi, params.right
    if form == "square":
        v, gphi, gpsi = _vsq_core(P, px, py, phi, psi, lambda_, params.tied)
        return _report(v, gphi, gpsi, params)
    if form != "hinge":
        raise ValueError(f"unknown vicreg form {form!r}")
    S = phi @ psi.T
    inv = px @ np.sum(phi**2, axis=1) + py @ np.sum(psi**2, axis=1) - 2 * np.sum(P * S)
    gphi = 2 * px[:, None] * phi - 2 * P @ psi
    gpsi = 2 * py[:, None] * psi - 2 * P.T @ phi
    vx, gx = _hinge_side(px, phi, lambda_, eta, eps)
    vy, gy = _hinge_side(py, psi, lambda_, eta, eps)
    return _report(inv + vx + vy, gphi + gx, gpsi + gy, params)


def _support(P, Q):
    return (P > 0) | (Q > 0)


def loss_nce_binary(j, params, score="softplus", batch=None):
    """Binary noise-contrastive loss ``-E_p log(u/(1+u)) + E_{px py} log(1+u)``.

    At the global minimum ``u`` equals the ratio matrix.
    """
    P, Q, _, _ = pair_weights(j, batch)
    S = params.phi @ params.right.T
    u, du = positive_scores(S, score, _support(P, Q))
    value = -xlogy_sum(P, u / (1 + u)) + xlogy_sum(Q, 1 + u)
    G = (-P / np.where(P > 0, u * (1 + u), 1.0) + Q / (1 + u)) * du
    return _from_score_grad(value, G, params)


def ranking_score_grad(P, px, py, u, k=None):
    """Exact ranking-NCE value and its derivative with respect to the scores ``u``."""
    mx = u @ py
    if k is None:
        value = -xlogy_sum(P, u) + float(px @ np.log(mx))
        G = -P / np.where(P > 0, u, 1.0) + np.outer(px / mx, py)
        return value, G
    if k < 1:
        raise ValueError("k must be at least 1")
    den = u + (k - 1) * mx[:, None]
    value = -xlogy_sum(P, u) + xlogy_sum(P, den)
    A = P / den
    G = -P / np.where(P > 0, u, 1.0) + A + (k - 1) * np.outer(A.sum(axis=1), py)
    return value, G


def kl_score_grad(P, Q, u):
    """``-(E_p log u - E_Q u)`` and its derivative with respect to ``u``."""
    value = -xlogy_sum(P, u) + float(np.sum(Q * u))
    return value, -P / np.where(P > 0, u, 1.0) + Q


def loss_nce_ranking(j, params, k=None, score="softplus", batch=None):
    """Ranking noise-contrastive loss with one positive and ``k - 1`` negatives.

    Three evaluation modes are available.

    * ``batch`` given: each positive pair ``(x, x')`` is ranked against the
      next ``k - 1`` negative draws, using only their ``x'`` entries.
    * exact with integer ``k``: the sum over negatives is replaced by its
      expectation, ``-E_p log u + E_p log(u + (k-1) E_py u(x, .))``.  This
      equals ``log k`` at constant scores.
    * exact with ``k=None``: the large-``k`` limit
      ``-E_p log u + E_px log E_py u(x, .)``, whose minimizers are exactly
      the ratio matrix up to a positive factor per row.
    """
    P, _, px, py = pair_weights(j, None)
    S = params.phi @ params.right.T
    if batch is not None:
        if k is None or k < 1:
            raise ValueError("sampled ranking mode needs an integer k >= 1")
        pos = batch.pos_pairs
        npos = len(pos)
        neg_y = np.asarray(batch.neg_pairs[: npos * (k - 1), 1]).reshape(npos, k - 1)
        xs = pos[:, 0]
        cand = np.concatenate([pos[:, 1:2], neg_y], axis=1)
        s_c = S[xs[:, None], cand]
        u, du = positive_scores(s_c, score)
        tot = u.sum(axis=1)
        value = float(np.mean(-np.log(u[:, 0]) + np.log(tot)))
        g_c = du / tot[:, None]
        g_c[:, 0] -= du[:, 0] / u[:, 0]
        G = np.zeros_like(S)
        np.add.at(G, (np.repeat(xs, k), cand.ravel()), g_c.ravel() / npos)
        return _from_score_grad(value, G, params)
    u, du = positive_scores(S, score)
    value, G = ranking_score_grad(P, px, py, u, k)
    return _from_score_grad(value, G * du, params)


def loss_fdiv(j, params, f_kind="kl", score="softplus", batch=None):
    """Variational f-divergence objectives with ratio model ``u``.

    ``kl``: ``-(E_p log u - E_{px py} u)`` on guarded scores.
    ``chisq``: ``-(2 E_p u - E_{px py} u^2)`` on raw scores ``u = phi^T psi'``.
    Both are minimized at ``u`` equal to the ratio matrix.
    """
    P, Q, _, _ = pair_weights(j, batch)
    S = params.phi @ params.right.T
    kind = f_kind.lower()
    if kind == "kl":
        u, du = positive_scores(S, score, _support(P, Q))
        value, G = kl_score_grad(P, Q, u)
        G = G * du
    elif kind == "chisq":
        value = -2 * float(np.sum(P * S)) + float(np.sum(Q * S**2))
        G = -2 * P + 2 * Q * S
    else:
        raise ValueError(f"unknown f-divergence {f_kind!r}")
    return _from_score_grad(value, G, params)


def evaluate(objective, j, params, batch=None, **opts):
    """Dispatch an objective by its stable identifier."""
    if objective == "spectral_contrastive":
        return loss_spectral_contrastive(j, params, batch=batch)
    if objective == "barlow_twins":
        return loss_barlow_twins(j, params, batch=batch, **opts)
    if objective == "vicreg_square":
        return loss_vicreg(j, params, form="square", batch=batch, **opts)
    if objective == "vicreg_hinge":
        return loss_vicreg(j, params, form="hinge", batch=batch, **opts)
    if objective == "nce_binary":
        return loss_nce_binary(j, params, batch=batch, **opts)
    if objective == "nce_ranking":
        return loss_nce_ranking(j, params, batch=batch, **opts)
    if objective == "fdiv_kl":
        return loss_fdiv(j, params, "kl", batch=batch, **opts)
    if objective == "fdiv_chisq":
        return loss_fdiv(j, params, "chisq", batch=batch, **opts)
    raise KeyError(f"unknown objective {objective!r}")


# ---------------------------------------------------------------------------
# minibatch bias probe


@dataclass(frozen=True)
class BiasReport:
    """Mean minibatch gradient minus the full gradient.

    ``bias`` stacks the ``phi`` gradient and, for untied parameters, the
    ``psi`` gradient.  ``std_error`` is the per-entry standard error of the
    trial mean and ``threshold`` is three times the root sum of squared
    standard errors, the noise scale of ``norm`` under zero bias.
    """

    bias: np.ndarray
    norm: float
    std_error: np.ndarray
    threshold: float

    @property
    def significant(self):
        return self.norm > self.threshold


def _stack_grads(gphi, gpsi, tied):
    if tied:
        return gphi + gpsi
    return np.concatenate([gphi, gpsi], axis=-2)


def minibatch_gradient_bias(objective, j, params, batch_size, n_trials, seed, chunk=10000, **opts):
    """Measure the bias of the plug-in minibatch gradient of a direct objective.

    Each trial draws ``batch_size`` positive pairs from the joint and, for the
    spectral contrastive loss, an independent set of ``batch_size`` negative
    pairs from the product of marginals.  The plug-in estimator evaluates the
    objective with the batch's empirical expectations, including inside the
    squared terms of Barlow Twins and VICReg.  ``batch_size=None`` uses the
    full population, for which the bias is exactly zero.
    """
    if objective not in ("spectral_contrastive", "barlow_twins", "vicreg_square"):
        raise ValueError(f"bias probe not defined for {objective!r}")
    phi, psi = params.phi, params.right
    n, m = j.shape
    lam = opts.get("lambda_", 1.0)

    def grads(P, Q, px, py):
        if objective == "spectral_contrastive":
            _, gphi, gpsi = _sc_core(P, Q, phi, psi, 0.0)
        elif objective == "barlow_twins":
            _, gphi, gpsi = _bt_core(P, phi, psi, lam)
        else:
            _, gphi, gpsi = _vsq_core(P, px, py, phi, psi, lam, params.tied)
        return _stack_grads(gphi, gpsi, params.tied)

    full = grads(j.p, np.outer(j.px, j.py), j.px, j.py)
    if batch_size is None:
        z = np.zeros_like(full)
        return BiasReport(z, 0.0, z.copy(), 0.0)
    rng = make_rng(seed)
    acc_p, ali_p = alias_table(j.p.ravel())
    acc_x, ali_x = alias_table(j.px)
    acc_y, ali_y = alias_table(j.py)
    total = np.zeros_like(full)
    total_sq = np.zeros_like(full)
    done = 0
    while done < n_trials:
        t = min(chunk, n_trials - done)
        flat = alias_draw(acc_p, ali_p, (t, batch_size), rng)
        P = np.zeros((t, n * m))
        np.add.at(P, (np.repeat(np.arange(t), batch_size), flat.ravel()), 1.0 / batch_size)
        P = P.reshape(t, n, m)
        nx = alias_draw(acc_x, ali_x, (t, batch_size), rng)
        ny = alias_draw(acc_y, ali_y, (t, batch_size), rng)
        Q = np.zeros((t, n * m))
        np.add.at(Q, (np.repeat(np.arange(t), batch_size), (nx * m + ny).ravel()), 1.0 / batch_size)
        Q = Q.reshape(t, n, m)
        g = grads(P, Q, P.sum(axis=2), P.sum(axis=1))
        total += g.sum(axis=0)
        total_sq += (g**2).sum(axis=0)
        done += t
    mean = total / n_trials
    var = np.maximum(total_sq / n_trials - mean**2, 0.0)
    se = np.sqrt(var / n_trials)
    bias = mean - full
    return BiasReport(bias, float(np.linalg.norm(bias)), se, float(3 * np.sqrt(np.sum(se**2))))
