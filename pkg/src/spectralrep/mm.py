"""Two-domain energy-based representations: CLIP, SigLIP and a stop-gradient
maximum-likelihood objective with exact or moving-average partition functions.

Scores are ``s(x, y) = phi(x)^T nu(y) / temperature`` and the model ratio is
``exp(s)``.
"""

from dataclasses import dataclass

import numpy as np

from ._common import log_sigmoid, pair_weights, sigmoid
from .errors import NonPositivePartition
from .linobj import LossReport, ranking_score_grad


@dataclass(frozen=True)
class MmParams:
    """Features ``phi`` (n x d) for domain X and ``nu`` (m x d) for domain Y."""

    phi: np.ndarray
    nu: np.ndarray
    temperature: float = 1.0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not (np.all(np.isfinite(self.phi)) and np.all(np.isfinite(self.nu))):
            raise ValueError("parameters must be finite")


@dataclass(frozen=True)
class PartitionState:
    """Partition estimates ``Z(x)`` and ``Z(y)`` with moving-average rate ``eta``."""

    z_x: np.ndarray
    z_y: np.ndarray
    eta: float = 0.1

    def __post_init__(self):
        if not 0 <= self.eta <= 1:
            raise ValueError("eta must lie in [0, 1]")
        if np.any(np.asarray(self.z_x) <= 0) or np.any(np.asarray(self.z_y) <= 0):
            raise NonPositivePartition("partition estimates must be positive")


def mm_scores(params):
    return params.phi @ params.nu.T / params.temperature


def _report(value, G, params):
    tau = params.temperature
    return LossReport(float(value), G @ params.nu / tau, G.T @ params.phi / tau)


def loss_clip(j, params, k=None):
    """Symmetric two-direction ranking NCE on ``exp(s)``.

    The X-to-Y direction ranks ``y`` among candidates drawn from ``py`` and
    the Y-to-X direction ranks ``x`` among candidates from ``px``.  With an
    integer ``k`` the negatives enter through their expectation, giving
    ``2 log k`` at constant scores.  ``k=None`` is the large-``k`` limit,
    whose minimizers are the ratio matrix times a global constant.
    """
    if k is not None and k < 2:
        raise ValueError("CLIP needs k >= 2")
    S = mm_scores(params)
    u = np.exp(S)
    v1, G1 = ranking_score_grad(j.p, j.px, j.py, u, k)
    v2, G2 = ranking_score_grad(j.p.T, j.py, j.px, u.T, k)
    return _report(v1 + v2, (G1 + G2.T) * u, params)


def loss_siglip(j, params, batch=None):
    """Pairwise sigmoid loss ``-E_p log sigma(s) - E_{px py} log sigma(-s)``."""
    P, Q, _, _ = pair_weights(j, batch)
    S = mm_scores(params)
    value = -float(np.sum(P * log_sigmoid(S))) - float(np.sum(Q * log_sigmoid(-S)))
    G = -P * sigmoid(-S) + Q * sigmoid(S)
    return _report(value, G, params)


def partition_exact(j, params):
    """Exact ``(Z(x), Z(y))`` with ``Z(x) = E_py exp(s(x, .))`` and ``Z(y) = E_px exp(s(., y))``."""
    u = np.exp(mm_scores(params))
    return u @ j.py, j.px @ u


def _partitions(j, params, partition):
    if partition is None or (isinstance(partition, str) and partition == "exact"):
        return partition_exact(j, params)
    zx, zy = np.asarray(partition.z_x, dtype=float), np.asarray(partition.z_y, dtype=float)
    if np.any(zx <= 0) or np.any(zy <= 0):
        raise NonPositivePartition("partition estimates must be positive")
    return zx, zy


def loss_mle_stopgrad(j, params, partition="exact"):
    """Negated ``2 E_p s - E_{px py} exp(s)/Z(x) - E_{px py} exp(s)/Z(y)``.

    The partitions are held constant when differentiating.  With exact
    partitions the gradient is that of the two conditional log-likelihoods,
    so it vanishes at their maximizer.

    Parameters
    ----------
    partition : "exact" or PartitionState
    """
    zx, zy = _partitions(j, params, partition)
    Q = np.outer(j.px, j.py)
    S = mm_scores(params)
    e = np.exp(S)
    W = Q * e * (1.0 / zx[:, None] + 1.0 / zy[None, :])
    value = -2.0 * float(np.sum(j.p * S)) + float(np.sum(W))
    return _report(value, -2.0 * j.p + W, params)


def partition_update(j, params, state, batch=None):
    """Moving-average partition update.

    ``z_x <- (1 - eta) z_x + eta * mean_y exp(s(x, y))`` over the batch's
    negative ``y`` draws, and symmetrically for ``z_y`` over its negative
    ``x`` draws.  ``batch=None`` uses the full population, so ``eta = 1``
    gives :func:`partition_exact`.
    """
    eta = state.eta
    if batch is None:
        mx, my = partition_exact(j, params)
    else:
        u = np.exp(mm_scores(params))
        neg = np.asarray(batch.neg_pairs)
        if len(neg) == 0:
            raise ValueError("partition update needs negative draws")
        mx = u[:, neg[:, 1]].mean(axis=1)
        my = u[neg[:, 0], :].mean(axis=0)
    return PartitionState((1 - eta) * state.z_x + eta * mx, (1 - eta) * state.z_y + eta * my, eta)


def mle_nll(j, params):
    """Sum of the two conditional negative log-likelihoods.

    ``-2 E_p s + E_px log Z(x) + E_py log Z(y)`` up to constants.  Its
    gradient equals that of :func:`loss_mle_stopgrad` with exact partitions,
    so it serves as the line-search value for that gradient.
    """
    zx, zy = partition_exact(j, params)
    S = mm_scores(params)
    value = -2.0 * float(np.sum(j.p * S)) + float(j.px @ np.log(zx)) + float(j.py @ np.log(zy))
    rep = loss_mle_stopgrad(j, params, "exact")
    return LossReport(value, rep.grad_phi, rep.grad_psi)
