"""Small numerical helpers shared by the objective modules."""

import numpy as np
from scipy.special import expit, log_expit

from .dist import empirical_joint
from .errors import NonPositiveScore


def softplus(a):
    return np.logaddexp(0.0, a)


def sigmoid(a):
    return expit(a)


def log_sigmoid(a):
    return log_expit(a)


def positive_scores(s, mode, mask=None):
    """Map raw inner products to positive scores.

    Parameters
    ----------
    s : ndarray
        Raw inner products.
    mode : {"softplus", "raw"}
        ``softplus`` returns ``log(1 + e^s)``; ``raw`` returns ``s`` and
        raises :class:`NonPositiveScore` if any entry selected by ``mask`` is
        not strictly positive.

    Returns
    -------
    u : ndarray
        Positive scores.
    du : ndarray
        Elementwise derivative ``du/ds``.
    """
    if mode == "softplus":
        return softplus(s), sigmoid(s)
    if mode == "raw":
        sel = s if mask is None else s[mask]
        if np.any(sel <= 0):
            raise NonPositiveScore("score u <= 0 in raw mode")
        return s, np.ones_like(s)
    raise ValueError(f"unknown score mode {mode!r}")


def pair_weights(j, batch=None):
    """Weights ``(P, Q, px, py)`` used as expectation operators.

    Without a batch these are the exact joint, the product of marginals and
    the marginals.  With a batch, ``P`` is the empirical joint of the positive
    pairs, ``px`` and ``py`` are its marginals, and ``Q`` is the empirical
    joint of the negative pairs (or ``px py^T`` when no negatives were drawn).
    """
    if batch is None:
        px, py = j.px, j.py
        return j.p, np.outer(px, py), px, py
    P = empirical_joint(batch, j.shape)
    px, py = P.sum(axis=1), P.sum(axis=0)
    if len(batch.neg_pairs):
        Q = np.zeros(j.shape)
        np.add.at(Q, (batch.neg_pairs[:, 0], batch.neg_pairs[:, 1]), 1.0)
        Q /= len(batch.neg_pairs)
    else:
        Q = np.outer(px, py)
    return P, Q, px, py


def xlogy_sum(w, v):
    """``sum w * log v`` over entries with ``w > 0``."""
    m = w > 0
    return float(np.sum(w[m] * np.log(v[m])))


def offdiag(M):
    return M - np.diag(np.diag(M))
