"""Energy-based spectral representations.

Scores are ``s(x, x') = v(x)^T w(x') / temperature`` where ``v`` and ``w``
are the rows of ``upsilon`` and ``upsilon_y`` (optionally projected to unit
norm).  The model ratio is ``exp(s)``.
"""

from dataclasses import dataclass, replace

import numpy as np

from ._common import log_sigmoid, pair_weights, sigmoid
from .dist import make_rng
from .linobj import LossReport, ranking_score_grad


@dataclass(frozen=True)
class EnergyParams:
    """Energy-model parameters.

    Attributes
    ----------
    upsilon : ndarray, shape (n, d)
    upsilon_y : ndarray, shape (m, d), optional
        Second-domain features.  ``None`` ties them to ``upsilon``.
    normalize : bool
        Project rows to unit norm before scoring.
    temperature : float
    """

    upsilon: np.ndarray
    upsilon_y: np.ndarray = None
    normalize: bool = False
    temperature: float = 1.0

    @property
    def tied(self):
        return self.upsilon_y is None

    @property
    def right(self):
        return self.upsilon if self.upsilon_y is None else self.upsilon_y


def _project(f, on):
    if not on:
        return f, None
    norms = np.linalg.norm(f, axis=1, keepdims=True)
    return f / norms, norms


def _unproject(g, fbar, norms):
    """Chain a gradient through row normalization ``fbar = f / ||f||``."""
    if norms is None:
        return g
    return (g - np.sum(g * fbar, axis=1, keepdims=True) * fbar) / norms


def scores(params):
    """Score matrix ``s = v w^T / temperature`` after optional projection."""
    v, _ = _project(params.upsilon, params.normalize)
    w, _ = _project(params.right, params.normalize)
    return v @ w.T / params.temperature


def _energy_report(value, G, params, normalize=None):
    """Chain ``G = dV/ds`` back to the raw feature rows."""
    on = params.normalize if normalize is None else normalize
    v, nv = _project(params.upsilon, on)
    w, nw = _project(params.right, on)
    tau = params.temperature
    gv = _unproject(G @ w / tau, v, nv)
    gw = _unproject(G.T @ v / tau, w, nw)
    if params.tied:
        g = gv + gw
        return LossReport(float(value), g, g)
    return LossReport(float(value), gv, gw)


def sampled_softmax_ranking(S, batch, k):
    """Sampled ranking NCE on ``exp(S)``.

    Each positive pair is ranked against the ``x'`` entries of the next
    ``k - 1`` negative pairs.  Returns the mean loss and ``dV/dS``.
    """
    pos = batch.pos_pairs
    npos = len(pos)
    if len(batch.neg_pairs) < npos * (k - 1):
        raise ValueError("batch has fewer than (k - 1) negatives per positive")
    neg_y = np.asarray(batch.neg_pairs[: npos * (k - 1), 1]).reshape(npos, k - 1)
    xs = pos[:, 0]
    cand = np.concatenate([pos[:, 1:2], neg_y], axis=1)
    sc = S[xs[:, None], cand]
    mx = sc.max(axis=1, keepdims=True)
    e = np.exp(sc - mx)
    value = float(np.mean(-sc[:, 0] + mx[:, 0] + np.log(e.sum(axis=1))))
    g = e / e.sum(axis=1, keepdims=True)
    g[:, 0] -= 1.0
    G = np.zeros_like(S)
    np.add.at(G, (np.repeat(xs, k), cand.ravel()), g.ravel() / npos)
    return value, G


def loss_simclr(j, params, k=None, batch=None):
    """Ranking NCE on ``exp(s)`` with rows projected to unit norm.

    Modes follow :func:`spectralrep.linobj.loss_nce_ranking`: a batch gives
    the sampled estimator, an integer ``k`` the expected-negatives surrogate
    (``log k`` at constant scores), and ``k=None`` the large-``k`` limit.
    """
    p = replace(params, normalize=True)
    S = scores(p)
    if batch is not None:
        if k is None or k < 2:
            raise ValueError("sampled SimCLR needs k >= 2")
        value, G = sampled_softmax_ranking(S, batch, k)
        return _energy_report(value, G, p)
    if k is not None and k < 2:
        raise ValueError("SimCLR needs k >= 2")
    u = np.exp(S)
    value, G = ranking_score_grad(j.p, j.px, j.py, u, k)
    return _energy_report(value, G * u, p)


def moco_objective(j, student, teacher, k=None, batch=None):
    """Ranking NCE with student anchors and frozen teacher candidates.

    Scores are ``s(x, x') = v_student(x)^T w_teacher(x') / temperature``.

    Returns
    -------
    value : float
    grad : ndarray
        Gradient with respect to the student's ``upsilon``.
    """
    v, nv = _project(student.upsilon, student.normalize)
    w, _ = _project(teacher.right, teacher.normalize)
    tau = student.temperature
    S = v @ w.T / tau
    if batch is None:
        u = np.exp(S)
        value, G = ranking_score_grad(j.p, j.px, j.py, u, k)
        G = G * u
    else:
        value, G = sampled_softmax_ranking(S, batch, k)
    return value, _unproject(G @ w / tau, v, nv)


def moco_step(j, pair, k=None, alpha=0.5, mu=0.9, batch=None):
    """One student gradient step followed by a momentum teacher update.

    Parameters
    ----------
    pair : tuple of EnergyParams
        ``(student, teacher)``.  Both use tied features.
    k : int, optional
        Candidate count.  ``None`` uses the exact large-``k`` limit.
    mu : float
        Teacher momentum; ``teacher <- mu teacher + (1 - mu) student``.
    batch : PairBatch, optional
        Sampled candidates, one positive and ``k - 1`` negatives per anchor.

    Returns
    -------
    (student, teacher) : tuple of EnergyParams
    """
    student, teacher = pair
    _, g = moco_objective(j, student, teacher, k, batch)
    new_s = replace(student, upsilon=student.upsilon - alpha * g)
    new_t = replace(teacher, upsilon=mu * teacher.upsilon + (1 - mu) * new_s.upsilon)
    return new_s, new_t


def loss_ebm_density_ratio(j, params, batch=None):
    """KL density-ratio fit ``-(E_p s - E_{px py} exp(s))``.

    The minimizer has ``exp(s)`` equal to the ratio matrix whenever the
    log-ratio matrix is representable by the score factorization.
    """
    P, Q, _, _ = pair_weights(j, batch)
    S = scores(params)
    e = np.exp(S)
    value = -float(np.sum(P * S)) + float(np.sum(Q * e))
    return _energy_report(value, -P + Q * e, params)


def loss_word2vec(cooc, V, batch=None):
    """Skip-gram negative-sampling loss with a shared embedding ``V``.

    ``-(E_p log sigma(s) + E_{pw pc} log sigma(-s))`` with ``s = V_w^T V_c``.
    This is the standard sign convention.

    Returns
    -------
    LossReport
        ``grad_phi`` and ``grad_psi`` both hold the gradient in ``V``.
    """
    if cooc.shape[0] != cooc.shape[1]:
        raise ValueError("word2vec needs a shared word/context vocabulary")
    P, Q, _, _ = pair_weights(cooc, batch)
    V = np.asarray(V, dtype=float)
    S = V @ V.T
    value = -float(np.sum(P * log_sigmoid(S))) - float(np.sum(Q * log_sigmoid(-S)))
    G = -P * sigmoid(-S) + Q * sigmoid(S)
    g = G @ V + G.T @ V
    return LossReport(value, g, g)


def partition_exact(j, params):
    """``Z(x) = sum_x' py(x') exp(s(x, x'))``."""
    return np.exp(scores(params)) @ j.py


def model_conditional(j, params):
    """Normalized model ``P(x'|x) = py(x') exp(s(x, x')) / Z(x)``."""
    c = j.py[None, :] * np.exp(scores(params))
    return c / c.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# random Fourier features


@dataclass(frozen=True)
class RffBridge:
    """Random cosine features for the Gaussian kernel.

    ``frequencies`` are standard normal and ``phases`` uniform on
    ``[0, 2 pi)``, both drawn from ``seed``.
    """

    n_features: int
    seed: int
    frequencies: np.ndarray
    phases: np.ndarray


def make_rff(d, n_features, seed):
    rng = make_rng(seed)
    om = rng.standard_normal((n_features, d))
    ph = rng.uniform(0.0, 2 * np.pi, n_features)
    return RffBridge(n_features, seed, om, ph)


def rff_expand(b, u):
    """Features whose inner products approximate ``exp(u^T u')``.

    ``sqrt(2/N) cos(omega u + b) exp(||u||^2 / 2)`` estimates the Gaussian
    kernel ``exp(-||u - u'||^2 / 2)`` rescaled by ``exp(||u||^2/2) exp(||u'||^2/2)``,
    which equals ``exp(u^T u')``.
    """
    u = np.asarray(u, dtype=float)
    feats = np.sqrt(2.0 / b.n_features) * np.cos(b.frequencies @ u + b.phases)
    return feats * np.exp(0.5 * u @ u)


def rff_error_slope(u, v, sizes=(1000, 10000, 100000), n_seeds=20, seed=0):
    """Log-log slope of the RMS estimation error of ``exp(u^T v)`` against feature count.

    Returns
    -------
    slope : float
    rms : ndarray
        Root mean squared error per size over ``n_seeds`` seeds.
    """
    target = np.exp(np.dot(u, v))
    rms = []
    for n in sizes:
        errs = []
        for s in range(n_seeds):
            b = make_rff(len(u), n, seed * 100003 + s * 7919 + n)
            errs.append(rff_expand(b, u) @ rff_expand(b, v) - target)
        rms.append(np.sqrt(np.mean(np.square(errs))))
    rms = np.array(rms)
    slope = np.polyfit(np.log(sizes), np.log(rms), 1)[0]
    return float(slope), rms


def moco_block4_stationary():
    """Closed-form stationary features of exact large-``k`` MoCo on ``block4``.

    With ``s = v v^T`` the log-ratio shifted by a constant ``c`` must be
    representable.  Taking ``c = 1`` gives ``v(x) = (a, +-b)`` with
    ``a^2 = (log 1.5 + log 0.5)/2 + 1`` and ``b^2 = (log 1.5 - log 0.5)/2``,
    the sign of the second coordinate set by the block.
    """
    la, lb = np.log(1.5), np.log(0.5)
    a = np.sqrt((la + lb) / 2 + 1.0)
    b = np.sqrt((la - lb) / 2)
    return np.array([[a, b], [a, b], [a, -b], [a, -b]])
