"""Exact finite joint distributions, their operators, sampling and synthetic instances.

A :class:`JointTable` holds a probability table ``p`` over a pair of finite
domains.  Rows index the anchor domain ``x`` and columns the paired domain
``x'`` (or ``y``).  Every other module is written against this type.
"""

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import MassMismatch, NegativeEntry, NotIdentified, ZeroRowOrColumn

MASS_TOL = 1e-12


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class JointTable:
    """Finite joint distribution ``p[x, x']`` with strictly positive marginals.

    Parameters
    ----------
    p : ndarray, shape (n, m)
        Nonnegative entries summing to one.
    labels_x, labels_y : tuple of str, optional
        Element names.  Integer indices are used when omitted.
    """

    p: np.ndarray
    labels_x: tuple = None
    labels_y: tuple = None

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.ndim != 2:
            raise ValueError("joint table must be a 2-D matrix")
        if not np.all(np.isfinite(p)):
            raise ValueError("joint table has non-finite entries")
        if np.any(p < 0):
            raise NegativeEntry("joint table has negative entries")
        if abs(p.sum() - 1.0) > MASS_TOL:
            raise MassMismatch(f"joint table mass is {p.sum()!r}, expected 1")
        if np.any(p.sum(axis=1) <= 0) or np.any(p.sum(axis=0) <= 0):
            raise ZeroRowOrColumn("every row and column marginal must be positive")
        n, m = p.shape
        lx = tuple(str(i) for i in range(n)) if self.labels_x is None else tuple(map(str, self.labels_x))
        ly = tuple(str(i) for i in range(m)) if self.labels_y is None else tuple(map(str, self.labels_y))
        if len(lx) != n or len(ly) != m:
            raise ValueError("label count does not match table shape")
        object.__setattr__(self, "p", _frozen(p))
        object.__setattr__(self, "labels_x", lx)
        object.__setattr__(self, "labels_y", ly)

    @property
    def shape(self):
        return self.p.shape

    @property
    def px(self):
        return self.p.sum(axis=1)

    @property
    def py(self):
        return self.p.sum(axis=0)

    def transpose(self):
        """Return the table with the two domains swapped."""
        return JointTable(self.p.T.copy(), self.labels_y, self.labels_x)


@dataclass(frozen=True)
class TMatrix:
    """Normalized operator ``t = p / (sqrt(px) sqrt(py)^T)``."""

    t: np.ndarray
    sqrt_px: np.ndarray
    sqrt_py: np.ndarray


@dataclass(frozen=True)
class RatioMatrix:
    """Pointwise ratio ``r = p / (px py^T)``."""

    r: np.ndarray


@dataclass(frozen=True)
class PairBatch:
    """Index pairs drawn from the joint (positives) and from ``px x py`` (negatives).

    ``pos_pairs`` and ``neg_pairs`` are integer arrays of shape (count, 2)
    whose columns are the x index and the x' index.
    """

    pos_pairs: np.ndarray
    neg_pairs: np.ndarray
    seed: int


@dataclass(frozen=True)
class MdpTable:
    """Finite MDP with state-action rows ordered as ``s * n_actions + a``."""

    transition: np.ndarray
    reward: np.ndarray
    gamma: float
    d0: np.ndarray
    n_actions: int = field(default=1)

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=float)
        if not np.allclose(P.sum(axis=1), 1.0, atol=1e-12, rtol=0):
            raise ValueError("transition rows must sum to 1")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if P.shape[0] != P.shape[1] * self.n_actions:
            raise ValueError("transition must have |S|*|A| rows and |S| columns")
        object.__setattr__(self, "transition", _frozen(P))
        object.__setattr__(self, "reward", _frozen(self.reward))
        object.__setattr__(self, "d0", _frozen(self.d0))

    @property
    def n_states(self):
        return self.transition.shape[1]


@dataclass(frozen=True)
class IvModel:
    """Instrumental-variable model over binary-or-larger finite (z, x).

    ``f_star`` is kept for evaluation only; estimators must not read it.
    """

    p_zx: JointTable
    ey_zx: np.ndarray
    f_star: np.ndarray

    def __post_init__(self):
        ey = _frozen(self.ey_zx)
        f = _frozen(self.f_star)
        object.__setattr__(self, "ey_zx", ey)
        object.__setattr__(self, "f_star", f)
        p = self.p_zx.p
        resid = (p * (ey - f[None, :])).sum(axis=1) / self.p_zx.px
        if np.max(np.abs(resid)) > 1e-12:
            raise ValueError("instrument validity E[y - f*(x) | z] = 0 is violated")

    @property
    def ey_z(self):
        """Conditional mean of the outcome given the instrument."""
        p = self.p_zx.p
        return (p * self.ey_zx).sum(axis=1) / self.p_zx.px

    @property
    def cond_x_given_z(self):
        return self.p_zx.p / self.p_zx.px[:, None]


def from_table(raw):
    """Normalize a nonnegative matrix into a :class:`JointTable`.

    Examples
    --------
    >>> from_table([[3, 1], [1, 3]]).p
    array([[0.375, 0.125],
           [0.125, 0.375]])
    """
    raw = np.asarray(raw, dtype=float)
    if np.any(raw < 0):
        raise NegativeEntry("raw table has negative entries")
    if np.any(raw.sum(axis=1) <= 0) or np.any(raw.sum(axis=0) <= 0):
        raise ZeroRowOrColumn("raw table has an all-zero row or column")
    return JointTable(raw / raw.sum())


def marginals(j):
    """Return the row and column marginals ``(px, py)``."""
    return j.px, j.py


def t_matrix(j):
    sx = np.sqrt(j.px)
    sy = np.sqrt(j.py)
    return TMatrix(_frozen(j.p / np.outer(sx, sy)), _frozen(sx), _frozen(sy))


def ratio_matrix(j):
    return RatioMatrix(_frozen(j.p / np.outer(j.px, j.py)))


def conditional(j):
    """Row-conditional table ``P(x' | x)``."""
    return j.p / j.px[:, None]


# ---------------------------------------------------------------------------
# sampling


def alias_table(prob):
    """Build Vose alias tables for a categorical distribution.

    Returns
    -------
    accept : ndarray of float
        Probability of keeping the drawn column.
    alias : ndarray of int
        Column used when the draw is rejected.
    """
    prob = np.asarray(prob, dtype=float)
    n = prob.size
    scaled = prob * n / prob.sum()
    accept = np.ones(n)
    alias = np.arange(n)
    small = [i for i in range(n) if scaled[i] < 1.0]
    large = [i for i in range(n) if scaled[i] >= 1.0]
    while small and large:
        s = small.pop()
        g = large.pop()
        accept[s] = scaled[s]
        alias[s] = g
        scaled[g] = scaled[g] + scaled[s] - 1.0
        (small if scaled[g] < 1.0 else large).append(g)
    for i in small + large:
        accept[i] = 1.0
    return accept, alias


def alias_draw(accept, alias, size, rng):
    col = rng.integers(0, accept.size, size=size)
    keep = rng.random(size) < accept[col]
    return np.where(keep, col, alias[col])


def make_rng(seed):
    """Counter-based generator keyed by ``seed``."""
    return np.random.Generator(np.random.Philox(int(seed)))


def sample_pairs(j, n_pos, n_neg, seed):
    """Draw positive pairs from ``p`` and negative pairs from ``px x py``.

    Positives and negatives come from two independent Philox streams derived
    from ``seed``, so changing ``n_neg`` never changes the positives.
    """
    if n_pos < 0 or n_neg < 0:
        raise ValueError("sample counts must be nonnegative")
    n, m = j.shape
    ss = np.random.SeedSequence(int(seed))
    pos_ss, neg_ss = ss.spawn(2)
    rng_pos = np.random.Generator(np.random.Philox(pos_ss))
    rng_neg = np.random.Generator(np.random.Philox(neg_ss))
    acc, ali = alias_table(j.p.ravel())
    flat = alias_draw(acc, ali, n_pos, rng_pos)
    pos = np.stack([flat // m, flat % m], axis=1).astype(np.int64)
    ax, lx = alias_table(j.px)
    ay, ly = alias_table(j.py)
    negx = alias_draw(ax, lx, n_neg, rng_neg)
    negy = alias_draw(ay, ly, n_neg, rng_neg)
    neg = np.stack([negx, negy], axis=1).astype(np.int64)
    pos.setflags(write=False)
    neg.setflags(write=False)
    return PairBatch(pos.reshape(n_pos, 2), neg.reshape(n_neg, 2), int(seed))


def empirical_joint(batch, shape):
    """Normalized count table of the positive pairs."""
    counts = np.zeros(shape)
    np.add.at(counts, (batch.pos_pairs[:, 0], batch.pos_pairs[:, 1]), 1.0)
    return counts / max(len(batch.pos_pairs), 1)


# ---------------------------------------------------------------------------
# synthetic instances


def synth_block(n, a, b):
    """Two equal diagonal blocks with mass ``a`` inside and ``b`` across.

    With ``n = 4``, ``a = 3/32`` and ``b = 1/32`` the operator has singular
    values ``(1, 0.5, 0, 0)``.
    """
    if n % 2 or n <= 0:
        raise ValueError("n must be a positive even size")
    if a <= 0 or b <= 0:
        raise ValueError("block masses must be positive")
    if abs(n * n / 2 * (a + b) - 1.0) > MASS_TOL:
        raise MassMismatch("(n^2/2)(a+b) must equal 1")
    h = n // 2
    same = np.kron(np.eye(2), np.ones((h, h)))
    p = np.where(same > 0, a, b)
    return JointTable(p)


def block4():
    return synth_block(4, 3 / 32, 1 / 32)


def _mixture_joint(prior, ex, ey):
    p = (ex * prior[None, :]) @ ey.T
    return p / p.sum()


def synth_random_lowrank(n, m, d, seed, uniform_mass=1e-3):
    """Random joint of rank ``d`` built from ``d`` latent components.

    Each latent component has an emission distribution over each domain.
    Emissions are mixed with ``uniform_mass`` of the uniform distribution so
    every entry is positive while the rank stays exactly ``d``.  When
    ``n == m`` both domains share emissions, which makes the table symmetric
    positive semidefinite.
    """
    if not 1 <= d <= min(n, m):
        raise ValueError("rank must lie in [1, min(n, m)]")
    rng = make_rng(seed)
    prior = rng.dirichlet(np.full(d, 2.0))
    ex = rng.dirichlet(np.full(n, 0.5), size=d).T
    ex = (1 - uniform_mass) * ex + uniform_mass / n
    if n == m:
        ey = ex
    else:
        ey = rng.dirichlet(np.full(m, 0.5), size=d).T
        ey = (1 - uniform_mass) * ey + uniform_mass / m
    return JointTable(_mixture_joint(prior, ex, ey))


def synth_latent_mixture(n_x, k, seed):
    """Latent-class joint ``sum_z P(z) P(x|z) P(x'|z)`` with disjoint emission supports.

    Elements are split into ``k`` contiguous groups and component ``z``
    emits only inside group ``z``.  The true posterior is therefore one-hot,
    and it is an exact fixed point of the posterior-propagation map.

    Returns
    -------
    joint : JointTable
    true_posterior : ndarray, shape (n_x, k)
    """
    if not 1 <= k <= n_x:
        raise ValueError("k must lie in [1, n_x]")
    rng = make_rng(seed)
    groups = np.array_split(np.arange(n_x), k)
    emit = np.zeros((n_x, k))
    post = np.zeros((n_x, k))
    for z, g in enumerate(groups):
        emit[g, z] = rng.dirichlet(np.full(len(g), 5.0)) if len(g) > 1 else 1.0
        post[g, z] = 1.0
    prior = rng.dirichlet(np.full(k, 5.0)) if k > 1 else np.ones(1)
    return JointTable(_mixture_joint(prior, emit, emit)), post


def synth_iv_xor(p_u0, h, f_star):
    """Binary instrument model with ``x = z XOR u`` and ``y = f*(x) + h(u)``.

    ``z`` is uniform and ``u`` is an independent confounder with
    ``P(u = 0) = p_u0``.  The noise ``h`` must have zero mean under ``u``.
    """
    h = np.asarray(h, dtype=float)
    f_star = np.asarray(f_star, dtype=float)
    if not 0 < p_u0 < 1:
        raise ValueError("p_u0 must lie in (0, 1)")
    if p_u0 == 0.5:
        raise NotIdentified("p_u0 = 0.5 makes x independent of z")
    if abs(p_u0 * h[0] + (1 - p_u0) * h[1]) > 1e-12:
        raise ValueError("h must have zero mean under the confounder")
    pu = np.array([p_u0, 1 - p_u0])
    p = np.zeros((2, 2))
    ey = np.zeros((2, 2))
    for z in range(2):
        for x in range(2):
            u = z ^ x
            p[z, x] = 0.5 * pu[u]
            ey[z, x] = f_star[x] + h[u]
    return IvModel(JointTable(p), ey, f_star)


# ---------------------------------------------------------------------------
# serialization


def _fmt(v):
    return "%.17g" % v


def to_csv(j):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([""] + list(j.labels_y))
    for lab, row in zip(j.labels_x, j.p):
        w.writerow([lab] + [_fmt(v) for v in row])
    return buf.getvalue()


def from_csv(text):
    rows = list(csv.reader(io.StringIO(text)))
    labels_y = rows[0][1:]
    labels_x = [r[0] for r in rows[1:]]
    p = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return JointTable(p, tuple(labels_x), tuple(labels_y))


def to_json(j):
    obj = {
        "labels_x": list(j.labels_x),
        "labels_y": list(j.labels_y),
        "p": j.p.tolist(),
    }
    return json.dumps(obj, indent=1)


def from_json(text):
    obj = json.loads(text)
    return JointTable(np.array(obj["p"], dtype=float), tuple(obj["labels_x"]), tuple(obj["labels_y"]))
