"""Configuration-driven training, evaluation and sweeps.

Every learner runs single-threaded on exact tabular expectations (or seeded
minibatches in ``sampled`` mode), so a configuration and seed determine the
trace byte for byte.  Wall-clock time is kept out of serialized artifacts.
"""

import csv
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import ebm, latent, linobj, mm, power
from .dist import JointTable, conditional, make_rng, ratio_matrix, sample_pairs, t_matrix
from .errors import ConfigError, DimensionMismatch, IncompatiblePair, NonFiniteLoss, SpectralError
from .fixtures import get_fixture, true_posterior
from .optim import minimize
from .oracle import eckart_young_tail, oracle_angle, oracle_factors
from .tasks import SupervisedTable, fit_linear_regressor

LINEAR = linobj.OBJECTIVES
ENERGY = ("ebm_ratio", "simclr", "word2vec")
MULTIMODAL = ("clip", "siglip", "mle_stopgrad")
LATENT = ("deepcluster", "sela", "dino", "swav")

COMPATIBILITY = {
    "direct": LINEAR + ENERGY + MULTIMODAL,
    "minc": ("minc",),
    "byol": ("byol",),
    "gvpi": ("fdiv_kl", "nce_ranking"),
    "moco": ("moco",),
    "em": ("deepcluster", "sela"),
    "dino": ("dino",),
    "swav": ("swav",),
}

DEFAULT_STEP = {"direct": 0.1, "minc": 0.1, "byol": 2.5, "gvpi": 1.0, "moco": 0.5, "em": 1.0, "dino": 1.0, "swav": 1.0}

DEFAULT_SCALE = {"barlow_twins": 1e-4}

# objectives that accept a sampled PairBatch
SAMPLED_OK = LINEAR + ("ebm_ratio", "simclr", "word2vec", "siglip")

CSV_COLUMNS = (
    "run_id", "objective", "learner", "fixture", "d", "seed", "status", "converged", "iterations",
    "final_loss", "grad_norm", "max_angle", "fit_residual", "eckart_young_gap",
    "ratio_err_raw", "ratio_err_norm", "downstream_mse", "posterior_err", "message",
)


@dataclass(frozen=True)
class TrainConfig:
    """One training run.

    Attributes
    ----------
    objective, learner : str
        Must form a pair listed in :data:`COMPATIBILITY`.
    d : int
        Feature dimension.  Latent learners read the cluster count from
        ``options["k"]`` (default 2).
    fixture : str
        Fixture name, used when no table is passed to :func:`run_train`.
    step_size : float, optional
        Learner default from :data:`DEFAULT_STEP` when omitted.  For the
        direct learner in exact mode this is the first trial step of the
        line search.
    max_iters : int
    tol : float
        Stop once the gradient norm is at most ``tol``.
    seed : int
    batch : {"exact", "sampled"}
    batch_size : int
        Positive pairs per sampled step.
    init : {"gaussian", "oracle-warm"}
    init_scale : float, optional
        Standard deviation of the gaussian initialization.  ``None`` gives
        0.1, except ``1e-4`` for Barlow Twins, whose zero-loss set is larger
        than the top subspace and is reached near it only from a small start.
    tied : bool, optional
        Share one factor across both domains.  ``None`` picks the objective
        default.
    metric : bool, optional
        Precondition direct learners by the marginals (search direction
        ``-grad / px`` per row).  ``None`` enables it for linear objectives.
    log_every : int
    options : dict
        Objective and learner keywords such as ``lambda_``, ``k``,
        ``score``, ``mu``, ``epsilon`` or ``temperature``.
    run_id : str, optional
    """

    objective: str
    learner: str = "direct"
    d: int = 2
    fixture: str = "block4"
    step_size: float = None
    max_iters: int = 20000
    tol: float = 1e-8
    seed: int = 0
    batch: str = "exact"
    batch_size: int = 256
    init: str = "gaussian"
    init_scale: float = None
    tied: bool = None
    metric: bool = None
    log_every: int = 10
    options: dict = field(default_factory=dict)
    run_id: str = None

    def validate(self):
        if not isinstance(self.max_iters, int) or self.max_iters < 1:
            raise ConfigError("max_iters must be an integer >= 1")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if not isinstance(self.d, int) or self.d < 1:
            raise ConfigError("d must be an integer >= 1")
        if self.log_every < 1:
            raise ConfigError("log_every must be >= 1")
        if self.learner not in COMPATIBILITY:
            raise ConfigError(f"unknown learner {self.learner!r}")
        if self.objective not in COMPATIBILITY[self.learner]:
            raise IncompatiblePair(f"objective {self.objective!r} is not trained by learner {self.learner!r}")
        if self.batch not in ("exact", "sampled"):
            raise ConfigError("batch must be 'exact' or 'sampled'")
        if self.batch == "sampled" and (self.learner != "direct" or self.objective not in SAMPLED_OK):
            raise ConfigError(f"sampled mode is not available for {self.objective!r} with {self.learner!r}")
        if self.init not in ("gaussian", "oracle-warm"):
            raise ConfigError("init must be 'gaussian' or 'oracle-warm'")
        return self

    @property
    def scale(self):
        if self.init_scale is not None:
            return self.init_scale
        return DEFAULT_SCALE.get(self.objective, 0.1)

    @property
    def step(self):
        return DEFAULT_STEP[self.learner] if self.step_size is None else self.step_size


def config_from_mapping(mapping, **overrides):
    """Build a validated :class:`TrainConfig` from a parsed configuration dict.

    Keys under ``opt`` (written ``opt.name = value``) become ``options``.
    """
    data = dict(mapping)
    if "opt" in data:
        data["options"] = {**data.get("options", {}), **data.pop("opt")}
    data.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(sorted(unknown))}")
    if "objective" not in data:
        raise ConfigError("configuration needs an objective")
    return TrainConfig(**data).validate()


def config_to_mapping(config):
    return asdict(config)


@dataclass
class TrainTrace:
    """Result of :func:`run_train`.

    ``records`` hold ``iter``, ``loss``, ``grad_norm`` and, where defined,
    ``angle`` (largest principal angle to the oracle subspace) and
    ``fp_residual``.
    """

    config: dict
    records: list
    params: dict
    converged: bool
    iterations: int
    wall_clock: float = 0.0
    status: str = "ok"


# ---------------------------------------------------------------------------
# helpers


def _instance(config, instance):
    if instance is None:
        return get_fixture(config.fixture)
    if isinstance(instance, str):
        return get_fixture(instance)
    if isinstance(instance, JointTable):
        return instance
    raise TypeError("instance must be a JointTable or a fixture name")


def _default_tied(config, j):
    if config.tied is not None:
        return bool(config.tied)
    if config.objective in MULTIMODAL or config.objective == "ebm_ratio":
        return False
    square = j.shape[0] == j.shape[1]
    return bool(square and np.allclose(j.p, j.p.T, atol=1e-15))


def _family(objective, learner):
    if learner != "direct":
        return learner
    if objective in LINEAR:
        return "linear"
    if objective in ENERGY:
        return "energy"
    return "mm"


def _iter_seed(seed, it):
    return int(np.random.SeedSequence([int(seed), int(it)]).generate_state(1)[0])


def _oracle_warm(j, d, tied):
    phi, psi = oracle_factors(j, d)
    return {"phi": phi} if tied else {"phi": phi, "psi": psi}


def _linear_params(arrs):
    return linobj.ReprParams(arrs["phi"], arrs.get("psi"))


def _energy_params(config, arrs):
    o = config.options
    return ebm.EnergyParams(arrs["upsilon"], arrs.get("upsilon_y"), bool(o.get("normalize", False)),
                            float(o.get("temperature", 1.0)))


def _mm_params(config, arrs):
    return mm.MmParams(arrs["phi"], arrs["nu"], float(config.options.get("temperature", 1.0)))


LINEAR_OPTS = {
    "barlow_twins": ("lambda_",),
    "vicreg_square": ("lambda_",),
    "vicreg_hinge": ("lambda_", "eta", "eps"),
    "nce_binary": ("score",),
    "nce_ranking": ("k", "score"),
    "fdiv_kl": ("score",),
    "fdiv_chisq": ("score",),
    "spectral_contrastive": (),
}


def _direct_loss(config, j, arrs, batch=None):
    obj = config.objective
    o = config.options
    if obj in LINEAR:
        opts = {key: o[key] for key in LINEAR_OPTS[obj] if key in o}
        return linobj.evaluate(obj, j, _linear_params(arrs), batch=batch, **opts)
    if obj == "ebm_ratio":
        return ebm.loss_ebm_density_ratio(j, _energy_params(config, arrs), batch)
    if obj == "simclr":
        return ebm.loss_simclr(j, _energy_params(config, arrs), o.get("k"), batch)
    if obj == "word2vec":
        return ebm.loss_word2vec(j, arrs["upsilon"], batch)
    if obj == "clip":
        return mm.loss_clip(j, _mm_params(config, arrs), o.get("k"))
    if obj == "siglip":
        return mm.loss_siglip(j, _mm_params(config, arrs), batch)
    if obj == "mle_stopgrad":
        return mm.mle_nll(j, _mm_params(config, arrs))
    raise IncompatiblePair(f"objective {obj!r} has no direct loss")


def _direct_names(config, tied):
    fam = _family(config.objective, config.learner)
    if fam == "linear":
        return ("phi",) if tied else ("phi", "psi")
    if fam == "energy":
        return ("upsilon",) if tied or config.objective == "word2vec" else ("upsilon", "upsilon_y")
    return ("phi", "nu")


def _angle(j, arrs, d):
    """Largest principal angle of the learned factors to the oracle subspace."""
    if "phi" in arrs and "nu" not in arrs:
        a = oracle_angle(j, arrs["phi"], d, "x").max_angle
        if "psi" in arrs:
            a = max(a, oracle_angle(j, arrs["psi"], d, "y").max_angle)
        return a
    if "xi" in arrs:
        return oracle_angle(j, arrs["xi"], d, "x").max_angle
    return None


def _safe_angle(j, arrs, d):
    try:
        return _angle(j, arrs, d)
    except SpectralError:
        return float(np.pi / 2)


def _record(it, loss, gn, j, arrs, d, extra=None):
    rec = {"iter": int(it), "loss": float(loss), "grad_norm": float(gn)}
    ang = _safe_angle(j, arrs, d)
    if ang is not None:
        rec["angle"] = float(ang)
    if extra:
        rec.update(extra)
    for key, val in rec.items():
        if key != "iter" and not np.isfinite(val):
            raise NonFiniteLoss(f"non-finite {key} at iteration {it}", last_good=None)
    return rec


# ---------------------------------------------------------------------------
# learners


def _train_direct(config, j, rng):
    tied = _default_tied(config, j)
    names = _direct_names(config, tied)
    n, m = j.shape
    d = config.d
    if config.objective in ("word2vec",) and n != m:
        raise DimensionMismatch("word2vec needs a square co-occurrence table")
    if tied and n != m:
        raise DimensionMismatch("tied factors need a square table")
    rows = {"phi": n, "psi": m, "upsilon": n, "upsilon_y": m, "nu": m}
    if config.init == "oracle-warm":
        if _family(config.objective, config.learner) != "linear":
            raise ConfigError("oracle-warm initialization is defined for linear objectives only")
        arrs = _oracle_warm(j, d, tied)
    else:
        arrs = {name: config.scale * rng.standard_normal((rows[name], d)) for name in names}
    shapes = [(name, arrs[name].shape) for name in names]
    sizes = [int(np.prod(s)) for _, s in shapes]

    def unpack(x):
        out, pos = {}, 0
        for (name, shape), size in zip(shapes, sizes):
            out[name] = x[pos:pos + size].reshape(shape)
            pos += size
        return out

    def gvec(rep):
        if len(names) == 1:
            return rep.grad_phi.ravel()
        return np.concatenate([rep.grad_phi.ravel(), rep.grad_psi.ravel()])

    use_metric = config.metric if config.metric is not None else config.objective in LINEAR
    weight_of = {"phi": j.px, "upsilon": j.px, "psi": j.py, "upsilon_y": j.py, "nu": j.py}
    metric = None
    if use_metric:
        metric = np.concatenate([np.repeat(weight_of[name], d) for name in names])

    def fun(x):
        rep = _direct_loss(config, j, unpack(x))
        return rep.value, gvec(rep)

    x0 = np.concatenate([arrs[name].ravel() for name in names])
    records = []

    if config.batch == "exact":
        def cb(it, x, f, gn):
            rec = _record(it, f, gn, j, unpack(x), d)
            if not records or rec["iter"] > records[-1]["iter"]:
                records.append(rec)

        res = minimize(fun, x0, max_iters=config.max_iters, tol=config.tol, step0=config.step,
                       metric=metric, callback=cb, log_every=config.log_every)
        x, converged, iters = res.x, res.converged, res.iterations
        if records[-1]["iter"] != iters:
            f, g = fun(x)
            records.append(_record(iters, f, np.linalg.norm(g), j, unpack(x), d))
        return {k: v.copy() for k, v in unpack(x).items()}, records, converged, iters

    k = config.options.get("k")
    n_neg = config.batch_size * (k - 1) if config.objective in ("nce_ranking", "simclr") and k else config.batch_size
    w = np.ones_like(x0) if metric is None else metric
    x = x0
    last_good = {kk: v.copy() for kk, v in unpack(x).items()}
    for it in range(config.max_iters + 1):
        if it % config.log_every == 0 or it == config.max_iters:
            f, g = fun(x)
            if not np.isfinite(f):
                raise NonFiniteLoss(f"non-finite loss at iteration {it}", last_good=last_good)
            records.append(_record(it, f, np.linalg.norm(g), j, unpack(x), d))
            last_good = {kk: v.copy() for kk, v in unpack(x).items()}
        if it == config.max_iters:
            break
        batch = sample_pairs(j, config.batch_size, n_neg, _iter_seed(config.seed, it))
        x = x - config.step * gvec(_direct_loss(config, j, unpack(x), batch)) / w
    return {kk: v.copy() for kk, v in unpack(x).items()}, records, False, config.max_iters


def _power_init(config, j, rng):
    n = j.shape[0]
    if j.shape[0] != j.shape[1]:
        raise DimensionMismatch("power-iteration learners need a square table")
    d = config.d
    if config.init == "oracle-warm":
        return oracle_factors(j, d)[0]
    if config.learner == "gvpi":
        xi = config.scale * rng.standard_normal((n, d))
        xi[:, 0] = 1.0
        return xi
    return config.scale * rng.standard_normal((n, d))


def _state_arrays(s):
    return {"xi": s.xi.copy(), "lam": s.lam.copy(), "a_mat": s.a_mat.copy(), "target_xi": s.target_xi.copy()}


def _train_power(config, j, rng):
    learner = config.learner
    o = config.options
    s = power.init_state(_power_init(config, j, rng), beta=float(o.get("beta", 0.9)))
    alpha = config.step
    d = config.d
    records = []
    converged = False
    loss_kind = "kl" if config.objective == "fdiv_kl" else "nce_ranking"
    k = o.get("k")

    def measure(s):
        if learner == "minc":
            P, px = j.p, j.px
            lam = s.beta * s.lam + (1 - s.beta) * (s.xi.T @ (px[:, None] * s.xi))
            lam = 0.5 * (lam + lam.T)
            g = P @ s.xi - (px[:, None] * s.xi) @ np.tril(lam).T
            loss = power.fixed_point_residual(j, s.xi, s.lam)
            return loss, float(np.linalg.norm(g)), {"fp_residual": loss}
        if learner == "byol":
            sl = power.byol_lambda_step(j, s)
            g = power.byol_xi_grad(j, sl)
            diff = sl.xi @ sl.lam.T
            loss = float(j.px @ np.sum(diff**2, axis=1) - 2 * np.sum(j.p * (diff @ sl.target_xi.T))
                         + j.py @ np.sum(sl.target_xi**2, axis=1))
            return loss, float(np.linalg.norm(g)), {"fp_residual": power.fixed_point_residual(j, sl.xi, sl.lam)}
        value, gx, ga = power.gvpi_objective(j, s, loss_kind, k, "raw")
        return value, float(np.sqrt(np.sum(gx**2) + np.sum(ga**2))), None

    last_good = _state_arrays(s)
    for it in range(config.max_iters + 1):
        loss, gn, extra = measure(s)
        if not (np.isfinite(loss) and np.isfinite(gn)):
            raise NonFiniteLoss(f"non-finite loss at iteration {it}", last_good=last_good)
        done = gn <= config.tol or it == config.max_iters
        if it % config.log_every == 0 or done:
            records.append(_record(it, loss, gn, j, {"xi": s.xi}, d, extra))
            last_good = _state_arrays(s)
        if done:
            converged = gn <= config.tol
            break
        if learner == "minc":
            s = power.minc_step(j, s, alpha)
        elif learner == "byol":
            s = power.byol_step(j, s, alpha, float(o.get("tau", 0.0)))
        else:
            s = power.gvpi_step(j, s, loss_kind, alpha, int(o.get("round_length", 1)), k, "raw")
    return _state_arrays(s), records, converged, records[-1]["iter"]


def _train_moco(config, j, rng):
    if j.shape[0] != j.shape[1]:
        raise DimensionMismatch("MoCo needs a square table")
    o = config.options
    v0 = config.scale * rng.standard_normal((j.shape[0], config.d))
    student = ebm.EnergyParams(v0, None, bool(o.get("normalize", False)), float(o.get("temperature", 1.0)))
    teacher = student
    k = o.get("k")
    mu_ = float(o.get("mu", 0.9))
    records = []
    converged = False
    for it in range(config.max_iters + 1):
        loss, g = ebm.moco_objective(j, student, teacher, k)
        gn = float(np.linalg.norm(g))
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"non-finite loss at iteration {it}",
                                last_good={"upsilon": student.upsilon.copy(), "teacher": teacher.upsilon.copy()})
        done = gn <= config.tol or it == config.max_iters
        if it % config.log_every == 0 or done:
            records.append(_record(it, loss, gn, j, {}, config.d))
        if done:
            converged = gn <= config.tol
            break
        student, teacher = ebm.moco_step(j, (student, teacher), k, config.step, mu_)
    return {"upsilon": student.upsilon.copy(), "teacher": teacher.upsilon.copy()}, records, converged, records[-1]["iter"]


def _latent_arrays(p, teacher=None):
    out = {"upsilon": p.upsilon.copy(), "W": p.W.copy(), "b": p.b.copy()}
    if teacher is not None:
        out["teacher"] = np.array(teacher, dtype=float)
    return out


def _train_latent(config, j, rng):
    o = config.options
    k = int(o.get("k", 2))
    n = j.shape[0]
    if config.learner == "em":
        # features start at the conditional rows P(.|x), the second view of x
        ups = conditional(j).copy()
        params = latent.LatentParams(ups, config.scale * rng.standard_normal((ups.shape[1], k)), np.zeros(k))
        mode = config.objective
        records = []
        prev = None
        for it in range(config.max_iters):
            params, targets, losses = latent.em_run(params, 1, mode, config.seed, int(o.get("n_restarts", 5)),
                                                    int(o.get("m_iters", 100)), config.step,
                                                    float(o.get("epsilon", 0.05)))
            _, g = latent.ce_loss(params, targets)
            gn = float(np.sqrt(sum(np.sum(v**2) for v in g.values())))
            records.append(_record(it + 1, losses[-1], gn, j, {}, config.d))
            stable = prev is not None and np.array_equal(np.argmax(latent.posterior(params), 1), prev)
            prev = np.argmax(latent.posterior(params), 1)
            if gn <= config.tol or (mode == "deepcluster" and stable):
                break
        return _latent_arrays(params), records, records[-1]["grad_norm"] <= config.tol, records[-1]["iter"]
    params = latent.LatentParams(config.scale * rng.standard_normal((n, config.d)),
                                 config.scale * rng.standard_normal((config.d, k)), np.zeros(k))
    mode = "sinkhorn" if config.learner == "swav" else str(o.get("teacher_mode", "previous"))
    teacher = params
    records = []
    converged = False
    for it in range(config.max_iters + 1):
        loss, g = latent.dino_loss(j, params, teacher)
        gn = float(np.sqrt(sum(np.sum(v**2) for v in g.values())))
        done = gn <= config.tol or it == config.max_iters
        if it % config.log_every == 0 or done:
            records.append(_record(it, loss, gn, j, {}, config.d))
        if done:
            converged = gn <= config.tol
            break
        params, teacher = latent.dino_step(j, params, teacher, config.step, mode, float(o.get("epsilon", 0.05)))
    table = latent.posterior(teacher) if isinstance(teacher, latent.LatentParams) else teacher
    return _latent_arrays(params, table), records, converged, records[-1]["iter"]


def run_train(config, instance=None):
    """Train one configuration.

    Parameters
    ----------
    config : TrainConfig
    instance : JointTable or str, optional
        Table or fixture name; defaults to ``config.fixture``.

    Returns
    -------
    TrainTrace

    Raises
    ------
    IncompatiblePair, ConfigError
        For invalid configurations.
    NonFiniteLoss
        With the last finite parameters attached.
    """
    config.validate()
    j = _instance(config, instance)
    rng = make_rng(config.seed)
    start = time.perf_counter()
    learner = config.learner
    if learner == "direct":
        params, records, conv, iters = _train_direct(config, j, rng)
    elif learner in ("minc", "byol", "gvpi"):
        params, records, conv, iters = _train_power(config, j, rng)
    elif learner == "moco":
        params, records, conv, iters = _train_moco(config, j, rng)
    else:
        params, records, conv, iters = _train_latent(config, j, rng)
    cfg = config_to_mapping(config)
    if isinstance(instance, JointTable):
        cfg["fixture"] = "custom"
    return TrainTrace(cfg, records, params, bool(conv), int(iters), time.perf_counter() - start)


# ---------------------------------------------------------------------------
# evaluation


def _ratio_model(j, params, objective, learner, options):
    """Model estimate of the ratio matrix, or ``None`` when the learner fixes no scale."""
    o = options or {}
    if learner == "byol":
        return None
    if learner == "minc":
        return params["xi"] @ params["xi"].T
    if learner == "gvpi":
        s = power.PowerState(params["xi"], params["lam"], params["a_mat"], params["target_xi"])
        S = s.xi @ s.a_mat.T @ s.target_xi.T
        return S
    if learner in ("em", "dino", "swav"):
        post = latent.posterior(latent.LatentParams(params["upsilon"], params["W"], params["b"]))
        pz = j.px @ post
        return (post / pz) @ post.T
    if learner == "moco" or objective in ENERGY:
        ep = ebm.EnergyParams(params["upsilon"], params.get("upsilon_y"), bool(o.get("normalize", objective == "simclr")),
                              float(o.get("temperature", 1.0)))
        if objective == "simclr":
            ep = replace(ep, normalize=True)
        return np.exp(ebm.scores(ep))
    if objective in MULTIMODAL:
        return np.exp(mm.mm_scores(mm.MmParams(params["phi"], params["nu"], float(o.get("temperature", 1.0)))))
    phi = params["phi"]
    S = phi @ params.get("psi", phi).T
    if objective in ("nce_binary", "nce_ranking", "fdiv_kl", "fdiv_chisq"):
        score = o.get("score", "softplus")
        if score == "softplus":
            return np.logaddexp(0.0, S)
    return S


def ratio_errors(j, R):
    """Raw, row-normalized and column-normalized max-abs errors of a ratio model.

    The normalized comparisons turn ``py R`` into a conditional over ``y``
    (rows) and ``px R`` into a conditional over ``x`` (columns) and compare
    with the table's conditionals.
    """
    r = ratio_matrix(j).r
    raw = float(np.max(np.abs(R - r)))
    if np.any(R <= 0):
        return raw, np.inf, np.inf
    rows = j.py[None, :] * R
    rows = rows / rows.sum(axis=1, keepdims=True)
    cols = j.px[:, None] * R
    cols = cols / cols.sum(axis=0, keepdims=True)
    row_err = float(np.max(np.abs(rows - j.p / j.px[:, None])))
    col_err = float(np.max(np.abs(cols - j.p / j.py[None, :])))
    return raw, row_err, col_err


def _jsonable(v):
    if v is None:
        return None
    v = float(v)
    return v if np.isfinite(v) else None


def run_eval(source, instance=None, objective=None, learner=None, options=None, d=None):
    """Metrics for trained parameters.

    Parameters
    ----------
    source : TrainTrace or dict
        A trace, or a parameter dict (then ``objective`` and ``learner`` are
        required).
    instance : JointTable or str, optional
        Defaults to the trace's fixture.

    Returns
    -------
    dict
        ``fit_residual`` (``||T - sqrt(px) R sqrt(py)^T||^2`` for the model
        ratio ``R``), ``eckart_young_gap`` (fit residual minus the optimal
        rank-``d`` tail), ``max_angle`` and ``angles`` (principal angles to
        the oracle top-``d`` subspace), ``ratio_err_raw``, ``ratio_err_row``,
        ``ratio_err_col`` and ``ratio_err_norm`` (the larger normalized
        error), ``downstream_mse`` (excess squared error of ``E[y|x]`` with
        label values ``0..m-1``) and ``posterior_err`` for fixtures with a
        known latent posterior.  Undefined metrics are ``None``.

    Raises
    ------
    DimensionMismatch
        If the parameters do not fit the table.
    """
    fixture = None
    if isinstance(source, TrainTrace):
        params = source.params
        cfg = source.config
        objective, learner = cfg["objective"], cfg["learner"]
        options = cfg.get("options", {})
        d = cfg["d"] if d is None else d
        fixture = cfg.get("fixture")
    else:
        params = {k: np.asarray(v, dtype=float) for k, v in source.items()}
        if objective is None or learner is None:
            raise ConfigError("objective and learner are required with raw parameters")
    if instance is None:
        if fixture in (None, "custom"):
            raise ConfigError("an instance is required")
        instance = fixture
    if isinstance(instance, str):
        fixture = instance
    j = _instance(TrainConfig(objective=objective, learner=learner), instance)
    n, m = j.shape
    lead = params.get("phi", params.get("xi", params.get("upsilon")))
    if lead is None or lead.shape[0] != n:
        raise DimensionMismatch(f"parameters have {None if lead is None else lead.shape[0]} rows, table has {n}")
    for key, rows in (("psi", m), ("nu", m), ("upsilon_y", m)):
        if key in params and params[key].shape[0] != rows:
            raise DimensionMismatch(f"{key} has {params[key].shape[0]} rows, table has {rows}")
    d = int(lead.shape[1]) if d is None else int(d)
    if learner in ("em", "dino", "swav"):
        d = int(params["W"].shape[1])
    out = {"d": d, "n": n, "m": m}
    R = _ratio_model(j, params, objective, learner, options)
    tm = t_matrix(j)
    if R is None:
        out["fit_residual"] = None
        out["eckart_young_gap"] = None
        out.update(ratio_err_raw=None, ratio_err_row=None, ratio_err_col=None, ratio_err_norm=None)
    else:
        fit = float(np.sum((tm.t - tm.sqrt_px[:, None] * R * tm.sqrt_py[None, :]) ** 2))
        out["fit_residual"] = fit
        out["eckart_young_gap"] = fit - eckart_young_tail(tm, min(d, min(n, m)))
        raw, row, col = ratio_errors(j, R)
        out.update(ratio_err_raw=raw, ratio_err_row=_jsonable(row), ratio_err_col=_jsonable(col),
                   ratio_err_norm=_jsonable(max(row, col)))
    arrs = {k: params[k] for k in ("phi", "psi", "xi") if k in params and "nu" not in params}
    if arrs:
        feats = arrs.get("phi", arrs.get("xi"))
        try:
            if "psi" in arrs:
                a1 = oracle_angle(j, arrs["phi"], d, "x").principal_angles
                a2 = oracle_angle(j, arrs["psi"], d, "y").principal_angles
                angles = np.maximum(a1, a2)
            else:
                angles = oracle_angle(j, feats, d, "x").principal_angles
            out["angles"] = [float(a) for a in angles]
            out["max_angle"] = float(np.max(angles))
        except SpectralError:
            out["angles"] = None
            out["max_angle"] = float(np.pi / 2)
    else:
        out["angles"] = None
        out["max_angle"] = None
    st = SupervisedTable(j)
    if "phi" in params and "nu" not in params and R is not None and objective in ("spectral_contrastive", "barlow_twins",
                                                                                 "vicreg_square", "vicreg_hinge"):
        out["downstream_mse"] = fit_linear_regressor(st, params["phi"])[1]
    elif R is not None and np.all(R > 0):
        rows = j.py[None, :] * R
        pred = (rows / rows.sum(axis=1, keepdims=True)) @ st.y_values
        truth = conditional(j) @ st.y_values
        out["downstream_mse"] = float(j.px @ (pred - truth) ** 2)
    elif "phi" in params and "nu" not in params:
        out["downstream_mse"] = fit_linear_regressor(st, params["phi"])[1]
    else:
        out["downstream_mse"] = None
    truth = true_posterior(fixture) if fixture else None
    if truth is not None and learner in ("em", "dino", "swav"):
        post = latent.posterior(latent.LatentParams(params["upsilon"], params["W"], params["b"]))
        out["posterior_err"] = latent.permutation_error(post, truth)[0]
    else:
        out["posterior_err"] = None
    return out


# ---------------------------------------------------------------------------
# serialization


def _arrays_to_lists(params):
    return {k: np.asarray(v).tolist() for k, v in sorted(params.items())}


def trace_to_json(trace):
    """Deterministic JSON of a trace; wall-clock time is left out."""
    obj = {
        "config": trace.config,
        "converged": trace.converged,
        "iterations": trace.iterations,
        "status": trace.status,
        "records": trace.records,
        "params": _arrays_to_lists(trace.params),
    }
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def trace_from_json(text):
    o = json.loads(text)
    params = {k: np.array(v, dtype=float) for k, v in o["params"].items()}
    return TrainTrace(o["config"], o["records"], params, o["converged"], o["iterations"], 0.0, o["status"])


def metrics_to_json(metrics):
    return json.dumps(metrics, sort_keys=True, indent=1) + "\n"


# ---------------------------------------------------------------------------
# sweeps


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return "%.17g" % v
    return str(v)


def sweep_one(mapping):
    """Train and evaluate one run; failures become rows with ``status != ok``."""
    row = {c: None for c in CSV_COLUMNS}
    row.update(run_id=mapping.get("run_id"), objective=mapping.get("objective"), learner=mapping.get("learner", "direct"),
               fixture=mapping.get("fixture", "block4"), d=mapping.get("d", 2), seed=mapping.get("seed", 0))
    try:
        cfg = config_from_mapping(mapping)
        trace = run_train(cfg)
        met = run_eval(trace)
        last = trace.records[-1]
        row.update(status="ok", converged=trace.converged, iterations=trace.iterations, final_loss=last["loss"],
                   grad_norm=last["grad_norm"], max_angle=met["max_angle"], fit_residual=met["fit_residual"],
                   eckart_young_gap=met["eckart_young_gap"], ratio_err_raw=met["ratio_err_raw"],
                   ratio_err_norm=met["ratio_err_norm"], downstream_mse=met["downstream_mse"],
                   posterior_err=met["posterior_err"], message="")
    except Exception as exc:  # noqa: BLE001 - a failed run is reported as a row
        row.update(status=type(exc).__name__, message=str(exc).replace("\n", " "))
    return row


def run_sweep(configs, parallelism=1):
    """Run configurations independently and summarize them as CSV.

    Parameters
    ----------
    configs : list of TrainConfig or dict
    parallelism : int
        Worker processes.  Runs share no state, and rows are sorted by
        ``run_id`` before writing, so the CSV does not depend on this.

    Returns
    -------
    csv_text : str
        Columns :data:`CSV_COLUMNS`.
    rows : list of dict
    """
    if not configs:
        raise ConfigError("a sweep needs at least one configuration")
    mappings = []
    for i, c in enumerate(configs):
        mp = config_to_mapping(c) if isinstance(c, TrainConfig) else dict(c)
        if mp.get("run_id") is None:
            mp["run_id"] = f"run{i:04d}"
        mappings.append(mp)
    if parallelism > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            rows = list(pool.map(sweep_one, mappings))
    else:
        rows = [sweep_one(mp) for mp in mappings]
    rows.sort(key=lambda r: str(r["run_id"]))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in rows:
        writer.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
    return buf.getvalue(), rows
