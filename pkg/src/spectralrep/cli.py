"""Command-line interface: fixtures, training, evaluation, sweeps, classical
embeddings, downstream tasks and a quick self-test.

Every subcommand writes deterministic text.  With ``--out DIR`` outputs go to
files in ``DIR``; otherwise the main result is printed.  The exit code is 0
only if every requested run reports ``ok``.
"""

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from . import classic, dist, linobj, oracle, tasks, train
from .config import load_config, parse_value
from .errors import SpectralError
from .fixtures import FIXTURES, get_fixture
from .gradcheck import check_gradient
from .optim import minimize

TIE_TOL = 1e-9


def _fmt(v):
    return "%.17g" % v


def _emit(text, out, name):
    if out is None:
        sys.stdout.write(text)
        return None
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, name)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def _json(obj):
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def _rows_to_csv(rows, columns):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([train._fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def _overrides(pairs):
    """``KEY=VALUE`` strings parsed with the configuration value grammar."""
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        head, _, tail = key.partition(".")
        if (head in out) and (bool(tail) != isinstance(out[head], dict)):
            raise ValueError(f"--set uses {head!r} both as a value and as a section")
        if tail:
            out.setdefault(head, {})[tail] = parse_value(value)
        else:
            out[key] = parse_value(value)
    return out


def _merge(mapping, overrides):
    """Overlay ``--set`` values on a configuration, merging dotted sections."""
    out = dict(mapping)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = {**out[key], **value}
        else:
            out[key] = value
    return out


def _load_table(path):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return dist.from_json(text) if path.endswith(".json") else dist.from_csv(text)


def _instance(args):
    if getattr(args, "table", None):
        return _load_table(args.table)
    return get_fixture(args.fixture)


# ---------------------------------------------------------------------------
# gen


def cmd_gen(args):
    names = FIXTURES if args.fixture == "all" else (args.fixture,)
    for name in names:
        j = get_fixture(name)
        if args.format == "json":
            _emit(dist.to_json(j) + "\n", args.out, f"{name}.json")
        else:
            _emit(dist.to_csv(j), args.out, f"{name}.csv")
    return 0


# ---------------------------------------------------------------------------
# train / eval


def _train_mapping(args):
    mapping = _merge(load_config(args.config) if args.config else {}, _overrides(args.set))
    if "opt" in mapping and "options" in mapping:
        mapping["options"] = {**mapping["options"], **mapping.pop("opt")}
    if args.seed is not None:
        mapping["seed"] = args.seed
    return mapping


def _metrics_csv(row):
    return _rows_to_csv([row], train.CSV_COLUMNS)


def cmd_train(args):
    mapping = _train_mapping(args)
    if args.table:
        mapping["fixture"] = "custom"
    mapping.setdefault("run_id", "run")
    cfg = train.config_from_mapping(mapping)
    trace = train.run_train(cfg, _load_table(args.table) if args.table else None)
    metrics = train.run_eval(trace, _load_table(args.table) if args.table else None)
    run_id = cfg.run_id
    if args.out:
        _emit(train.trace_to_json(trace), args.out, f"{run_id}.trace.json")
    if args.format == "csv":
        last = trace.records[-1]
        row = {c: None for c in train.CSV_COLUMNS}
        row.update(run_id=run_id, objective=cfg.objective, learner=cfg.learner, fixture=trace.config["fixture"],
                   d=cfg.d, seed=cfg.seed, status=trace.status, converged=trace.converged,
                   iterations=trace.iterations, final_loss=last["loss"], grad_norm=last["grad_norm"], message="")
        row.update({k: metrics.get(k) for k in train.CSV_COLUMNS if k in metrics})
        _emit(_metrics_csv(row), args.out, f"{run_id}.metrics.csv")
    else:
        _emit(train.metrics_to_json(metrics), args.out, f"{run_id}.metrics.json")
    if args.report and args.out:
        from . import plotting

        plotting.plot_trace(trace, os.path.join(args.out, f"{run_id}.trace.png"))
        j = _load_table(args.table) if args.table else get_fixture(cfg.fixture)
        plotting.plot_spectrum(j, os.path.join(args.out, f"{run_id}.spectrum.png"), cfg.d)
    return 0 if trace.status == "ok" else 1


def cmd_eval(args):
    with open(args.trace, encoding="utf-8") as fh:
        trace = train.trace_from_json(fh.read())
    inst = _load_table(args.table) if args.table else (args.fixture or None)
    metrics = train.run_eval(trace, inst)
    if args.format == "csv":
        cols = sorted(k for k, v in metrics.items() if not isinstance(v, list))
        _emit(_rows_to_csv([metrics], cols), args.out, "metrics.csv")
    else:
        _emit(train.metrics_to_json(metrics), args.out, "metrics.json")
    return 0


# ---------------------------------------------------------------------------
# sweep


def sweep_configs(mapping):
    """Expand a sweep configuration into run mappings.

    A ``runs`` key holds a JSON list of per-run dicts; every other key is a
    default shared by all runs.  Without ``runs`` the file is one run.
    """
    mapping = dict(mapping)
    runs = mapping.pop("runs", None)
    parallelism = mapping.pop("parallelism", None)
    if runs is None:
        runs = [{}]
    out = []
    for i, r in enumerate(runs):
        m = {**mapping, **r}
        if "opt" in mapping or "opt" in r:
            m["opt"] = {**mapping.get("opt", {}), **r.get("opt", {})}
        m.setdefault("run_id", f"run{i:04d}")
        out.append(m)
    return out, parallelism


def cmd_sweep(args):
    mapping = _merge(load_config(args.config), _overrides(args.set))
    configs, par = sweep_configs(mapping)
    if args.seed is not None:
        for c in configs:
            c["seed"] = args.seed
    par = args.parallelism or par or 1
    text, rows = train.run_sweep(configs, parallelism=int(par))
    if args.format == "json":
        _emit(_json(rows), args.out, "sweep.json")
    else:
        _emit(text, args.out, "sweep.csv")
    if args.report and args.out:
        from . import plotting

        plotting.plot_sweep(rows, os.path.join(args.out, "sweep_angle.png"), "max_angle")
        plotting.plot_sweep(rows, os.path.join(args.out, "sweep_ratio.png"), "ratio_err_norm")
    return 0 if all(r["status"] == "ok" for r in rows) else 1


# ---------------------------------------------------------------------------
# classic


def _seed(args):
    return 0 if args.seed is None else args.seed


def _load_cloud(path):
    with open(path, encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    try:
        [float(v) for v in rows[0]]
    except ValueError:
        rows = rows[1:]
    return classic.PointCloud(np.array([[float(v) for v in r] for r in rows]))


def _cloud_graph(pc, epsilon):
    eps = np.inf if epsilon is None else epsilon
    return classic.epsilon_graph(pc, eps)


def _embed_csv(rows, labels):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id"] + [f"c{i}" for i in range(rows.shape[1])])
    for lab, r in zip(labels, rows):
        w.writerow([lab] + [_fmt(v) for v in r])
    return buf.getvalue()


def _nca_fit(pc, pos, d, seed, iters):
    p = pc.x.shape[1]
    w0 = np.eye(d, p) + 1e-2 * dist.make_rng(seed).standard_normal((d, p))

    def fun(w):
        rep = classic.nca_loss(pc, pos, w.reshape(d, p))
        return rep.value, rep.grad_phi.ravel()

    res = minimize(fun, w0.ravel(), max_iters=iters, tol=1e-10)
    W = res.x.reshape(d, p)
    return pc.x @ W.T


def cmd_classic(args):
    method, d = args.method, args.d
    table_input = args.input.endswith(".json")
    if table_input:
        j = _load_table(args.input)
        labels = list(j.labels_x)
        if method == "cca":
            a, b, corr = classic.cca(j, d)
            emb = np.vstack([a, b])
            labels = [f"x:{s}" for s in j.labels_x] + [f"y:{s}" for s in j.labels_y]
            sys.stderr.write("correlations " + " ".join(_fmt(c) for c in corr) + "\n")
        elif method == "laplacian":
            emb = classic.laplacian_embed(classic.NeighborGraph(0.5 * (j.p + j.p.T)), d)
        elif method == "sne":
            emb = classic.sne_embed(0.5 * (j.p + j.p.T), d, iters=args.iters, seed=_seed(args))
        else:
            raise ValueError(f"method {method!r} needs a point-cloud CSV input")
    else:
        pc = _load_cloud(args.input)
        labels = [str(i) for i in range(pc.x.shape[0])]
        if method == "pca":
            emb = classic.pca_scores(pc, d)
        elif method == "mds":
            emb = classic.mds(pc, d)
        elif method == "laplacian":
            emb = classic.laplacian_embed(_cloud_graph(pc, args.epsilon), d)
        elif method == "lpp":
            emb = pc.x @ classic.lpp(pc, _cloud_graph(pc, args.epsilon), d)
        elif method == "nca":
            g = _cloud_graph(pc, args.epsilon).w.copy()
            np.fill_diagonal(g, 0.0)
            emb = _nca_fit(pc, g / g.sum(), d, _seed(args), args.iters)
        elif method == "sne":
            g = _cloud_graph(pc, args.epsilon).w.copy()
            np.fill_diagonal(g, 0.0)
            emb = classic.sne_embed(g / g.sum(), d, iters=args.iters, seed=_seed(args))
        else:
            raise ValueError("cca needs a joint-table JSON input")
    _emit(_embed_csv(emb, labels), args.out, f"{method}.csv")
    if args.report and args.out:
        from . import plotting

        plotting.plot_embedding(emb, os.path.join(args.out, f"{method}.png"))
    return 0


# ---------------------------------------------------------------------------
# downstream


def _features(args, j):
    if args.trace:
        with open(args.trace, encoding="utf-8") as fh:
            params = train.trace_from_json(fh.read()).params
        phi = params.get("phi", params.get("xi"))
        return phi, params.get("psi", phi)
    rank = oracle.numerical_rank(dist.t_matrix(j)) if args.d is None else args.d
    return oracle.oracle_factors(j, rank)


def downstream(task, j=None, d=None, phi=None, psi=None):
    """Metrics dict for one downstream task on oracle or given features."""
    if task in ("iv", "lstd"):
        if task == "iv":
            iv = dist.synth_iv_xor(0.7, (-0.3, 0.7), (0.0, 1.0))
            ph, mu = tasks.iv_features(iv, 2 if d is None else d)
            f_hat, g_hat = tasks.iv_saddle_solve(iv, ph, mu)
            direct = tasks.iv_direct_solve(iv)
            return {"task": "iv", "f_hat": f_hat.tolist(), "f_direct": direct.tolist(),
                    "err_vs_truth": float(np.max(np.abs(f_hat - iv.f_star)))}
        mdp = dist.MdpTable(np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([1.0, 0.0]), 0.5, np.array([1.0, 0.0]))
        pi = tasks.PolicyTable(np.ones((2, 1)))
        F = tasks.mdp_features(mdp, 2 if d is None else d)
        q = F @ tasks.lstd_policy_eval(mdp, pi, F)
        qd = tasks.q_direct(mdp, pi)
        return {"task": "lstd", "q_hat": q.tolist(), "q_direct": qd.tolist(),
                "err": float(np.max(np.abs(q - qd)))}
    if phi is None:
        rank = oracle.numerical_rank(dist.t_matrix(j)) if d is None else d
        phi, psi = oracle.oracle_factors(j, rank)
    st = tasks.SupervisedTable(j)
    if task == "regress":
        _, excess = tasks.fit_linear_regressor(st, phi)
        bayes = tasks.bayes_mse(st)
        return {"task": "regress", "bayes_mse": bayes, "mse": bayes + excess, "excess_mse": excess}
    if task == "classify":
        classes, _ = tasks.bayes_classify(st, phi, tasks.posterior_factors(j, phi, psi))
        # a class is correct when it attains the largest true posterior, so
        # exact ties in the table count any of the tied classes
        cond = dist.conditional(j)
        best = cond[np.arange(len(classes)), classes] >= cond.max(axis=1) - TIE_TOL
        return {"task": "classify", "classes": classes.tolist(), "agreement": float(np.mean(best))}
    if task == "attention":
        pred = tasks.attention_regressor(st, phi, np.arange(j.shape[0]))
        err = float(np.max(np.abs(pred - tasks.conditional_mean(st))))
        return {"task": "attention", "predictions": pred.tolist(), "max_abs_err": err}
    raise ValueError(f"unknown task {task!r}")


def cmd_downstream(args):
    j = None if args.task in ("iv", "lstd") else _instance(args)
    phi = psi = None
    if j is not None and args.trace:
        phi, psi = _features(args, j)
    out = downstream(args.task, j, args.d, phi, psi)
    _emit(_json(out), args.out, f"{args.task}.json")
    return 0


# ---------------------------------------------------------------------------
# selftest


def selftest(seed=0):
    """Quick checks of the core identities; returns ``(ok, lines)``."""
    lines = []
    rng = dist.make_rng(seed)

    def add(name, ok, detail):
        lines.append(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")

    raw = rng.random((5, 4)) + 0.05
    j = dist.from_table(raw)
    s = oracle.singular_values(dist.t_matrix(j))
    add("top singular value", abs(s[0] - 1) <= 1e-10, f"|s1 - 1| = {abs(s[0] - 1):.2e}")
    d = 2
    params = linobj.ReprParams(rng.standard_normal((5, d)), rng.standard_normal((4, d)))
    worst = 0.0
    for name in linobj.OBJECTIVES:
        if name == "vicreg_hinge":
            continue

        def f(x, name=name):
            p = linobj.ReprParams(x[:10].reshape(5, d), x[10:].reshape(4, d))
            return linobj.evaluate(name, j, p).value

        rep = linobj.evaluate(name, j, params)
        x0 = np.concatenate([params.phi.ravel(), params.psi.ravel()])
        g = np.concatenate([rep.grad_phi.ravel(), rep.grad_psi.ravel()])
        worst = max(worst, check_gradient(f, lambda _x, g=g: g, x0))
    add("gradient audit", worst <= 1e-6, f"max relative error {worst:.2e}")
    b4 = dist.block4()
    phi, psi = oracle.oracle_factors(b4, 2)
    add("oracle fit", oracle.fit_residual(b4, phi, psi) <= 1e-12, "block4 rank-2 residual")
    pc = classic.PointCloud(np.array([[0.0], [1.0], [2.0]]))
    _, vals = classic.mds(pc, 1, return_eigenvalues=True)
    add("mds eigenvalue", abs(vals[0] - 4) <= 1e-10, f"{vals[0]:.12g}")
    return all(line.startswith("PASS") for line in lines), lines


def cmd_selftest(args):
    ok, lines = selftest(0 if args.seed is None else args.seed)
    _emit("\n".join(lines) + "\n", args.out, "selftest.txt")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# parser


def _common(p, fmt_default="json"):
    p.add_argument("--seed", type=int, default=None, help="override the run seed")
    p.add_argument("--out", default=None, help="output directory (default: print)")
    p.add_argument("--format", choices=("csv", "json"), default=fmt_default)


def build_parser():
    parser = argparse.ArgumentParser(prog="spectralrep", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write fixture tables")
    p.add_argument("fixture", choices=FIXTURES + ("all",))
    _common(p, "csv")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train one configuration")
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a configuration key")
    p.add_argument("--table", default=None, help="joint table CSV or JSON instead of the fixture")
    p.add_argument("--report", action="store_true", help="render PNG figures into --out")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved trace")
    p.add_argument("trace")
    p.add_argument("--fixture", default=None)
    p.add_argument("--table", default=None)
    _common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="run a list of configurations")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--parallelism", type=int, default=None)
    p.add_argument("--report", action="store_true")
    _common(p, "csv")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("classic", help="classical embeddings")
    p.add_argument("method", choices=("pca", "mds", "laplacian", "lpp", "cca", "nca", "sne"))
    p.add_argument("--input", required=True, help="point-cloud CSV or joint-table JSON")
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--epsilon", type=float, default=None, help="neighbor radius (default: all pairs)")
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--report", action="store_true")
    _common(p, "csv")
    p.set_defaults(func=cmd_classic)

    p = sub.add_parser("downstream", help="downstream sufficiency tasks")
    p.add_argument("task", choices=("regress", "classify", "attention", "iv", "lstd"))
    p.add_argument("--fixture", default="block4", choices=FIXTURES)
    p.add_argument("--table", default=None)
    p.add_argument("--trace", default=None, help="use trained features instead of the oracle")
    p.add_argument("--d", type=int, default=None)
    _common(p)
    p.set_defaults(func=cmd_downstream)

    p = sub.add_parser("selftest", help="quick identity checks")
    _common(p, "csv")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SpectralError, ValueError, KeyError, OSError) as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
