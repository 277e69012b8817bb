"""Report figures rendered to PNG files with a non-interactive backend."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .dist import t_matrix  # noqa: E402
from .oracle import singular_values  # noqa: E402

# leaving the software tag out keeps the PNG bytes independent of the matplotlib version
_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="png", dpi=100, metadata=_META)
    plt.close(fig)
    return path


def plot_trace(trace, path):
    """Loss, gradient norm and (when recorded) oracle angle against iteration."""
    recs = trace.records
    it = np.array([r["iter"] for r in recs])
    keys = [k for k in ("grad_norm", "angle", "fp_residual") if k in recs[0]]
    fig, axes = plt.subplots(1, 1 + len(keys), figsize=(4 * (1 + len(keys)), 3.2))
    axes = np.atleast_1d(axes)
    axes[0].plot(it, [r["loss"] for r in recs])
    axes[0].set_xlabel("iteration")
    axes[0].set_ylabel("loss")
    for ax, key in zip(axes[1:], keys):
        vals = np.maximum(np.array([r[key] for r in recs]), 1e-17)
        ax.semilogy(it, vals)
        ax.set_xlabel("iteration")
        ax.set_ylabel(key.replace("_", " "))
    cfg = trace.config
    fig.suptitle(f"{cfg['objective']} / {cfg['learner']} on {cfg['fixture']}, d={cfg['d']}")
    return _save(fig, path)


def plot_spectrum(j, path, d=None):
    """Singular values of the normalized operator, with the rank-``d`` cut marked."""
    s = singular_values(t_matrix(j))
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.bar(np.arange(1, len(s) + 1), s)
    if d is not None:
        ax.axvline(d + 0.5, color="k", linestyle="--")
    ax.set_xlabel("index")
    ax.set_ylabel("singular value")
    return _save(fig, path)


def plot_sweep(rows, path, column="max_angle"):
    """Bar chart of one summary column per run on a log scale."""
    labels, vals = [], []
    for r in rows:
        v = r.get(column)
        if r.get("status") == "ok" and v is not None:
            labels.append(f"{r['run_id']}\n{r['objective']}")
            vals.append(max(float(v), 1e-17))
    fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(vals) + 1), 3.6))
    ax.bar(np.arange(len(vals)), vals)
    ax.set_yscale("log")
    ax.set_xticks(np.arange(len(vals)))
    ax.set_xticklabels(labels, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel(column.replace("_", " "))
    return _save(fig, path)


def plot_embedding(Y, path, labels=None):
    """Scatter plot of the first two embedding coordinates."""
    Y = np.asarray(Y, dtype=float)
    if Y.shape[1] == 1:
        Y = np.column_stack([Y[:, 0], np.zeros(len(Y))])
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.scatter(Y[:, 0], Y[:, 1], c=labels)
    ax.set_xlabel("coordinate 1")
    ax.set_ylabel("coordinate 2")
    return _save(fig, path)
