"""Deterministic first-order minimizer used by all gradient-trained learners."""

from dataclasses import dataclass, field

import numpy as np

from .errors import SpectralError

# relative size of a value change that is indistinguishable from rounding
ROUNDING = 1e-13


@dataclass
class OptResult:
    x: np.ndarray
    value: float
    grad_norm: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)


def _safe(fun, x):
    try:
        with np.errstate(all="ignore"):
            f, g = fun(x)
    except (SpectralError, FloatingPointError, np.linalg.LinAlgError):
        return np.inf, None
    if not np.isfinite(f) or g is None or not np.all(np.isfinite(g)):
        return np.inf, None
    return f, g


def minimize(fun, x0, max_iters=20000, tol=1e-8, step0=0.1, metric=None, callback=None,
             log_every=1, armijo=1e-4, max_halvings=60):
    """Barzilai-Borwein gradient descent with Armijo backtracking.

    Parameters
    ----------
    fun : callable
        ``fun(x) -> (value, grad)``.  Domain errors such as nonpositive
        scores count as an infinite value.
    x0 : ndarray
    tol : float
        Stop once the gradient norm is at most ``tol``.  Near the optimum,
        where an Armijo decrease would fall below rounding of the value, a
        step is accepted only if it shrinks the gradient norm.
    metric : ndarray, optional
        Positive weights ``w`` of a diagonal metric.  The search direction
        is ``-grad / w``, which is steepest descent in the weighted norm.
    callback : callable, optional
        ``callback(it, x, value, grad_norm)`` returning a dict stored in the
        history every ``log_every`` iterations.

    Returns
    -------
    OptResult
    """
    x = np.array(x0, dtype=float)
    w = np.ones_like(x) if metric is None else np.asarray(metric, dtype=float)
    f, g = _safe(fun, x)
    if g is None:
        raise FloatingPointError("objective is not finite at the initial point")
    step = step0
    hist = []
    it = 0
    gn = float(np.linalg.norm(g))
    while True:
        if callback is not None and (it % log_every == 0 or gn <= tol or it >= max_iters):
            rec = callback(it, x, f, gn)
            if rec is not None:
                hist.append(rec)
        if gn <= tol or it >= max_iters:
            break
        d = -g / w
        slope = float(np.sum(g * d))
        t = step
        for _ in range(max_halvings):
            xn = x + t * d
            fn, gnew = _safe(fun, xn)
            if gnew is not None:
                if abs(t * slope) <= ROUNDING * max(1.0, abs(f)):
                    # the predicted decrease is below rounding of the value,
                    # so require a smaller gradient instead
                    if fn <= f + ROUNDING * max(1.0, abs(f)) and np.linalg.norm(gnew) < gn:
                        break
                elif fn <= f + armijo * t * slope:
                    break
            t *= 0.5
        else:
            break
        s = xn - x
        y = gnew - g
        sy = float(np.sum(s * y))
        step = float(np.sum(w * s * s)) / sy if sy > 0 else 2 * t
        step = min(max(step, 1e-12), 1e6)
        x, f, g = xn, fn, gnew
        gn = float(np.linalg.norm(g))
        it += 1
    return OptResult(x, float(f), gn, it, gn <= tol, hist)
