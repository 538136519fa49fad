"""NumPy implementations of the hot loops.

Used when the compiled ``_ckernels`` extension is unavailable or when
``FEDCOX_BACKEND=python`` is set. Both modules expose the same functions
with the same argument conventions:

* covariates, linear predictors and event flags are pre-sorted by
  ascending time;
* ``group_start[i]`` is the sorted index of the first subject whose time
  equals subject ``i``'s time, so the risk set of ``i`` is
  ``range(group_start[i], n)``.
"""
import numpy as np


def cox_terms(X, eta, event, group_start, order):
    """Negative log partial likelihood and its derivatives.

    ``order`` is 0 (loss only), 1 (loss, gradient) or 2 (loss, gradient,
    Hessian). Unrequested outputs are returned as ``None``.
    """
    n, p = X.shape
    if n == 0:
        return 0.0, (np.zeros(p) if order >= 1 else None), (np.zeros((p, p)) if order >= 2 else None)
    shift = eta.max()
    w = np.exp(eta - shift)
    s0 = np.cumsum(w[::-1])[::-1]
    ev = np.flatnonzero(event)
    g = group_start[ev]
    s0_ev = s0[g]
    loss = -float(np.sum(eta[ev] - np.log(s0_ev) - shift))
    if order == 0:
        return loss, None, None

    s1 = np.cumsum((w[:, None] * X)[::-1], axis=0)[::-1]
    means = s1[g] / s0_ev[:, None]
    grad = -(X[ev].sum(axis=0) - means.sum(axis=0))
    if order == 1:
        return loss, grad, None

    # sum over events of S2/S0 folded into per-subject weights
    inc = np.zeros(n)
    np.add.at(inc, g, 1.0 / s0_ev)
    a = np.cumsum(inc)
    Xw = X * (w * a)[:, None]
    hess = X.T @ Xw - means.T @ means
    hess = 0.5 * (hess + hess.T)
    return loss, grad, hess


def concordance_counts(time, event, risk):
    """Return (concordant, tied, comparable) pair counts for Harrell's C.

    Inputs need not be sorted. A pair (i, j) is comparable when
    ``time[i] < time[j]`` and ``event[i]``.
    """
    order = np.argsort(time, kind="stable")
    t = time[order]
    r = risk[order]
    e = event[order].astype(bool)
    starts = np.searchsorted(t, t, side="right")
    concordant = 0
    tied = 0
    comparable = 0
    for i in np.flatnonzero(e):
        s = starts[i]
        rest = r[s:]
        comparable += rest.size
        concordant += int(np.count_nonzero(rest < r[i]))
        tied += int(np.count_nonzero(rest == r[i]))
    return concordant, tied, comparable
