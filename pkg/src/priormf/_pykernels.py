"""Pure numpy implementation of the per-block kernels.

Every function here has a twin with the same signature in ``_ckernels.pyx``.
A "block" is one factor row (a user row of ``W`` or an item row of ``H``)
together with the ratings that touch it; ``other`` is the opposite factor
matrix, ``idx``/``vals`` index the rated counterparts, and ``S``/``s`` are the
Gram matrix and row sum of ``other``.  ``n_other`` is ``len(other)``.

``kind`` is 0 (squared loss), 1 (absolute loss) or 2 (generalized KL).
``counters[0]`` is incremented each time a KL product is clamped to ``eps``.
"""

import numpy as np

SL, AL, GKL = 0, 1, 2


def _terms(kind, row, Hr, vals, alpha, r0, eps, counters, want_grad):
    # known-ratings part of the block: value and per-rating gradient weights
    p = Hr @ row
    if kind == SL:
        e = vals - p
        e0 = r0 - p
        value = float(e @ e - alpha * (e0 @ e0))
        coef = -2.0 * (vals - (1.0 - alpha) * p - alpha * r0) if want_grad else None
    elif kind == AL:
        value = float(np.abs(vals - p).sum() - alpha * p.sum())
        coef = np.sign(p - vals) - alpha if want_grad else None
    else:
        low = p < eps
        if low.any():
            counters[0] += int(low.sum())
        pc = np.where(low, eps, p)
        value = float((vals * np.log(vals / pc) - vals + (1.0 - alpha) * p).sum())
        coef = -vals / pc + (1.0 - alpha) if want_grad else None
    return value, coef


def _prior_and_l1(kind, row, S, s, alpha, lam, r0, n_other, want_grad):
    if kind == SL:
        Sw = S @ row
        value = alpha * (n_other * r0 * r0 - 2.0 * r0 * (row @ s) + row @ Sw)
        value += lam * np.abs(row).sum()
        if not want_grad:
            return float(value), None
        grad = 2.0 * alpha * (Sw - r0 * s) + lam * np.sign(row)
        return float(value), grad
    value = alpha * (row @ s) + lam * np.abs(row).sum()
    if not want_grad:
        return float(value), None
    return float(value), alpha * s + lam


def _value_gathered(kind, row, Hr, vals, S, s, alpha, lam, r0, n_other, eps, counters):
    v1, _ = _terms(kind, row, Hr, vals, alpha, r0, eps, counters, False)
    v2, _ = _prior_and_l1(kind, row, S, s, alpha, lam, r0, n_other, False)
    return v1 + v2


def _eval_gathered(kind, row, Hr, vals, S, s, alpha, lam, r0, n_other, eps, counters):
    v1, coef = _terms(kind, row, Hr, vals, alpha, r0, eps, counters, True)
    v2, g2 = _prior_and_l1(kind, row, S, s, alpha, lam, r0, n_other, True)
    return v1 + v2, coef @ Hr + g2


def block_value(kind, row, idx, vals, other, S, s, alpha, lam, r0, n_other, eps, counters):
    """Block objective (known terms, closed-form prior term, row L1)."""
    return _value_gathered(
        kind, row, other[idx], vals, S, s, alpha, lam, r0, n_other, eps, counters
    )


def block_eval(kind, row, idx, vals, other, S, s, alpha, lam, r0, n_other, eps, counters):
    """Block objective and its (sub)gradient with respect to ``row``."""
    return _eval_gathered(
        kind, row, other[idx], vals, S, s, alpha, lam, r0, n_other, eps, counters
    )


def line_search(
    kind, row, idx, vals, other, S, s, alpha, lam, r0, n_other,
    nonneg, t0, shrink, c, max_halvings, eps, counters,
):
    """One projected gradient step with Armijo backtracking.

    Returns ``(new_row, f_start, f_new, step)``.  ``step == 0`` means the row
    was left unchanged (stationary, or no acceptable step found).
    """
    Hr = other[idx]
    f0, g = _eval_gathered(kind, row, Hr, vals, S, s, alpha, lam, r0, n_other, eps, counters)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite block gradient")
    t = t0
    for _ in range(max_halvings + 1):
        cand = row - t * g
        if nonneg:
            np.maximum(cand, 0.0, out=cand)
        dec = float(g @ (row - cand))
        if dec <= 0.0:
            break
        f1 = _value_gathered(kind, cand, Hr, vals, S, s, alpha, lam, r0, n_other, eps, counters)
        if f1 <= f0 - c * dec:
            return cand, f0, f1, t
        t *= shrink
    return row.copy(), f0, f0, 0.0


def rank1_update(S, s, old, new):
    """Replace ``old`` by ``new`` in the Gram matrix ``S`` and sum ``s``, in place."""
    if S is not None:
        S += np.outer(new, new) - np.outer(old, old)
    s += new - old
