"""Block objectives and gradients for the three losses, using the cache tricks.

A user block holds every term of the objective that depends on one user row
``w``: the known ratings of that user, the prior on all of the user's unknown
ratings (collapsed into a closed form through the item caches), and the
row's own L1 term.  Item blocks are the mirror image, so each ``*_item_block``
is the user version with the roles of users and items swapped.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import kernels
from .kernels import GKL_EPS

_SL, _AL, _GKL = 0, 1, 2


class BlockEval(NamedTuple):
    value: float
    gradient: np.ndarray


def _as_block_inputs(row, idx, vals, other):
    row = np.ascontiguousarray(row, dtype=np.float64)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    vals = np.ascontiguousarray(vals, dtype=np.float64)
    other = np.ascontiguousarray(other, dtype=np.float64)
    if row.ndim != 1 or other.ndim != 2 or other.shape[1] != row.shape[0]:
        raise ValueError("row and factor matrix dimensions disagree")
    if idx.shape != vals.shape:
        raise ValueError("indices and ratings must have the same length")
    return row, idx, vals, other


def _check_nonneg(row, other, idx):
    if (row < 0).any() or (len(idx) and (other[idx] < 0).any()):
        raise ValueError("absolute loss and KL blocks require non-negative factors")


def _evaluate(kind, row, idx, vals, other, S, s, alpha, lam, r0, counters=None):
    if counters is None:
        counters = np.zeros(1, dtype=np.int64)
    if S is not None:
        S = np.ascontiguousarray(S, dtype=np.float64)
    s = np.ascontiguousarray(s, dtype=np.float64)
    value, grad = kernels.backend().block_eval(
        kind, row, idx, vals, other, S, s, float(alpha), float(lam), float(r0),
        float(len(other)), GKL_EPS, counters,
    )
    return BlockEval(float(value), np.asarray(grad))


def sl_user_block(w, idx, vals, H, S_h, alpha, lam=0.0, r0=0.0, s_h=None) -> BlockEval:
    """Squared-loss user block with prior value ``r0``.

    ``idx``/``vals`` are the user's rated item indices and ratings, ``H`` the
    full item factor matrix (rows indexed by ``idx``), ``S_h`` its Gram matrix.
    ``s_h`` (the item row sum) is only needed when ``r0 != 0``.  Cost is
    O(|ratings| k + k^2).
    """
    w, idx, vals, H = _as_block_inputs(w, idx, vals, H)
    if s_h is None:
        if r0 != 0.0:
            raise ValueError("s_h is required when r0 != 0")
        s_h = np.zeros(len(w))
    return _evaluate(_SL, w, idx, vals, H, S_h, s_h, alpha, lam, r0)


def sl_item_block(h, idx, vals, W, S_w, alpha, lam=0.0, r0=0.0, s_w=None) -> BlockEval:
    return sl_user_block(h, idx, vals, W, S_w, alpha, lam, r0, s_w)


def al_user_block(w, idx, vals, H, s_h, alpha, lam=0.0) -> BlockEval:
    """Absolute-loss user block; every factor involved must be non-negative.

    On the non-negative orthant the L1 subgradient is ``+lam`` in every
    coordinate.  Cost is O(|ratings| k).
    """
    w, idx, vals, H = _as_block_inputs(w, idx, vals, H)
    _check_nonneg(w, H, idx)
    return _evaluate(_AL, w, idx, vals, H, None, s_h, alpha, lam, 0.0)


def al_item_block(h, idx, vals, W, s_w, alpha, lam=0.0) -> BlockEval:
    return al_user_block(h, idx, vals, W, s_w, alpha, lam)


def gkl_user_block(w, idx, vals, H, s_h, alpha, lam=0.0, counters=None) -> BlockEval:
    """Generalized-KL user block, the unknown pairs entering at their limit value.

    Products below 1e-12 are clamped inside the log and the ratio; each clamp
    increments ``counters[0]`` when a counter array is supplied.
    """
    w, idx, vals, H = _as_block_inputs(w, idx, vals, H)
    _check_nonneg(w, H, idx)
    return _evaluate(_GKL, w, idx, vals, H, None, s_h, alpha, lam, 0.0, counters)


def gkl_item_block(h, idx, vals, W, s_w, alpha, lam=0.0, counters=None) -> BlockEval:
    return gkl_user_block(h, idx, vals, W, s_w, alpha, lam, counters)


def block(model, caches, store, spec, side: str, index: int, alpha: float, counters=None) -> BlockEval:
    """Evaluate the ``side`` block of row ``index`` for ``spec``'s loss."""
    idx, vals = store.ratings_of(side, index)
    row = model.factors(side)[index]
    other = model.H if side == "user" else model.W
    S, s = caches.for_side(side)
    return _evaluate(spec.code, row, idx, vals, other, S, s, alpha, spec.l1, spec.prior_value, counters)


def known_term(model, store, spec, alpha: float) -> float:
    """Sum over known ratings of (loss - alpha * prior loss), computed once per rating."""
    rows, cols, vals, _ = store.to_coo()
    p = np.einsum("ij,ij->i", model.W[rows], model.H[cols])
    if spec.kind == "sl":
        r0 = spec.prior_value
        return float(((vals - p) ** 2 - alpha * (r0 - p) ** 2).sum())
    if spec.kind == "al":
        return float((np.abs(vals - p) - alpha * p).sum())
    pc = np.maximum(p, GKL_EPS)
    return float((vals * np.log(vals / pc) - vals + (1.0 - alpha) * p).sum())


def all_pairs_term(model, caches, spec) -> float:
    """Prior loss summed over every (user, item) pair, in closed form from the caches."""
    if spec.kind == "sl":
        r0 = spec.prior_value
        # sum_i w_i S_h w_i^T == <S_w, S_h>_F
        return float(
            model.n * model.m * r0 * r0
            - 2.0 * r0 * (caches.s_w @ caches.s_h)
            + np.sum(caches.S_w * caches.S_h)
        )
    return float(caches.s_w @ caches.s_h)


def l1_term(model, spec) -> float:
    if spec.l1 == 0.0:
        return 0.0
    return float(spec.l1 * (np.abs(model.W).sum() + np.abs(model.H).sum()))


def total_objective(model, caches, store, spec, alpha: float | None = None) -> float:
    """Full regularized objective in O(|R| k + k^2) (squared) or O(|R| k + k) time."""
    if alpha is None:
        alpha = spec.alpha_for(model.n, model.m, store.count)
    return known_term(model, store, spec, alpha) + alpha * all_pairs_term(model, caches, spec) + l1_term(model, spec)
