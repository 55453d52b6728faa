"""Ranking metrics: NDCG (full list or rated items only), static AUC, event AUC."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class RankingContext:
    """One user's ranking problem.

    ``scores`` is indexed by item index (typically ``H @ w_user``);
    ``relevance`` maps held-out items to their ratings and must only name
    candidates.  Candidates missing from ``relevance`` have relevance 0.
    """

    user: int
    candidates: np.ndarray
    relevance: dict
    scores: np.ndarray

    def score(self, item) -> float:
        return float(self.scores[item])


def ranks(scores: np.ndarray, items: np.ndarray) -> np.ndarray:
    """1-based positions under descending score, ties broken by ascending item index."""
    order = np.lexsort((items, -scores))
    out = np.empty(len(items), dtype=np.int64)
    out[order] = np.arange(1, len(items) + 1)
    return out


def ndcg(context: RankingContext, truncation: int | None = None) -> float | None:
    """Normalized DCG with gain ``2^rel - 1`` and discount ``1/log2(rank + 1)``.

    Returns ``None`` when no candidate has positive relevance (the caller
    skips and counts such users).
    """
    cands = np.asarray(context.candidates, dtype=np.int64)
    rel = np.array([context.relevance.get(int(c), 0.0) for c in cands]) if len(context.relevance) else np.zeros(len(cands))
    positive = np.flatnonzero(rel > 0)
    if len(positive) == 0:
        return None
    cut = len(cands) if truncation is None else truncation
    r = ranks(np.asarray(context.scores, dtype=np.float64)[cands], cands)
    gains = [
        (2.0 ** float(rel[p]) - 1.0) / math.log2(int(r[p]) + 1)
        for p in positive.tolist()
        if r[p] <= cut
    ]
    ideal_rel = sorted((float(x) for x in rel[positive]), reverse=True)
    ideal = [(2.0 ** x - 1.0) / math.log2(pos + 1) for pos, x in enumerate(ideal_rel, start=1) if pos <= cut]
    return math.fsum(gains) / math.fsum(ideal)


def _pair_auc(pos_scores: np.ndarray, neg_scores: np.ndarray) -> float:
    neg = np.sort(neg_scores)
    lo = np.searchsorted(neg, pos_scores, side="left")
    hi = np.searchsorted(neg, pos_scores, side="right")
    wins = int(lo.sum())
    ties = int((hi - lo).sum())
    return (wins + 0.5 * ties) / (len(pos_scores) * len(neg_scores))


def auc_static(context: RankingContext) -> float | None:
    """Fraction of (held-out item, never-rated item) pairs ordered correctly; ties count 1/2.

    Held-out items are the keys of ``relevance``; never-rated items are the
    remaining candidates.  ``None`` when either side is empty.
    """
    cands = np.asarray(context.candidates, dtype=np.int64)
    is_pos = np.array([int(c) in context.relevance for c in cands], dtype=bool)
    if not is_pos.any() or is_pos.all():
        return None
    s = np.asarray(context.scores, dtype=np.float64)[cands]
    return _pair_auc(s[is_pos], s[~is_pos])


def auc_event(model, user, item, store, exclude=None, sample: int | None = None, rng=None) -> float | None:
    """How highly the model ranked ``item`` for ``user`` just before the rating.

    The candidates are the model's items the user has not rated (per
    ``store`` plus ``exclude``), other than ``item`` itself.  Returns the
    fraction scored strictly below ``item``, ties counting one half, or
    ``None`` if there are no candidates.  A user or item absent from the
    model (``None``) is scored as a zero vector.  ``sample`` restricts the
    candidates to a random subset of that size drawn with ``rng``.
    """
    m = model.m
    if m == 0:
        return None
    H = model.H
    if user is None:
        scores = np.zeros(m)
    else:
        scores = H @ model.W[user]
    target = float(scores[item]) if item is not None else 0.0
    mask = np.ones(m, dtype=bool)
    if user is not None:
        mask[store.user_ratings(user)[0]] = False
    if exclude is not None and len(exclude):
        mask[np.asarray(exclude, dtype=np.int64)] = False
    if item is not None:
        mask[item] = False
    cand = scores[mask]
    if sample is not None and sample < len(cand):
        cand = cand[rng.choice(len(cand), size=sample, replace=False)]
    if len(cand) == 0:
        return None
    below = int(np.count_nonzero(cand < target))
    ties = int(np.count_nonzero(cand == target))
    return (below + 0.5 * ties) / len(cand)
