"""Brute-force reference computations.

Nothing here uses the caches, the kernels, or the closed-form tricks: the
objective is the literal sum over every (user, item) pair, and the metrics
are computed by enumerating ranks and pairs.  These functions exist to be
compared against, so they are deliberately naive and size-guarded.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

MAX_DENSE_PAIRS = 10_000
MAX_BRUTE_CANDIDATES = 50


class DenseEval(NamedTuple):
    objective: float
    grad_W: np.ndarray
    grad_H: np.ndarray
    user_blocks: np.ndarray
    """Per-user block value: every term touching ``w_i`` (including its L1)."""
    item_blocks: np.ndarray


def _sign(x: float) -> float:
    return (x > 0) - (x < 0)


def _pair_loss(kind: str, r: float, p: float, eps: float):
    """Loss of reconstructing ``r`` by ``p`` and its derivative in ``p``."""
    if kind == "sl":
        return (r - p) ** 2, -2.0 * (r - p)
    if kind == "al":
        return abs(r - p), float(_sign(p - r))
    if r == 0.0:
        return p, 1.0
    pc = max(p, eps)
    return r * math.log(r / pc) - r + p, 1.0 - r / pc


def dense_objective_and_grad(model, store, spec, alpha: float | None = None, eps: float = 1e-12) -> DenseEval:
    """Objective and gradients by explicit summation over all n*m pairs.

    Unknown pairs contribute ``alpha * E(r0, w h^T)``: the squared loss uses
    ``r0``, the absolute loss the true ``|w h^T|``, and the KL divergence its
    limit value ``w h^T``.  The L1 term uses ``sign`` with ``sign(0) = 0``.
    """
    n, m, k = model.n, model.m, model.k
    if n * m > MAX_DENSE_PAIRS:
        raise ValueError(f"dense oracle limited to {MAX_DENSE_PAIRS} pairs, got {n * m}")
    if alpha is None:
        alpha = spec.alpha_for(n, m, store.count)
    W = [list(map(float, r)) for r in model.W]
    H = [list(map(float, r)) for r in model.H]
    known = {}
    for u, item, v, _ in store.triples():
        known[(store.user_index[u], store.item_index[item])] = v
    r0 = spec.prior_value if spec.kind == "sl" else 0.0

    gW = [[0.0] * k for _ in range(n)]
    gH = [[0.0] * k for _ in range(m)]
    ublock = [0.0] * n
    iblock = [0.0] * m
    total = 0.0
    for i in range(n):
        for j in range(m):
            p = sum(W[i][a] * H[j][a] for a in range(k))
            if (i, j) in known:
                loss, dp = _pair_loss(spec.kind, known[(i, j)], p, eps)
            else:
                loss, dp = _pair_loss(spec.kind, r0, p, eps)
                loss, dp = alpha * loss, alpha * dp
            total += loss
            ublock[i] += loss
            iblock[j] += loss
            for a in range(k):
                gW[i][a] += dp * H[j][a]
                gH[j][a] += dp * W[i][a]
    lam = spec.l1
    for rows, grads, blocks in ((W, gW, ublock), (H, gH, iblock)):
        for x, r in enumerate(rows):
            l1 = lam * sum(abs(v) for v in r)
            total += l1
            blocks[x] += l1
            for a in range(k):
                grads[x][a] += lam * _sign(r[a])
    return DenseEval(total, np.array(gW).reshape(n, k), np.array(gH).reshape(m, k), np.array(ublock), np.array(iblock))


class BruteMetrics(NamedTuple):
    ndcg: float | None
    auc: float | None


def brute_metrics(context, truncation: int | None = None) -> BruteMetrics:
    """NDCG and AUC of a ranking context by enumeration.

    The rank of a candidate is one plus the number of candidates ahead of it
    (higher score, or equal score and smaller item index).  AUC compares every
    (relevant, non-relevant) pair, ties counting one half.  A metric that is
    undefined for the context comes back as ``None``.
    """
    cands = [int(c) for c in context.candidates]
    if len(cands) > MAX_BRUTE_CANDIDATES:
        raise ValueError(f"brute metrics limited to {MAX_BRUTE_CANDIDATES} candidates")
    score = {c: float(context.score(c)) for c in cands}
    rel = {c: float(context.relevance.get(c, 0.0)) for c in cands}

    def ahead(a, b):
        return score[a] > score[b] or (score[a] == score[b] and a < b)

    ranks = {c: 1 + sum(ahead(o, c) for o in cands if o != c) for c in cands}
    # ideal ranks: order by relevance, ties by item index (only the gains matter)
    ideal = {
        c: 1 + sum((rel[o] > rel[c]) or (rel[o] == rel[c] and o < c) for o in cands if o != c)
        for c in cands
    }
    cut = truncation if truncation is not None else len(cands)
    gains = [(2.0 ** rel[c] - 1.0) / math.log2(ranks[c] + 1) for c in cands if rel[c] > 0 and ranks[c] <= cut]
    ideal_gains = [(2.0 ** rel[c] - 1.0) / math.log2(ideal[c] + 1) for c in cands if rel[c] > 0 and ideal[c] <= cut]
    ndcg = math.fsum(gains) / math.fsum(ideal_gains) if ideal_gains else None

    pos = [c for c in cands if c in context.relevance]
    neg = [c for c in cands if c not in context.relevance]
    if pos and neg:
        wins = ties = 0
        for p in pos:
            for q in neg:
                if score[p] > score[q]:
                    wins += 1
                elif score[p] == score[q]:
                    ties += 1
        auc = (wins + 0.5 * ties) / (len(pos) * len(neg))
    else:
        auc = None
    return BruteMetrics(ndcg, auc)
