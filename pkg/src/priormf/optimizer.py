"""Static factorization by randomized block coordinate descent.

Each epoch visits every user row and every item row once, in one shuffled
pool, and takes a single projected gradient step on it with backtracking
line search.  Because a row's influence on the objective is entirely
captured by its block, the step is accepted only if the block value (and
hence the full objective) goes down.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from . import kernels
from .losses import BlockEval, total_objective
from .model import CacheSet, FactorModel, LossSpec, init_model

_log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LineSearchConfig:
    initial_step: float = 1.0
    shrink: float = 0.5
    armijo_c: float = 1e-4
    max_halvings: int = 30

    def __post_init__(self):
        if self.initial_step <= 0 or self.armijo_c <= 0 or self.max_halvings < 0:
            raise ValueError("line search settings must be positive")
        if not 0.0 < self.shrink < 1.0:
            raise ValueError("shrink must lie in (0, 1)")


@dataclass(frozen=True)
class ConvergenceConfig:
    rel_tol: float = 1e-4
    max_epochs: int = 100

    def __post_init__(self):
        if self.rel_tol <= 0 or self.max_epochs < 1:
            raise ValueError("rel_tol must be > 0 and max_epochs >= 1")


def seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


class StepResult(NamedTuple):
    row: np.ndarray
    value: float
    step: float
    start_value: float


def line_search_step(
    row,
    block_eval_fn: Callable[[np.ndarray], BlockEval],
    config: LineSearchConfig = LineSearchConfig(),
    non_negative: bool = False,
    value_fn: Callable[[np.ndarray], float] | None = None,
) -> StepResult:
    """Backtracking projected gradient step on one block.

    The candidate ``row - t * g`` (clipped at 0 when ``non_negative``) is
    accepted once the block value drops by at least
    ``armijo_c * g . (row - candidate)``, which is ``armijo_c * t * |g|^2``
    when nothing is clipped.  ``t`` starts at ``initial_step`` and is
    multiplied by ``shrink`` up to ``max_halvings`` times.  If no candidate
    qualifies, the row is returned unchanged with ``step == 0``.

    This is the general-purpose version; the epoch loops call the compiled
    kernel, which implements the same rule.
    """
    row = np.asarray(row, dtype=np.float64)
    if value_fn is None:
        def value_fn(x):
            return block_eval_fn(x).value
    f0, g = block_eval_fn(row)
    g = np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite block gradient")
    t = config.initial_step
    for _ in range(config.max_halvings + 1):
        cand = row - t * g
        if non_negative:
            np.maximum(cand, 0.0, out=cand)
        dec = float(g @ (row - cand))
        if dec <= 0.0:
            break
        f1 = value_fn(cand)
        if f1 <= f0 - config.armijo_c * dec:
            return StepResult(cand, float(f1), t, float(f0))
        t *= config.shrink
    return StepResult(row.copy(), float(f0), 0.0, float(f0))


class BlockStepper:
    """Runs kernel line-search steps on rows of a model and keeps caches in sync."""

    def __init__(self, model: FactorModel, caches: CacheSet, store, spec: LossSpec, ls: LineSearchConfig, alpha: float):
        self.model = model
        self.caches = caches
        self.store = store
        self.spec = spec
        self.ls = ls
        self.alpha = float(alpha)
        self.counters = np.zeros(1, dtype=np.int64)
        self.kern = kernels.backend()

    def step(self, side: str, index: int):
        """One line-searched step on a row; returns ``(f_start, f_new, step)``."""
        model, caches, ls, spec = self.model, self.caches, self.ls, self.spec
        if side == "user":
            factors, other = model.W, model.H
            S, s = caches.S_h, caches.s_h
            idx, vals = self.store.user_ratings(index)
        else:
            factors, other = model.H, model.W
            S, s = caches.S_w, caches.s_w
            idx, vals = self.store.item_ratings(index)
        row = factors[index]
        new, f0, f1, t = self.kern.line_search(
            spec.code, row, idx, vals, other, S, s, self.alpha, spec.l1, spec.prior_value,
            float(len(other)), spec.non_negative, ls.initial_step, ls.shrink, ls.armijo_c,
            ls.max_halvings, kernels.GKL_EPS, self.counters,
        )
        if t > 0.0:
            S_own, s_own = caches.own(side)
            self.kern.rank1_update(S_own, s_own, row, new)
            row[:] = new
            caches.updates_since_rebuild += 1
            if caches.updates_since_rebuild >= caches.rebuild_every:
                caches.rebuild(model)
        return f0, f1, t


def rbcd_epoch(model, caches, store, spec, ls: LineSearchConfig, rng, alpha: float | None = None, on_step=None) -> float:
    """One pass over all ``n + m`` rows in a fresh random order.

    Returns the objective after the epoch.  ``on_step(side, index, f0, f1)``
    is called after each block step when given (used by tests).
    """
    if alpha is None:
        alpha = spec.alpha_for(model.n, model.m, store.count)
    stepper = BlockStepper(model, caches, store, spec, ls, alpha)
    n = model.n
    for b in rng.permutation(n + model.m).tolist():
        if b < n:
            side, index = "user", b
        else:
            side, index = "item", b - n
        f0, f1, _ = stepper.step(side, index)
        if on_step is not None:
            on_step(side, index, f0, f1)
    if stepper.counters[0]:
        _log.debug("KL domain guard hit %d times", int(stepper.counters[0]))
    return total_objective(model, caches, store, spec, alpha)


@dataclass
class TraceRow:
    epoch: int
    objective: float
    seconds: float


@dataclass
class Factorization:
    model: FactorModel
    caches: CacheSet
    alpha: float
    trace: list[TraceRow] = field(default_factory=list)
    converged: bool = False

    def write_trace(self, path) -> None:
        with open(path, "w") as f:
            f.write("epoch,objective,seconds\n")
            for r in self.trace:
                f.write(f"{r.epoch},{r.objective!r},{r.seconds:.6f}\n")


def factorize(
    store,
    spec: LossSpec,
    k: int,
    seed=0,
    ls: LineSearchConfig = LineSearchConfig(),
    conv: ConvergenceConfig = ConvergenceConfig(),
) -> Factorization:
    """Initialize randomly and run epochs until the relative objective change
    over one epoch falls below ``conv.rel_tol`` (or ``conv.max_epochs``).

    The trace holds the objective before training (epoch 0) and after every
    epoch, with cumulative wall time.
    """
    if store.count == 0:
        raise ValueError("cannot factorize an empty rating store")
    init_seed, order_seed = seed_sequence(seed).spawn(2)
    model, caches = init_model(store.n_users, store.m_items, k, spec, init_seed)
    alpha = spec.alpha_for(model.n, model.m, store.count)
    rng = np.random.default_rng(order_seed)
    start = time.perf_counter()
    prev = total_objective(model, caches, store, spec, alpha)
    fit = Factorization(model, caches, alpha, [TraceRow(0, prev, 0.0)])
    for epoch in range(1, conv.max_epochs + 1):
        obj = rbcd_epoch(model, caches, store, spec, ls, rng, alpha)
        fit.trace.append(TraceRow(epoch, obj, time.perf_counter() - start))
        _log.debug("epoch %d objective %.10g", epoch, obj)
        if abs(prev - obj) < conv.rel_tol * max(abs(prev), 1e-300):
            fit.converged = True
            break
        prev = obj
    return fit
