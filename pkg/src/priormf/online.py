"""Incremental updates: fold one new rating into an existing factorization.

Only the rated user's row and the rated item's row move; they are refined by
alternating line-searched steps, so the cost of an update depends on how
many ratings that user and item have, never on the size of the catalog.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple

from .model import grow_model
from .optimizer import BlockStepper, LineSearchConfig
from .ratings import RatingTriple


@dataclass(frozen=True)
class UpdateConfig:
    max_rounds: int = 10
    rel_tol: float = 1e-3
    ls: LineSearchConfig = field(default_factory=LineSearchConfig)
    frozen_alpha: float | None = None
    """Use this prior weight instead of refreshing it from ``rho`` after each rating."""

    def __post_init__(self):
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")


class UpdateReport(NamedTuple):
    user: int
    item: int
    rounds: int
    new_user: bool
    new_item: bool
    user_value: float
    item_value: float
    micros: float


def update_with_rating(model, caches, store, spec, triple: RatingTriple, config: UpdateConfig, rng) -> UpdateReport:
    """Add ``triple`` to the store and locally re-optimize its user and item.

    Missing rows are created as cold-start unit vectors drawn from ``rng``.
    A repeated (user, item) pair is a revision: the stored value is
    overwritten and the same local optimization runs.  Rounds alternate one
    user step and one item step until the round improves the two block values
    by less than ``rel_tol * (1 + |value|)`` or ``max_rounds`` is reached.
    """
    start = time.perf_counter()
    added = store.add_rating(triple)
    i, j = added.user, added.item
    if added.new_user:
        if grow_model(model, caches, "user", rng) != i:
            raise RuntimeError("model and store user indices out of sync")
    if added.new_item:
        if grow_model(model, caches, "item", rng) != j:
            raise RuntimeError("model and store item indices out of sync")

    if config.frozen_alpha is not None:
        alpha = config.frozen_alpha
    else:
        alpha = spec.alpha_for(model.n, model.m, store.count)
    stepper = BlockStepper(model, caches, store, spec, config.ls, alpha)

    rounds = 0
    fu = fi = 0.0
    for rounds in range(1, config.max_rounds + 1):
        fu0, fu, _ = stepper.step("user", i)
        fi0, fi, _ = stepper.step("item", j)
        gain = (fu0 - fu) + (fi0 - fi)
        if gain < config.rel_tol * (1.0 + abs(fu + fi)):
            break
    micros = (time.perf_counter() - start) * 1e6
    return UpdateReport(i, j, rounds, added.new_user, added.new_item, fu, fi, micros)


def replay_stream(
    model,
    caches,
    store,
    spec,
    triples: Iterable[RatingTriple],
    config: UpdateConfig,
    rng,
    hook: Callable[[int, RatingTriple], None] | None = None,
) -> list[UpdateReport]:
    """Feed time-ordered ratings one at a time.

    For each rating ``hook(seq, triple)`` runs first, on the model as it was
    before that rating, and only then is the rating incorporated.
    """
    reports = []
    for seq, t in enumerate(triples):
        if hook is not None:
            hook(seq, t)
        reports.append(update_with_rating(model, caches, store, spec, t, config, rng))
    return reports


REPORT_COLUMNS = ("seq", "user", "item", "rating", "rounds", "new_user", "new_item", "micros")


def write_reports(path, triples, reports) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(REPORT_COLUMNS)
        for seq, (t, r) in enumerate(zip(triples, reports)):
            w.writerow([seq, t.user, t.item, repr(float(t.value)), r.rounds, int(r.new_user), int(r.new_item), f"{r.micros:.1f}"])
