"""Experiment protocols: static holdout, dynamic replay, delayed replay, grid sweep."""

from __future__ import annotations

import csv
import itertools
import json
import logging
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .metrics import RankingContext, auc_event, auc_static, ndcg
from .model import LossSpec
from .online import UpdateConfig, replay_stream, update_with_rating
from .optimizer import ConvergenceConfig, LineSearchConfig, factorize, seed_sequence
from .ratings import HoldoutSplit, StaticSplit, TemporalBlocks, build_store

_log = logging.getLogger(__name__)

COLD_USER_MAX_RATINGS = 2

GRID_K = (5, 10, 20, 50, 100, 200)
GRID_L1 = (0.0, 0.01, 0.1, 1.0, 10.0)
GRID_RHO = (0.3, 0.7, 1.0, 2.0)


def _seeds(seed, n):
    return seed_sequence(seed).spawn(n)


# ---------------------------------------------------------------------------
# static protocol


@dataclass
class UserMetrics:
    user: int
    ndcg: float | None
    ndcg_ri: float | None
    auc: float | None


def evaluate_holdout(model, holdout: HoldoutSplit, ndcg_k: int | None = None) -> list[UserMetrics]:
    """NDCG over all non-training items, NDCG over held-out items only, and AUC, per test user."""
    H, W = model.H, model.W
    m = model.m
    rows = []
    for u in holdout.test_users:
        train_items, _ = holdout.train.user_ratings(u)
        test_items, test_vals = holdout.test[u]
        scores = H @ W[u]
        mask = np.ones(m, dtype=bool)
        mask[train_items] = False
        rel = dict(zip(test_items.tolist(), test_vals.tolist()))
        full = RankingContext(u, np.flatnonzero(mask), rel, scores)
        rated = RankingContext(u, test_items, rel, scores)
        rows.append(UserMetrics(u, ndcg(full, ndcg_k), ndcg(rated, ndcg_k), auc_static(full)))
    return rows


def _mean_of(rows, name):
    vals = [getattr(r, name) for r in rows if getattr(r, name) is not None]
    return float(np.mean(vals)) if vals else float("nan"), len(rows) - len(vals)


METRIC_NAMES = ("ndcg_ri", "ndcg", "auc")


@dataclass
class StaticResult:
    per_run: list[dict]
    """One dict per seed: metric means plus ``skipped_*`` counts."""
    per_user: list[tuple[int, UserMetrics]]

    def summary(self) -> dict:
        out = {}
        for name in METRIC_NAMES:
            vals = np.array([r[name] for r in self.per_run])
            std = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
            out[name] = {"mean": float(vals.mean()), "std": std}
        out["runs"] = len(self.per_run)
        return out


def run_static(
    split: StaticSplit,
    spec: LossSpec,
    k: int,
    seeds=(0,),
    ls: LineSearchConfig = LineSearchConfig(),
    conv: ConvergenceConfig = ConvergenceConfig(),
    ndcg_k: int | None = None,
) -> StaticResult:
    """Factorize the training store once per seed and score the held-out users."""
    per_run, per_user = [], []
    for seed in seeds:
        fit = factorize(split.train, spec, k, seed, ls, conv)
        rows = evaluate_holdout(fit.model, split, ndcg_k)
        summary = {"seed": seed, "epochs": len(fit.trace) - 1}
        for name in METRIC_NAMES:
            summary[name], summary[f"skipped_{name}"] = _mean_of(rows, name)
        per_run.append(summary)
        per_user.extend((seed, r) for r in rows)
        _log.info("static run seed=%s: %s", seed, summary)
    return StaticResult(per_run, per_user)


def write_static(result: StaticResult, prefix) -> None:
    with open(f"{prefix}_users.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["seed", "user", "ndcg", "ndcg_ri", "auc"])
        for seed, r in result.per_user:
            w.writerow([seed, r.user, _fmt(r.ndcg), _fmt(r.ndcg_ri), _fmt(r.auc)])
    summary = result.summary()
    with open(f"{prefix}_table.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["metric", "mean", "std", "runs"])
        for name in METRIC_NAMES:
            w.writerow([name, _fmt(summary[name]["mean"]), _fmt(summary[name]["std"]), summary["runs"]])
    with open(f"{prefix}_summary.json", "w") as f:
        json.dump({"summary": summary, "runs": result.per_run}, f, indent=2, sort_keys=True)


def _fmt(x):
    return "" if x is None else repr(float(x))


# ---------------------------------------------------------------------------
# dynamic protocols


@dataclass
class EventRow:
    seq: int
    user: str
    item: str
    auc: float | None
    prior_ratings: int
    """Distinct items the user had rated before this event."""

    @property
    def cold(self) -> bool:
        return self.prior_ratings <= COLD_USER_MAX_RATINGS


@dataclass
class DynamicResult:
    events: list[EventRow]
    micros: list[float] = field(default_factory=list)
    alpha: float = 0.0

    def aucs(self, cold_only: bool = False) -> np.ndarray:
        return np.array([e.auc for e in self.events if e.auc is not None and (e.cold or not cold_only)])

    def mean_auc(self, cold_only: bool = False) -> float:
        a = self.aucs(cold_only)
        return float(a.mean()) if len(a) else float("nan")

    def running_mean(self) -> np.ndarray:
        a = self.aucs()
        return np.cumsum(a) / np.arange(1, len(a) + 1)

    def decile_means(self) -> np.ndarray:
        """Mean event AUC within each tenth of the stream (by event order)."""
        a = self.aucs()
        return np.array([c.mean() for c in np.array_split(a, 10)])


def _initial_fit(blocks: TemporalBlocks, spec, k, seed, ls, conv):
    store = build_store(blocks.training + blocks.validation)
    fit_seed, stream_seed = _seeds(seed, 2)
    fit = factorize(store, spec, k, fit_seed, ls, conv)
    return store, fit, stream_seed


def _update_config(update: UpdateConfig, fit, freeze_alpha: bool) -> UpdateConfig:
    if freeze_alpha:
        return replace(update, frozen_alpha=fit.alpha)
    return update


def run_dynamic(
    blocks: TemporalBlocks,
    spec: LossSpec,
    k: int,
    seed=0,
    ls: LineSearchConfig = LineSearchConfig(),
    conv: ConvergenceConfig = ConvergenceConfig(),
    update: UpdateConfig = UpdateConfig(),
    freeze_alpha: bool = False,
) -> DynamicResult:
    """Train on everything before the test block, then evaluate-then-update each test rating."""
    store, fit, stream_seed = _initial_fit(blocks, spec, k, seed, ls, conv)
    model, caches = fit.model, fit.caches
    cfg = _update_config(update, fit, freeze_alpha)
    events = []

    def hook(seq, t):
        i = store.user_index.get(t.user)
        j = store.item_index.get(t.item)
        prior = store.user_degree(i) if i is not None else 0
        if i is not None and j is not None and store.get(t.user, t.item) is not None:
            prior -= 1
        events.append(EventRow(seq, t.user, t.item, auc_event(model, i, j, store), prior))

    reports = replay_stream(model, caches, store, spec, blocks.test, cfg, np.random.default_rng(stream_seed), hook)
    return DynamicResult(events, [r.micros for r in reports], fit.alpha)


@dataclass
class DelayRow:
    delay: int
    mean_auc: float
    cold_mean_auc: float
    events: int
    cold_events: int


@dataclass
class DelayResult:
    rows: list[DelayRow]
    runs: dict[int, DynamicResult]


def run_delayed(
    blocks: TemporalBlocks,
    spec: LossSpec,
    k: int,
    delays=(0, 5, 10, 1000),
    seed=0,
    ls: LineSearchConfig = LineSearchConfig(),
    conv: ConvergenceConfig = ConvergenceConfig(),
    update: UpdateConfig = UpdateConfig(),
    freeze_alpha: bool = False,
) -> DelayResult:
    """Replay the test block with the model ``d`` ratings behind.

    Event ``i`` is scored by a model that has absorbed events up to
    ``i - d - 1``; pending ratings still count as rated for the candidate
    set and for the cold-user test.  Every delay starts from the same initial
    factorization and the same stream seed.
    """
    if any(d < 0 for d in delays):
        raise ValueError("delays must be >= 0")
    base_store, fit, stream_seed = _initial_fit(blocks, spec, k, seed, ls, conv)
    cfg = _update_config(update, fit, freeze_alpha)
    rows, runs = [], {}
    for d in delays:
        store = base_store.copy()
        model, caches = fit.model.copy(), fit.caches.copy()
        rng = np.random.default_rng(stream_seed)
        arrived: dict[str, set] = {}
        queue = deque()
        events, micros = [], []
        for seq, t in enumerate(blocks.test):
            seen = arrived.get(t.user)
            if seen is None:
                i0 = store.user_index.get(t.user)
                seen = set() if i0 is None else {store.item_ids[j] for j in store.user_ratings(i0)[0].tolist()}
                arrived[t.user] = seen
            i = store.user_index.get(t.user)
            j = store.item_index.get(t.item)
            pending = [store.item_index[x] for x in seen if x in store.item_index]
            prior = len(seen) - (t.item in seen)
            events.append(EventRow(seq, t.user, t.item, auc_event(model, i, j, store, exclude=pending), prior))
            seen.add(t.item)
            queue.append(t)
            while len(queue) > d:
                rep = update_with_rating(model, caches, store, spec, queue.popleft(), cfg, rng)
                micros.append(rep.micros)
        run = DynamicResult(events, micros, fit.alpha)
        runs[d] = run
        rows.append(
            DelayRow(d, run.mean_auc(), run.mean_auc(cold_only=True), len(run.aucs()), len(run.aucs(cold_only=True)))
        )
        _log.info("delay %d: mean AUC %.4f, cold %.4f", d, rows[-1].mean_auc, rows[-1].cold_mean_auc)
    return DelayResult(rows, runs)


def write_events(result: DynamicResult, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["seq", "user", "item", "auc", "prior_ratings", "running_mean_auc", "micros"])
        total, count = 0.0, 0
        for e, us in itertools.zip_longest(result.events, result.micros):
            if e is None:
                break
            if e.auc is not None:
                total += e.auc
                count += 1
            running = total / count if count else None
            w.writerow([e.seq, e.user, e.item, _fmt(e.auc), e.prior_ratings, _fmt(running), "" if us is None else f"{us:.1f}"])


def write_running_mean(result: DynamicResult, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["event", "running_mean_auc"])
        for n, v in enumerate(result.running_mean(), start=1):
            w.writerow([n, repr(float(v))])


def write_delays(result: DelayResult, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["delay", "mean_auc", "cold_mean_auc", "events", "cold_events"])
        for r in result.rows:
            w.writerow([r.delay, _fmt(r.mean_auc), _fmt(r.cold_mean_auc), r.events, r.cold_events])


# ---------------------------------------------------------------------------
# parameter sweep


def default_grid(prior: bool = True) -> list[dict]:
    """Grid of tested values: k x L1 coefficient (x rho when a prior is used)."""
    rhos = GRID_RHO if prior else (0.0,)
    return [{"k": k, "l1": l1, "rho": rho} for k in GRID_K for l1 in GRID_L1 for rho in rhos]


@dataclass
class SweepResult:
    best: dict
    rows: list[dict]

    def write(self, csv_path, json_path) -> None:
        keys = sorted({key for r in self.rows for key in r if key != "metric"})
        with open(csv_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(keys + ["metric"])
            for r in self.rows:
                w.writerow([r.get(key, "") for key in keys] + [repr(float(r["metric"]))])
        with open(json_path, "w") as f:
            json.dump({"best": self.best}, f, indent=2, sort_keys=True)


@dataclass
class _SweepJob:
    protocol: str
    point: dict
    data: object
    kind: str
    seed: int
    ls: LineSearchConfig
    conv: ConvergenceConfig
    update: UpdateConfig
    ndcg_k: int | None


def _point_spec(kind, point) -> LossSpec:
    rho = point.get("rho")
    return LossSpec(kind, rho=rho if rho else None, l1=float(point.get("l1", 0.0)))


def _evaluate_point(job: _SweepJob) -> float:
    spec = _point_spec(job.kind, job.point)
    k = int(job.point["k"])
    if job.protocol == "static":
        scores = []
        for fold in job.data.validation_folds:
            fit = factorize(fold.train, spec, k, job.seed, job.ls, job.conv)
            scores.append(_mean_of(evaluate_holdout(fit.model, fold, job.ndcg_k), "ndcg")[0])
        return float(np.mean(scores))
    # dynamic: train on the training block, replay the validation block
    blocks = TemporalBlocks(job.data.training, [], job.data.validation)
    return run_dynamic(blocks, spec, k, job.seed, job.ls, job.conv, job.update).mean_auc()


def sweep(
    protocol: str,
    grid: list[dict],
    data,
    kind: str = "sl",
    seed: int = 0,
    ls: LineSearchConfig = LineSearchConfig(),
    conv: ConvergenceConfig = ConvergenceConfig(),
    update: UpdateConfig = UpdateConfig(),
    ndcg_k: int | None = None,
    jobs: int = 1,
    evaluator: Callable[[dict], float] | None = None,
) -> SweepResult:
    """Score every grid point on validation data and return the best one.

    ``static`` uses the mean NDCG over the split's validation folds;
    ``dynamic`` the mean event AUC over the validation block (model trained
    on the training block).  ``evaluator`` replaces the built-in scoring.
    """
    if protocol not in ("static", "dynamic"):
        raise ValueError("protocol must be 'static' or 'dynamic'")
    if not grid:
        raise ValueError("empty parameter grid")
    if evaluator is not None:
        metrics = [float(evaluator(p)) for p in grid]
    else:
        work = [_SweepJob(protocol, p, data, kind, seed, ls, conv, update, ndcg_k) for p in grid]
        if jobs > 1:
            with ProcessPoolExecutor(jobs) as pool:
                metrics = list(pool.map(_evaluate_point, work))
        else:
            metrics = [_evaluate_point(w) for w in work]
    rows = [dict(p, metric=v) for p, v in zip(grid, metrics)]
    finite = [v if np.isfinite(v) else -np.inf for v in metrics]
    best = dict(rows[int(np.argmax(finite))])
    return SweepResult(best, rows)
