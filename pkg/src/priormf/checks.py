"""Numerical self-checks on random small instances.

Used by ``priormf verify`` and by the test suite: the cached block
computations against the dense oracle, analytic block gradients against
central finite differences, and incrementally maintained caches against
caches rebuilt from scratch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import losses
from .model import CacheSet, FactorModel, LossSpec
from .optimizer import LineSearchConfig, rbcd_epoch
from .oracle import dense_objective_and_grad
from .ratings import RatingTriple, build_store

ORACLE_RTOL = {"sl": 1e-9, "al": 1e-9, "gkl": 1e-7}
FD_RTOL = 1e-5
FD_STEP = 1e-6
CACHE_RTOL = 1e-10
AL_KINK_MARGIN = 1e-4
GKL_DOMAIN_MARGIN = 1e-3


@dataclass
class Instance:
    model: FactorModel
    caches: CacheSet
    store: object
    spec: LossSpec
    alpha: float


def random_instance(rng, kind: str, n_range=(2, 30), k_range=(1, 5), alpha_max=0.9, l1_values=(0.0, 0.1)) -> Instance:
    """A random small problem: sizes, ratings, factors, prior weight and L1 coefficient.

    Squared-loss factors are signed and the prior value is random; the other
    losses get strictly positive factors and a prior value of 0.
    """
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    m = int(rng.integers(n_range[0], n_range[1] + 1))
    k = int(rng.integers(k_range[0], k_range[1] + 1))
    n_known = int(rng.integers(1, n * m + 1))
    pairs = rng.choice(n * m, size=n_known, replace=False)
    values = rng.integers(1, 6, size=n_known).astype(float)
    triples = [
        RatingTriple(f"u{p // m}", f"i{p % m}", float(v), int(t))
        for t, (p, v) in enumerate(zip(pairs.tolist(), values.tolist()))
    ]
    store = build_store(triples, [f"u{i}" for i in range(n)], [f"i{j}" for j in range(m)])
    if kind == "sl":
        W = rng.normal(size=(n, k))
        H = rng.normal(size=(m, k))
        r0 = float(rng.choice([0.0, rng.uniform(0.0, 3.0)]))
    else:
        W = rng.uniform(0.05, 1.0, size=(n, k))
        H = rng.uniform(0.05, 1.0, size=(m, k))
        r0 = 0.0
    alpha = float(rng.uniform(0.0, alpha_max))
    spec = LossSpec(kind, alpha=alpha, prior_value=r0, l1=float(rng.choice(l1_values)))
    model = FactorModel(W, H)
    return Instance(model, CacheSet.from_model(model, spec.uses_gram), store, spec, alpha)


def _rel(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def oracle_errors(inst: Instance) -> dict:
    """Largest relative deviations of the cached computations from the dense oracle."""
    model, caches, store, spec, alpha = inst.model, inst.caches, inst.store, inst.spec, inst.alpha
    dense = dense_objective_and_grad(model, store, spec, alpha)
    out = {"objective": _rel(losses.total_objective(model, caches, store, spec, alpha), dense.objective)}
    worst_val = worst_grad = 0.0
    for side, blocks, grads in (("user", dense.user_blocks, dense.grad_W), ("item", dense.item_blocks, dense.grad_H)):
        for x in range(len(blocks)):
            b = losses.block(model, caches, store, spec, side, x, alpha)
            worst_val = max(worst_val, _rel(b.value, blocks[x]))
            worst_grad = max(worst_grad, _rel(b.gradient, grads[x]))
    out["block_value"] = worst_val
    out["block_gradient"] = worst_grad
    return out


def _fd_point_ok(inst: Instance, side: str, index: int) -> bool:
    model, store, spec = inst.model, inst.store, inst.spec
    idx, vals = store.ratings_of(side, index)
    row = model.factors(side)[index]
    other = model.H if side == "user" else model.W
    p = other[idx] @ row
    if spec.kind == "al":
        return bool(np.all(np.abs(vals - p) > AL_KINK_MARGIN)) and bool(np.all(row > 10 * FD_STEP))
    if spec.kind == "gkl":
        return bool(np.all(p > GKL_DOMAIN_MARGIN)) and bool(np.all(row > 10 * FD_STEP))
    return bool(np.all(np.abs(row) > 10 * FD_STEP))


def fd_errors(inst: Instance, rng, points: int = 4) -> tuple[float, int, int]:
    """Central-difference check of block gradients at a few random rows.

    Returns ``(max relative error, rows checked, rows skipped)``.  Absolute
    loss rows next to a kink and KL rows close to the edge of the domain are
    skipped, as are rows with an entry within reach of the L1 kink at 0.
    """
    model, caches, store, spec, alpha = inst.model, inst.caches, inst.store, inst.spec, inst.alpha
    worst, checked, skipped = 0.0, 0, 0
    for _ in range(points):
        side = "user" if rng.random() < 0.5 else "item"
        index = int(rng.integers(model.n if side == "user" else model.m))
        if not _fd_point_ok(inst, side, index):
            skipped += 1
            continue
        row = model.factors(side)[index]
        saved = row.copy()
        analytic = losses.block(model, caches, store, spec, side, index, alpha).gradient
        numeric = np.empty_like(analytic)
        for a in range(len(row)):
            vals = []
            for h in (FD_STEP, -FD_STEP):
                row[:] = saved
                row[a] += h
                vals.append(losses.block(model, caches, store, spec, side, index, alpha).value)
            numeric[a] = (vals[0] - vals[1]) / (2 * FD_STEP)
        row[:] = saved
        worst = max(worst, _rel(analytic, numeric))
        checked += 1
    return worst, checked, skipped


def cache_error(inst: Instance, rng, epochs: int = 2) -> float:
    """Run a few epochs with incremental cache updates, then compare to fresh caches."""
    inst.caches.rebuild_every = 10**9
    for _ in range(epochs):
        rbcd_epoch(inst.model, inst.caches, inst.store, inst.spec, LineSearchConfig(), rng, inst.alpha)
    return inst.caches.max_relative_error(inst.model)


@dataclass
class VerifyReport:
    instances: int = 0
    max_errors: dict = field(default_factory=dict)
    fd_checked: int = 0
    fd_skipped: int = 0
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def record(self, name: str, kind: str, value: float, tol: float, where: int) -> None:
        key = f"{kind}.{name}"
        self.max_errors[key] = max(self.max_errors.get(key, 0.0), value)
        if not value <= tol:
            self.failures.append(f"instance {where}: {key} relative error {value:.3e} exceeds {tol:.0e}")

    def lines(self) -> list[str]:
        out = [f"instances: {self.instances}", f"finite-difference rows checked: {self.fd_checked}, skipped: {self.fd_skipped}"]
        out += [f"max {key}: {val:.3e}" for key, val in sorted(self.max_errors.items())]
        out += [f"FAIL {f}" for f in self.failures]
        out.append("verify: " + ("ok" if self.ok else f"{len(self.failures)} failures"))
        return out


def verify(
    instances: int = 30,
    kinds=("sl", "al", "gkl"),
    seed=0,
    fault: Callable[[Instance], None] | None = None,
) -> VerifyReport:
    """Oracle equivalence, gradient checks and cache fidelity on random instances.

    ``fault`` is called on each instance before checking (a test hook for
    corrupting caches or factors); the report then has failures.
    """
    report = VerifyReport()
    rng = np.random.default_rng(seed)
    for t in range(instances):
        for kind in kinds:
            inst = random_instance(rng, kind)
            if fault is not None:
                fault(inst)
            for name, err in oracle_errors(inst).items():
                report.record(name, kind, err, ORACLE_RTOL[kind], t)
            fd, checked, skipped = fd_errors(inst, rng)
            report.fd_checked += checked
            report.fd_skipped += skipped
            if checked:
                report.record("finite_difference", kind, fd, FD_RTOL, t)
            if fault is None:
                report.record("cache", kind, cache_error(inst, rng), CACHE_RTOL, t)
        report.instances += 1
    return report


def perturb_caches(inst: Instance, amount: float = 1e-3) -> None:
    """Fault injection: shift the item caches without touching the factors."""
    inst.caches.s_h = inst.caches.s_h + amount
    if inst.caches.S_h is not None:
        inst.caches.S_h = inst.caches.S_h + amount
