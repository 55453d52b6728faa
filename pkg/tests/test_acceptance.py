"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 5-7 run on MovieLens-100K (fetched on first use, see
``priormf.datasets``).  Run with ``pytest tests/test_acceptance.py -v``.
"""

import csv
import json
import statistics
import time

import numpy as np
import pytest

from priormf import checks, cli
from priormf.losses import total_objective
from priormf.metrics import RankingContext, auc_static, ndcg
from priormf.model import LossSpec, rho_to_alpha
from priormf.online import UpdateConfig, update_with_rating
from priormf.optimizer import ConvergenceConfig, LineSearchConfig, factorize, rbcd_epoch
from priormf.oracle import brute_metrics
from priormf.protocols import run_delayed, run_dynamic, run_static
from priormf.ratings import RatingTriple, build_store, parse_ratings_file, static_split, temporal_blocks

pytestmark = pytest.mark.slow

STATIC_TEST_USERS = 200
STATIC_SEEDS = (0, 1, 2)
DYNAMIC_EVENTS = 70_000
DYNAMIC_BLOCKS = (50_000, 10_000, 10_000)
K = 20


def report(capsys, number, title, ok, detail):
    with capsys.disabled():
        print(f"\n[criterion {number}] {title}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, detail


@pytest.fixture(scope="module")
def movielens(movielens_path):
    return parse_ratings_file(movielens_path).triples


@pytest.fixture(scope="module")
def dynamic_blocks(movielens):
    first = sorted(movielens, key=lambda t: t.timestamp)[:DYNAMIC_EVENTS]
    return temporal_blocks(first, DYNAMIC_BLOCKS)


@pytest.fixture(scope="module")
def delayed(dynamic_blocks):
    return run_delayed(dynamic_blocks, LossSpec("sl", rho=1.0), K, delays=(0, 5, 10, 1000), seed=0)


def test_1_oracle_equivalence(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = {"sl": 0.0, "al": 0.0, "gkl": 0.0}
    for _ in range(200):
        for kind in worst:
            errs = checks.oracle_errors(checks.random_instance(rng, kind))
            worst[kind] = max(worst[kind], *errs.values())
    seconds = time.perf_counter() - start
    ok = worst["sl"] <= 1e-9 and worst["al"] <= 1e-9 and worst["gkl"] <= 1e-7 and seconds < 60
    detail = ", ".join(f"{k} max rel err {v:.2e}" for k, v in worst.items()) + f", {seconds:.1f}s"
    report(capsys, 1, "oracle equivalence", ok, detail)


def test_2_gradient_checks(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    worst, checked, skipped = {}, {}, {}
    for kind in ("sl", "al", "gkl"):
        worst[kind], checked[kind], skipped[kind] = 0.0, 0, 0
        while checked[kind] < 100:
            err, c, s = checks.fd_errors(checks.random_instance(rng, kind), rng, points=1)
            checked[kind] += c
            skipped[kind] += s
            if c:
                worst[kind] = max(worst[kind], err)
    seconds = time.perf_counter() - start
    ok = max(worst.values()) <= 1e-5 and seconds < 60
    detail = ", ".join(f"{k} {checked[k]} pts ({skipped[k]} skipped) max {worst[k]:.2e}" for k in worst) + f", {seconds:.1f}s"
    report(capsys, 2, "gradient checks", ok, detail)


def test_3_monotone_descent(capsys):
    rng = np.random.default_rng(11)
    violations, steps, epochs = [], 0, 0
    kinds = ("sl", "al", "gkl")
    for t in range(20):
        inst = checks.random_instance(rng, kinds[t % 3])
        args = (inst.model, inst.caches, inst.store, inst.spec)

        def on_step(side, index, f0, f1):
            nonlocal steps
            steps += 1
            if f1 > f0 + 1e-10 * max(1.0, abs(f0)):
                violations.append(("step", t, f0, f1))

        prev = total_objective(*args, inst.alpha)
        for _ in range(5):
            obj = rbcd_epoch(*args, LineSearchConfig(), rng, inst.alpha, on_step=on_step)
            epochs += 1
            if obj > prev + 1e-10 * max(1.0, abs(prev)):
                violations.append(("epoch", t, prev, obj))
            prev = obj
        fit = factorize(inst.store, inst.spec, inst.model.k, seed=t, conv=ConvergenceConfig(1e-6, 200))
        objs = [r.objective for r in fit.trace]
        violations += [("trace", t, a, b) for a, b in zip(objs, objs[1:]) if b > a + 1e-10 * max(1.0, abs(a))]
    ok = not violations
    report(capsys, 3, "monotone descent", ok, f"{steps} steps, {epochs} epochs, 20 factorizations, violations {violations[:3]}")


def _padded_store(m, degree=10, seed=0):
    """m items and m users; every user rates ``degree`` items and every item is rated ``degree`` times."""
    rng = np.random.default_rng(seed)
    triples = []
    for u in range(m):
        for d in range(degree):
            triples.append(RatingTriple(f"u{u}", f"i{(u + d * 7919) % m}", float(rng.integers(1, 6)), 0))
    return build_store(triples)


def test_4_update_locality_and_cost(capsys):
    spec = LossSpec("sl", rho=1.0)
    cfg = UpdateConfig(max_rounds=3, rel_tol=0.0)
    setups = {}
    for m in (1000, 8000):
        store = _padded_store(m)
        assert all(store.user_degree(i) == 10 for i in range(store.n_users))
        assert all(store.item_degree(j) == 10 for j in range(store.m_items))
        fit = factorize(store, spec, 10, seed=0, conv=ConvergenceConfig(1e-4, 3))
        setups[m] = (store, fit)

    # locality: exact comparison of every other row
    store, fit = setups[1000]
    rng = np.random.default_rng(0)
    local = True
    for _ in range(50):
        u, item, _, _ = store.triples()[int(rng.integers(store.count))]
        W0, H0 = fit.model.W.copy(), fit.model.H.copy()
        rep = update_with_rating(fit.model, fit.caches, store, spec, RatingTriple(u, item, 5.0, 1), cfg, rng)
        W1, H1 = fit.model.W, fit.model.H
        mask_w = np.ones(len(W1), bool)
        mask_w[rep.user] = False
        mask_h = np.ones(len(H1), bool)
        mask_h[rep.item] = False
        local &= np.array_equal(W0[mask_w], W1[mask_w]) and np.array_equal(H0[mask_h], H1[mask_h])

    # latency: revisions of existing pairs keep the degrees fixed; sizes interleaved
    timings = {1000: [], 8000: []}
    rng = np.random.default_rng(1)
    for _ in range(20):
        for m, (store, fit) in setups.items():
            for _ in range(100):
                i = int(rng.integers(store.n_users))
                items, _ = store.user_ratings(i)
                t = RatingTriple(store.user_ids[i], store.item_ids[int(items[rng.integers(len(items))])], float(rng.integers(1, 6)), 1)
                timings[m].append(update_with_rating(fit.model, fit.caches, store, spec, t, cfg, rng).micros)
    med = {m: statistics.median(v) for m, v in timings.items()}
    ratio = max(med.values()) / min(med.values())
    ok = local and ratio < 1.5
    report(capsys, 4, "update locality and cost", ok,
           f"locality {'exact' if local else 'violated'}, median update {med[1000]:.1f}us (m=1000) vs {med[8000]:.1f}us (m=8000), ratio {ratio:.2f}")


def test_5_static_prior_improves_ranking(capsys, movielens):
    start = time.perf_counter()
    store = build_store(movielens)
    split = static_split(store, STATIC_TEST_USERS, seed=0, n_folds=0)
    res = {}
    for rho in (0.0, 1.0):
        res[rho] = run_static(split, LossSpec("sl", rho=rho or None), K, seeds=STATIC_SEEDS).summary()
    seconds = time.perf_counter() - start
    d_auc = res[1.0]["auc"]["mean"] - res[0.0]["auc"]["mean"]
    d_ndcg = res[1.0]["ndcg"]["mean"] - res[0.0]["ndcg"]["mean"]
    d_ri = res[0.0]["ndcg_ri"]["mean"] - res[1.0]["ndcg_ri"]["mean"]
    ok = d_auc >= 0.05 and d_ndcg >= 0.05 and d_ri < 0.02
    detail = (
        f"{store.n_users} users, {store.count} ratings; "
        + "; ".join(
            f"rho={rho:g}: AUC {r['auc']['mean']:.4f}+-{r['auc']['std']:.4f}, NDCG {r['ndcg']['mean']:.4f}, NDCG-RI {r['ndcg_ri']['mean']:.4f}"
            for rho, r in res.items()
        )
        + f"; AUC gain {d_auc:.4f}, NDCG gain {d_ndcg:.4f}, NDCG-RI loss {d_ri:.4f}, {seconds:.0f}s"
    )
    report(capsys, 5, "static ranking with prior", ok, detail)


def test_6_dynamic_prior_improves_ranking(capsys, dynamic_blocks):
    start = time.perf_counter()
    with_prior = run_dynamic(dynamic_blocks, LossSpec("sl", rho=1.0), K, seed=0)
    without = run_dynamic(dynamic_blocks, LossSpec("sl"), K, seed=0)
    seconds = time.perf_counter() - start
    running = with_prior.running_mean()
    tenth = len(running) // 10
    first, last = running[:tenth].mean(), running[-tenth:].mean()
    ok = with_prior.mean_auc() > without.mean_auc() and last >= first - 0.02
    detail = (
        f"mean AUC {with_prior.mean_auc():.4f} with prior vs {without.mean_auc():.4f} without; "
        f"running mean first decile {first:.4f}, last decile {last:.4f}; {seconds:.0f}s"
    )
    report(capsys, 6, "dynamic ranking with prior", ok, detail)


def test_7_delay_degradation(capsys, delayed):
    r = {row.delay: row for row in delayed.rows}
    ok = (
        r[0].mean_auc > max(r[5].mean_auc, r[10].mean_auc)
        and min(r[5].mean_auc, r[10].mean_auc) > r[1000].mean_auc
    )
    drop_all = (r[0].mean_auc - r[5].mean_auc) / r[0].mean_auc
    drop_cold = (r[0].cold_mean_auc - r[5].cold_mean_auc) / r[0].cold_mean_auc
    ok = ok and drop_cold > drop_all
    detail = (
        ", ".join(f"d={d}: {row.mean_auc:.4f} (cold {row.cold_mean_auc:.4f}, {row.cold_events} events)" for d, row in r.items())
        + f"; relative drop at d=5: cold {drop_cold:.1%}, all {drop_all:.1%}"
    )
    report(capsys, 7, "delay degradation", ok, detail)


def _strip_timing(path):
    rows = list(csv.reader(open(path)))
    drop = [c for c, name in enumerate(rows[0]) if name in ("micros", "seconds")]
    return [[v for c, v in enumerate(r) if c not in drop] for r in rows]


def test_8_rho_alpha_equivalence_and_determinism(capsys, tmp_path):
    store = build_store(
        [RatingTriple(f"u{(7 * t) % 53}", f"i{(11 * t) % 61}", float(1 + t % 5), t) for t in range(900)]
    )
    alpha = rho_to_alpha(1.0, store.n_users, store.m_items, store.count)
    a = factorize(store, LossSpec("sl", rho=1.0), 5, seed=3)
    b = factorize(store, LossSpec("sl", alpha=alpha), 5, seed=3)
    same_form = (
        a.alpha == b.alpha
        and np.array_equal(a.model.W, b.model.W)
        and np.array_equal(a.model.H, b.model.H)
        and [r.objective for r in a.trace] == [r.objective for r in b.trace]
    )

    data = tmp_path / "ratings.tsv"
    with open(data, "w") as f:
        for t in range(1500):
            f.write(f"u{(7 * t) % 97}\ti{(13 * t) % 131}\t{1 + (t * t) % 5}\t{t}\n")
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps([{"k": 2, "l1": 0.0, "rho": 0.5}, {"k": 3, "l1": 0.1, "rho": 1.0}]))
    fast = ["--k", "4", "--max-epochs", "8", "--seed", "9"]
    commands = {
        "factorize": ["factorize", "--data", data, *fast],
        "eval-static": ["eval-static", "--data", data, "--test-users", "10", "--runs", "2", *fast],
        "eval-dynamic": ["eval-dynamic", "--data", data, "--blocks", "1000", "200", "300", *fast],
        "delay": ["delay", "--data", data, "--blocks", "1000", "200", "300", "--delays", "0", "3", *fast],
        "sweep": ["sweep", "--data", data, "--grid", grid, "--test-users", "8", "--folds", "2", *fast],
        "verify": ["verify", "--instances", "2", "--seed", "9"],
    }
    mismatched = []
    for name, argv in commands.items():
        outs = []
        for rep in ("a", "b"):
            out = tmp_path / rep / name
            code = cli.main([str(x) for x in argv] + (["--out", str(out)] if name != "verify" else []))
            if code != 0:
                mismatched.append(f"{name} exit {code}")
            outs.append(out)
        if name == "verify":
            continue
        for path in sorted(outs[0].iterdir()):
            other = outs[1] / path.name
            if path.suffix == ".csv":
                same = _strip_timing(path) == _strip_timing(other)
            elif path.name == "run.json":
                ca, cb = json.load(open(path))["config"], json.load(open(other))["config"]
                same = {k: v for k, v in ca.items() if k != "out"} == {k: v for k, v in cb.items() if k != "out"}
            else:
                same = path.read_bytes() == other.read_bytes()
            if not same:
                mismatched.append(f"{name}/{path.name}")
    ok = same_form and not mismatched
    report(capsys, 8, "rho/alpha equivalence and determinism", ok,
           f"rho vs alpha runs bit-identical: {same_form}; commands compared: {len(commands)}; mismatches: {mismatched}")


def test_9_metric_correctness(capsys, movielens):
    rng = np.random.default_rng(99)
    mismatches, compared = 0, 0
    for _ in range(500):
        n = int(rng.integers(1, 21))
        scores = rng.integers(-3, 4, size=n).astype(float)
        if rng.random() < 0.5:
            scores = rng.normal(size=n)
        n_rel = int(rng.integers(0, n + 1))
        rel_items = rng.choice(n, size=n_rel, replace=False)
        relevance = {int(c): float(rng.integers(0, 6)) for c in rel_items}
        ctx = RankingContext(0, np.arange(n), relevance, scores)
        brute = brute_metrics(ctx)
        compared += 1
        if ndcg(ctx) != brute.ndcg or auc_static(ctx) != brute.auc:
            mismatches += 1

    first = sorted(movielens, key=lambda t: t.timestamp)[:20_000]
    blocks = temporal_blocks(first, (15_000, 2_500, 2_500))
    dyn = run_dynamic(blocks, LossSpec("sl", rho=1.0), 10, seed=4)
    dl = run_delayed(blocks, LossSpec("sl", rho=1.0), 10, delays=(0,), seed=4).runs[0]
    same = [(e.seq, e.auc, e.prior_ratings) for e in dyn.events] == [(e.seq, e.auc, e.prior_ratings) for e in dl.events]
    ok = mismatches == 0 and same
    report(capsys, 9, "metric correctness", ok,
           f"{compared} contexts, {mismatches} mismatches vs brute force; delayed d=0 equals dynamic bit-exactly: {same} "
           f"over {len(dyn.events)} events")
