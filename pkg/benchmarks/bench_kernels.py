"""Compare the compiled and numpy kernel backends.

Times single block line searches (the inner loop of both training and
online updates) and whole training epochs, for each loss, on a synthetic
sparse rating matrix or on a ratings file.

    python benchmarks/bench_kernels.py
    python benchmarks/bench_kernels.py --data data/ml-100k.tsv --k 20 --epochs 3
"""

import argparse
import json
import statistics
import time

import numpy as np

from priormf import kernels
from priormf.model import LossSpec, init_model
from priormf.optimizer import BlockStepper, LineSearchConfig, rbcd_epoch
from priormf.ratings import RatingTriple, build_store, parse_ratings_file


def synthetic_store(n, m, per_user, seed):
    rng = np.random.default_rng(seed)
    triples = [
        RatingTriple(f"u{u}", f"i{j}", float(rng.integers(1, 6)), 0)
        for u in range(n)
        for j in rng.choice(m, size=per_user, replace=False).tolist()
    ]
    return build_store(triples)


def time_blocks(store, spec, k, n_steps, seed):
    model, caches = init_model(store.n_users, store.m_items, k, spec, seed)
    alpha = spec.alpha_for(model.n, model.m, store.count)
    stepper = BlockStepper(model, caches, store, spec, LineSearchConfig(), alpha)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_steps):
        side = "user" if rng.random() < 0.5 else "item"
        index = int(rng.integers(model.n if side == "user" else model.m))
        t0 = time.perf_counter()
        stepper.step(side, index)
        out.append(time.perf_counter() - t0)
    return statistics.median(out) * 1e6


def time_epochs(store, spec, k, epochs, seed):
    model, caches = init_model(store.n_users, store.m_items, k, spec, seed)
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    for _ in range(epochs):
        rbcd_epoch(model, caches, store, spec, LineSearchConfig(), rng)
    return (time.perf_counter() - t0) / epochs


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--data", help="ratings file (default: synthetic)")
    p.add_argument("--users", type=int, default=2000)
    p.add_argument("--items", type=int, default=1500)
    p.add_argument("--per-user", type=int, default=40)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--steps", type=int, default=3000, help="block steps timed per backend and loss")
    p.add_argument("--epochs", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", help="also write the results here")
    args = p.parse_args(argv)

    if args.data:
        store = build_store(parse_ratings_file(args.data).triples)
    else:
        store = synthetic_store(args.users, args.items, args.per_user, args.seed)
    print(f"{store.n_users} users, {store.m_items} items, {store.count} ratings, k={args.k}")
    backends = kernels.available()
    if "cython" not in backends:
        print("compiled kernels not built; timing the numpy backend only")

    rows = []
    for kind in ("sl", "al", "gkl"):
        spec = LossSpec(kind, rho=1.0)
        row = {"loss": kind}
        for name in backends:
            with kernels.using(name):
                row[f"{name}_block_us"] = time_blocks(store, spec, args.k, args.steps, args.seed)
                row[f"{name}_epoch_s"] = time_epochs(store, spec, args.k, args.epochs, args.seed)
        rows.append(row)

    header = f"{'loss':<5}" + "".join(f"{n + ' block us':>18}{n + ' epoch s':>18}" for n in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for row in rows:
        line = f"{row['loss']:<5}" + "".join(f"{row[n + '_block_us']:>18.1f}{row[n + '_epoch_s']:>18.3f}" for n in backends)
        if len(backends) == 2:
            row["epoch_speedup"] = row["python_epoch_s"] / row["cython_epoch_s"]
            line += f"{row['epoch_speedup']:>9.1f}x"
        print(line)
    if args.json:
        with open(args.json, "w") as f:
            json.dump(rows, f, indent=2)


if __name__ == "__main__":
    main()
