"""Command-line entry point: ``priormf <command> [options]``.

Options may also come from a JSON file given with ``--config``; its keys
are the long option names with dashes replaced by underscores.  Options
given on the command line override the file, which overrides the built-in
defaults.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, checks, kernels
from .datasets import fetch_movielens_100k
from .model import LossSpec, save_checkpoint
from .online import UpdateConfig
from .optimizer import ConvergenceConfig, LineSearchConfig, factorize
from .protocols import (
    default_grid,
    run_delayed,
    run_dynamic,
    run_static,
    sweep,
    write_delays,
    write_events,
    write_running_mean,
    write_static,
)
from .ratings import MOVIELENS_BLOCKS, DataError, build_store, parse_ratings_file, static_split, temporal_blocks

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

DEFAULTS = {
    "data": None,
    "format": None,
    "out": "results",
    "seed": 0,
    "loss": "sl",
    "k": 20,
    "rho": 1.0,
    "alpha": None,
    "prior_value": 0.0,
    "l1": 0.0,
    "ls_step": 1.0,
    "ls_shrink": 0.5,
    "ls_c": 1e-4,
    "ls_max_halvings": 30,
    "tol": 1e-4,
    "max_epochs": 100,
    "test_users": 1000,
    "folds": 3,
    "runs": 1,
    "ndcg_k": None,
    "blocks": list(MOVIELENS_BLOCKS),
    "max_rounds": 10,
    "update_tol": 1e-3,
    "freeze_alpha": False,
    "delays": [0, 5, 10, 1000],
    "protocol": "static",
    "grid": None,
    "no_prior": False,
    "jobs": 1,
    "instances": 30,
    "check_loss": None,
    "inject_fault": False,
    "data_dir": None,
}

_log = logging.getLogger("priormf")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _model_options(p):
    g = p.add_argument_group("model")
    g.add_argument("--loss", choices=("sl", "al", "gkl"), help="loss function (default sl)")
    g.add_argument("--k", type=int, help="latent dimension (default 20)")
    prior = g.add_mutually_exclusive_group()
    prior.add_argument("--rho", type=float, help="prior influence ratio (default 1)")
    prior.add_argument("--alpha", type=float, help="per-pair prior weight, instead of --rho")
    g.add_argument("--prior-value", type=float, help="value unknown ratings are pulled toward (default 0)")
    g.add_argument("--l1", type=float, help="L1 coefficient (default 0)")
    o = p.add_argument_group("optimizer")
    o.add_argument("--ls-step", type=float, help="initial line-search step (default 1)")
    o.add_argument("--ls-shrink", type=float, help="step shrink factor (default 0.5)")
    o.add_argument("--ls-c", type=float, help="sufficient-decrease constant (default 1e-4)")
    o.add_argument("--ls-max-halvings", type=int, help="maximum step reductions (default 30)")
    o.add_argument("--tol", type=float, help="relative objective change for convergence (default 1e-4)")
    o.add_argument("--max-epochs", type=int, help="epoch cap (default 100)")


def _update_options(p):
    g = p.add_argument_group("online updates")
    g.add_argument("--blocks", type=int, nargs=3, metavar=("TRAIN", "VALID", "TEST"),
                   help="temporal block sizes (default 500000 100000 100000)")
    g.add_argument("--max-rounds", type=int, help="alternating rounds per update (default 10)")
    g.add_argument("--update-tol", type=float, help="relative gain that ends an update (default 1e-3)")
    g.add_argument("--freeze-alpha", action="store_true", default=None,
                   help="keep the initial prior weight instead of refreshing it after each rating")


def _common(p, data=True):
    p.add_argument("--config", help="JSON file of option values")
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.add_argument("--out", help="output directory (default ./results)")
    if data:
        p.add_argument("--data", help="ratings file")
        p.add_argument("--format", choices=("movielens-dat", "csv", "tsv"), help="ratings file format (guessed by default)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="priormf", description="Matrix factorization with a prior on unknown ratings.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("factorize", help="fit a model, write a checkpoint and the objective trace")
    _common(p)
    _model_options(p)

    p = sub.add_parser("eval-static", help="held-out NDCG, NDCG on rated items, and AUC")
    _common(p)
    _model_options(p)
    p.add_argument("--test-users", type=int, help="number of test users (default 1000)")
    p.add_argument("--runs", type=int, help="repeat runs with derived seeds (default 1)")
    p.add_argument("--ndcg-k", type=int, help="truncate NDCG at this rank")

    p = sub.add_parser("eval-dynamic", help="per-event AUC while replaying the test block")
    _common(p)
    _model_options(p)
    _update_options(p)

    p = sub.add_parser("delay", help="mean event AUC when the model lags d ratings behind")
    _common(p)
    _model_options(p)
    _update_options(p)
    p.add_argument("--delays", type=int, nargs="+", help="delays to run (default 0 5 10 1000)")

    p = sub.add_parser("sweep", help="grid search on validation data")
    _common(p)
    _model_options(p)
    _update_options(p)
    p.add_argument("--protocol", choices=("static", "dynamic"), help="validation protocol (default static)")
    p.add_argument("--grid", help="JSON list of points ({k, l1, rho}); default is the full grid")
    p.add_argument("--no-prior", action="store_true", default=None, help="default grid without a prior")
    p.add_argument("--test-users", type=int, help="users held out per validation fold (default 1000)")
    p.add_argument("--folds", type=int, help="validation folds (default 3)")
    p.add_argument("--ndcg-k", type=int, help="truncate NDCG at this rank")
    p.add_argument("--jobs", type=int, help="parallel grid points (default 1)")

    p = sub.add_parser("verify", help="check the fast computations against brute force")
    _common(p, data=False)
    p.add_argument("--loss", dest="check_loss", choices=("sl", "al", "gkl"), help="check only this loss")
    p.add_argument("--instances", type=int, help="random instances per loss (default 30)")
    p.add_argument("--inject-fault", action="store_true", default=None, help=argparse.SUPPRESS)

    p = sub.add_parser("fetch-data", help="download MovieLens-100K into the data directory")
    p.add_argument("--data-dir", help="target directory (default ./data)")
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, the config file and explicit flags (in that order of precedence)."""
    given = {k: v for k, v in vars(args).items() if v is not None and k not in ("config", "command", "verbose")}
    cfg = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as f:
                cfg = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = sorted(set(cfg) - set(DEFAULTS))
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    out = dict(DEFAULTS)
    for layer in (cfg, given):
        if "rho" in layer or "alpha" in layer:
            out["rho"] = out["alpha"] = None
        out.update(layer)
    if out["rho"] is not None and out["alpha"] is not None:
        raise UsageError("give either rho or alpha, not both")
    return out


def _spec(c) -> LossSpec:
    rho = c["rho"] if c["rho"] else None
    try:
        return LossSpec(c["loss"], rho=rho, alpha=c["alpha"], prior_value=c["prior_value"], l1=c["l1"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _configs(c):
    try:
        ls = LineSearchConfig(c["ls_step"], c["ls_shrink"], c["ls_c"], c["ls_max_halvings"])
        conv = ConvergenceConfig(c["tol"], c["max_epochs"])
        upd = UpdateConfig(c["max_rounds"], c["update_tol"], ls)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if c["k"] < 1:
        raise UsageError("k must be >= 1")
    return ls, conv, upd


def _triples(c):
    if not c["data"]:
        raise UsageError("no dataset given (--data)")
    path = Path(c["data"])
    if not path.is_file():
        raise DataError(f"dataset not found: {path}")
    parsed = parse_ratings_file(path, c["format"])
    if parsed.malformed:
        _log.warning("skipped %d malformed lines", len(parsed.malformed))
    if not parsed.triples:
        raise DataError(f"no ratings in {path}")
    return parsed.triples


def _outdir(c) -> Path:
    out = Path(c["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, obj) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def _run_record(command, c):
    return {"command": command, "config": c, "version": __version__}


def run_seeds(seed: int, runs: int) -> list[int]:
    """Per-run seeds derived from the master seed."""
    if runs == 1:
        return [seed]
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(runs)]


def cmd_factorize(c) -> int:
    spec = _spec(c)
    ls, conv, _ = _configs(c)
    store = build_store(_triples(c))
    fit = factorize(store, spec, c["k"], c["seed"], ls, conv)
    out = _outdir(c)
    save_checkpoint(out / "model.npz", fit.model, spec, user_ids=store.user_ids, item_ids=store.item_ids,
                    extra={"alpha": fit.alpha, "epochs": len(fit.trace) - 1, "converged": fit.converged})
    fit.write_trace(out / "trace.csv")
    _write_json(out / "run.json", _run_record("factorize", c))
    print(f"objective {fit.trace[-1].objective:.10g} after {len(fit.trace) - 1} epochs; wrote {out / 'model.npz'}")
    return EXIT_OK


def cmd_eval_static(c) -> int:
    spec = _spec(c)
    ls, conv, _ = _configs(c)
    store = build_store(_triples(c))
    split = static_split(store, c["test_users"], c["seed"], n_folds=0)
    result = run_static(split, spec, c["k"], run_seeds(c["seed"], c["runs"]), ls, conv, c["ndcg_k"])
    out = _outdir(c)
    write_static(result, out / "static")
    _write_json(out / "run.json", _run_record("eval-static", c))
    for name, v in result.summary().items():
        if isinstance(v, dict):
            print(f"{name}: {v['mean']:.4f} +- {v['std']:.4f}")
    return EXIT_OK


def _blocks(c):
    return temporal_blocks(_triples(c), c["blocks"])


def cmd_eval_dynamic(c) -> int:
    spec = _spec(c)
    ls, conv, upd = _configs(c)
    result = run_dynamic(_blocks(c), spec, c["k"], c["seed"], ls, conv, upd, c["freeze_alpha"])
    out = _outdir(c)
    write_events(result, out / "dynamic_events.csv")
    write_running_mean(result, out / "dynamic_running_mean.csv")
    summary = {
        "mean_auc": result.mean_auc(),
        "cold_mean_auc": result.mean_auc(cold_only=True),
        "events": len(result.events),
        "skipped": sum(e.auc is None for e in result.events),
        "alpha": result.alpha,
    }
    _write_json(out / "dynamic_summary.json", summary)
    _write_json(out / "run.json", _run_record("eval-dynamic", c))
    print(f"mean event AUC {summary['mean_auc']:.4f} over {summary['events']} events")
    return EXIT_OK


def cmd_delay(c) -> int:
    spec = _spec(c)
    ls, conv, upd = _configs(c)
    if any(d < 0 for d in c["delays"]):
        raise UsageError("delays must be >= 0")
    result = run_delayed(_blocks(c), spec, c["k"], c["delays"], c["seed"], ls, conv, upd, c["freeze_alpha"])
    out = _outdir(c)
    write_delays(result, out / "delay.csv")
    _write_json(out / "run.json", _run_record("delay", c))
    for r in result.rows:
        print(f"d={r.delay}: AUC {r.mean_auc:.4f}, cold users {r.cold_mean_auc:.4f}")
    return EXIT_OK


def _grid(c):
    if c["grid"] is None:
        return default_grid(prior=not c["no_prior"])
    if isinstance(c["grid"], list):
        return c["grid"]
    try:
        with open(c["grid"]) as f:
            grid = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read grid {c['grid']}: {exc}") from exc
    if not isinstance(grid, list) or not all(isinstance(p, dict) and "k" in p for p in grid):
        raise UsageError("grid must be a JSON list of objects with at least a 'k' entry")
    return grid


def cmd_sweep(c) -> int:
    ls, conv, upd = _configs(c)
    grid = _grid(c)
    if not grid:
        raise UsageError("empty grid")
    if c["protocol"] == "static":
        store = build_store(_triples(c))
        data = static_split(store, c["test_users"], c["seed"], c["folds"])
    else:
        data = _blocks(c)
    result = sweep(c["protocol"], grid, data, c["loss"], c["seed"], ls, conv, upd, c["ndcg_k"], c["jobs"])
    out = _outdir(c)
    result.write(out / "sweep_grid.csv", out / "sweep_best.json")
    _write_json(out / "run.json", _run_record("sweep", c))
    print("best:", json.dumps(result.best, sort_keys=True))
    return EXIT_OK


def cmd_verify(c, fault=None) -> int:
    kinds = (c["check_loss"],) if c["check_loss"] else ("sl", "al", "gkl")
    if fault is None and c["inject_fault"]:
        fault = checks.perturb_caches
    report = checks.verify(c["instances"], kinds, c["seed"], fault)
    lines = [f"kernels: {kernels.backend_name()}"] + report.lines()
    print("\n".join(lines))
    if not report.ok:
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_fetch_data(c) -> int:
    path = fetch_movielens_100k(c["data_dir"])
    print(path)
    return EXIT_OK


COMMANDS = {
    "factorize": cmd_factorize,
    "eval-static": cmd_eval_static,
    "eval-dynamic": cmd_eval_dynamic,
    "delay": cmd_delay,
    "sweep": cmd_sweep,
    "verify": cmd_verify,
    "fetch-data": cmd_fetch_data,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        c = resolve(args)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](c)
    except UsageError as exc:
        print(f"priormf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"priormf: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"priormf: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
