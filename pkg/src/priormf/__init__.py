"""Sparse matrix factorization with a prior on unknown ratings.

Three losses (squared, absolute, generalized KL divergence), static training
by randomized block coordinate descent, constant-cost online updates, and
the static, dynamic and delayed evaluation protocols.
"""

from .kernels import backend_name
from .metrics import RankingContext, auc_event, auc_static, ndcg
from .model import (
    CacheSet,
    FactorModel,
    LossSpec,
    init_model,
    load_checkpoint,
    rho_to_alpha,
    save_checkpoint,
)
from .online import UpdateConfig, replay_stream, update_with_rating
from .optimizer import ConvergenceConfig, LineSearchConfig, factorize, rbcd_epoch
from .oracle import brute_metrics, dense_objective_and_grad
from .protocols import run_delayed, run_dynamic, run_static, sweep
from .ratings import (
    DataError,
    RatingStore,
    RatingTriple,
    build_store,
    parse_ratings_file,
    static_split,
    temporal_blocks,
)

__version__ = "0.1.0"

__all__ = [
    "CacheSet",
    "ConvergenceConfig",
    "DataError",
    "FactorModel",
    "LineSearchConfig",
    "LossSpec",
    "RankingContext",
    "RatingStore",
    "RatingTriple",
    "UpdateConfig",
    "auc_event",
    "auc_static",
    "backend_name",
    "brute_metrics",
    "build_store",
    "dense_objective_and_grad",
    "factorize",
    "init_model",
    "load_checkpoint",
    "ndcg",
    "parse_ratings_file",
    "rbcd_epoch",
    "replay_stream",
    "rho_to_alpha",
    "run_delayed",
    "run_dynamic",
    "run_static",
    "save_checkpoint",
    "static_split",
    "sweep",
    "temporal_blocks",
    "update_with_rating",
]
