"""Factor matrices, their sufficient-statistic caches, and the loss specification."""

from __future__ import annotations

import json
import math
import warnings
import zipfile
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import kernels

LOSS_KINDS = ("sl", "al", "gkl")
ALPHA_MAX = 1.0 - 1e-9
DEFAULT_REBUILD_EVERY = 10_000


@dataclass(frozen=True)
class LossSpec:
    """Loss choice and prior settings.

    The prior weight is given either as ``rho`` (unknown/known influence
    ratio) or as ``alpha`` (per-unknown-pair weight), never both.  Leaving both
    unset means no prior.  The absolute loss and the KL divergence require
    non-negative factors and a prior value of 0.
    """

    kind: str = "sl"
    rho: float | None = None
    alpha: float | None = None
    prior_value: float = 0.0
    l1: float = 0.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"loss kind must be one of {LOSS_KINDS}, got {self.kind!r}")
        if self.rho is not None and self.alpha is not None:
            raise ValueError("give either rho or alpha, not both")
        if self.rho is not None and self.rho < 0:
            raise ValueError("rho must be >= 0")
        if self.alpha is not None and not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        if self.l1 < 0:
            raise ValueError("l1 coefficient must be >= 0")
        if self.prior_value < 0:
            raise ValueError("prior value must be >= 0")
        if self.kind != "sl" and self.prior_value != 0.0:
            raise ValueError(f"{self.kind} supports only a prior value of 0")

    @property
    def non_negative(self) -> bool:
        return self.kind != "sl"

    @property
    def code(self) -> int:
        return kernels.KIND_CODES[self.kind]

    @property
    def uses_gram(self) -> bool:
        return self.kind == "sl"

    def alpha_for(self, n: int, m: int, known: int) -> float:
        """The per-pair prior weight for a matrix of ``n x m`` with ``known`` ratings."""
        if self.alpha is not None:
            return float(self.alpha)
        if not self.rho:
            return 0.0
        return rho_to_alpha(self.rho, n, m, known)

    def to_dict(self) -> dict:
        return asdict(self)


def rho_to_alpha(rho: float, n: int, m: int, known: int) -> float:
    """Convert the influence ratio ``rho`` into the per-pair weight ``alpha``.

    Inverts ``rho = alpha * (n*m - known) / known``.  The result is clamped
    to ``[0, 1 - 1e-9]``; clamping, and the degenerate fully-known matrix
    (where alpha is set to 0), emit a warning.
    """
    if rho < 0:
        raise ValueError("rho must be >= 0")
    if known < 0:
        raise ValueError("known count must be >= 0")
    unknown = n * m - known
    if unknown <= 0:
        warnings.warn("no unknown ratings; prior weight set to 0", RuntimeWarning, stacklevel=2)
        return 0.0
    alpha = rho * known / unknown
    if alpha > ALPHA_MAX:
        warnings.warn(
            f"alpha={alpha:.6g} from rho={rho} clamped to {ALPHA_MAX}", RuntimeWarning, stacklevel=2
        )
        alpha = ALPHA_MAX
    return alpha


class FactorModel:
    """User factors ``W`` (n x k) and item factors ``H`` (m x k, one row per item).

    Rows live in over-allocated buffers so appending a user or item is
    amortized O(k); ``W`` and ``H`` are views of the filled part.
    """

    def __init__(self, W, H):
        W = np.asarray(W, dtype=np.float64)
        H = np.asarray(H, dtype=np.float64)
        if W.ndim != 2 or H.ndim != 2 or W.shape[1] != H.shape[1]:
            raise ValueError("W and H must be 2-D with the same number of columns")
        self.k = W.shape[1]
        self._W = np.array(W, order="C")
        self._H = np.array(H, order="C")
        self.n = len(W)
        self.m = len(H)

    @property
    def W(self) -> np.ndarray:
        return self._W[: self.n]

    @property
    def H(self) -> np.ndarray:
        return self._H[: self.m]

    def factors(self, side: str) -> np.ndarray:
        return self.W if side == "user" else self.H

    def _append(self, side: str, row) -> int:
        buf = self._W if side == "user" else self._H
        size = self.n if side == "user" else self.m
        if size == len(buf):
            grown = np.zeros((max(8, 2 * size), self.k))
            grown[:size] = buf[:size]
            buf = grown
            if side == "user":
                self._W = buf
            else:
                self._H = buf
        buf[size] = row
        if side == "user":
            self.n += 1
        else:
            self.m += 1
        return size

    def predict(self, user: int, item: int) -> float:
        return float(self.W[user] @ self.H[item])

    def copy(self) -> "FactorModel":
        return FactorModel(self.W.copy(), self.H.copy())

    snapshot = copy

    def __repr__(self):
        return f"<FactorModel n={self.n} m={self.m} k={self.k}>"


@dataclass
class CacheSet:
    """Gram matrices and row sums of the factor matrices.

    ``S_w``/``S_h`` are tracked only when the loss needs them (squared loss);
    otherwise they are ``None``.
    """

    S_w: np.ndarray | None
    S_h: np.ndarray | None
    s_w: np.ndarray
    s_h: np.ndarray
    updates_since_rebuild: int = 0
    rebuild_every: int = DEFAULT_REBUILD_EVERY

    @classmethod
    def from_model(cls, model: FactorModel, gram: bool = True, rebuild_every=DEFAULT_REBUILD_EVERY):
        W, H = model.W, model.H
        return cls(
            W.T @ W if gram else None,
            H.T @ H if gram else None,
            W.sum(axis=0),
            H.sum(axis=0),
            0,
            rebuild_every,
        )

    @property
    def gram(self) -> bool:
        return self.S_w is not None

    def for_side(self, side: str):
        """Caches of the opposite factor, as used by a ``side`` block: ``(S, s)``."""
        if side == "user":
            return self.S_h, self.s_h
        return self.S_w, self.s_w

    def own(self, side: str):
        if side == "user":
            return self.S_w, self.s_w
        return self.S_h, self.s_h

    def rebuild(self, model: FactorModel) -> None:
        fresh = CacheSet.from_model(model, self.gram)
        self.S_w, self.S_h, self.s_w, self.s_h = fresh.S_w, fresh.S_h, fresh.s_w, fresh.s_h
        self.updates_since_rebuild = 0

    def max_relative_error(self, model: FactorModel) -> float:
        """Largest deviation from caches recomputed from scratch.

        Relative to the fresh cache's norm, floored at 1 so that caches of
        factors driven to zero are compared in absolute terms.
        """
        fresh = CacheSet.from_model(model, self.gram)
        pairs = [(self.s_w, fresh.s_w), (self.s_h, fresh.s_h)]
        if self.gram:
            pairs += [(self.S_w, fresh.S_w), (self.S_h, fresh.S_h)]
        worst = 0.0
        for kept, ref in pairs:
            worst = max(worst, np.linalg.norm(kept - ref) / max(np.linalg.norm(ref), 1.0))
        return worst

    def copy(self) -> "CacheSet":
        return CacheSet(
            None if self.S_w is None else self.S_w.copy(),
            None if self.S_h is None else self.S_h.copy(),
            self.s_w.copy(),
            self.s_h.copy(),
            self.updates_since_rebuild,
            self.rebuild_every,
        )


def init_model(n: int, m: int, k: int, spec: LossSpec, seed=None) -> tuple[FactorModel, CacheSet]:
    """Random factors, i.i.d. uniform on ``(0, 1/sqrt(k)]``, with fresh caches."""
    if min(n, m, k) < 1:
        raise ValueError("n, m and k must be >= 1")
    rng = np.random.default_rng(seed)
    scale = 1.0 / math.sqrt(k)
    W = (1.0 - rng.random((n, k))) * scale
    H = (1.0 - rng.random((m, k))) * scale
    model = FactorModel(W, H)
    return model, CacheSet.from_model(model, spec.uses_gram)


def apply_row_update(model, caches, side: str, index: int, new_row, non_negative: bool = False) -> None:
    """Replace one factor row and patch the caches by the rank-one delta.

    Cost is O(k^2) with Gram caches, O(k) without.  Every
    ``caches.rebuild_every`` updates the caches are recomputed from scratch to
    bound floating-point drift.
    """
    new_row = np.asarray(new_row, dtype=np.float64)
    if new_row.shape != (model.k,):
        raise ValueError(f"row must have length {model.k}")
    if non_negative and (new_row < 0).any():
        raise ValueError("negative entry in a non-negative factor row")
    factors = model.W if side == "user" else model.H
    S, s = caches.own(side)
    kernels.backend().rank1_update(S, s, factors[index], new_row)
    factors[index] = new_row
    caches.updates_since_rebuild += 1
    if caches.updates_since_rebuild >= caches.rebuild_every:
        caches.rebuild(model)


def grow_model(model: FactorModel, caches: CacheSet, side: str, rng) -> int:
    """Append a cold-start row: one random coordinate set to 1, the rest 0."""
    row = np.zeros(model.k)
    row[int(rng.integers(model.k))] = 1.0
    index = model._append(side, row)
    S, s = caches.own(side)
    kernels.backend().rank1_update(S, s, np.zeros(model.k), row)
    return index


# Checkpoint layout: an uncompressed .npz holding float64 arrays ``W`` (n x k)
# and ``H`` (m x k), plus ``meta``, a 0-d unicode array with a JSON object:
#   {"format": "priormf-checkpoint", "version": 1, "k", "n", "m",
#    "loss": LossSpec fields, "rng_state": numpy bit-generator state or null,
#    "user_ids": [...] or null, "item_ids": [...] or null, "extra": {...}}
CHECKPOINT_FORMAT = "priormf-checkpoint"


@dataclass
class Checkpoint:
    model: FactorModel
    spec: LossSpec
    rng_state: dict | None = None
    user_ids: list | None = None
    item_ids: list | None = None
    extra: dict | None = None

    def rng(self) -> np.random.Generator | None:
        if self.rng_state is None:
            return None
        gen = np.random.default_rng()
        gen.bit_generator.state = self.rng_state
        return gen


def save_checkpoint(path, model: FactorModel, spec: LossSpec, rng=None, user_ids=None, item_ids=None, extra=None) -> None:
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "k": model.k,
        "n": model.n,
        "m": model.m,
        "loss": spec.to_dict(),
        "rng_state": None if rng is None else rng.bit_generator.state,
        "user_ids": None if user_ids is None else list(user_ids),
        "item_ids": None if item_ids is None else list(item_ids),
        "extra": extra or {},
    }
    arrays = {"W": model.W, "H": model.H, "meta": np.array(json.dumps(meta, sort_keys=True))}
    # written member by member with a fixed date so equal models give equal bytes
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as z:
        for name, arr in arrays.items():
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            with z.open(info, "w", force_zip64=True) as f:
                np.lib.format.write_array(f, arr, allow_pickle=False)


def load_checkpoint(path) -> Checkpoint:
    with np.load(Path(path), allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        W, H = z["W"], z["H"]
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a priormf checkpoint")
    model = FactorModel(W, H)
    return Checkpoint(
        model,
        LossSpec(**meta["loss"]),
        meta["rng_state"],
        meta["user_ids"],
        meta["item_ids"],
        meta.get("extra") or {},
    )
