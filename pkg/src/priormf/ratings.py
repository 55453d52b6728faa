"""Rating ingestion, the dual-indexed rating store, and experiment splits."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

_log = logging.getLogger(__name__)

FORMATS = ("movielens-dat", "csv", "tsv")


class DataError(ValueError):
    """Input data that cannot be used (malformed file, impossible split)."""


class RatingTriple(NamedTuple):
    user: str
    item: str
    value: float
    timestamp: int


@dataclass
class ParsedRatings:
    triples: list[RatingTriple]
    malformed: list[int] = field(default_factory=list)
    """1-based line numbers of rejected lines."""


def guess_format(path) -> str:
    suffix = Path(path).suffix.lower()
    if suffix == ".dat":
        return "movielens-dat"
    if suffix == ".csv":
        return "csv"
    return "tsv"


def _split_line(line: str, fmt: str) -> list[str]:
    if fmt == "movielens-dat":
        return line.split("::")
    if fmt == "tsv":
        return line.split("\t")
    return next(csv.reader([line]))


def _parse_fields(parts):
    if len(parts) < 4:
        raise ValueError("expected 4 fields")
    user, item = parts[0].strip(), parts[1].strip()
    if not user or not item:
        raise ValueError("empty id")
    value = float(parts[2])
    if not math.isfinite(value) or value <= 0:
        raise ValueError("rating must be positive")
    ts = int(float(parts[3]))
    return RatingTriple(user, item, value, ts)


def parse_ratings_file(path, fmt: str | None = None, max_malformed: float = 0.01) -> ParsedRatings:
    """Read ``user, item, rating, timestamp`` lines.

    ``fmt`` is one of ``movielens-dat`` (``::`` separated), ``csv`` or
    ``tsv``; it is guessed from the suffix when omitted.  A header on the
    first line of csv/tsv files is skipped.  Lines that do not parse, or carry
    a non-positive rating, are rejected and their numbers collected.  More
    than ``max(1, max_malformed * lines)`` rejected lines raises
    :class:`DataError`.
    """
    fmt = fmt or guess_format(path)
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}; expected one of {FORMATS}")

    triples: list[RatingTriple] = []
    malformed: list[int] = []
    n_lines = 0
    with open(path, encoding="utf-8", errors="replace") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            n_lines += 1
            parts = _split_line(line, fmt)
            try:
                triples.append(_parse_fields(parts))
            except ValueError:
                if lineno == 1 and fmt != "movielens-dat" and _looks_like_header(parts):
                    n_lines -= 1
                    continue
                malformed.append(lineno)

    if len(malformed) > max(1, max_malformed * n_lines):
        shown = ", ".join(map(str, malformed[:20]))
        raise DataError(
            f"{path}: {len(malformed)} of {n_lines} lines malformed (lines {shown}"
            + (", ..." if len(malformed) > 20 else "")
            + ")"
        )
    if malformed:
        _log.warning("%s: skipped %d malformed lines: %s", path, len(malformed), malformed[:20])
    return ParsedRatings(triples, malformed)


def _looks_like_header(parts) -> bool:
    if len(parts) < 3:
        return False
    try:
        float(parts[2])
    except ValueError:
        return True
    return False


class _Row:
    """Growable (index, value, timestamp) list with position lookup."""

    __slots__ = ("idx", "val", "ts", "size", "pos")

    def __init__(self, idx=None, val=None, ts=None):
        if idx is None:
            self.idx = np.empty(4, dtype=np.int64)
            self.val = np.empty(4)
            self.ts = np.empty(4, dtype=np.int64)
            self.size = 0
            self.pos = {}
        else:
            self.idx = np.ascontiguousarray(idx, dtype=np.int64)
            self.val = np.ascontiguousarray(val, dtype=np.float64)
            self.ts = np.ascontiguousarray(ts, dtype=np.int64)
            self.size = len(self.idx)
            self.pos = {int(x): p for p, x in enumerate(self.idx)}

    def set(self, other: int, value: float, ts: int) -> bool:
        """Insert or overwrite; returns True when the entry is new."""
        p = self.pos.get(other)
        if p is not None:
            self.val[p] = value
            self.ts[p] = ts
            return False
        if self.size == len(self.idx):
            cap = max(4, 2 * self.size)
            for name in ("idx", "val", "ts"):
                old = getattr(self, name)
                new = np.empty(cap, dtype=old.dtype)
                new[: self.size] = old[: self.size]
                setattr(self, name, new)
        self.idx[self.size] = other
        self.val[self.size] = value
        self.ts[self.size] = ts
        self.pos[other] = self.size
        self.size += 1
        return True

    def copy(self) -> "_Row":
        return _Row(self.idx[: self.size], self.val[: self.size], self.ts[: self.size])


class AddResult(NamedTuple):
    user: int
    item: int
    new_user: bool
    new_item: bool
    new_pair: bool


class RatingStore:
    """Known ratings indexed both by user and by item.

    Users and items carry opaque external ids mapped to contiguous dense
    indices in order of first appearance.  Each (user, item) pair is stored
    once.  Per-user and per-item rating arrays are returned as views, so
    reading a row costs O(1) and appending is amortized O(1).

    Mutation is single-writer; readers must not overlap with
    :meth:`add_rating`.
    """

    def __init__(self):
        self.user_ids: list[str] = []
        self.item_ids: list[str] = []
        self.user_index: dict[str, int] = {}
        self.item_index: dict[str, int] = {}
        self._by_user: list[_Row] = []
        self._by_item: list[_Row] = []
        self.count = 0

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def m_items(self) -> int:
        return len(self.item_ids)

    def __len__(self):
        return self.count

    def __repr__(self):
        return f"<RatingStore n={self.n_users} m={self.m_items} |R|={self.count}>"

    def ensure_user(self, user: str) -> tuple[int, bool]:
        i = self.user_index.get(user)
        if i is not None:
            return i, False
        i = len(self.user_ids)
        self.user_ids.append(user)
        self.user_index[user] = i
        self._by_user.append(_Row())
        return i, True

    def ensure_item(self, item: str) -> tuple[int, bool]:
        j = self.item_index.get(item)
        if j is not None:
            return j, False
        j = len(self.item_ids)
        self.item_ids.append(item)
        self.item_index[item] = j
        self._by_item.append(_Row())
        return j, True

    def add_rating(self, triple: RatingTriple) -> AddResult:
        """Insert one rating; a repeated pair overwrites value and timestamp."""
        i, new_user = self.ensure_user(triple.user)
        j, new_item = self.ensure_item(triple.item)
        value = float(triple.value)
        ts = int(triple.timestamp)
        new_pair = self._by_user[i].set(j, value, ts)
        self._by_item[j].set(i, value, ts)
        if new_pair:
            self.count += 1
        return AddResult(i, j, new_user, new_item, new_pair)

    def user_ratings(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """``(item_indices, values)`` of user ``i`` (views, do not mutate)."""
        row = self._by_user[i]
        return row.idx[: row.size], row.val[: row.size]

    def item_ratings(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        row = self._by_item[j]
        return row.idx[: row.size], row.val[: row.size]

    def user_timestamps(self, i: int) -> np.ndarray:
        row = self._by_user[i]
        return row.ts[: row.size]

    def ratings_of(self, side: str, index: int):
        return self.user_ratings(index) if side == "user" else self.item_ratings(index)

    def get(self, user: str, item: str) -> float | None:
        i = self.user_index.get(user)
        j = self.item_index.get(item)
        if i is None or j is None:
            return None
        p = self._by_user[i].pos.get(j)
        return None if p is None else float(self._by_user[i].val[p])

    def user_degree(self, i: int) -> int:
        return self._by_user[i].size

    def item_degree(self, j: int) -> int:
        return self._by_item[j].size

    def to_coo(self):
        """All ratings as ``(rows, cols, values, timestamps)`` arrays, user-major."""
        sizes = [r.size for r in self._by_user]
        total = sum(sizes)
        rows = np.repeat(np.arange(self.n_users, dtype=np.int64), sizes)
        cols = np.empty(total, dtype=np.int64)
        vals = np.empty(total)
        ts = np.empty(total, dtype=np.int64)
        p = 0
        for r in self._by_user:
            q = p + r.size
            cols[p:q] = r.idx[: r.size]
            vals[p:q] = r.val[: r.size]
            ts[p:q] = r.ts[: r.size]
            p = q
        return rows, cols, vals, ts

    def triples(self) -> list[RatingTriple]:
        rows, cols, vals, ts = self.to_coo()
        return [
            RatingTriple(self.user_ids[i], self.item_ids[j], float(v), int(t))
            for i, j, v, t in zip(rows.tolist(), cols.tolist(), vals.tolist(), ts.tolist())
        ]

    def copy(self) -> "RatingStore":
        out = RatingStore()
        out.user_ids = list(self.user_ids)
        out.item_ids = list(self.item_ids)
        out.user_index = dict(self.user_index)
        out.item_index = dict(self.item_index)
        out._by_user = [r.copy() for r in self._by_user]
        out._by_item = [r.copy() for r in self._by_item]
        out.count = self.count
        return out

    def check_consistency(self) -> None:
        """Full-scan check that both indexes hold the same ratings."""
        seen = {}
        for i, r in enumerate(self._by_user):
            for j, v in zip(r.idx[: r.size].tolist(), r.val[: r.size].tolist()):
                seen[(i, j)] = v
        other = {}
        for j, r in enumerate(self._by_item):
            for i, v in zip(r.idx[: r.size].tolist(), r.val[: r.size].tolist()):
                other[(i, j)] = v
        if seen != other or len(seen) != self.count:
            raise AssertionError("user and item indexes disagree")

    @classmethod
    def _from_coo(cls, user_ids, item_ids, rows, cols, vals, ts) -> "RatingStore":
        store = cls()
        store.user_ids = list(user_ids)
        store.item_ids = list(item_ids)
        store.user_index = {u: i for i, u in enumerate(store.user_ids)}
        store.item_index = {t: j for j, t in enumerate(store.item_ids)}
        store._by_user = _group(rows, cols, vals, ts, len(store.user_ids))
        store._by_item = _group(cols, rows, vals, ts, len(store.item_ids))
        store.count = len(rows)
        return store


def _group(keys, others, vals, ts, n) -> list[_Row]:
    order = np.argsort(keys, kind="stable")
    bounds = np.searchsorted(keys[order], np.arange(n + 1))
    o, v, t = others[order], vals[order], ts[order]
    return [_Row(o[a:b], v[a:b], t[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]


def build_store(triples: Iterable[RatingTriple], user_ids=None, item_ids=None) -> RatingStore:
    """Build a :class:`RatingStore` from triples.

    Repeated (user, item) pairs keep the rating with the latest timestamp;
    on equal timestamps the later one in input order wins.  ``user_ids`` and
    ``item_ids`` optionally fix the dense index space up front (ids absent
    from the triples get empty rows).
    """
    users = list(user_ids or [])
    items = list(item_ids or [])
    uidx = {u: i for i, u in enumerate(users)}
    iidx = {t: j for j, t in enumerate(items)}
    rows, cols, vals, ts = [], [], [], []
    for t in triples:
        i = uidx.get(t.user)
        if i is None:
            i = uidx[t.user] = len(users)
            users.append(t.user)
        j = iidx.get(t.item)
        if j is None:
            j = iidx[t.item] = len(items)
            items.append(t.item)
        rows.append(i)
        cols.append(j)
        vals.append(t.value)
        ts.append(t.timestamp)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.float64)
    ts = np.asarray(ts, dtype=np.int64)

    if len(rows):
        key = rows * max(len(items), 1) + cols
        # last entry per pair after ordering by (pair, timestamp, input position)
        order = np.lexsort((np.arange(len(key)), ts, key))
        k_sorted = key[order]
        last = np.ones(len(order), dtype=bool)
        last[:-1] = k_sorted[1:] != k_sorted[:-1]
        keep = np.sort(order[last])
        rows, cols, vals, ts = rows[keep], cols[keep], vals[keep], ts[keep]
    return RatingStore._from_coo(users, items, rows, cols, vals, ts)


@dataclass
class HoldoutSplit:
    train: RatingStore
    test: dict[int, tuple[np.ndarray, np.ndarray]]
    """Held-out ``(item_indices, values)`` per test user index."""

    @property
    def test_users(self) -> list[int]:
        return sorted(self.test)


@dataclass
class StaticSplit(HoldoutSplit):
    validation_folds: list[HoldoutSplit] = field(default_factory=list)


def _holdout(store: RatingStore, n_test_users: int, seed: int) -> HoldoutSplit:
    degrees = np.array([store.user_degree(i) for i in range(store.n_users)], dtype=np.int64)
    eligible = np.flatnonzero(degrees >= 2)
    if n_test_users > len(eligible):
        raise DataError(
            f"asked for {n_test_users} test users but only {len(eligible)} have >= 2 ratings"
        )
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(eligible, size=n_test_users, replace=False))

    rows, cols, vals, ts = store.to_coo()
    keep = np.ones(len(rows), dtype=bool)
    starts = np.concatenate([[0], np.cumsum(degrees)])
    test = {}
    for u in chosen.tolist():
        a, b = starts[u], starts[u + 1]
        order = a + np.argsort(ts[a:b], kind="stable")
        n_train = math.ceil((b - a) / 2)
        held = order[n_train:]
        keep[held] = False
        test[u] = (cols[held].copy(), vals[held].copy())
    train = RatingStore._from_coo(
        store.user_ids, store.item_ids, rows[keep], cols[keep], vals[keep], ts[keep]
    )
    return HoldoutSplit(train, test)


def static_split(store: RatingStore, n_test_users: int = 1000, seed: int = 0, n_folds: int = 3) -> StaticSplit:
    """Per-user temporal holdout for the static protocol.

    ``n_test_users`` users with at least two ratings are drawn at random; the
    older half of each one's ratings (rounded up) stays in training and the
    rest is held out.  Every other rating goes to training.  The same
    procedure applied to the training store with seeds ``seed+1 ..
    seed+n_folds`` yields the validation folds.  The train stores share the
    full store's dense index space.
    """
    outer = _holdout(store, n_test_users, seed)
    folds = [_holdout(outer.train, n_test_users, seed + f) for f in range(1, n_folds + 1)]
    return StaticSplit(outer.train, outer.test, folds)


@dataclass
class TemporalBlocks:
    training: list[RatingTriple]
    validation: list[RatingTriple]
    test: list[RatingTriple]

    @property
    def sizes(self) -> tuple[int, int, int]:
        return len(self.training), len(self.validation), len(self.test)


MOVIELENS_BLOCKS = (500_000, 100_000, 100_000)


def temporal_blocks(triples: list[RatingTriple], sizes=MOVIELENS_BLOCKS) -> TemporalBlocks:
    """Sort by timestamp (stable) and cut consecutive training/validation/test blocks.

    Ratings older than the three requested blocks are prepended to training.
    """
    n_train, n_val, n_test = (int(x) for x in sizes)
    if min(n_train, n_val, n_test) < 0:
        raise DataError("block sizes must be non-negative")
    total = n_train + n_val + n_test
    if total > len(triples):
        raise DataError(f"blocks need {total} ratings but only {len(triples)} are available")
    ordered = sorted(triples, key=lambda t: t.timestamp)
    cut1 = len(ordered) - n_test - n_val
    cut2 = len(ordered) - n_test
    return TemporalBlocks(ordered[:cut1], ordered[cut1:cut2], ordered[cut2:])
