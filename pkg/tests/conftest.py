import os
from pathlib import Path

import numpy as np
import pytest

from priormf.datasets import fetch_movielens_100k
from priormf.model import CacheSet, FactorModel, LossSpec
from priormf.ratings import RatingTriple, build_store

REPO = Path(__file__).resolve().parents[1]


def make_store(entries, n=None, m=None):
    """Store from (user_index, item_index, value) tuples, ids ``u0..``/``i0..``."""
    triples = [RatingTriple(f"u{u}", f"i{i}", float(v), t) for t, (u, i, v) in enumerate(entries)]
    users = [f"u{u}" for u in range(n)] if n is not None else None
    items = [f"i{i}" for i in range(m)] if m is not None else None
    return build_store(triples, users, items)


def make_model(W, H, spec=LossSpec()):
    model = FactorModel(np.asarray(W, dtype=float), np.asarray(H, dtype=float))
    return model, CacheSet.from_model(model, spec.uses_gram)


@pytest.fixture
def tiny():
    """k=1, one user w=[2], items h1=[1], h2=[3], only r11=4 known."""
    store = make_store([(0, 0, 4.0)], n=1, m=2)
    return store, np.array([[2.0]]), np.array([[1.0], [3.0]])


@pytest.fixture(scope="session")
def movielens_path():
    data_dir = Path(os.environ.get("PRIORMF_DATA", REPO / "data"))
    return fetch_movielens_100k(data_dir)
