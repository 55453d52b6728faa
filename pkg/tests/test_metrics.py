import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from priormf.metrics import RankingContext, auc_event, auc_static, ndcg, ranks
from priormf.model import FactorModel
from priormf.oracle import brute_metrics

from .conftest import make_store


def ctx(scores, relevance, candidates=None):
    scores = np.asarray(scores, dtype=float)
    cands = np.arange(len(scores)) if candidates is None else np.asarray(candidates)
    return RankingContext(0, cands, relevance, scores)


class TestNdcg:
    def test_ideal_order(self):
        assert ndcg(ctx([3.0, 2.0, 1.0, 0.0], {0: 5.0, 1: 4.0, 2: 1.0})) == 1.0

    def test_single_candidate(self):
        assert ndcg(ctx([-7.0], {0: 2.0})) == 1.0

    def test_hand_fixture(self):
        assert ndcg(ctx([0.9, 0.5, 0.1], {1: 3.0})) == pytest.approx(1 / math.log2(3), rel=1e-15)

    def test_no_positive_is_skipped(self):
        assert ndcg(ctx([1.0, 2.0], {})) is None

    def test_ties_by_item_index(self):
        # equal scores: item 0 ranks first
        assert ndcg(ctx([1.0, 1.0], {0: 2.0})) == 1.0
        assert ndcg(ctx([1.0, 1.0], {1: 2.0})) == pytest.approx(1 / math.log2(3))

    def test_truncation(self):
        c = ctx([3.0, 2.0, 1.0], {2: 4.0})
        assert ndcg(c, truncation=2) == 0.0
        assert ndcg(c, truncation=3) == pytest.approx(1 / math.log2(4))

    def test_ranks(self):
        assert ranks(np.array([1.0, 3.0, 3.0, 0.0]), np.array([0, 1, 2, 3])).tolist() == [3, 1, 2, 4]


class TestAucStatic:
    def test_perfect(self):
        assert auc_static(ctx([5.0, 4.0, 1.0, 0.0], {0: 3.0, 1: 2.0})) == 1.0

    def test_all_equal(self):
        assert auc_static(ctx([1.0] * 4, {0: 3.0, 2: 2.0})) == 0.5

    def test_three_of_four(self):
        # held out 0, 1; unrated 2, 3: pairs (0,2) (0,3) (1,3) right, (1,2) wrong
        assert auc_static(ctx([4.0, 2.0, 3.0, 1.0], {0: 5.0, 1: 5.0})) == 0.75

    def test_empty_side(self):
        assert auc_static(ctx([1.0, 2.0], {0: 1.0, 1: 1.0})) is None
        assert auc_static(ctx([1.0, 2.0], {})) is None


class TestAucEvent:
    def setup(self, h, rated):
        store = make_store([(0, j, 3.0) for j in rated], n=1, m=len(h))
        return FactorModel(np.array([[1.0]]), np.array(h, dtype=float).reshape(-1, 1)), store

    def test_top(self):
        model, store = self.setup([5.0, 1.0, 2.0, 3.0], [])
        assert auc_event(model, 0, 0, store) == 1.0

    def test_bottom(self):
        model, store = self.setup([0.0, 1.0, 2.0, 3.0], [])
        assert auc_event(model, 0, 0, store) == 0.0

    def test_hand_fixture(self):
        # m=4, user rated item 3, j=0 beats item 1 and ties item 2
        model, store = self.setup([2.0, 1.0, 2.0, 9.0], [3])
        assert auc_event(model, 0, 0, store) == 0.75

    def test_unknown_user_scores_zero(self):
        model, store = self.setup([1.0, -1.0, 0.0], [])
        assert auc_event(model, None, 1, store) == 0.5

    def test_exclude_and_empty(self):
        model, store = self.setup([1.0, 2.0], [])
        assert auc_event(model, 0, 0, store, exclude=[1]) is None

    def test_sampling_is_reproducible(self):
        model, store = self.setup(np.linspace(0, 1, 40), [])
        a = auc_event(model, 0, 20, store, sample=10, rng=np.random.default_rng(3))
        b = auc_event(model, 0, 20, store, sample=10, rng=np.random.default_rng(3))
        assert a == b

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(-3, 3), min_size=2, max_size=50), st.data())
    def test_matches_brute_force(self, scores, data):
        m = len(scores)
        j = data.draw(st.integers(0, m - 1))
        rated = data.draw(st.sets(st.integers(0, m - 1).filter(lambda x: x != j)))
        model, store = self.setup(scores, sorted(rated))
        cands = [q for q in range(m) if q != j and q not in rated]
        got = auc_event(model, 0, j, store)
        if not cands:
            assert got is None
        else:
            expected = sum(1.0 if scores[q] < scores[j] else 0.5 if scores[q] == scores[j] else 0.0 for q in cands) / len(cands)
            assert got == expected


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_metrics_match_brute_force(data):
    n = data.draw(st.integers(1, 20))
    scores = data.draw(st.lists(st.integers(-4, 4), min_size=n, max_size=n))
    held = data.draw(st.dictionaries(st.integers(0, n - 1), st.integers(1, 5)))
    c = ctx([float(s) for s in scores], {k: float(v) for k, v in held.items()})
    b = brute_metrics(c)
    assert ndcg(c) == b.ndcg
    assert auc_static(c) == b.auc
    value = ndcg(c)
    if value is not None:
        assert 0.0 <= value <= 1.0
