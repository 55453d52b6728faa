import numpy as np
import pytest

from priormf.losses import block
from priormf.model import LossSpec
from priormf.online import UpdateConfig, replay_stream, update_with_rating, write_reports
from priormf.optimizer import factorize
from priormf.ratings import RatingTriple, build_store


def fitted(seed=0, spec=LossSpec(rho=1.0), k=5):
    rng = np.random.default_rng(seed)
    triples = [RatingTriple(f"u{rng.integers(25)}", f"i{rng.integers(30)}", float(rng.integers(1, 6)), t) for t in range(300)]
    store = build_store(triples)
    fit = factorize(store, spec, k, seed=seed)
    return store, fit


class TestUpdate:
    def test_new_user_starts_as_unit_vector(self):
        store, fit = fitted()
        model, caches = fit.model, fit.caches
        spec = LossSpec(rho=1.0)
        rng = np.random.default_rng(3)
        probe = np.random.default_rng(3)
        coord = int(probe.integers(5))
        j = store.item_index["i4"]
        start = model.H[j] @ np.eye(5)[coord]
        rep = update_with_rating(model, caches, store, spec, RatingTriple("new", "i4", 5.0, 999), UpdateConfig(), rng)
        assert rep.new_user and not rep.new_item
        assert model.n == store.n_users
        assert abs(model.predict(rep.user, j) - 5.0) < abs(start - 5.0)

    def test_only_two_rows_change(self):
        store, fit = fitted(1)
        W0, H0 = fit.model.W.copy(), fit.model.H.copy()
        rep = update_with_rating(fit.model, fit.caches, store, LossSpec(rho=1.0), RatingTriple("u3", "i7", 1.0, 999),
                                 UpdateConfig(), np.random.default_rng(0))
        dW = np.flatnonzero((fit.model.W != W0).any(axis=1))
        dH = np.flatnonzero((fit.model.H != H0).any(axis=1))
        assert set(dW.tolist()) <= {rep.user} and set(dH.tolist()) <= {rep.item}

    def test_block_values_decrease(self):
        store, fit = fitted(2)
        spec = LossSpec(rho=1.0)
        t = RatingTriple("u1", "i2", 5.0, 999)
        probe = store.copy()
        probe.add_rating(t)
        alpha = spec.alpha_for(fit.model.n, fit.model.m, probe.count)
        i = store.user_index["u1"]
        before = block(fit.model, fit.caches, probe, spec, "user", i, alpha).value
        rep = update_with_rating(fit.model, fit.caches, store, spec, t, UpdateConfig(), np.random.default_rng(0))
        assert rep.user_value <= before
        assert 1 <= rep.rounds <= 10

    def test_stationary_rating_one_round(self):
        # exact rank-1 data, no prior: already optimal, nothing moves
        w, h = np.array([1.0, 2.0]), np.array([1.0, 3.0])
        store = build_store([RatingTriple(f"u{i}", f"i{j}", w[i] * h[j], 0) for i in range(2) for j in range(2)])
        fit = factorize(store, LossSpec(), 1, seed=0)
        fit.model.W[:, 0], fit.model.H[:, 0] = w, h
        fit.caches.rebuild(fit.model)
        rep = update_with_rating(fit.model, fit.caches, store, LossSpec(), RatingTriple("u1", "i1", 6.0, 1),
                                 UpdateConfig(), np.random.default_rng(0))
        assert rep.rounds == 1
        np.testing.assert_array_equal(fit.model.W[:, 0], w)

    def test_revision_overwrites(self):
        store, fit = fitted(3)
        u, i = store.triples()[0][:2]
        count = store.count
        rep = update_with_rating(fit.model, fit.caches, store, LossSpec(rho=1.0), RatingTriple(u, i, 2.5, 999),
                                 UpdateConfig(), np.random.default_rng(0))
        assert store.count == count and store.get(u, i) == 2.5
        assert not rep.new_user and not rep.new_item

    def test_caches_stay_consistent(self):
        store, fit = fitted(4)
        rng = np.random.default_rng(0)
        stream = [RatingTriple(f"u{rng.integers(40)}", f"i{rng.integers(45)}", 3.0, 1000 + t) for t in range(200)]
        replay_stream(fit.model, fit.caches, store, LossSpec(rho=1.0), stream, UpdateConfig(), rng)
        assert fit.caches.max_relative_error(fit.model) < 1e-10
        assert (fit.model.n, fit.model.m) == (store.n_users, store.m_items)

    def test_frozen_alpha(self):
        store, fit = fitted(5)
        calls = []

        class Spy(LossSpec):
            def alpha_for(self, *a):
                calls.append(a)
                return super().alpha_for(*a)

        spec = Spy(rho=1.0)
        update_with_rating(fit.model, fit.caches, store, spec, RatingTriple("u0", "i0", 1.0, 9), UpdateConfig(frozen_alpha=0.01),
                           np.random.default_rng(0))
        assert calls == []

    def test_bad_config(self):
        with pytest.raises(ValueError):
            UpdateConfig(max_rounds=0)


class TestReplay:
    def test_empty_stream(self):
        store, fit = fitted(6)
        W = fit.model.W.copy()
        assert replay_stream(fit.model, fit.caches, store, LossSpec(rho=1.0), [], UpdateConfig(), np.random.default_rng(0)) == []
        assert np.array_equal(fit.model.W, W)

    def test_reports_in_order_and_hook_first(self, tmp_path):
        store, fit = fitted(7)
        stream = [RatingTriple(f"u{t}", "i1", 4.0, 1000 + t) for t in range(5)]
        seen = []

        def hook(seq, t):
            seen.append((seq, t.user in store.user_index))

        reps = replay_stream(fit.model, fit.caches, store, LossSpec(rho=1.0), stream, UpdateConfig(), np.random.default_rng(0), hook)
        assert [store.user_ids[r.user] for r in reps] == [t.user for t in stream]
        assert [s for s, _ in seen] == list(range(5))
        write_reports(tmp_path / "r.csv", stream, reps)
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == "seq,user,item,rating,rounds,new_user,new_item,micros" and len(lines) == 6
