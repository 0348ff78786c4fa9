import numpy as np
import pytest

from kgboost.boosting import BoostConfig, BoostedModel, predict, train, training_trace
from kgboost.data import RawDataset, bin_dataset
from kgboost.errors import ConfigError, ShapeError
from kgboost.tree import TreeStructure, assign_leaves, fit_leaf_values, score

from conftest import binned


def reference_boost(data, lr, l2, T, m):
    """Plain-Python greedy boosting (beta = 0), first maximum wins ties."""
    N = data.n_samples
    y = data.targets
    f = np.zeros(N)
    cands = data.candidates()
    for _ in range(T):
        r = y - f
        st = TreeStructure()
        for _ in range(min(m, len(cands))):
            best, best_d = None, -np.inf
            for c in cands:
                if c in st.splits:
                    continue
                nxt = st.extend(c)
                d = score(nxt, r, assign_leaves(nxt, data.bins))
                if d > best_d:
                    best, best_d = c, d
            st = st.extend(best)
        tree = fit_leaf_values(st, r, assign_leaves(st, data.bins))
        f = (1 - lr * l2 / N) * f + lr * tree.predict_binned(data.bins)
    return f


class TestTrain:
    def test_zero_iterations(self, grid8):
        model = train(grid8, BoostConfig(iterations=0, depth=2))
        assert len(model.ensemble) == 0
        np.testing.assert_array_equal(model.predict_binned(grid8.bins), 0.0)

    def test_single_full_step_is_leaf_means(self, grid8, fixture8):
        model = train(grid8, BoostConfig(learning_rate=1.0, iterations=1, depth=2, beta=0.0))
        st = model.ensemble.structure(0)
        a = assign_leaves(st, grid8.bins)
        means = np.array([grid8.targets[a.leaf_of == j].mean() if a.counts[j] else 0.0 for j in range(4)])
        np.testing.assert_allclose(model.train_fit, means[a.leaf_of], atol=1e-15)

    def test_two_points_converge(self):
        data = binned([[0], [1]], [2.0, -3.0], n=1)
        model = train(data, BoostConfig(learning_rate=0.5, iterations=60, depth=1, beta=1.0))
        np.testing.assert_allclose(model.train_fit, [2.0, -3.0], atol=1e-12)

    def test_matches_reference_loop(self, small_random):
        cfg = BoostConfig(learning_rate=0.3, l2=2.0, iterations=15, depth=3, beta=0.0)
        model = train(small_random, cfg)
        np.testing.assert_allclose(model.train_fit, reference_boost(small_random, 0.3, 2.0, 15, 3), atol=1e-12)

    def test_predict_equals_train_fit(self, small_random):
        model = train(small_random, BoostConfig(iterations=40, depth=3, l2=1.0, beta=0.5, seed=4))
        np.testing.assert_allclose(model.predict_binned(small_random.bins), model.train_fit, atol=1e-12)

    def test_coefficients(self, small_random):
        cfg = BoostConfig(learning_rate=0.2, l2=3.0, iterations=7, depth=2)
        model = train(small_random, cfg)
        N = small_random.n_samples
        expected = [0.2 * (1 - 0.2 * 3.0 / N) ** (7 - 1 - t) for t in range(7)]
        np.testing.assert_allclose(model.ensemble.coef, expected, rtol=1e-14)

    def test_depth_capped_by_pool(self, grid8):
        model = train(grid8, BoostConfig(iterations=3, depth=9, beta=1.0))
        assert set(model.ensemble.depth.tolist()) == {4}

    def test_step_bound(self, grid8):
        with pytest.raises(ConfigError):
            train(grid8, BoostConfig(learning_rate=0.9, l2=1.0, iterations=1))
        # the bound does not apply without shrinkage
        train(grid8, BoostConfig(learning_rate=1.0, l2=0.0, iterations=1))

    @pytest.mark.parametrize("kw", [{"learning_rate": 0}, {"l2": -1}, {"iterations": -1}, {"beta": -0.1}, {"sigma": 0}])
    def test_bad_config(self, kw):
        with pytest.raises(ConfigError):
            BoostConfig(**kw)


class TestTrace:
    def test_rows(self, grid8):
        model = train(grid8, BoostConfig(iterations=25, depth=2, beta=0.0), trace=True)
        tr = training_trace(model)
        assert len(tr.mse) == 26
        y = grid8.targets
        assert tr.mse[0] == pytest.approx(y @ y / 16)
        assert np.all(np.diff(tr.mse) <= 1e-15)
        r = y - model.train_fit
        assert tr.mse[-1] == pytest.approx(r @ r / 16)

    def test_factor(self, grid8):
        model = train(grid8, BoostConfig(learning_rate=0.1, l2=4.0, iterations=5, depth=1), trace=True)
        np.testing.assert_allclose(model.trace.factor, 0.95 ** np.arange(6))

    def test_requires_flag(self, grid8):
        with pytest.raises(ValueError):
            training_trace(train(grid8, BoostConfig(iterations=1)))

    def test_csv(self, grid8, tmp_path):
        model = train(grid8, BoostConfig(iterations=3, depth=1), trace=True)
        model.trace.write_csv(tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "iteration,mse,factor"
        assert len(lines) == 5

    def test_checkpoints(self, small_random):
        cfg = BoostConfig(iterations=30, depth=2, beta=0.3, seed=1)
        full = train(small_random, cfg, checkpoints=(0, 10, 30))
        part = train(small_random, cfg.replace(iterations=10))
        np.testing.assert_array_equal(full.snapshots[0], 0.0)
        np.testing.assert_array_equal(full.snapshots[30], full.train_fit)
        # shrinkage is off, so the first 10 rounds coincide
        np.testing.assert_allclose(full.snapshots[10], part.train_fit, atol=1e-13)


class TestDeterminismAndIO:
    def test_same_seed_same_json(self, small_random):
        cfg = BoostConfig(iterations=20, depth=3, beta=0.5, seed=9, l2=1.0)
        assert train(small_random, cfg).to_json() == train(small_random, cfg).to_json()

    def test_seed_matters(self, small_random):
        cfg = BoostConfig(iterations=20, depth=3, beta=1.0)
        assert train(small_random, cfg).to_json() != train(small_random, cfg.replace(seed=1)).to_json()

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        x = rng.random((60, 2))
        data = bin_dataset(RawDataset(x, x[:, 0] - x[:, 1]), 8)
        model = train(data, BoostConfig(iterations=30, depth=3, beta=0.2, l2=1.0))
        model.save(tmp_path / "m.json")
        back = BoostedModel.load(tmp_path / "m.json")
        q = rng.random((25, 2)) * 1.2 - 0.1
        np.testing.assert_array_equal(back.predict(q), model.predict(q))
        assert back.config == model.config

    def test_predict_shape_check(self):
        x = np.random.default_rng(0).random((10, 2))
        model = train(bin_dataset(RawDataset(x, x[:, 0]), 4), BoostConfig(iterations=2, depth=1))
        with pytest.raises(ShapeError):
            predict(model, np.zeros((3, 3)))
