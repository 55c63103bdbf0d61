import numpy as np
import pytest

from softgrove.data import Dataset, cv_5x2, synth
from softgrove.gradients import FlatTree
from softgrove.tree import SoftNode, SoftTree, evaluate, tree_size
from softgrove.training import (
    TrainConfig,
    TrainingError,
    derive_seed,
    grow_step,
    initial_tree,
    initial_response,
    predict,
    score,
    sgd_fit,
    tune,
)


def regression_data(n, rng, noise=0.1):
    X = rng.normal(size=(n, 2))
    y = np.sin(2 * X[:, 0]) + 0.5 * X[:, 1] + noise * rng.normal(size=n)
    return Dataset(X, y, "regression")


class TestConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"learning_rate": -0.1},
            {"lam": -1.0},
            {"epochs": 0},
            {"epochs": 2.5},
            {"batch_size": 0},
            {"growth_threshold": 0.0},
            {"growth_threshold": 1.0},
            {"init_scale": 0.0},
            {"prune_eps": 1.0},
            {"seed": -1},
        ],
    )
    def test_rejects(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)

    def test_zero_learning_rate_allowed(self):
        assert TrainConfig(learning_rate=0.0).learning_rate == 0.0


class TestGrowStep:
    def test_fresh_root_does_not_grow(self):
        t = SoftTree(SoftNode(1.0, np.zeros(3), np.array([0.4])), "budding", 2, 1, "regression")
        grow_step(t, TrainConfig())
        assert tree_size(t) == 1

    def test_dropped_leaf_grows(self):
        t = SoftTree(SoftNode(0.9, np.zeros(3), np.array([0.4])), "budding", 2, 1, "regression")
        grow_step(t, TrainConfig(growth_threshold=0.01))
        assert tree_size(t) == 3
        for child in (t.root.left, t.root.right):
            assert child.gamma == 1.0
            np.testing.assert_array_equal(child.rho, [0.4])
            assert np.all(np.abs(child.w) <= TrainConfig().init_scale)
            assert child.v is None

    def test_distributed_children_get_v(self):
        t = SoftTree(SoftNode(0.5, np.zeros(2), np.array([0.0]), v=np.zeros(2)), "distributed", 1, 1, "regression")
        grow_step(t, TrainConfig())
        assert t.root.left.v.shape == (2,)

    def test_internal_node_unchanged(self):
        leaf = lambda r: SoftNode(1.0, np.zeros(2), np.array([r]))
        t = SoftTree(SoftNode(0.3, np.zeros(2), np.array([0.0]), left=leaf(1.0), right=leaf(2.0)), "budding", 1, 1, "regression")
        grow_step(t, TrainConfig())
        assert tree_size(t) == 3

    def test_within_threshold_no_growth(self):
        t = SoftTree(SoftNode(0.995, np.zeros(2), np.array([0.0])), "budding", 1, 1, "regression")
        grow_step(t, TrainConfig(growth_threshold=0.01))
        assert tree_size(t) == 1

    def test_growth_preserves_output(self, rng):
        # new children copy rho and start at gamma 1, so the subtree term equals rho
        t = SoftTree(SoftNode(0.6, rng.normal(size=3), np.array([0.7])), "budding", 2, 1, "regression")
        X = np.hstack([np.ones((10, 1)), rng.normal(size=(10, 2))])
        grow_step(t, TrainConfig())
        np.testing.assert_allclose(evaluate(t, X), 0.7, atol=1e-15)


class TestInitialResponse:
    def test_regression_mean(self):
        d = Dataset(np.zeros((4, 1)), [1.0, 2.0, 3.0, 6.0], "regression")
        assert initial_response(d)[0] == 3.0

    def test_binary_log_odds(self):
        d = Dataset(np.zeros((4, 1)), [1, 1, 1, 0], "binary", n_classes=2)
        assert initial_response(d)[0] == pytest.approx(np.log(3.0), rel=1e-3)


class TestSgdFit:
    def test_lr_zero_returns_initial_bud(self, rng):
        train = regression_data(60, rng)
        tree, hist = sgd_fit("budding", train, train, TrainConfig(learning_rate=0.0, epochs=3))
        assert tree_size(tree) == 1
        assert tree.root.rho[0] == pytest.approx(train.y.mean(), abs=1e-12)
        assert len(hist) == 3

    def test_constant_target_converges(self, rng):
        X = rng.normal(size=(40, 2))
        d = Dataset(X, np.full(40, 0.8), "regression")
        tree, hist = sgd_fit("budding", d, d, TrainConfig(learning_rate=0.1, epochs=100))
        assert abs(evaluate(tree, np.hstack([np.ones((40, 1)), X]))[:, 0] - 0.8).max() <= 1e-3
        assert hist.train_loss[-1] <= 1e-6

    def test_regression_improves_over_bud(self, rng):
        train, valid = regression_data(200, rng), regression_data(100, rng)
        tree, hist = sgd_fit("distributed", train, valid, TrainConfig(learning_rate=0.1, epochs=30))
        base = score(sgd_fit("budding", train, valid, TrainConfig(learning_rate=0.0, epochs=1))[0], valid)
        assert score(tree, valid) < 0.5 * base
        assert hist.best_epoch >= 1

    def test_deterministic(self, rng):
        data = synth("xor", 120, 3)
        cfg = TrainConfig(learning_rate=0.3, epochs=10, seed=7)
        a, ha = sgd_fit("distributed", data, data, cfg)
        b, hb = sgd_fit("distributed", data, data, cfg)
        assert ha.to_csv() == hb.to_csv()
        X = np.hstack([np.ones((120, 1)), data.X])
        np.testing.assert_array_equal(evaluate(a, X), evaluate(b, X))

    def test_soft_kind_output(self, rng):
        data = synth("xor", 120, 0)
        tree, _ = sgd_fit("soft", data, data, TrainConfig(learning_rate=0.3, epochs=10))
        assert tree.kind == "soft"
        for n in tree.nodes():
            assert n.gamma == (1.0 if n.is_leaf else 0.0)

    def test_minibatch_steps_replayed(self, rng):
        # one epoch of batch-16 SGD equals averaged-gradient steps taken by hand
        train = regression_data(64, rng)
        cfg = TrainConfig(learning_rate=0.05, lam=0.01, epochs=1, batch_size=16, seed=3, prune_eps=0.0)
        tree, _ = sgd_fit("budding", train, train, cfg)
        flat = FlatTree.from_tree(initial_tree("budding", train))
        order = np.random.default_rng(3).permutation(64)
        A, T = train.augmented, train.y
        for start in range(0, 64, 16):
            rows = order[start : start + 16]
            _, (dg, dW, dR, _) = flat.loss_and_grads(A[rows], T[rows], cfg.lam)
            flat.gamma = np.clip(flat.gamma - cfg.learning_rate * dg, 0.0, 1.0)
            flat.W -= cfg.learning_rate * dW
            flat.R -= cfg.learning_rate * dR
        assert len(flat) == tree_size(tree) == 1
        assert tree.root.gamma == pytest.approx(flat.gamma[0], abs=1e-14)
        np.testing.assert_allclose(tree.root.rho, flat.R[0], atol=1e-14)

    def test_multiclass(self, rng):
        X = rng.normal(size=(150, 2))
        y = (X[:, 0] > 0).astype(int) + (X[:, 1] > 0).astype(int)
        d = Dataset(X, y, "multiclass", n_classes=3)
        tree, _ = sgd_fit("budding", d, d, TrainConfig(learning_rate=0.3, epochs=20))
        assert tree.output_dim == 3
        assert score(tree, d) > 70

    def test_divergence_raises(self, rng):
        train = regression_data(50, rng)
        big = Dataset(train.X * 1e6, train.y * 1e6, "regression")
        with pytest.raises(TrainingError):
            sgd_fit("budding", big, big, TrainConfig(learning_rate=1e3, epochs=20))

    def test_bad_kind(self, rng):
        train = regression_data(10, rng)
        with pytest.raises(ValueError):
            sgd_fit("hard", train, train, TrainConfig())

    def test_history_csv(self, rng):
        train = regression_data(30, rng)
        _, hist = sgd_fit("budding", train, train, TrainConfig(epochs=4))
        lines = hist.to_csv().splitlines()
        assert lines[0] == "epoch,train_loss,valid_metric,size"
        assert len(lines) == 5

    def test_flat_predict_matches_tree(self, rng):
        data = synth("xor", 80, 1)
        tree, _ = sgd_fit("distributed", data, data, TrainConfig(learning_rate=0.3, epochs=5))
        np.testing.assert_array_equal(predict(tree, data.X), predict(FlatTree.from_tree(tree), data.X))


class TestTune:
    def test_single_point(self, rng):
        d = regression_data(60, rng)
        res = tune("budding", d, [(0.05, 0.0)], TrainConfig(epochs=2), cv_5x2(d, 0, repeats=1))
        assert res.best == (0.05, 0.0)
        assert res.scores.shape == (1, 2)

    def test_zero_lr_loses(self, rng):
        d = regression_data(80, rng)
        res = tune("budding", d, [(0.0, 0.0), (0.1, 0.0)], TrainConfig(epochs=10), cv_5x2(d, 0, repeats=1))
        assert res.best == (0.1, 0.0)

    def test_tie_keeps_first(self, rng):
        X = rng.normal(size=(40, 1))
        d = Dataset(X, np.zeros(40), "regression")
        res = tune("budding", d, [(0.2, 0.0), (0.1, 0.0)], TrainConfig(epochs=2), cv_5x2(d, 0, repeats=1))
        assert res.best == (0.2, 0.0)

    def test_empty_grid(self, rng):
        d = regression_data(20, rng)
        with pytest.raises(ValueError):
            tune("budding", d, [], TrainConfig(), cv_5x2(d, 0, repeats=1))


class TestSeeds:
    def test_distinct_children(self):
        seen = {derive_seed(0, f, g) for f in range(10) for g in range(16)}
        assert len(seen) == 160

    def test_stable(self):
        assert derive_seed(5, 1, 2) == derive_seed(5, 1, 2)
