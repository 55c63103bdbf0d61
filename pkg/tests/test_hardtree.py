import numpy as np
import pytest

from softgrove.data import Dataset
from softgrove.hardtree import HardNode, HardTree, eval_hard, grow_hard, hard_predict, prune_hard
from softgrove.stats import metric
from softgrove.tree import tree_size


def acc(tree, d):
    return metric(hard_predict(tree, d.X), d.y, d.task)


class TestEvalHard:
    def tree(self):
        root = HardNode(np.array([0.5]), attr=1, threshold=0.0,
                        left=HardNode(np.array([1.0])), right=HardNode(np.array([0.0])))
        return HardTree(root, 1, 1, "regression")

    def test_positive_goes_left(self):
        assert eval_hard(self.tree(), [1.0, 0.5])[0] == 1.0

    def test_negative_goes_right(self):
        assert eval_hard(self.tree(), [1.0, -0.5])[0] == 0.0

    def test_threshold_goes_right(self):
        assert eval_hard(self.tree(), [1.0, 0.0])[0] == 0.0

    def test_single_leaf(self):
        t = HardTree(HardNode(np.array([3.2])), 2, 1, "regression")
        assert eval_hard(t, [1.0, 7.0, -1.0])[0] == 3.2

    def test_dimension_checked(self):
        with pytest.raises(ValueError):
            eval_hard(self.tree(), [1.0, 0.0, 0.0])


class TestGrowHard:
    def test_pure_node_is_leaf(self):
        d = Dataset(np.arange(10.0)[:, None], np.ones(10, dtype=int), "binary", n_classes=2)
        assert tree_size(grow_hard(d)) == 1

    def test_one_dimensional_threshold(self):
        X = np.array([-3.0, -2.0, -1.5, -0.4, 0.3, 0.9, 1.7, 2.5])[:, None]
        y = (X[:, 0] > 0).astype(int)
        d = Dataset(X, y, "binary", n_classes=2)
        t = grow_hard(d)
        assert tree_size(t) == 3
        assert -0.4 < t.root.threshold < 0.3
        assert acc(t, d) == 100.0

    def test_constant_regression(self):
        d = Dataset(np.random.default_rng(0).normal(size=(20, 2)), np.full(20, 2.5), "regression")
        t = grow_hard(d)
        assert tree_size(t) == 1
        assert t.root.rho[0] == 2.5

    @pytest.mark.parametrize("seed", range(5))
    def test_separable_fits_exactly(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.uniform(-1, 1, size=(200, 3))
        y = ((X[:, 0] > 0.2) ^ (X[:, 1] < -0.1)).astype(int)
        d = Dataset(X, y, "binary", n_classes=2)
        assert acc(grow_hard(d, prune_with_valid=False), d) == 100.0

    def test_multiclass(self):
        rng = np.random.default_rng(1)
        X = rng.uniform(-1, 1, size=(150, 2))
        y = np.digitize(X[:, 0], [-0.3, 0.4])
        d = Dataset(X, y, "multiclass", n_classes=3)
        t = grow_hard(d)
        assert t.output_dim == 3
        assert acc(t, d) == 100.0

    def test_empty(self):
        with pytest.raises(ValueError):
            grow_hard(Dataset(np.zeros((0, 1)), np.zeros(0, dtype=int), "binary", n_classes=2))


class TestPruneHard:
    def test_optimal_tree_unchanged(self):
        X = np.linspace(-1, 1, 40)[:, None]
        d = Dataset(X, (X[:, 0] > 0).astype(int), "binary", n_classes=2)
        t = grow_hard(d, prune_with_valid=False)
        assert tree_size(prune_hard(t, d)) == tree_size(t)

    def test_noise_split_collapsed(self):
        # training labels carry one flipped point that forces extra splits
        X = np.linspace(-1, 1, 41)[:, None]
        y = (X[:, 0] > 0).astype(int)
        y_noisy = y.copy()
        y_noisy[30] = 0
        train = Dataset(X, y_noisy, "binary", n_classes=2)
        valid = Dataset(X, y, "binary", n_classes=2)
        t = grow_hard(train, prune_with_valid=False)
        p = prune_hard(t, valid)
        assert tree_size(p) < tree_size(t)
        assert acc(p, valid) >= acc(t, valid)

    @pytest.mark.parametrize("seed", range(8))
    def test_never_worse_on_valid(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(150, 2))
        y = (X[:, 0] + 0.8 * rng.normal(size=150) > 0).astype(int)
        Xv = rng.normal(size=(80, 2))
        yv = (Xv[:, 0] + 0.8 * rng.normal(size=80) > 0).astype(int)
        train = Dataset(X, y, "binary", n_classes=2)
        valid = Dataset(Xv, yv, "binary", n_classes=2)
        t = grow_hard(train, prune_with_valid=False)
        p = prune_hard(t, valid)
        assert acc(p, valid) >= acc(t, valid)
        assert tree_size(p) <= tree_size(t)

    def test_regression_never_worse(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(120, 1))
        y = np.sin(X[:, 0]) + 0.5 * rng.normal(size=120)
        Xv = rng.normal(size=(60, 1))
        yv = np.sin(Xv[:, 0]) + 0.5 * rng.normal(size=60)
        train, valid = Dataset(X, y, "regression"), Dataset(Xv, yv, "regression")
        t = grow_hard(train, prune_with_valid=False)
        p = prune_hard(t, valid)
        assert metric(hard_predict(p, Xv), yv, "regression") <= metric(hard_predict(t, Xv), yv, "regression")

    def test_empty_valid(self):
        t = HardTree(HardNode(np.array([0.5])), 1, 1, "binary")
        with pytest.raises(ValueError):
            prune_hard(t, Dataset(np.zeros((0, 1)), np.zeros(0, dtype=int), "binary", n_classes=2))
