"""Minibatch SGD with dynamic growth, hyperparameter tuning and model prediction."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, FoldPlan
from . import _kernels
from .gradients import TASK_CODES, FlatTree, target_array
from .hardtree import HardTree, hard_predict
from .stats import higher_is_better, metric
from .tree import SoftTree, bud, evaluate, prune, to_soft

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Training diverged."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    lam: float = 0.0
    epochs: int = 100
    batch_size: int = 1
    seed: int = 0
    growth_threshold: float = 1e-2
    init_scale: float = 1.0
    prune_eps: float = 1e-2

    def __post_init__(self):
        # learning_rate = 0 is accepted: it reproduces the initial bud
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be nonnegative")
        if not self.lam >= 0:
            raise ValueError("lambda must be nonnegative")
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise ValueError("epochs must be a positive integer")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ValueError("batch_size must be a positive integer")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        if not 0.0 < self.growth_threshold < 1.0:
            raise ValueError("growth_threshold must lie in (0, 1)")
        if not self.init_scale > 0:
            raise ValueError("init_scale must be positive")
        if not 0.0 <= self.prune_eps < 1.0:
            raise ValueError("prune_eps must lie in [0, 1)")


@dataclass
class TrainHistory:
    epoch: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    valid_metric: list[float] = field(default_factory=list)
    size: list[int] = field(default_factory=list)
    best_epoch: int = 0

    def append(self, epoch, loss, valid, size):
        self.epoch.append(epoch)
        self.train_loss.append(loss)
        self.valid_metric.append(valid)
        self.size.append(size)

    def __len__(self):
        return len(self.epoch)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "valid_metric", "size"])
        for row in zip(self.epoch, self.train_loss, self.valid_metric, self.size):
            w.writerow([row[0], repr(row[1]), repr(row[2]), row[3]])
        return buf.getvalue()


def derive_seed(seed: int, *parts: int) -> int:
    """Independent child seed for (fold, grid point, ...) sub-runs."""
    return int(np.random.SeedSequence([seed, *parts]).generate_state(1, dtype=np.uint64)[0] >> 1)


def initial_response(train: Dataset) -> np.ndarray:
    """Mean target (regression), prior log-odds (binary) or log priors (multiclass)."""
    if train.task == "regression":
        return train.y.mean(axis=0)
    counts = np.bincount(train.y, minlength=max(train.n_classes, 2)).astype(float)
    prior = (counts + 1e-3) / (counts.sum() + 1e-3 * len(counts))
    if train.task == "binary":
        return np.array([np.log(prior[1] / prior[0])])
    return np.log(prior)


def initial_tree(kind: str, train: Dataset) -> SoftTree:
    root = bud(train.input_dim, initial_response(train), v=(kind == "distributed"))
    return SoftTree(root, kind, train.input_dim, train.output_dim, train.task)


def _grow_flat(flat: FlatTree, tau: float, init_scale: float, rng: np.random.Generator) -> int:
    """Attach two gamma=1 children to every childless node with gamma < 1 - tau."""
    frontier = np.flatnonzero((flat.gamma < 1.0 - tau) & (flat.left < 0) & (flat.right < 0))
    if frontier.size == 0:
        return 0
    D = flat.W.shape[1]
    M = len(flat)
    new = 2 * frontier.size
    gam, W, R, V = [], [], [], []
    for parent in frontier:
        for _ in range(2):
            gam.append(1.0)
            W.append(rng.uniform(-init_scale, init_scale, size=D))
            if flat.V is not None:
                V.append(rng.uniform(-init_scale, init_scale, size=D))
            R.append(flat.R[parent].copy())
    left = np.concatenate([flat.left, -np.ones(new, dtype=int)])
    right = np.concatenate([flat.right, -np.ones(new, dtype=int)])
    left[frontier] = M + 2 * np.arange(frontier.size)
    right[frontier] = M + 2 * np.arange(frontier.size) + 1
    flat.__init__(
        np.concatenate([flat.gamma, gam]),
        np.vstack([flat.W, W]),
        np.vstack([flat.R, R]),
        left,
        right,
        None if flat.V is None else np.vstack([flat.V, V]),
        flat.kind,
        flat.task,
        flat.input_dim,
        flat.output_dim,
    )
    return new


def grow_step(tree: SoftTree, config: TrainConfig, rng: np.random.Generator | None = None) -> SoftTree:
    """Grow every frontier node (childless, gamma below ``1 - tau``) in place.

    Children start as leaves (gamma 1) copying the parent's response, with
    gate weights uniform in ``[-init_scale, init_scale]``.
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    flat = FlatTree.from_tree(tree)
    if _grow_flat(flat, config.growth_threshold, config.init_scale, rng):
        tree.root = flat.to_tree().root
    return tree


def _raw_to_prediction(Y: np.ndarray, task: str) -> np.ndarray:
    if task == "regression":
        return Y
    if task == "binary":
        return (Y[:, 0] > 0).astype(int)
    return np.argmax(Y, axis=1)


def predict(model, X: np.ndarray) -> np.ndarray:
    """Labels for classification, responses for regression; ``X`` holds raw features."""
    if isinstance(model, HardTree):
        return hard_predict(model, X)
    A = np.hstack([np.ones((len(X), 1)), X])
    if isinstance(model, SoftTree) and model.hardened:
        return _raw_to_prediction(evaluate(model, A), model.task)
    flat = model if isinstance(model, FlatTree) else FlatTree.from_tree(model)
    return _raw_to_prediction(flat.forward(A), flat.task)


def score(model, data: Dataset) -> float:
    return metric(predict(model, data.X), data.y, data.task)


def _better(a: float, b: float, task: str) -> bool:
    return a > b if higher_is_better(task) else a < b


def sgd_fit(kind: str, train: Dataset, valid: Dataset, config: TrainConfig):
    """Jointly train a tree from a single bud; returns ``(tree, history)``.

    Each epoch shuffles the training set, applies plain SGD steps with gammas
    clamped to [0, 1] and grows frontier nodes after every step.  The epoch
    with the best validation metric is kept and pruned with ``prune_eps``.
    Soft trees are trained as budding trees and converted at the end.
    """
    if kind not in ("soft", "budding", "distributed"):
        raise ValueError(f"sgd_fit cannot train kind {kind!r}")
    if len(train) == 0:
        raise ValueError("training set is empty")
    if len(valid) and (valid.input_dim != train.input_dim or valid.task != train.task):
        raise ValueError("training and validation sets disagree on dimension or task")
    train_kind = "budding" if kind == "soft" else kind
    rng = np.random.default_rng(config.seed)
    flat = FlatTree.from_tree(initial_tree(train_kind, train))
    A = np.ascontiguousarray(train.augmented)
    T = target_array(train.y, train.task)
    task_code = TASK_CODES[train.task]
    n = len(A)
    history = TrainHistory()
    best, best_metric = flat.copy(), None
    eval_set = valid if len(valid) else train
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total, pos = 0.0, 0
        while pos < n:
            pos, part, grow = _kernels.sgd_pass(
                *flat._args(), A, T, task_code, flat.distributed, order, pos,
                config.batch_size, config.learning_rate, config.lam, config.growth_threshold,
            )
            total += part
            if grow:
                _grow_flat(flat, config.growth_threshold, config.init_scale, rng)
        train_loss = total / n
        if not np.isfinite(train_loss) or not np.all(np.isfinite(flat.R)):
            raise TrainingError(f"training diverged at epoch {epoch} (loss {train_loss})")
        valid_metric = score(flat, eval_set)
        history.append(epoch, float(train_loss), valid_metric, len(flat))
        if best_metric is None or _better(valid_metric, best_metric, train.task):
            best, best_metric = flat.copy(), valid_metric
            history.best_epoch = epoch
    tree = prune(best.to_tree(), config.prune_eps)
    if kind == "soft":
        tree = to_soft(tree)
    return tree, history


@dataclass
class TuneResult:
    best: tuple[float, float]
    grid: list[tuple[float, float]]
    scores: np.ndarray  # grid points x folds, validation metric

    @property
    def mean_scores(self) -> np.ndarray:
        return self.scores.mean(axis=1)


def tune(kind: str, trainval: Dataset, grid, config: TrainConfig, folds: FoldPlan) -> TuneResult:
    """Pick the (learning rate, lambda) with the best mean validation metric.

    Ties keep the earliest grid point.  Every (grid point, fold) run gets its
    own seed derived from ``config.seed``.
    """
    grid = [(float(lr), float(lam)) for lr, lam in grid]
    if not grid:
        raise ValueError("hyperparameter grid is empty")
    scores = np.zeros((len(grid), len(folds)))
    for gi, (lr, lam) in enumerate(grid):
        for fi, (tr, va) in enumerate(folds):
            cfg = replace(config, learning_rate=lr, lam=lam, seed=derive_seed(config.seed, fi, gi))
            valid = trainval.subset(va)
            model, _ = sgd_fit(kind, trainval.subset(tr), valid, cfg)
            scores[gi, fi] = score(model, valid)
    means = scores.mean(axis=1)
    best = 0
    for gi in range(1, len(grid)):
        if _better(means[gi], means[best], trainval.task):
            best = gi
    return TuneResult(grid[best], grid, scores)
