"""Univariate hard decision trees: greedy growth and reduced-error pruning.

Internal nodes test ``x[attr] - threshold > 0`` on the augmented input
(``attr`` in 1..d) and send the sample left when the test holds.  Every node
keeps the response it would give as a leaf so pruning can collapse it.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .tree import StructureError

MIN_SPLIT = 5


@dataclass
class HardNode:
    rho: np.ndarray
    attr: int | None = None
    threshold: float | None = None
    left: HardNode | None = None
    right: HardNode | None = None

    @property
    def is_leaf(self) -> bool:
        return self.attr is None


@dataclass
class HardTree:
    root: HardNode
    input_dim: int
    output_dim: int
    task: str
    kind: str = "hard"

    def copy(self) -> HardTree:
        return copy.deepcopy(self)

    def nodes(self) -> list[HardNode]:
        out, stack = [], [self.root]
        while stack:
            node = stack.pop()
            out.append(node)
            if not node.is_leaf:
                stack.append(node.right)
                stack.append(node.left)
        return out


def _reach(tree: HardTree, X: np.ndarray) -> list[HardNode]:
    out = []
    for x in X:
        node = tree.root
        while not node.is_leaf:
            if node.left is None or node.right is None:
                raise StructureError("internal hard node must have two children")
            node = node.left if x[node.attr] - node.threshold > 0 else node.right
        out.append(node)
    return out


def eval_hard(tree: HardTree, x) -> np.ndarray:
    """Leaf response reached by one augmented input (or each row of a batch)."""
    x = np.asarray(x, dtype=float)
    X = np.atleast_2d(x)
    if X.shape[1] != tree.input_dim + 1:
        raise ValueError(
            f"expected augmented inputs of length {tree.input_dim + 1}, got {X.shape[1]}"
        )
    y = np.stack([np.asarray(n.rho, dtype=float) for n in _reach(tree, X)])
    return y[0] if x.ndim == 1 else y


def hard_predict(tree: HardTree, X: np.ndarray) -> np.ndarray:
    """Class labels (classification) or responses (regression) for raw features."""
    A = np.hstack([np.ones((len(X), 1)), X])
    y = eval_hard(tree, A)
    if tree.task == "regression":
        return y
    if tree.task == "binary":
        return (y[:, 0] > 0.5).astype(int)
    return np.argmax(y, axis=1)


def _leaf_value(y: np.ndarray, task: str, n_out: int) -> np.ndarray:
    if task == "regression":
        return y.mean(axis=0)
    counts = np.bincount(y, minlength=max(n_out, 2)).astype(float)
    dist = counts / counts.sum()
    return dist[1:2].copy() if task == "binary" else dist


def _entropy(counts: np.ndarray) -> np.ndarray:
    """Entropy of each row of class counts (rows may be all-zero)."""
    tot = counts.sum(axis=-1, keepdims=True)
    p = np.divide(counts, tot, out=np.zeros_like(counts), where=tot > 0)
    logp = np.log2(p, out=np.zeros_like(p), where=p > 0)
    return -(p * logp).sum(axis=-1)


def _best_split(X, y, task, n_classes):
    """Exhaustive search over features and midpoints; returns (gain, attr, threshold)."""
    n = len(X)
    best = (0.0, None, None)
    if task == "regression":
        parent = ((y - y.mean(axis=0)) ** 2).sum()
    else:
        onehot = np.eye(n_classes)[y]
        parent = n * _entropy(onehot.sum(axis=0))
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        valid = np.nonzero(xs[1:] > xs[:-1])[0]
        if valid.size == 0:
            continue
        nl = np.arange(1, n)
        if task == "regression":
            ys = y[order]
            cs = np.cumsum(ys, axis=0)[:-1]
            cq = np.cumsum(ys**2, axis=0)[:-1]
            tot, totq = ys.sum(axis=0), (ys**2).sum(axis=0)
            nr = n - nl
            sse_l = (cq - cs**2 / nl[:, None]).sum(axis=1)
            sse_r = ((totq - cq) - (tot - cs) ** 2 / nr[:, None]).sum(axis=1)
            child = sse_l + sse_r
        else:
            cc = np.cumsum(onehot[order], axis=0)[:-1]
            rc = onehot.sum(axis=0) - cc
            child = nl * _entropy(cc) + (n - nl) * _entropy(rc)
        gains = parent - child[valid]
        k = int(np.argmax(gains))
        if gains[k] > best[0] + 1e-12 * max(1.0, abs(parent)):
            i = valid[k]
            best = (float(gains[k]), j, 0.5 * (xs[i] + xs[i + 1]))
    return best


def grow_hard(train, valid=None, prune_with_valid: bool = True) -> HardTree:
    """Greedy univariate induction, then reduced-error pruning on ``valid``.

    Splits minimize weighted child entropy (classification) or squared error
    (regression); a node becomes a leaf when no split improves impurity or it
    holds fewer than five samples.
    """
    X, y = train.X, train.y
    if len(X) == 0:
        raise ValueError("training set is empty")
    task, n_out = train.task, train.output_dim
    n_classes = max(train.n_classes, 2)

    def build(idx):
        node = HardNode(_leaf_value(y[idx], task, n_out))
        if len(idx) < MIN_SPLIT:
            return node
        gain, j, c = _best_split(X[idx], y[idx], task, n_classes)
        if j is None or gain <= 0:
            return node
        go_left = X[idx, j] - c > 0
        node.attr, node.threshold = j + 1, float(c)
        node.left = build(idx[go_left])
        node.right = build(idx[~go_left])
        return node

    tree = HardTree(build(np.arange(len(X))), train.input_dim, n_out, task)
    if valid is not None and prune_with_valid and len(valid.X):
        tree = prune_hard(tree, valid)
    return tree


def _node_error(node_y: np.ndarray, targets: np.ndarray, task: str) -> float:
    """Total validation loss of responses: squared error or misclassification count."""
    if task == "regression":
        return float(((node_y - targets) ** 2).sum())
    if task == "binary":
        return float(((node_y[:, 0] > 0.5).astype(int) != targets).sum())
    return float((np.argmax(node_y, axis=1) != targets).sum())


def prune_hard(tree: HardTree, valid) -> HardTree:
    """Bottom-up reduced-error pruning, repeated until nothing collapses."""
    if len(valid.X) == 0:
        raise ValueError("validation set is empty")
    out = tree.copy()
    A = np.hstack([np.ones((len(valid.X), 1)), valid.X])
    t = valid.y

    def visit(node, idx):
        # returns the subtree's validation error on samples idx
        if node.is_leaf:
            return _node_error(np.tile(node.rho, (len(idx), 1)), t[idx], out.task), False
        go_left = A[idx, node.attr] - node.threshold > 0
        el, cl = visit(node.left, idx[go_left])
        er, cr = visit(node.right, idx[~go_left])
        sub = el + er
        leaf = _node_error(np.tile(node.rho, (len(idx), 1)), t[idx], out.task)
        if leaf <= sub:
            node.attr = node.threshold = node.left = node.right = None
            return leaf, True
        return sub, cl or cr

    while True:
        _, changed = visit(out.root, np.arange(len(A)))
        if not changed:
            return out
