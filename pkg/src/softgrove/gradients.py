"""Losses, output links and backpropagation through the tree recursion.

``forward_loss`` evaluates through the recursive evaluators in :mod:`tree`.
``backward`` compiles the tree into flat per-node arrays and runs the compiled
per-sample forward and backward passes, the same ones the training loop uses.
``finite_diff_grads`` is the independent check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .tree import SoftNode, SoftTree, evaluate, preorder, sigmoid

LINKS = {"regression": "identity", "binary": "logistic", "multiclass": "softmax"}
TASK_CODES = {"regression": _kernels.REGRESSION, "binary": _kernels.BINARY, "multiclass": _kernels.MULTICLASS}


@dataclass(frozen=True)
class LossSpec:
    task: str
    lam: float = 0.0

    def __post_init__(self):
        if self.task not in LINKS:
            raise ValueError(f"unknown task {self.task!r}")
        if not self.lam >= 0:
            raise ValueError("lambda must be nonnegative")

    @property
    def link(self) -> str:
        return LINKS[self.task]


def apply_link(y: np.ndarray, task: str) -> np.ndarray:
    """Map raw tree output to predictions: identity, logistic or softmax."""
    if task == "regression":
        return y
    if task == "binary":
        return sigmoid(y)
    z = y - y.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_batch(X, T):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("batch must be a nonempty 2-D array of augmented inputs")
    if np.isnan(X).any():
        raise ValueError("batch inputs contain NaN")
    T = np.asarray(T)
    if len(T) != len(X):
        raise ValueError(f"{len(X)} inputs but {len(T)} targets")
    if T.dtype.kind == "f" and np.isnan(T).any():
        raise ValueError("batch targets contain NaN")
    return X, T


def data_loss(Y: np.ndarray, T: np.ndarray, task: str) -> float:
    """Mean per-sample loss of raw outputs ``Y`` (shape B x K)."""
    if task == "regression":
        T = np.asarray(T, dtype=float).reshape(Y.shape)
        return float(0.5 * ((Y - T) ** 2).sum() / len(Y))
    if task == "binary":
        y = Y[:, 0]
        t = np.asarray(T, dtype=float).reshape(-1)
        return float(np.mean(np.logaddexp(0.0, y) - t * y))
    labels = np.asarray(T, dtype=int).reshape(-1)
    m = Y.max(axis=1)
    lse = m + np.log(np.exp(Y - m[:, None]).sum(axis=1))
    return float(np.mean(lse - Y[np.arange(len(Y)), labels]))


def penalty(tree: SoftTree, lam: float) -> float:
    return lam * sum(1.0 - n.gamma for n in preorder(tree.root))


def forward_loss(tree: SoftTree, X, T, spec: LossSpec) -> float:
    """Mean data loss over the batch plus ``lambda * sum(1 - gamma)``."""
    X, T = _check_batch(X, T)
    Y = evaluate(tree, X)
    return data_loss(Y, T, spec.task) + penalty(tree, spec.lam)


@dataclass
class ParamGrads:
    """Per-node gradients; row ``i`` belongs to preorder node ``i``."""

    d_gamma: np.ndarray
    d_w: np.ndarray
    d_rho: np.ndarray
    d_v: np.ndarray | None = None

    def fields(self):
        out = {"gamma": self.d_gamma, "w": self.d_w, "rho": self.d_rho}
        if self.d_v is not None:
            out["v"] = self.d_v
        return out

    def vector(self) -> np.ndarray:
        return np.concatenate([a.reshape(-1) for a in self.fields().values()])

    def compare(self, other: ParamGrads):
        """Worst relative error ``|a-b| / max(1, |a|, |b|)`` as (error, field, node)."""
        worst = (0.0, None, None)
        mine, theirs = self.fields(), other.fields()
        if mine.keys() != theirs.keys():
            raise ValueError("gradient containers describe different parameter sets")
        for name, a in mine.items():
            b = theirs[name]
            if a.shape != b.shape:
                raise ValueError(f"shape mismatch for {name}: {a.shape} vs {b.shape}")
            if not a.size:
                continue
            err = np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
            err = err.reshape(len(a), -1).max(axis=1)
            if err.max() > worst[0]:
                node = int(np.argmax(err))
                worst = (float(err[node]), name, node)
        return worst


class FlatTree:
    """Array form of a soft tree: parents precede children, ``-1`` marks no child."""

    def __init__(self, gamma, W, R, left, right, V, kind, task, input_dim, output_dim):
        self.gamma = np.asarray(gamma, dtype=float)
        self.W = np.asarray(W, dtype=float)
        self.R = np.asarray(R, dtype=float)
        self.V = None if V is None else np.asarray(V, dtype=float)
        self.left = np.asarray(left, dtype=int)
        self.right = np.asarray(right, dtype=int)
        self.kind, self.task = kind, task
        self.input_dim, self.output_dim = input_dim, output_dim
        self._index()

    @property
    def distributed(self) -> bool:
        return self.kind == "distributed"

    def __len__(self):
        return len(self.gamma)

    def _index(self):
        for i in range(len(self.gamma)):
            for c in (self.left[i], self.right[i]):
                if 0 <= c <= i:
                    raise ValueError("children must follow their parent")
        self._V = self.V if self.V is not None else np.zeros((len(self.gamma), 1))

    @classmethod
    def from_tree(cls, tree: SoftTree) -> FlatTree:
        if tree.hardened:
            raise ValueError("hardened trees have no gradients")
        nodes = preorder(tree.root)
        pos = {id(n): i for i, n in enumerate(nodes)}
        dist = tree.kind == "distributed"
        D = tree.input_dim + 1
        V = None
        if dist:
            V = np.array([n.v if n.v is not None else np.zeros(D) for n in nodes])
        return cls(
            [n.gamma for n in nodes],
            np.array([n.w for n in nodes]).reshape(len(nodes), D),
            np.array([np.asarray(n.rho, dtype=float) for n in nodes]).reshape(len(nodes), -1),
            [pos[id(n.left)] if n.left is not None else -1 for n in nodes],
            [pos[id(n.right)] if n.right is not None else -1 for n in nodes],
            V,
            tree.kind,
            tree.task,
            tree.input_dim,
            tree.output_dim,
        )

    def to_tree(self) -> SoftTree:
        made = [
            SoftNode(
                float(self.gamma[i]),
                self.W[i].copy(),
                self.R[i].copy(),
                v=self.V[i].copy() if self.V is not None else None,
            )
            for i in range(len(self))
        ]
        for i, node in enumerate(made):
            if self.left[i] >= 0:
                node.left = made[self.left[i]]
            if self.right[i] >= 0:
                node.right = made[self.right[i]]
        return SoftTree(made[0], self.kind, self.input_dim, self.output_dim, self.task)

    def copy(self) -> FlatTree:
        return FlatTree(
            self.gamma.copy(),
            self.W.copy(),
            self.R.copy(),
            self.left.copy(),
            self.right.copy(),
            None if self.V is None else self.V.copy(),
            self.kind,
            self.task,
            self.input_dim,
            self.output_dim,
        )

    def _args(self):
        return self.gamma, self.W, self._V, self.R, self.left, self.right

    def forward(self, X: np.ndarray) -> np.ndarray:
        """Raw outputs (B x K) for augmented inputs."""
        X = np.ascontiguousarray(X, dtype=float)
        return _kernels.batch_forward(*self._args(), X, self.distributed)

    def loss_and_grads(self, X, T, lam: float = 0.0):
        """Mean loss (with penalty) and gradients ``(d_gamma, d_W, d_R, d_V)``."""
        X = np.ascontiguousarray(X, dtype=float)
        loss, dg, dW, dV, dR = _kernels.batch_loss_grads(
            *self._args(), X, target_array(T, self.task), TASK_CODES[self.task], self.distributed
        )
        dg -= lam
        loss += lam * float((1.0 - self.gamma).sum())
        return loss, (dg, dW, dR, dV if self.distributed else None)


def target_array(T, task: str) -> np.ndarray:
    """Targets as the 2-D float array the kernels expect."""
    T = np.asarray(T, dtype=float)
    if task == "regression":
        return np.ascontiguousarray(T.reshape(len(T), -1))
    return np.ascontiguousarray(T.reshape(-1, 1))


def backward(tree: SoftTree, X, T, spec: LossSpec) -> ParamGrads:
    """Exact gradient of :func:`forward_loss` for every gamma, w, v and rho."""
    X, T = _check_batch(X, T)
    flat = FlatTree.from_tree(tree)
    _, (d_gamma, d_W, d_R, d_V) = flat.loss_and_grads(X, T, spec.lam)
    return ParamGrads(d_gamma, d_W, d_R, d_V)


def finite_diff_grads(tree: SoftTree, X, T, spec: LossSpec, step: float = 1e-5) -> ParamGrads:
    """Central differences, one coordinate at a time.

    Gammas at the edge of [0, 1] use the second-order one-sided stencil so
    perturbed trees stay valid.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    X, T = _check_batch(X, T)
    work = tree.copy()
    nodes = preorder(work.root)

    def loss():
        return forward_loss(work, X, T, spec)

    def central(arr, j):
        keep = arr[j]
        arr[j] = keep + step
        up = loss()
        arr[j] = keep - step
        down = loss()
        arr[j] = keep
        return (up - down) / (2 * step)

    M, D, K = len(nodes), tree.input_dim + 1, tree.output_dim
    d_gamma, d_w, d_rho = np.zeros(M), np.zeros((M, D)), np.zeros((M, K))
    dist = tree.kind == "distributed"
    d_v = np.zeros((M, D)) if dist else None
    for i, node in enumerate(nodes):
        g0 = node.gamma
        if g0 + step > 1.0:
            f = []
            for k in range(3):
                node.gamma = g0 - k * step
                f.append(loss())
            d_gamma[i] = (3 * f[0] - 4 * f[1] + f[2]) / (2 * step)
        elif g0 - step < 0.0:
            f = []
            for k in range(3):
                node.gamma = g0 + k * step
                f.append(loss())
            d_gamma[i] = (-3 * f[0] + 4 * f[1] - f[2]) / (2 * step)
        else:
            node.gamma = g0 + step
            up = loss()
            node.gamma = g0 - step
            d_gamma[i] = (up - loss()) / (2 * step)
        node.gamma = g0
        node.w = np.array(node.w, dtype=float)
        node.rho = np.array(node.rho, dtype=float)
        for j in range(D):
            d_w[i, j] = central(node.w, j)
        if dist and node.v is not None:
            node.v = np.array(node.v, dtype=float)
            for j in range(D):
                d_v[i, j] = central(node.v, j)
        for k in range(K):
            d_rho[i, k] = central(node.rho, k)
    return ParamGrads(d_gamma, d_w, d_rho, d_v)


def random_batch(tree: SoftTree, n: int, rng: np.random.Generator):
    """Random augmented inputs and task-appropriate targets for gradient checks."""
    X = np.hstack([np.ones((n, 1)), rng.normal(size=(n, tree.input_dim))])
    if tree.task == "regression":
        T = rng.normal(size=(n, tree.output_dim))
    elif tree.task == "binary":
        T = rng.integers(0, 2, size=n)
    else:
        T = rng.integers(0, tree.output_dim, size=n)
    return X, T
