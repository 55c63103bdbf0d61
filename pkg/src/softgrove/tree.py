"""Soft, budding and distributed tree structures and their evaluators.

A node responds with

    y_m(x) = (1 - gamma_m) * [g_m(x) y_left(x) + h_m(x) y_right(x)] + gamma_m * rho_m

where ``g_m = sigmoid(w_m . x)``.  Budding and soft trees tie the right gate to
``h_m = 1 - g_m``; distributed trees use an independent ``h_m = sigmoid(v_m . x)``.
Inputs are augmented, ``x = [1, x_1, ..., x_d]``.  An absent subtree responds
with zero, so a childless node answers ``gamma_m * rho_m`` (``rho_m`` at
``gamma_m = 1``).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

KINDS = ("soft", "budding", "distributed")
TASKS = ("regression", "binary", "multiclass")

# sigmoid(SATURATED) == 1.0 exactly in float64; used for sum nodes in to_soft
SATURATED = 1000.0


class StructureError(ValueError):
    """Raised for malformed trees."""


@dataclass
class SoftNode:
    gamma: float
    w: np.ndarray
    rho: np.ndarray
    v: np.ndarray | None = None
    left: SoftNode | None = None
    right: SoftNode | None = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None and self.right is None

    def children(self):
        if self.left is not None:
            yield self.left
        if self.right is not None:
            yield self.right


@dataclass
class SoftTree:
    root: SoftNode
    kind: str
    input_dim: int
    output_dim: int
    task: str
    hardened: bool = False
    gate_threshold: float = 0.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown tree kind {self.kind!r}")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")

    def nodes(self) -> list[SoftNode]:
        """Nodes in preorder; list position is the node identifier."""
        return preorder(self.root)

    def copy(self) -> SoftTree:
        return copy.deepcopy(self)


@dataclass(frozen=True)
class LeafSet:
    """Active leaves, identified by preorder node index."""

    ids: tuple[int, ...] = field(default_factory=tuple)

    def __len__(self):
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)

    def __contains__(self, item):
        return item in self.ids


def preorder(root: SoftNode) -> list:
    out = []
    stack = [root]
    while stack:
        node = stack.pop()
        out.append(node)
        if node.right is not None:
            stack.append(node.right)
        if node.left is not None:
            stack.append(node.left)
    return out


def sigmoid(z):
    """Logistic function, stable for large ``|z|`` (saturates instead of overflowing)."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


def sigmoid_gate(w, x):
    """Gate activation ``sigmoid(w . x)`` for one augmented input or a batch of them."""
    w = np.asarray(w, dtype=float)
    x = np.asarray(x, dtype=float)
    if w.ndim != 1 or x.shape[-1] != w.shape[0]:
        raise ValueError(
            f"gate weight length {w.shape[-1] if w.ndim else 0} does not match "
            f"input length {x.shape[-1] if x.ndim else 0}"
        )
    return sigmoid(x @ w)


def _as_batch(tree: SoftTree, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.ndim != 2 or X.shape[1] != tree.input_dim + 1:
        raise ValueError(
            f"expected augmented inputs of length {tree.input_dim + 1}, got {X.shape[-1]}"
        )
    return X, single


def _gates(tree: SoftTree, node: SoftNode, X: np.ndarray, tied: bool):
    g = sigmoid_gate(node.w, X)
    if tied:
        if tree.hardened:
            g = (g > tree.gate_threshold).astype(float)
        return g, 1.0 - g
    if node.v is None:
        raise StructureError("internal node of a distributed tree is missing v")
    h = sigmoid_gate(node.v, X)
    if tree.hardened:
        g = (g > tree.gate_threshold).astype(float)
        h = (h > tree.gate_threshold).astype(float)
    return g, h


def _respond(tree: SoftTree, node: SoftNode, X: np.ndarray, tied: bool) -> np.ndarray:
    rho = np.asarray(node.rho, dtype=float)
    leaf_part = node.gamma * rho[None, :]
    if node.gamma == 1.0:
        return np.broadcast_to(leaf_part, (X.shape[0], rho.shape[0])).copy()
    if node.is_leaf:
        return np.broadcast_to(leaf_part, (X.shape[0], rho.shape[0])).copy()
    if node.left is None or node.right is None:
        raise StructureError("internal node must have both children")
    g, h = _gates(tree, node, X, tied)
    inner = g[:, None] * _respond(tree, node.left, X, tied) + h[:, None] * _respond(
        tree, node.right, X, tied
    )
    return (1.0 - node.gamma) * inner + leaf_part


def eval_budding(tree: SoftTree, x) -> np.ndarray:
    """Response of a budding (or soft) tree; ``x`` is one augmented input or a batch."""
    if tree.kind not in ("budding", "soft"):
        raise ValueError(f"eval_budding needs a budding or soft tree, got {tree.kind}")
    X, single = _as_batch(tree, x)
    y = _respond(tree, tree.root, X, tied=True)
    return y[0] if single else y


def eval_distributed(tree: SoftTree, x) -> np.ndarray:
    """Response of a distributed tree with untied left/right gates."""
    if tree.kind != "distributed":
        raise ValueError(f"eval_distributed needs a distributed tree, got {tree.kind}")
    X, single = _as_batch(tree, x)
    y = _respond(tree, tree.root, X, tied=False)
    return y[0] if single else y


def evaluate(tree: SoftTree, x) -> np.ndarray:
    if tree.kind == "distributed":
        return eval_distributed(tree, x)
    return eval_budding(tree, x)


def tree_size(tree) -> int:
    """Number of nodes reachable from the root (works for hard trees too)."""
    root = getattr(tree, "root", tree)
    count, stack = 0, [root]
    while stack:
        node = stack.pop()
        count += 1
        for child in (getattr(node, "left", None), getattr(node, "right", None)):
            if child is not None:
                stack.append(child)
    return count


def prune(tree: SoftTree, eps: float = 0.0) -> SoftTree:
    """Collapse every node with ``gamma >= 1 - eps`` into a leaf with ``gamma = 1``."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    out = tree.copy()
    for node in preorder(out.root):
        if node.gamma >= 1.0 - eps:
            node.gamma = 1.0
            node.left = node.right = None
    return out


def to_soft(tree: SoftTree) -> SoftTree:
    """Push every partial leaf contribution ``gamma * rho`` down to the leaves.

    The result has internal ``gamma = 0`` and leaf ``gamma = 1`` and evaluates
    identically to the input.  Budding input keeps its topology: each node's
    contribution is split over both branches because ``g + (1 - g) = 1``.
    Distributed gates do not sum to one, so a node with ``0 < gamma < 1`` is
    rewritten as a sum node (both gates saturated at 1) over a constant leaf
    and the rescaled original subtree; that adds two nodes per such node.
    """
    if tree.hardened:
        raise ValueError("to_soft expects a smooth tree, not a hardened one")
    if tree.kind == "distributed":
        root = _soft_distributed(tree.root, 1.0, tree.input_dim)
        return SoftTree(root, "distributed", tree.input_dim, tree.output_dim, tree.task)
    root = _soft_budding(tree.root, 1.0, np.zeros(tree.output_dim))
    return SoftTree(root, "soft", tree.input_dim, tree.output_dim, tree.task)


def _soft_budding(node: SoftNode, scale: float, offset: np.ndarray) -> SoftNode:
    rho = np.asarray(node.rho, dtype=float)
    if node.is_leaf:
        return SoftNode(1.0, node.w.copy(), scale * node.gamma * rho + offset)
    if node.left is None or node.right is None:
        raise StructureError("internal node must have both children")
    child_scale = scale * (1.0 - node.gamma)
    child_offset = scale * node.gamma * rho + offset
    return SoftNode(
        0.0,
        node.w.copy(),
        rho.copy(),
        left=_soft_budding(node.left, child_scale, child_offset),
        right=_soft_budding(node.right, child_scale, child_offset),
    )


def _soft_distributed(node: SoftNode, scale: float, input_dim: int) -> SoftNode:
    rho = np.asarray(node.rho, dtype=float)
    v = node.v.copy() if node.v is not None else np.zeros_like(node.w)
    if node.is_leaf:
        return SoftNode(1.0, node.w.copy(), scale * node.gamma * rho, v=v)
    if node.gamma == 1.0:
        return SoftNode(1.0, node.w.copy(), scale * rho, v=v)
    if node.left is None or node.right is None:
        raise StructureError("internal node must have both children")
    if node.v is None:
        raise StructureError("internal node of a distributed tree is missing v")
    child_scale = scale * (1.0 - node.gamma)
    inner = SoftNode(
        0.0,
        node.w.copy(),
        rho.copy(),
        v=v,
        left=_soft_distributed(node.left, child_scale, input_dim),
        right=_soft_distributed(node.right, child_scale, input_dim),
    )
    if node.gamma == 0.0:
        return inner
    always = np.zeros(input_dim + 1)
    always[0] = SATURATED
    const = SoftNode(1.0, np.zeros(input_dim + 1), scale * node.gamma * rho, v=np.zeros(input_dim + 1))
    return SoftNode(0.0, always.copy(), np.zeros_like(rho), v=always.copy(), left=const, right=inner)


def leaf_path_weights(tree: SoftTree, x) -> np.ndarray:
    """Product of gate values along each root-to-leaf path of a soft tree.

    Columns follow preorder leaf order.  For a soft (tied-gate) tree the rows
    sum to one.
    """
    X, single = _as_batch(tree, x)
    tied = tree.kind != "distributed"
    cols = []

    def walk(node, weight):
        if node.is_leaf:
            cols.append(weight)
            return
        g, h = _gates(tree, node, X, tied)
        walk(node.left, weight * g)
        walk(node.right, weight * h)

    walk(tree.root, np.ones(X.shape[0]))
    W = np.stack(cols, axis=1)
    return W[0] if single else W


def harden(tree: SoftTree, gate_threshold: float = 0.5) -> SoftTree:
    """Copy with indicator gates ``[sigmoid(.) > threshold]`` and gammas rounded to 0/1."""
    if not 0.0 < gate_threshold < 1.0:
        raise ValueError("gate_threshold must lie in (0, 1)")
    out = tree.copy()
    for node in preorder(out.root):
        # strict, like the gate rule: gamma = 0.5 rounds to 0
        node.gamma = 1.0 if node.gamma > 0.5 else 0.0
    out.hardened = True
    out.gate_threshold = gate_threshold
    return out


def active_leaves(tree: SoftTree, x) -> LeafSet:
    """Terminal nodes reached with path weight 1 in a hardened tree.

    A node is terminal when its gamma is 1 or it has no children.
    """
    if not tree.hardened:
        raise ValueError("active_leaves requires a hardened tree (see harden)")
    X, _ = _as_batch(tree, np.asarray(x, dtype=float).reshape(-1))
    tied = tree.kind != "distributed"
    ids = {id(node): i for i, node in enumerate(tree.nodes())}
    found = []
    stack = [tree.root]
    while stack:
        node = stack.pop()
        if node.gamma == 1.0 or node.is_leaf:
            found.append(ids[id(node)])
            continue
        g, h = _gates(tree, node, X, tied)
        if h[0] > 0:
            stack.append(node.right)
        if g[0] > 0:
            stack.append(node.left)
    return LeafSet(tuple(sorted(found)))


def terminal_count(tree: SoftTree) -> int:
    """Number of terminal nodes, the L in the 2**L possible active subsets."""
    return sum(1 for n in tree.nodes() if n.gamma == 1.0 or n.is_leaf)


def bud(input_dim: int, rho, v: bool = False) -> SoftNode:
    """A single leaf-bud: gamma = 1, zero gate weights."""
    rho = np.atleast_1d(np.asarray(rho, dtype=float)).copy()
    w = np.zeros(input_dim + 1)
    return SoftNode(1.0, w, rho, v=np.zeros(input_dim + 1) if v else None)


def random_tree(
    kind: str,
    depth: int,
    input_dim: int,
    output_dim: int = 1,
    task: str = "regression",
    rng: np.random.Generator | None = None,
    weight_scale: float = 1.0,
    full: bool = False,
) -> SoftTree:
    """Random tree for property tests and gradient checks.

    Internal gammas are uniform on [0, 1) (exactly 0 for soft trees), leaves have
    gamma 1.  Without ``full`` each internal position below the root becomes a
    leaf with probability 0.3.
    """
    rng = np.random.default_rng() if rng is None else rng
    distributed = kind == "distributed"

    def make(level):
        w = rng.normal(scale=weight_scale, size=input_dim + 1)
        v = rng.normal(scale=weight_scale, size=input_dim + 1) if distributed else None
        rho = rng.normal(size=output_dim)
        stop = level == depth or (not full and level > 0 and rng.random() < 0.3)
        if stop:
            return SoftNode(1.0, w, rho, v=v)
        gamma = 0.0 if kind == "soft" else float(rng.random())
        return SoftNode(gamma, w, rho, v=v, left=make(level + 1), right=make(level + 1))

    return SoftTree(make(0), kind, input_dim, output_dim, task)
