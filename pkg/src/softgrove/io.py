"""JSON model files.

Numbers are written with 17 significant digits so every float survives a
save/load cycle exactly, and save -> load -> save reproduces the same bytes.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .hardtree import HardNode, HardTree
from .tree import SoftNode, SoftTree


class ModelFormatError(ValueError):
    """Missing or malformed model document."""


def _num(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if not math.isfinite(x):
        raise ModelFormatError(f"cannot serialize non-finite value {x}")
    return format(x, ".17g")


def _emit(obj, indent: int) -> str:
    pad = " " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{pad} {json.dumps(k)}: {_emit(v, indent + 1)}' for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_emit(v, indent) for v in obj) + "]"
    if obj is None:
        return "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    return _num(obj)


def _soft_node(node: SoftNode) -> dict:
    out = {"gamma": node.gamma, "w": list(node.w)}
    if node.v is not None:
        out["v"] = list(node.v)
    out["rho"] = list(np.atleast_1d(node.rho))
    if node.left is not None:
        out["left"] = _soft_node(node.left)
    if node.right is not None:
        out["right"] = _soft_node(node.right)
    return out


def _hard_node(node: HardNode) -> dict:
    out = {"rho": list(np.atleast_1d(node.rho))}
    if not node.is_leaf:
        out["attr"] = int(node.attr)
        out["threshold"] = node.threshold
        out["left"] = _hard_node(node.left)
        out["right"] = _hard_node(node.right)
    return out


def to_document(model, extra: dict | None = None) -> dict:
    doc = {
        "kind": model.kind,
        "input_dim": model.input_dim,
        "output_dim": model.output_dim,
        "task": model.task,
    }
    if isinstance(model, HardTree):
        doc["root"] = _hard_node(model.root)
    else:
        if model.hardened:
            doc["hardened"] = True
            doc["gate_threshold"] = model.gate_threshold
        doc["root"] = _soft_node(model.root)
    if extra:
        for key, value in extra.items():
            doc[key] = value
    return doc


def dumps(model, extra: dict | None = None) -> str:
    return _emit(to_document(model, extra), 0) + "\n"


def _vec(values, name) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise ModelFormatError(f"field {name!r} must be a flat list of numbers")
    return arr


def _read_soft(d: dict, dim: int, out_dim: int) -> SoftNode:
    try:
        node = SoftNode(
            float(d["gamma"]),
            _vec(d["w"], "w"),
            _vec(d["rho"], "rho"),
            v=_vec(d["v"], "v") if "v" in d else None,
        )
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"bad tree node: {exc}") from None
    if len(node.w) != dim + 1 or (node.v is not None and len(node.v) != dim + 1):
        raise ModelFormatError(f"gate weights must have length {dim + 1}")
    if len(node.rho) != out_dim:
        raise ModelFormatError(f"responses must have length {out_dim}")
    if ("left" in d) != ("right" in d):
        raise ModelFormatError("a node needs both children or neither")
    if "left" in d:
        node.left = _read_soft(d["left"], dim, out_dim)
        node.right = _read_soft(d["right"], dim, out_dim)
    return node


def _read_hard(d: dict) -> HardNode:
    try:
        node = HardNode(_vec(d["rho"], "rho"))
        if "attr" in d:
            node.attr = int(d["attr"])
            node.threshold = float(d["threshold"])
            node.left = _read_hard(d["left"])
            node.right = _read_hard(d["right"])
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"bad hard-tree node: {exc}") from None
    return node


def from_document(doc: dict):
    try:
        kind, task = doc["kind"], doc["task"]
        dim, out_dim = int(doc["input_dim"]), int(doc["output_dim"])
        root = doc["root"]
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"model document lacks field {exc}") from None
    if kind == "hard":
        return HardTree(_read_hard(root), dim, out_dim, task)
    try:
        tree = SoftTree(_read_soft(root, dim, out_dim), kind, dim, out_dim, task)
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from None
    if doc.get("hardened"):
        tree.hardened = True
        tree.gate_threshold = float(doc.get("gate_threshold", 0.5))
    return tree


def loads(text: str):
    """Parse a model document; returns ``(model, document)``."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ModelFormatError("model document must be a JSON object")
    return from_document(doc), doc


def save_model(model, path, extra: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(model, extra))


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
