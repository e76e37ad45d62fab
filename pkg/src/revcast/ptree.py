"""Walk parameter containers (nested dataclasses/tuples of arrays).

Parameters live in small frozen dataclasses.  Flattening visits dataclass
fields in declaration order and sequences by position, which fixes one
canonical parameter order used everywhere: optimizer state, checkpoints,
gradient audits, and tape-leaf wrapping all agree on it by construction.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .tape import Var


def _is_leaf(x) -> bool:
    return isinstance(x, (np.ndarray, Var))


def tree_flatten(tree, prefix: str = "") -> list[tuple[str, object]]:
    """List (dotted_path, leaf) pairs in canonical order."""
    if _is_leaf(tree):
        return [(prefix or "value", tree)]
    out: list[tuple[str, object]] = []
    if dataclasses.is_dataclass(tree):
        for field in dataclasses.fields(tree):
            child = getattr(tree, field.name)
            path = f"{prefix}.{field.name}" if prefix else field.name
            out.extend(tree_flatten(child, path))
        return out
    if isinstance(tree, (tuple, list)):
        for i, child in enumerate(tree):
            path = f"{prefix}.{i}" if prefix else str(i)
            out.extend(tree_flatten(child, path))
        return out
    if tree is None or isinstance(tree, (int, float, str, bool)):
        return []
    raise TypeError(f"cannot flatten {type(tree).__name__}")


def tree_map(fn, tree):
    """Rebuild the container with fn applied to every array/Var leaf."""
    if _is_leaf(tree):
        return fn(tree)
    if dataclasses.is_dataclass(tree):
        kwargs = {f.name: tree_map(fn, getattr(tree, f.name)) for f in dataclasses.fields(tree)}
        return type(tree)(**kwargs)
    if isinstance(tree, tuple):
        return tuple(tree_map(fn, c) for c in tree)
    if isinstance(tree, list):
        return [tree_map(fn, c) for c in tree]
    if tree is None or isinstance(tree, (int, float, str, bool)):
        return tree
    raise TypeError(f"cannot map over {type(tree).__name__}")


def tree_unflatten(tree, leaves: list):
    """Rebuild `tree`'s structure with `leaves` substituted in canonical order."""
    it = iter(leaves)
    rebuilt = tree_map(lambda _: next(it), tree)
    rest = sum(1 for _ in it)
    if rest:
        raise ValueError(f"{rest} extra leaves after unflattening")
    return rebuilt


def zeros_like_tree(tree):
    return tree_map(lambda a: np.zeros_like(a.value if isinstance(a, Var) else a), tree)


def wrap_leaves(tree):
    """Turn every array into a leaf Var (tape=None) for gradient tracking."""
    return tree_map(lambda a: Var(a) if isinstance(a, np.ndarray) else a, tree)


def unwrap_leaves(tree):
    return tree_map(lambda a: a.value if isinstance(a, Var) else a, tree)


def grads_of(tree):
    """Collect .grad from wrapped leaves (zeros where a leaf was never touched)."""
    out = []
    for _, leaf in tree_flatten(tree):
        if isinstance(leaf, Var):
            out.append(leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value))
        else:
            out.append(np.zeros_like(leaf))
    return out
