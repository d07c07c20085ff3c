"""Simple (0-th order) CKY over labelled binary trees.

Part ``l[c, i, j]`` scores span ``i..j`` (inclusive) carrying label ``c``.
Every node of the tree, leaves and root included, is one labelled span.
"""

from __future__ import annotations

import numpy as np

from ..adjoint import Tape
from ..semiring import Log, Semiring
from .base import Family, StructureError, as_int_array, register

ORDERS = ("naive", "vectorized")


def _prepare(potentials, lengths):
    pots = np.asarray(potentials, dtype=np.float64)
    if pots.ndim not in (3, 4):
        raise ValueError(f"CKY potentials must be [C, N, N] or [B, C, N, N], got {pots.shape}")
    batched = pots.ndim == 4
    B, C, N, N2 = (pots if batched else pots[None]).shape
    if N != N2:
        raise ValueError("span potentials must be [C, N, N]")
    if np.isnan(pots).any():
        raise ValueError("NaN potential")
    if lengths is not None:
        lengths = np.broadcast_to(np.asarray(lengths, dtype=np.int64), (B,))
        if lengths.min() < 1 or lengths.max() > N:
            raise ValueError(f"lengths must lie in 1..{N}")
    return pots, batched, B, C, N, lengths


def cky_simple_partition(potentials, semiring: Semiring = Log, order: str = "vectorized", lengths=None, features=None):
    """Inside algorithm over labelled spans.

    ``vectorized`` keeps a right-facing chart indexed by (start, width) and a
    left-facing chart indexed by (end, reversed width), so every width is a
    single batched semiring dot product.  ``naive`` loops over span starts.
    """
    if order not in ORDERS:
        raise ValueError(f"order must be one of {ORDERS}")
    pots, batched, B, C, N, lengths = _prepare(potentials, lengths)
    tape = Tape(semiring)
    leaf = tape.leaf(pots, features, name="spans")
    x = leaf if batched else tape.reshape(leaf, (1, C, N, N))
    span = tape.sum(x, 1)
    ar = np.arange(N)

    if order == "vectorized":
        right = tape.chart((B, N, N), name="right")
        left = tape.chart((B, N, N), name="left")
        diag = span[:, ar, ar]
        right.write((slice(None), slice(None), 0), diag)
        left.write((slice(None), slice(None), N - 1), diag)
        for d in range(1, N):
            n = N - d
            lhs = right.read((slice(None), slice(0, n), slice(0, d)))
            rhs = left.read((slice(None), slice(d, N), slice(N - d, N)))
            inner = tape.matmul(tape.reshape(lhs, (B, n, 1, d)), tape.reshape(rhs, (B, n, d, 1)), tag="width")
            val = tape.times(tape.reshape(inner, (B, n)), span[:, ar[:n], ar[:n] + d])
            right.write((slice(None), slice(0, n), d), val)
            left.write((slice(None), slice(d, N), N - 1 - d), val)
        if lengths is None:
            root = right.read((slice(None), 0, N - 1))
        else:
            root = right.read((np.arange(B), 0, lengths - 1))
    else:
        chart = tape.chart((B, N, N), name="inside")
        chart.write((slice(None), ar, ar), span[:, ar, ar])
        for d in range(1, N):
            for i in range(N - d):
                j = i + d
                lhs = chart.read((slice(None), i, slice(i, j)))
                rhs = chart.read((slice(None), slice(i + 1, j + 1), j))
                inner = tape.sum(tape.times(lhs, rhs), 1)
                chart.write((slice(None), i, j), tape.times(inner, span[:, i, j]))
        if lengths is None:
            root = chart.read((slice(None), 0, N - 1))
        else:
            root = chart.read((np.arange(B), 0, lengths - 1))
    if not batched:
        root = tape.reshape(root, ())
    return root, tape


def _build_tree(spans: dict, i: int, j: int, used: list):
    if (i, j) not in spans:
        raise StructureError(f"span ({i}, {j}) missing")
    used.append((i, j))
    label = spans[(i, j)]
    if i == j:
        return [i, j, label]
    k = max((b for (a, b) in spans if a == i and b < j), default=None)
    if k is None or (k + 1, j) not in spans:
        raise StructureError(f"span ({i}, {j}) has no binary split")
    return [i, j, label, _build_tree(spans, i, k, used), _build_tree(spans, k + 1, j, used)]


def tree_spans(tree) -> list[tuple[int, int, int]]:
    """Flatten a nested ``[i, j, label, left, right]`` tree into labelled spans."""
    out = []
    stack = [tree]
    while stack:
        node = stack.pop()
        if len(node) == 3:
            out.append((int(node[0]), int(node[1]), int(node[2])))
        elif len(node) == 5:
            out.append((int(node[0]), int(node[1]), int(node[2])))
            stack.extend([node[3], node[4]])
        else:
            raise StructureError(f"malformed tree node {node!r}")
    return out


def check_tree_shape(tree, i: int, j: int):
    """Raise unless ``tree`` is a binary bracketing of ``i..j``."""
    if int(tree[0]) != i or int(tree[1]) != j:
        raise StructureError(f"node covers {tree[:2]}, expected ({i}, {j})")
    if len(tree) == 3:
        if i != j:
            raise StructureError(f"leaf ({i}, {j}) spans more than one position")
        return
    if len(tree) != 5 or i == j:
        raise StructureError(f"malformed node {tree!r}")
    left, right = tree[3], tree[4]
    k = int(left[1])
    if not i <= k < j:
        raise StructureError(f"bad split {k} for ({i}, {j})")
    check_tree_shape(left, i, k)
    check_tree_shape(right, k + 1, j)


@register("cky")
class SimpleCky(Family):
    name = "cky"

    def part_shape(self, model):
        return (model.C, model.N, model.N)

    def partition(self, model, potentials, semiring, features=None, order="vectorized", lengths=None):
        return cky_simple_partition(potentials, semiring, order=order, lengths=lengths, features=features)

    def parts_per_structure(self, model):
        return 2 * model.N - 1

    def encode(self, model, tree):
        N, C = model.N, model.C
        try:
            check_tree_shape(tree, 0, N - 1)
            spans = tree_spans(tree)
        except (TypeError, IndexError, ValueError) as exc:
            if isinstance(exc, StructureError):
                raise
            raise StructureError(f"malformed tree {tree!r}") from exc
        z = np.zeros((C, N, N), dtype=np.int64)
        for i, j, c in spans:
            if not 0 <= c < C:
                raise StructureError(f"label {c} outside 0..{C - 1}")
            z[c, i, j] = 1
        return z

    def decode(self, model, indicator):
        N, C = model.N, model.C
        z = as_int_array(indicator, (C, N, N))
        if z.max(initial=0) > 1:
            raise StructureError("span selected twice")
        spans = {}
        for c, i, j in np.argwhere(z):
            if i > j or (int(i), int(j)) in spans:
                raise StructureError(f"illegal or doubly-labelled span ({i}, {j})")
            spans[(int(i), int(j))] = int(c)
        used: list = []
        tree = _build_tree(spans, 0, N - 1, used)
        if len(used) != len(spans):
            raise StructureError("spans outside the tree")
        return tree

    def heatmap(self, model, marginals):
        return np.asarray(marginals).sum(axis=0)
