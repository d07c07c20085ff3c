"""Linear-chain CRF: parts are labelled edges ``l[t, c_t, c_{t+1}]``."""

from __future__ import annotations

import math

import numpy as np

from ..adjoint import Tape
from ..semiring import Log, Semiring
from .base import Family, StructureError, as_int_array, register

ORDERS = ("serial", "scan")


def identity_matrix(semiring: Semiring, C: int) -> np.ndarray:
    """Semiring identity matrix: ``one`` on the diagonal, ``zero`` elsewhere."""
    eye = np.eye(C, dtype=bool)
    return np.where(eye, semiring.one((C, C)), semiring.zero((C, C)))


def _batched(potentials, features, lengths):
    pots = np.asarray(potentials, dtype=np.float64)
    if pots.ndim not in (3, 4):
        raise ValueError(f"chain potentials must be [T, C, C] or [B, T, C, C], got {pots.shape}")
    batched = pots.ndim == 4
    B, T, C, C2 = (pots if batched else pots[None]).shape
    if C != C2:
        raise ValueError("transition matrices must be square")
    if T < 1 or C < 1:
        raise ValueError("chain needs T >= 1 and C >= 1")
    if np.isnan(pots).any():
        raise ValueError("NaN potential")
    if lengths is not None:
        lengths = np.broadcast_to(np.asarray(lengths, dtype=np.int64), (B,))
        if lengths.min() < 1 or lengths.max() > T:
            raise ValueError(f"lengths must lie in 1..{T}")
    return pots, batched, B, T, C, lengths


def chain_partition(potentials, semiring: Semiring = Log, order: str = "serial", lengths=None, features=None):
    """Forward algorithm in any semiring.

    ``order="serial"`` runs left to right; ``order="scan"`` pads ``T`` to a
    power of two with identity matrices and multiplies adjacent pairs, one
    batched matmul per tree layer.  Returns ``(root, tape)``.
    """
    if order not in ORDERS:
        raise ValueError(f"order must be one of {ORDERS}")
    pots, batched, B, T, C, lengths = _batched(potentials, features, lengths)
    tape = Tape(semiring)
    leaf = tape.leaf(pots, features, name="edges")
    x = leaf if batched else tape.reshape(leaf, (1, T, C, C))
    ident = tape.const(identity_matrix(semiring, C))
    if lengths is not None:
        keep = np.arange(T)[None, :] < lengths[:, None]
        x = tape.select(keep[:, :, None, None], x, ident)

    if order == "serial":
        alpha = tape.sum(x[:, 0], 1)
        for t in range(1, T):
            row = tape.reshape(alpha, (B, 1, C))
            alpha = tape.reshape(tape.matmul(row, x[:, t], tag="serial"), (B, C))
        root = tape.sum(alpha, 1)
    else:
        P = 1 << math.ceil(math.log2(T)) if T > 1 else 1
        if P > T:
            pad = tape.const(np.broadcast_to(ident.value[:, None, None], (semiring.size, B, P - T, C, C)).copy())
            x = tape.concat([x, pad], axis=1)
        while P > 1:
            x = tape.matmul(x[:, 0::2], x[:, 1::2], tag="scan")
            P //= 2
        root = tape.sum(x[:, 0], (1, 2))
    if not batched:
        root = tape.reshape(root, ())
    return root, tape


@register("linear-chain")
class LinearChain(Family):
    name = "linear-chain"

    def part_shape(self, model):
        return (model.T, model.C, model.C)

    def partition(self, model, potentials, semiring, features=None, order="serial", lengths=None):
        return chain_partition(potentials, semiring, order=order, lengths=lengths, features=features)

    def parts_per_structure(self, model):
        return model.T

    def encode(self, model, labels):
        labels = [int(c) for c in labels]
        T, C = model.T, model.C
        if len(labels) != T + 1 or any(not 0 <= c < C for c in labels):
            raise StructureError(f"need {T + 1} labels in 0..{C - 1}, got {labels}")
        z = np.zeros((T, C, C), dtype=np.int64)
        for t in range(T):
            z[t, labels[t], labels[t + 1]] = 1
        return z

    def decode(self, model, indicator):
        T, C = model.T, model.C
        z = as_int_array(indicator, (T, C, C))
        labels = None
        for t in range(T):
            hits = np.argwhere(z[t])
            if len(hits) != 1 or z[t][tuple(hits[0])] != 1:
                raise StructureError(f"edge {t} must select exactly one label pair")
            a, b = (int(v) for v in hits[0])
            if labels is None:
                labels = [a]
            elif labels[-1] != a:
                raise StructureError(f"label mismatch at position {t}")
            labels.append(b)
        return labels

    def heatmap(self, model, marginals):
        m = np.asarray(marginals)
        return m.reshape(model.T, model.C * model.C)
