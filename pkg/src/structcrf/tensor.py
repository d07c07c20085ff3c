"""Dense tensors of semiring elements and the primitives charts are built from."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .semiring import Semiring, SemiringError


@dataclass(frozen=True, eq=False)
class SemiTensor:
    """Immutable tensor of ``kind`` elements.

    ``data`` has shape ``(kind.size, *shape)``; lanes are stored as planes
    (structure of arrays) so KMax and expectation values reuse scalar loops.
    """

    kind: Semiring
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim < 1 or data.shape[0] != self.kind.size:
            raise SemiringError(
                f"{self.kind.name} tensor needs leading lane axis of {self.kind.size}, got {data.shape}"
            )
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def lift(cls, kind: Semiring, logpot, feature=None) -> "SemiTensor":
        """Inject raw log-potentials elementwise."""
        return cls(kind, kind.convert(logpot, feature))

    @classmethod
    def zeros(cls, kind: Semiring, shape) -> "SemiTensor":
        return cls(kind, kind.zero(shape))

    @classmethod
    def ones(cls, kind: Semiring, shape) -> "SemiTensor":
        return cls(kind, kind.one(shape))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape[1:]

    @property
    def ndim(self) -> int:
        return self.data.ndim - 1

    def values(self) -> np.ndarray:
        """Plain array view: lanes dropped for single-lane kinds, lanes last otherwise."""
        if self.kind.size == 1 and self.kind.name != "kmax":
            return self.data[0]
        return np.moveaxis(self.data, 0, -1)

    def __repr__(self):
        return f"SemiTensor({self.kind.name}, shape={self.shape})"


def _check_kinds(a: SemiTensor, b: SemiTensor):
    if a.kind != b.kind:
        raise SemiringError(f"semiring mismatch: {a.kind.name} vs {b.kind.name}")


def semiring_matmul(a: SemiTensor, b: SemiTensor) -> SemiTensor:
    """Batched ``(+)/(x)`` matrix product over the last two axes."""
    _check_kinds(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise SemiringError("semiring_matmul needs rank >= 2 operands")
    if a.shape[-1] != b.shape[-2]:
        raise SemiringError(f"inner extents differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as exc:
        raise SemiringError(f"batch extents not broadcastable: {a.shape}, {b.shape}") from exc
    return SemiTensor(a.kind, a.kind.matmul(a.data, b.data))


def reduce_plus(a: SemiTensor, axis: int) -> SemiTensor:
    """``(+)``-reduce one axis."""
    if not -a.ndim <= axis < a.ndim:
        raise SemiringError(f"axis {axis} out of range for rank {a.ndim}")
    return SemiTensor(a.kind, a.kind.sum(a.data, axis))


def broadcast_times(a: SemiTensor, b: SemiTensor) -> SemiTensor:
    """Elementwise ``(x)`` with trailing-axis broadcasting."""
    _check_kinds(a, b)
    try:
        shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise SemiringError(f"shapes not broadcastable: {a.shape}, {b.shape}") from exc
    da = a.data.reshape((a.kind.size,) + (1,) * (len(shape) - a.ndim) + a.shape)
    db = b.data.reshape((b.kind.size,) + (1,) * (len(shape) - b.ndim) + b.shape)
    return SemiTensor(a.kind, a.kind.times(da, db))
