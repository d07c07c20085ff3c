"""Semirings that every chart program in the library is generic over.

Values are numpy arrays with a leading *lane* axis.  Scalar semirings
(log, max, sample, count) use one lane, ``KMax(k)`` keeps ``k`` score planes
sorted best-first, and the expectation semiring keeps ``(weight, moment)``.
All other axes are the logical shape of the tensor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

NEG_INF = -np.inf

Axes = Union[int, Sequence[int]]


class SemiringError(ValueError):
    """Raised on malformed semiring elements or mixed semiring kinds."""


def _norm_axes(axis: Axes, ndim: int) -> tuple[int, ...]:
    """Logical axes -> array axes (shifted past the lane axis)."""
    axes = (axis,) if np.isscalar(axis) else tuple(axis)
    out = []
    for a in axes:
        a = int(a)
        if not -ndim <= a < ndim:
            raise SemiringError(f"axis {a} out of range for rank {ndim}")
        out.append((a % ndim) + 1)
    return tuple(sorted(set(out)))


def logsumexp(x: np.ndarray, axis) -> np.ndarray:
    """Max-shifted log-sum-exp; an all ``-inf`` slice reduces to ``-inf``."""
    m = np.max(x, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        s = np.log(np.sum(np.exp(x - m_safe), axis=axis, keepdims=True))
    out = s + m_safe
    out = np.where(np.isneginf(m), NEG_INF, out)
    return np.squeeze(out, axis=axis)


@dataclass(frozen=True)
class Semiring:
    """Base class.  Subclasses override the array-level operations."""

    name = "abstract"

    @property
    def size(self) -> int:
        return 1

    # identities -----------------------------------------------------------
    def zero(self, shape=()) -> np.ndarray:
        return np.full((self.size,) + tuple(shape), NEG_INF)

    def one(self, shape=()) -> np.ndarray:
        return np.zeros((self.size,) + tuple(shape))

    # lifting ----------------------------------------------------------------
    def convert(self, logpot, feature=None) -> np.ndarray:
        logpot = np.asarray(logpot, dtype=np.float64)
        if np.isnan(logpot).any():
            raise SemiringError("NaN potential")
        return logpot[None].copy()

    # ops --------------------------------------------------------------------
    def plus(self, a, b):
        raise NotImplementedError

    def times(self, a, b):
        return a + b

    def sum(self, x, axis):
        raise NotImplementedError

    def matmul(self, a, b):
        return self.sum(self.times(a[..., :, :, None], b[..., None, :, :]), -2)

    def is_zero(self, x) -> np.ndarray:
        return np.isneginf(x[0])


@dataclass(frozen=True)
class LogSemiring(Semiring):
    name = "log"

    def plus(self, a, b):
        return np.logaddexp(a, b)

    def sum(self, x, axis):
        return logsumexp(x, _norm_axes(axis, x.ndim - 1))

    def matmul(self, a, b):
        from . import _kernels

        return _kernels.log_matmul(a, b)


@dataclass(frozen=True)
class SampleSemiring(LogSemiring):
    """Same forward values as :class:`LogSemiring`; only the backward differs."""

    name = "sample"


@dataclass(frozen=True)
class MaxSemiring(Semiring):
    name = "max"

    def plus(self, a, b):
        return np.maximum(a, b)

    def sum(self, x, axis):
        return np.max(x, axis=_norm_axes(axis, x.ndim - 1))

    def matmul(self, a, b):
        from . import _kernels

        return _kernels.max_matmul(a, b)[0]


@dataclass(frozen=True)
class KMaxSemiring(Semiring):
    """Top-``k`` scores, lane ``j`` holding the ``j``-th best (``-inf`` padded)."""

    k: int = 1
    name = "kmax"

    def __post_init__(self):
        if int(self.k) < 1:
            raise SemiringError("KMax requires k >= 1")

    @property
    def size(self) -> int:
        return self.k

    def zero(self, shape=()):
        return np.full((self.k,) + tuple(shape), NEG_INF)

    def one(self, shape=()):
        out = np.full((self.k,) + tuple(shape), NEG_INF)
        out[0] = 0.0
        return out

    def convert(self, logpot, feature=None):
        logpot = np.asarray(logpot, dtype=np.float64)
        if np.isnan(logpot).any():
            raise SemiringError("NaN potential")
        out = np.full((self.k,) + logpot.shape, NEG_INF)
        out[0] = logpot
        return out

    def _topk(self, cand):
        # cand: (n, *shape); stable so equal scores keep candidate order
        order = np.argsort(-cand, axis=0, kind="stable")[: self.k]
        vals = np.take_along_axis(cand, order, axis=0)
        if vals.shape[0] < self.k:
            pad = np.full((self.k - vals.shape[0],) + vals.shape[1:], NEG_INF)
            vals = np.concatenate([vals, pad])
            order = np.concatenate([order, np.zeros(pad.shape, dtype=order.dtype)])
        return vals, order

    def plus(self, a, b):
        a, b = np.broadcast_arrays(a, b)
        return self._topk(np.concatenate([a, b], axis=0))[0]

    def times_track(self, a, b):
        """Top-k pairwise sums plus the source lanes of each result lane."""
        k = self.k
        pair = a[:, None] + b[None, :]
        pair = pair.reshape((k * k,) + pair.shape[2:])
        vals, order = self._topk(pair)
        return vals, order // k, order % k

    def times(self, a, b):
        return self.times_track(a, b)[0]

    def sum_track(self, x, axis):
        """Reduce logical ``axis``; returns values, source lane and source index."""
        ax = _norm_axes(axis, x.ndim - 1)
        keep = [i for i in range(1, x.ndim) if i not in ax]
        moved = np.transpose(x, (0,) + ax + tuple(keep))
        red = int(np.prod([x.shape[i] for i in ax])) if ax else 1
        flat = moved.reshape((self.k * red,) + tuple(x.shape[i] for i in keep))
        vals, order = self._topk(flat)
        return vals, order // red, order % red

    def sum(self, x, axis):
        return self.sum_track(x, axis)[0]


@dataclass(frozen=True)
class CountSemiring(Semiring):
    """Real (sum, product) semiring on exp-potentials; counts with zero potentials."""

    name = "count"

    def zero(self, shape=()):
        return np.zeros((1,) + tuple(shape))

    def one(self, shape=()):
        return np.ones((1,) + tuple(shape))

    def convert(self, logpot, feature=None):
        logpot = np.asarray(logpot, dtype=np.float64)
        if np.isnan(logpot).any():
            raise SemiringError("NaN potential")
        return np.exp(logpot)[None]

    def plus(self, a, b):
        return a + b

    def times(self, a, b):
        return a * b

    def sum(self, x, axis):
        return np.sum(x, axis=_norm_axes(axis, x.ndim - 1))

    def matmul(self, a, b):
        return np.matmul(a, b)

    def is_zero(self, x):
        return x[0] == 0


@dataclass(frozen=True)
class ExpectationSemiring(Semiring):
    """First-order expectation semiring over ``(weight, moment)`` pairs."""

    name = "expectation"

    @property
    def size(self) -> int:
        return 2

    def zero(self, shape=()):
        return np.zeros((2,) + tuple(shape))

    def one(self, shape=()):
        out = np.zeros((2,) + tuple(shape))
        out[0] = 1.0
        return out

    def convert(self, logpot, feature=None):
        logpot = np.asarray(logpot, dtype=np.float64)
        if np.isnan(logpot).any():
            raise SemiringError("NaN potential")
        p = np.exp(logpot)
        f = np.zeros_like(p) if feature is None else np.broadcast_to(feature, p.shape)
        with np.errstate(invalid="ignore"):
            q = np.where(p > 0, p * f, 0.0)
        return np.stack([p, q])

    def plus(self, a, b):
        return a + b

    def times(self, a, b):
        a, b = np.broadcast_arrays(a, b)
        return np.stack([a[0] * b[0], a[0] * b[1] + a[1] * b[0]])

    def sum(self, x, axis):
        return np.sum(x, axis=_norm_axes(axis, x.ndim - 1))

    def matmul(self, a, b):
        p = np.matmul(a[0], b[0])
        q = np.matmul(a[0], b[1]) + np.matmul(a[1], b[0])
        return np.stack([p, q])

    def is_zero(self, x):
        return x[0] == 0


Log = LogSemiring()
Max = MaxSemiring()
Sample = SampleSemiring()
Count = CountSemiring()
Expectation = ExpectationSemiring()


def KMax(k: int) -> KMaxSemiring:
    return KMaxSemiring(int(k))


SemiringKind = Semiring

_BY_NAME = {"log": Log, "max": Max, "sample": Sample, "count": Count, "expectation": Expectation}


def by_name(name: str, k: int = 1) -> Semiring:
    if name == "kmax":
        return KMax(k)
    try:
        return _BY_NAME[name]
    except KeyError:
        raise SemiringError(f"unknown semiring {name!r}") from None


# --------------------------------------------------------------------------
# element-level API
# --------------------------------------------------------------------------


def _lift(kind: Semiring, x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr[None]
    if arr.ndim != 1 or arr.shape[0] != kind.size:
        raise SemiringError(
            f"{kind.name} element must have {kind.size} component(s), got shape {np.shape(x)}"
        )
    if isinstance(kind, KMaxSemiring) and np.any(arr[1:] > arr[:-1]):
        raise SemiringError("KMax scores must be sorted non-increasing")
    return arr


def _lower(kind: Semiring, arr: np.ndarray):
    if kind.size == 1 and not isinstance(kind, KMaxSemiring):
        return float(arr[0])
    return tuple(float(v) for v in arr)


def plus(kind: Semiring, a, b):
    """``a (+) b`` on single elements."""
    return _lower(kind, kind.plus(_lift(kind, a), _lift(kind, b)))


def times(kind: Semiring, a, b):
    """``a (x) b`` on single elements."""
    return _lower(kind, kind.times(_lift(kind, a), _lift(kind, b)))


def inject_potential(kind: Semiring, logpot: float, feature: float = 0.0):
    """Lift one raw log-potential into ``kind``."""
    return _lower(kind, kind.convert(np.float64(logpot), np.float64(feature)))


def zero(kind: Semiring):
    return _lower(kind, kind.zero())


def one(kind: Semiring):
    return _lower(kind, kind.one())
