"""Tape of semiring tensor operations and the backward passes run over it.

Chart programs record every primitive (``times``, ``sum``, ``matmul`` and a
handful of routing ops) on a :class:`Tape`.  One backward sweep then yields

* part marginals, when the forward ran in the log semiring;
* the indicator of one best structure, for the max semiring (first index wins
  every tie);
* exact samples, by replacing each ``(+)`` step of the sweep with a draw
  proportional to the branch weights (forward filtering, backward sampling);
* the parts of the ``j``-th best structure, for ``KMax`` lane ``j``.

Adjoint arrays carry a leading lane axis.  Log and max sweeps use one lane,
sample sweeps one lane per independent draw, KMax sweeps one lane per score
plane.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernels
from .semiring import (
    KMaxSemiring,
    LogSemiring,
    MaxSemiring,
    Semiring,
    SemiringError,
    _norm_axes,
)
from .tensor import SemiTensor


class TapeError(ValueError):
    """Misuse of a tape (wrong semiring for the sweep, non-scalar root...)."""


class Node:
    __slots__ = ("tape", "index", "op", "value", "parents", "backward", "always", "tag")

    def __init__(self, tape, index, op, value, parents, backward, always=False, tag=None):
        self.tape = tape
        self.index = index
        self.op = op
        self.value = value
        self.parents = parents
        self.backward = backward
        self.always = always
        self.tag = tag

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape[1:]

    @property
    def ndim(self) -> int:
        return self.value.ndim - 1

    def tensor(self) -> SemiTensor:
        return SemiTensor(self.tape.semiring, self.value)

    def result(self) -> np.ndarray:
        """Lane-stripped value for scalar semirings, lanes-last otherwise."""
        return self.tensor().values()

    def __getitem__(self, idx):
        return self.tape.index(self, idx)

    def __repr__(self):
        return f"Node({self.index}:{self.op}, shape={self.shape})"


@dataclass
class _Sweep:
    mode: str
    lanes: int
    rng: Optional[np.random.Generator] = None
    charts: dict = field(default_factory=dict)


def _align(a: np.ndarray, ndim: int) -> np.ndarray:
    """Insert logical axes after the lane axis so ``a`` has logical rank ``ndim``."""
    extra = ndim - (a.ndim - 1)
    if extra <= 0:
        return a
    return a.reshape((a.shape[0],) + (1,) * extra + a.shape[1:])


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce lane-carrying gradient ``g`` to logical ``shape``."""
    lead = g.ndim - 1 - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(1, 1 + lead)))
    axes = tuple(i + 1 for i, s in enumerate(shape) if s == 1 and g.shape[i + 1] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _is_basic(idx) -> bool:
    return all(isinstance(i, (slice, int, np.integer, type(None), type(Ellipsis))) for i in idx)


def _pick(logits: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row of ``logits`` via the Gumbel-max trick."""
    noise = rng.gumbel(size=logits.shape)
    with np.errstate(invalid="ignore"):
        return np.argmax(np.where(np.isneginf(logits), -np.inf, logits + noise), axis=-1)


def _route_samples(logits: np.ndarray, counts: np.ndarray, rng) -> np.ndarray:
    """Return per-row choice counts (rows x R) for ``counts`` draws per row."""
    out = np.zeros(logits.shape, dtype=np.float64)
    single = counts == 1
    rows = np.nonzero(single)[0]
    if rows.size:
        out[rows, _pick(logits[rows], rng)] = 1.0
    for r in np.nonzero(~single)[0]:
        c = int(round(counts[r]))
        if c <= 0:
            continue
        m = np.max(logits[r])
        p = np.exp(logits[r] - m)
        out[r] = rng.multinomial(c, p / p.sum())
    return out


class Chart:
    """Write-once buffer of semiring cells shared by a chart program.

    Reads and writes are both tape nodes; the backward sweep accumulates read
    adjoints into a per-sweep buffer that each write drains.
    """

    def __init__(self, tape: "Tape", shape, name="chart"):
        self.tape = tape
        self.shape = tuple(shape)
        self.name = name
        self.buffer = tape.semiring.zero(self.shape)
        self.key = id(self)

    def _grad(self, sweep: _Sweep) -> np.ndarray:
        buf = sweep.charts.get(self.key)
        if buf is None:
            buf = np.zeros((sweep.lanes,) + self.shape)
            sweep.charts[self.key] = buf
        return buf

    def write(self, idx, node: Node) -> Node:
        idx = idx if isinstance(idx, tuple) else (idx,)
        full = (slice(None),) + idx
        target_shape = self.buffer[full].shape[1:]
        if node.shape != target_shape:
            raise TapeError(f"chart write shape {node.shape} != region {target_shape}")
        self.buffer[full] = node.value

        def backward(g, sweep):
            buf = sweep.charts.get(self.key)
            if buf is None:
                return (None,)
            out = buf[full].copy()
            buf[full] = 0.0
            return (out,)

        return self.tape._record("chart_write", node.value, (node,), backward, always=True)

    def read(self, idx) -> Node:
        idx = idx if isinstance(idx, tuple) else (idx,)
        full = (slice(None),) + idx
        value = self.buffer[full].copy()
        basic = _is_basic(idx)

        def backward(g, sweep):
            buf = self._grad(sweep)
            if basic:
                buf[full] += g
            else:
                np.add.at(buf, full, g)
            return ()

        return self.tape._record("chart_read", value, (), backward)


class Tape:
    """Recorder for one forward chart computation in a fixed semiring."""

    def __init__(self, semiring: Semiring):
        self.semiring = semiring
        self.nodes: list[Node] = []
        self.leaves: list[Node] = []

    # ------------------------------------------------------------------ util
    def _record(self, op, value, parents, backward, always=False, tag=None) -> Node:
        node = Node(self, len(self.nodes), op, value, tuple(parents), backward, always, tag)
        self.nodes.append(node)
        return node

    def count(self, op: str, tag: Optional[str] = None) -> int:
        return sum(1 for n in self.nodes if n.op == op and (tag is None or n.tag == tag))

    # ---------------------------------------------------------------- leaves
    def leaf(self, logpot, feature=None, name=None) -> Node:
        value = self.semiring.convert(logpot, feature)
        node = self._record("leaf", value, (), None, tag=name)
        self.leaves.append(node)
        return node

    def const(self, value: np.ndarray, op="const") -> Node:
        return self._record(op, np.asarray(value, dtype=np.float64), (), None)

    def zero(self, shape) -> Node:
        return self.const(self.semiring.zero(shape))

    def one(self, shape) -> Node:
        return self.const(self.semiring.one(shape))

    def lift(self, logpot) -> Node:
        """Constant lifted from raw log-potentials (not a differentiable leaf)."""
        return self.const(self.semiring.convert(logpot))

    def chart(self, shape, name="chart") -> Chart:
        return Chart(self, shape, name)

    # ------------------------------------------------------- semiring ops
    def times(self, a: Node, b: Node, tag=None) -> Node:
        sr = self.semiring
        nd = max(a.ndim, b.ndim)
        av, bv = _align(a.value, nd), _align(b.value, nd)
        if isinstance(sr, KMaxSemiring):
            value, ia, ib = sr.times_track(av, bv)

            def backward(g, sweep):
                k = sr.k
                lanes = np.arange(k).reshape((k, 1) + (1,) * (g.ndim - 1))
                ga = ((ia[None] == lanes) * g[None]).sum(axis=1)
                gb = ((ib[None] == lanes) * g[None]).sum(axis=1)
                return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

        else:
            value = sr.times(av, bv)

            def backward(g, sweep):
                return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return self._record("times", value, (a, b), backward, tag=tag)

    def sum(self, a: Node, axis, tag=None) -> Node:
        """``(+)``-reduce one or more logical axes."""
        sr = self.semiring
        axes = _norm_axes(axis, a.ndim)
        keep = tuple(i for i in range(1, a.value.ndim) if i not in axes)
        perm = (0,) + keep + axes
        inv = tuple(np.argsort(perm))
        red = int(np.prod([a.value.shape[i] for i in axes])) if axes else 1
        kept_shape = tuple(a.value.shape[i] for i in keep)

        def flat(x):
            return np.transpose(x, perm).reshape(x.shape[:1] + kept_shape + (red,))

        def unflat(x):
            x = x.reshape(x.shape[:1] + kept_shape + tuple(a.value.shape[i] for i in axes))
            return np.transpose(x, inv)

        if isinstance(sr, KMaxSemiring):
            value, src_lane, src_idx = sr.sum_track(a.value, tuple(i - 1 for i in axes))

            def backward(g, sweep):
                k = sr.k
                out = np.zeros((k,) + kept_shape + (red,))
                lanes, cells = np.nonzero(g.reshape(k, -1))
                if lanes.size:
                    sl = src_lane.reshape(k, -1)[lanes, cells]
                    si = src_idx.reshape(k, -1)[lanes, cells]
                    flat_out = out.reshape(k, -1, red)
                    np.add.at(flat_out, (sl, cells, si), g.reshape(k, -1)[lanes, cells])
                return (unflat(out),)

        else:
            value = sr.sum(a.value, tuple(i - 1 for i in axes))

            def backward(g, sweep):
                x = flat(a.value)
                gx = g[..., None]
                if sweep.mode == "log":
                    out = value[..., None]
                    live = np.isfinite(out)
                    with np.errstate(invalid="ignore"):
                        w = np.where(live, np.exp(x - np.where(live, out, 0.0)), 0.0)
                    return (unflat(gx * w),)
                if sweep.mode == "max":
                    arg = np.argmax(x, axis=-1)
                    onehot = np.zeros_like(x)
                    np.put_along_axis(onehot, arg[..., None], 1.0, axis=-1)
                    return (unflat(gx * onehot),)
                if sweep.mode == "sample":
                    L = g.shape[0]
                    gl = g.reshape(L, -1)
                    xl = x[0].reshape(-1, red)
                    lanes, cells = np.nonzero(gl)
                    out = np.zeros((L, gl.shape[1], red))
                    if lanes.size:
                        logits = xl[cells]
                        out[lanes, cells] = _route_samples(logits, gl[lanes, cells], sweep.rng)
                    return (unflat(out.reshape((L,) + kept_shape + (red,))),)
                raise TapeError(f"no {sweep.mode} backward for sum")

        return self._record("sum", value, (a,), backward, tag=tag)

    def matmul(self, a: Node, b: Node, tag=None) -> Node:
        """Batched semiring matrix product over the last two logical axes."""
        sr = self.semiring
        if a.ndim < 2 or b.ndim < 2:
            raise TapeError("matmul needs rank >= 2")
        if a.shape[-1] != b.shape[-2]:
            raise TapeError(f"inner extents differ: {a.shape} @ {b.shape}")
        if isinstance(sr, KMaxSemiring):
            a4 = self.reshape(a, a.shape + (1,))
            b4 = self.reshape(b, b.shape[:-2] + (1,) + b.shape[-2:])
            prod = self.times(a4, b4)
            node = self.sum(prod, -2, tag=tag)
            node.op = "matmul"
            return node
        nd = max(a.ndim, b.ndim)
        av, bv = _align(a.value, nd), _align(b.value, nd)
        if isinstance(sr, MaxSemiring):
            value, arg = _kernels.max_matmul(av, bv)
        elif isinstance(sr, LogSemiring):
            value, arg = _kernels.log_matmul(av, bv), None
        else:
            value, arg = sr.matmul(av, bv), None

        def backward(g, sweep):
            if sweep.mode == "log":
                ga, gb = _kernels.log_matmul_backward(av, bv, value, g)
            elif sweep.mode == "max":
                ga, gb = _kernels.max_matmul_backward(av, bv, arg, g)
            elif sweep.mode == "sample":
                ga, gb = self._sample_matmul(av, bv, g, sweep.rng)
            else:
                raise TapeError(f"no {sweep.mode} backward for matmul")
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

        return self._record("matmul", value, (a, b), backward, tag=tag)

    @staticmethod
    def _sample_matmul(av, bv, g, rng):
        batch = np.broadcast_shapes(av.shape[1:-2], bv.shape[1:-2], g.shape[1:-2])
        L = g.shape[0]
        N, M = av.shape[-2:]
        O = bv.shape[-1]
        A = np.broadcast_to(av[0], batch + (N, M)).reshape(-1, N, M)
        B = np.broadcast_to(bv[0], batch + (M, O)).reshape(-1, M, O)
        G = np.broadcast_to(g, (L,) + batch + (N, O)).reshape(L, -1, N, O)
        ga = np.zeros((L,) + A.shape)
        gb = np.zeros((L,) + B.shape)
        li, bi, mi, oi = np.nonzero(G)
        if li.size:
            logits = A[bi, mi, :] + B[bi, :, oi]
            choice = _route_samples(logits, G[li, bi, mi, oi], rng)
            ni, cols = np.nonzero(choice)
            rows_l, rows_b, rows_m, rows_o = li[ni], bi[ni], mi[ni], oi[ni]
            vals = choice[ni, cols]
            np.add.at(ga, (rows_l, rows_b, rows_m, cols), vals)
            np.add.at(gb, (rows_l, rows_b, cols, rows_o), vals)
        return ga.reshape((L,) + batch + (N, M)), gb.reshape((L,) + batch + (M, O))

    # --------------------------------------------------------- routing ops
    def index(self, a: Node, idx) -> Node:
        idx = idx if isinstance(idx, tuple) else (idx,)
        full = (slice(None),) + idx
        value = a.value[full]
        if value.base is not None:
            value = value.copy()
        basic = _is_basic(idx)

        def backward(g, sweep):
            out = np.zeros((g.shape[0],) + a.shape)
            if basic:
                out[full] += g
            else:
                np.add.at(out, full, g)
            return (out,)

        return self._record("index", value, (a,), backward)

    def stack(self, nodes: Sequence[Node], axis: int = 0) -> Node:
        nodes = list(nodes)
        ax = axis % (nodes[0].ndim + 1) + 1
        value = np.stack([n.value for n in nodes], axis=ax)

        def backward(g, sweep):
            return tuple(np.take(g, i, axis=ax) for i in range(len(nodes)))

        return self._record("stack", value, nodes, backward)

    def concat(self, nodes: Sequence[Node], axis: int = 0) -> Node:
        nodes = list(nodes)
        ax = axis % nodes[0].ndim + 1
        value = np.concatenate([n.value for n in nodes], axis=ax)
        bounds = np.cumsum([n.value.shape[ax] for n in nodes])[:-1]

        def backward(g, sweep):
            return tuple(np.split(g, bounds, axis=ax))

        return self._record("concat", value, nodes, backward)

    def reshape(self, a: Node, shape) -> Node:
        shape = tuple(shape)
        value = a.value.reshape((a.value.shape[0],) + shape)

        def backward(g, sweep):
            return (g.reshape((g.shape[0],) + a.shape),)

        return self._record("reshape", value, (a,), backward)

    def transpose(self, a: Node, axes) -> Node:
        perm = (0,) + tuple(int(x) % a.ndim + 1 for x in axes)
        inv = tuple(np.argsort(perm))
        value = np.transpose(a.value, perm)

        def backward(g, sweep):
            return (np.transpose(g, inv),)

        return self._record("transpose", value, (a,), backward)

    def select(self, cond, a: Node, b: Node) -> Node:
        """Elementwise ``a`` where ``cond`` else ``b`` (routing, not a semiring op)."""
        cond = np.asarray(cond, dtype=bool)
        nd = max(a.ndim, b.ndim, cond.ndim)
        av, bv = _align(a.value, nd), _align(b.value, nd)
        value = np.where(cond, av, bv)

        def backward(g, sweep):
            return (
                _unbroadcast(np.where(cond, g, 0.0), a.shape),
                _unbroadcast(np.where(cond, 0.0, g), b.shape),
            )

        return self._record("select", value, (a, b), backward)

    def mask(self, a: Node, keep) -> Node:
        """Replace cells outside ``keep`` with the semiring zero."""
        return self.select(keep, a, self.zero(()))


# ----------------------------------------------------------------------
# sweeps
# ----------------------------------------------------------------------


def _check_root(root: Node):
    if root.ndim > 1:
        raise TapeError(f"root must be a scalar (or a batch vector of scalars), got shape {root.shape}")


def _sweep(tape: Tape, root: Node, seed: np.ndarray, sweep: _Sweep) -> list[np.ndarray]:
    grads: dict[int, np.ndarray] = {root.index: seed}
    leaf_ids = {leaf.index for leaf in tape.leaves}
    out: dict[int, np.ndarray] = {}
    for node in reversed(tape.nodes[: root.index + 1]):
        g = grads.get(node.index)
        if node.index in leaf_ids:
            if g is not None:
                out[node.index] = g
            continue
        if g is None and not node.always:
            continue
        grads.pop(node.index, None)
        if node.backward is None:
            continue
        pgs = node.backward(g, sweep)
        for parent, pg in zip(node.parents, pgs):
            if pg is None:
                continue
            prev = grads.get(parent.index)
            if prev is None:
                grads[parent.index] = np.array(pg, dtype=np.float64, copy=True)
            else:
                prev += pg
    result = []
    for leaf in tape.leaves:
        g = out.get(leaf.index)
        if g is None:
            g = np.zeros((sweep.lanes,) + leaf.shape)
        result.append(g)
    return result


def _finite_seed(root: Node, lanes: int) -> np.ndarray:
    alive = np.isfinite(root.value[0]).astype(np.float64)
    return np.broadcast_to(alive, (lanes,) + root.shape).copy()


def backward_log(tape: Tape, root: Node) -> list[np.ndarray]:
    """d root / d leaf for every leaf: the part marginals of a log-partition."""
    if not isinstance(tape.semiring, LogSemiring):
        raise TapeError("backward_log needs a log (or sample) semiring forward")
    _check_root(root)
    grads = _sweep(tape, root, _finite_seed(root, 1), _Sweep("log", 1))
    return [g[0] for g in grads]


def backward_max(tape: Tape, root: Node) -> list[np.ndarray]:
    """Indicator of the best structure (first index wins at every tie)."""
    if not isinstance(tape.semiring, MaxSemiring):
        raise TapeError("backward_max needs a max semiring forward")
    _check_root(root)
    grads = _sweep(tape, root, _finite_seed(root, 1), _Sweep("max", 1))
    return [g[0] for g in grads]


def backward_sample(tape: Tape, root: Node, rng, k: int = 1) -> list[np.ndarray]:
    """``k`` independent exact samples; each leaf adjoint has a leading ``k`` axis."""
    if not isinstance(tape.semiring, LogSemiring):
        raise TapeError("backward_sample needs a log (or sample) semiring forward")
    _check_root(root)
    if not isinstance(rng, np.random.Generator):
        rng = np.random.Generator(np.random.Philox(rng))
    return _sweep(tape, root, _finite_seed(root, k), _Sweep("sample", k, rng))


def backward_kmax(tape: Tape, root: Node, lane: int) -> list[np.ndarray]:
    """Parts of the structure behind KMax score plane ``lane``."""
    sr = tape.semiring
    if not isinstance(sr, KMaxSemiring):
        raise TapeError("backward_kmax needs a KMax forward")
    _check_root(root)
    if not 0 <= lane < sr.k:
        raise TapeError(f"lane {lane} outside 0..{sr.k - 1}")
    seed = np.zeros((sr.k,) + root.shape)
    seed[lane] = np.isfinite(root.value[lane]).astype(np.float64)
    grads = _sweep(tape, root, seed, _Sweep("kmax", sr.k))
    return [g[0] for g in grads]
