"""Hot inner loops: log-space and max-plus batched matrix products.

Two interchangeable backends compute the same contract:

* ``numba``: ``@njit`` loops, one pass for the per-cell shift and one for the
  shifted sum.
* ``numpy``: the same two passes vectorised over output cells, looping only
  over the inner index so memory stays at the output size.

The backend is picked at import time; set ``STRUCTCRF_DISABLE_JIT=1`` to force
the numpy path.  ``log_matmul_broadcast`` materialises the full
``N x M x O`` tensor and exists for debugging and benchmarks.
"""

from __future__ import annotations

import contextlib
import math
import os

import numpy as np

try:
    import numba

    if os.environ.get("NUMBA_THREADING_LAYER") is None:
        # the bundled TBB is often too old; OpenMP is always shipped with numba wheels
        numba.config.THREADING_LAYER = "omp"
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

_DISABLED = os.environ.get("STRUCTCRF_DISABLE_JIT", "").strip().lower() in {"1", "true", "yes"}

BACKEND = "numba" if HAVE_NUMBA and not _DISABLED else "numpy"


def available_backends() -> list[str]:
    return ["numba", "numpy"] if HAVE_NUMBA else ["numpy"]


@contextlib.contextmanager
def use_backend(name: str):
    """Temporarily switch the kernel backend."""
    global BACKEND
    if name not in available_backends():
        raise ValueError(f"backend {name!r} not available")
    old, BACKEND = BACKEND, name
    try:
        yield
    finally:
        BACKEND = old


def _resolve(backend):
    return BACKEND if backend is None else backend


# --------------------------------------------------------------------------
# shape plumbing
# --------------------------------------------------------------------------


def _flatten_pair(a, b):
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"inner extents differ: {a.shape} @ {b.shape}")
    batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    a3 = np.ascontiguousarray(np.broadcast_to(a, batch + a.shape[-2:])).reshape((-1,) + a.shape[-2:])
    b3 = np.ascontiguousarray(np.broadcast_to(b, batch + b.shape[-2:])).reshape((-1,) + b.shape[-2:])
    return batch, a3.astype(np.float64, copy=False), b3.astype(np.float64, copy=False)


def unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    shape = tuple(shape)
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, (s, t) in enumerate(zip(shape, g.shape)) if s == 1 and t != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# --------------------------------------------------------------------------
# numpy backend
# --------------------------------------------------------------------------


def _log_mm_np(a, b):
    B, N, M = a.shape
    O = b.shape[2]
    q = np.full((B, N, O), -np.inf)
    for n in range(M):
        np.maximum(q, a[:, :, n, None] + b[:, None, n, :], out=q)
    dead = np.isneginf(q)
    qs = np.where(dead, 0.0, q)
    s = np.zeros((B, N, O))
    for n in range(M):
        s += np.exp(a[:, :, n, None] + b[:, None, n, :] - qs)
    with np.errstate(divide="ignore"):
        out = np.log(s) + qs
    out[dead] = -np.inf
    return out


def _log_mm_bwd_np(a, b, v, g):
    ga = np.zeros_like(a)
    gb = np.zeros_like(b)
    live = np.isfinite(v) & (g != 0)
    vs = np.where(live, v, 0.0)
    gl = np.where(live, g, 0.0)
    for n in range(a.shape[2]):
        # skipped cells get exp(-inf) = 0 rather than an overflow times zero
        w = np.exp(np.where(live, a[:, :, n, None] + b[:, None, n, :] - vs, -np.inf)) * gl
        ga[:, :, n] = w.sum(axis=2)
        gb[:, n, :] = w.sum(axis=1)
    return ga, gb


def _max_mm_np(a, b):
    B, N, M = a.shape
    O = b.shape[2]
    out = np.full((B, N, O), -np.inf)
    idx = np.zeros((B, N, O), dtype=np.int64)
    for n in range(M):
        cand = a[:, :, n, None] + b[:, None, n, :]
        better = cand > out
        out = np.where(better, cand, out)
        idx = np.where(better, n, idx)
    return out, idx


def _max_mm_bwd_np(a, b, idx, g):
    B, N, M = a.shape
    O = b.shape[2]
    ga = np.zeros_like(a)
    gb = np.zeros_like(b)
    bi, mi, oi = np.nonzero(g)
    ni = idx[bi, mi, oi]
    vals = g[bi, mi, oi]
    np.add.at(ga, (bi, mi, ni), vals)
    np.add.at(gb, (bi, ni, oi), vals)
    return ga, gb


# --------------------------------------------------------------------------
# numba backend
# --------------------------------------------------------------------------

if HAVE_NUMBA:

    @numba.njit(cache=True, parallel=True)
    def _log_mm_rows(a, bt):
        # bt is b with its last two axes swapped, so both inner loops are unit stride;
        # each output cell is reduced serially, so results do not depend on threads
        B, N, M = a.shape
        O = bt.shape[1]
        out = np.empty((B, N, O))
        for r in numba.prange(B * N):
            bb = r // N
            m = r % N
            for o in range(O):
                q = -np.inf
                for n in range(M):
                    x = a[bb, m, n] + bt[bb, o, n]
                    if x > q:
                        q = x
                if q == -np.inf:
                    out[bb, m, o] = -np.inf
                    continue
                s = 0.0
                for n in range(M):
                    s += math.exp(a[bb, m, n] + bt[bb, o, n] - q)
                out[bb, m, o] = math.log(s) + q
        return out

    def _log_mm_nb(a, b):
        return _log_mm_rows(a, np.ascontiguousarray(b.transpose(0, 2, 1)))

    @numba.njit(cache=True)
    def _log_mm_bwd_nb(a, b, v, g):
        B, N, M = a.shape
        O = b.shape[2]
        ga = np.zeros_like(a)
        gb = np.zeros_like(b)
        for bb in range(B):
            for m in range(N):
                for o in range(O):
                    gg = g[bb, m, o]
                    vv = v[bb, m, o]
                    if gg == 0.0 or vv == -np.inf:
                        continue
                    for n in range(M):
                        w = math.exp(a[bb, m, n] + b[bb, n, o] - vv) * gg
                        ga[bb, m, n] += w
                        gb[bb, n, o] += w
        return ga, gb

    @numba.njit(cache=True)
    def _max_mm_nb(a, b):
        B, N, M = a.shape
        O = b.shape[2]
        out = np.empty((B, N, O))
        idx = np.zeros((B, N, O), dtype=np.int64)
        for bb in range(B):
            for m in range(N):
                for o in range(O):
                    best = -np.inf
                    arg = 0
                    for n in range(M):
                        x = a[bb, m, n] + b[bb, n, o]
                        if x > best:
                            best = x
                            arg = n
                    out[bb, m, o] = best
                    idx[bb, m, o] = arg
        return out, idx

    @numba.njit(cache=True)
    def _max_mm_bwd_nb(a, b, idx, g):
        B, N, M = a.shape
        O = b.shape[2]
        ga = np.zeros_like(a)
        gb = np.zeros_like(b)
        for bb in range(B):
            for m in range(N):
                for o in range(O):
                    gg = g[bb, m, o]
                    if gg == 0.0:
                        continue
                    n = idx[bb, m, o]
                    ga[bb, m, n] += gg
                    gb[bb, n, o] += gg
        return ga, gb


_IMPL = {
    "numpy": (_log_mm_np, _log_mm_bwd_np, _max_mm_np, _max_mm_bwd_np),
}
if HAVE_NUMBA:
    _IMPL["numba"] = (_log_mm_nb, _log_mm_bwd_nb, _max_mm_nb, _max_mm_bwd_nb)


# --------------------------------------------------------------------------
# public entry points (arbitrary broadcastable leading dims)
# --------------------------------------------------------------------------


def log_matmul(a, b, backend=None):
    """``out[.., m, o] = log sum_n exp(a[.., m, n] + b[.., n, o])``, shifted per cell."""
    batch, a3, b3 = _flatten_pair(np.asarray(a), np.asarray(b))
    out = _IMPL[_resolve(backend)][0](a3, b3)
    return out.reshape(batch + out.shape[1:])


def log_matmul_backward(a, b, v, g, backend=None):
    """Gradients of ``log_matmul`` w.r.t. both operands, reduced to their shapes.

    ``g`` may carry extra leading lanes; they broadcast against ``a`` and ``b``.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2], g.shape[:-2])
    full_a = batch + a.shape[-2:]
    full_b = batch + b.shape[-2:]
    a3 = np.ascontiguousarray(np.broadcast_to(a, full_a)).reshape((-1,) + a.shape[-2:])
    b3 = np.ascontiguousarray(np.broadcast_to(b, full_b)).reshape((-1,) + b.shape[-2:])
    v3 = np.ascontiguousarray(np.broadcast_to(v, batch + v.shape[-2:])).reshape((-1,) + v.shape[-2:])
    g3 = np.ascontiguousarray(np.broadcast_to(g, batch + g.shape[-2:])).reshape((-1,) + g.shape[-2:])
    ga, gb = _IMPL[_resolve(backend)][1](a3, b3, v3, g3.astype(np.float64))
    return ga.reshape(full_a), gb.reshape(full_b)


def max_matmul(a, b, backend=None):
    """Max-plus product; also returns the first maximising inner index per cell."""
    batch, a3, b3 = _flatten_pair(np.asarray(a), np.asarray(b))
    out, idx = _IMPL[_resolve(backend)][2](a3, b3)
    return out.reshape(batch + out.shape[1:]), idx.reshape(batch + idx.shape[1:])


def max_matmul_backward(a, b, idx, g, backend=None):
    a = np.asarray(a)
    b = np.asarray(b)
    batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2], g.shape[:-2])
    full_a = batch + a.shape[-2:]
    full_b = batch + b.shape[-2:]
    a3 = np.ascontiguousarray(np.broadcast_to(a, full_a)).reshape((-1,) + a.shape[-2:])
    b3 = np.ascontiguousarray(np.broadcast_to(b, full_b)).reshape((-1,) + b.shape[-2:])
    i3 = np.ascontiguousarray(np.broadcast_to(idx, batch + idx.shape[-2:])).reshape((-1,) + idx.shape[-2:])
    g3 = np.ascontiguousarray(np.broadcast_to(g, batch + g.shape[-2:])).reshape((-1,) + g.shape[-2:])
    ga, gb = _IMPL[_resolve(backend)][3](a3, b3, i3, g3.astype(np.float64))
    return ga.reshape(full_a), gb.reshape(full_b)


def log_matmul_broadcast(a, b):
    """Reference product through the materialised ``(.., N, M, O)`` tensor."""
    t = np.asarray(a)[..., :, :, None] + np.asarray(b)[..., None, :, :]
    q = np.max(t, axis=-2, keepdims=True)
    qs = np.where(np.isfinite(q), q, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(t - qs), axis=-2, keepdims=True)) + qs
    out = np.where(np.isneginf(q), -np.inf, out)
    return out[..., 0, :]
