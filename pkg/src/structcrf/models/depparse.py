"""First-order dependency trees.

Arc potentials ``l[h, m - 1]`` score head ``h`` (0 is the root) taking word
``m`` in ``1..N``; self arcs ``l[m, m - 1]`` are never used.  The projective
family runs Eisner's algorithm on the tape; the non-projective family uses the
matrix-tree theorem for the log-partition and marginals and Chu-Liu/Edmonds
for the best tree.
"""

from __future__ import annotations

import heapq
import itertools

import numpy as np

from ..adjoint import Tape
from ..semiring import Log, Semiring
from .base import DistributionEmpty, Family, PartVector, StructureError, as_int_array, dependency_np, register


# ----------------------------------------------------------------------
# shared helpers
# ----------------------------------------------------------------------


def _check_arcs(potentials):
    pots = np.asarray(potentials, dtype=np.float64)
    if pots.ndim not in (2, 3):
        raise ValueError(f"arc potentials must be [N+1, N] or [B, N+1, N], got {pots.shape}")
    n1, N = pots.shape[-2:]
    if n1 != N + 1 or N < 1:
        raise ValueError(f"arc potentials must be [N+1, N], got {pots.shape[-2:]}")
    if np.isnan(pots).any():
        raise ValueError("NaN potential")
    return pots


def square_scores(arcs: np.ndarray) -> np.ndarray:
    """``[.., N+1, N]`` arc potentials -> ``[.., N+1, N+1]`` with ``-inf`` for root/self arcs."""
    N = arcs.shape[-1]
    out = np.full(arcs.shape[:-2] + (N + 1, N + 1), -np.inf)
    out[..., :, 1:] = arcs
    idx = np.arange(N + 1)
    out[..., idx, idx] = -np.inf
    return out


def pad_arcs(arcs: np.ndarray, lengths) -> tuple[np.ndarray, np.ndarray]:
    """Pad words past each length so they can only attach to their left neighbour.

    Returns the modified potentials and the boolean mask of overridden parts.
    """
    B, n1, N = arcs.shape
    lengths = np.broadcast_to(np.asarray(lengths, dtype=np.int64), (B,))
    if lengths.min() < 1 or lengths.max() > N:
        raise ValueError(f"lengths must lie in 1..{N}")
    h = np.arange(n1)[None, :, None]
    m = np.arange(1, N + 1)[None, None, :]
    L = lengths[:, None, None]
    pad_col = m > L
    override = pad_col | ((h > L) & (m <= L))
    values = np.where(pad_col & (h == m - 1), 0.0, -np.inf)
    return np.where(override, values, arcs), override


def heads_to_indicator(heads, N: int) -> np.ndarray:
    z = np.zeros((N + 1, N), dtype=np.int64)
    for m, h in enumerate(heads, start=1):
        z[int(h), m - 1] = 1
    return z


def check_heads(heads, N: int, projective: bool, multi_root: bool):
    """Raise StructureError unless ``heads`` (length N, 0 = root) is a legal tree."""
    try:
        heads = [int(h) for h in heads]
    except (TypeError, ValueError) as exc:
        raise StructureError(f"malformed head array {heads!r}") from exc
    if len(heads) != N:
        raise StructureError(f"head array needs {N} entries, got {len(heads)}")
    for m, h in enumerate(heads, start=1):
        if not 0 <= h <= N or h == m:
            raise StructureError(f"word {m} has illegal head {h}")
    for m in range(1, N + 1):
        seen, v = set(), m
        while v != 0:
            if v in seen:
                raise StructureError(f"cycle through word {v}")
            seen.add(v)
            v = heads[v - 1]
    if not multi_root and sum(1 for h in heads if h == 0) != 1:
        raise StructureError("exactly one word must attach to the root")
    if projective:
        for m, h in enumerate(heads, start=1):
            lo, hi = min(h, m), max(h, m)
            for w in range(lo + 1, hi):
                v = w
                while v != 0 and v != h:
                    v = heads[v - 1]
                if v != h:
                    raise StructureError(f"arc {h}->{m} is not projective")
    return heads


def decode_heads(indicator, N: int) -> list[int]:
    z = as_int_array(indicator, (N + 1, N))
    if np.any(z.sum(axis=0) != 1) or z.max(initial=0) > 1:
        raise StructureError("every word needs exactly one head")
    return [int(np.argmax(z[:, m])) for m in range(N)]


# ----------------------------------------------------------------------
# Eisner
# ----------------------------------------------------------------------


def eisner_partition(potentials, semiring: Semiring = Log, multi_root: bool = True, lengths=None, features=None):
    """Projective inside algorithm with complete/incomplete, left/right charts.

    Every chart is stored twice, once indexed by (start, width) and once by
    (end, reversed width), so each width is a handful of batched dot products.
    """
    pots = _check_arcs(potentials)
    batched = pots.ndim == 3
    B = pots.shape[0] if batched else 1
    N = pots.shape[-1]
    n = N + 1
    tape = Tape(semiring)
    leaf = tape.leaf(pots, features, name="arcs")
    x = leaf if batched else tape.reshape(leaf, (1, n, N))
    if lengths is not None:
        padded, override = pad_arcs(np.broadcast_to(pots, (B, n, N)), lengths)
        x = tape.select(~override, x, tape.lift(padded))
    S = tape.concat([tape.zero((B, n, 1)), x], axis=2)
    S = tape.mask(S, ~np.eye(n, dtype=bool))

    def chart(name):
        return tape.chart((B, n, n), name=name)

    cr_s, cr_e, cl_s, cl_e, ir_s, il_e = (chart(k) for k in ("cr_s", "cr_e", "cl_s", "cl_e", "ir_s", "il_e"))
    one = tape.one((B, n))
    for c in (cr_s, cl_s):
        c.write((slice(None), slice(None), 0), one)
    for c in (cr_e, cl_e):
        c.write((slice(None), slice(None), n - 1), one)

    def dot(lhs, rhs, cnt, d):
        prod = tape.matmul(tape.reshape(lhs, (B, cnt, 1, d)), tape.reshape(rhs, (B, cnt, d, 1)), tag="eisner")
        return tape.reshape(prod, (B, cnt))

    all_ = slice(None)
    for d in range(1, n):
        cnt = n - d
        s_idx = np.arange(cnt)
        t_idx = s_idx + d
        inner = dot(cr_s.read((all_, slice(0, cnt), slice(0, d))), cl_e.read((all_, slice(d, n), slice(n - d, n))), cnt, d)
        i_left = tape.times(inner, S[:, t_idx, s_idx])
        i_right = tape.times(inner, S[:, s_idx, t_idx])
        il_e.write((all_, slice(d, n), n - 1 - d), i_left)
        ir_s.write((all_, slice(0, cnt), d), i_right)
        c_left = dot(cl_s.read((all_, slice(0, cnt), slice(0, d))), il_e.read((all_, slice(d, n), slice(n - 1 - d, n - 1))), cnt, d)
        cl_s.write((all_, slice(0, cnt), d), c_left)
        cl_e.write((all_, slice(d, n), n - 1 - d), c_left)
        c_right = dot(ir_s.read((all_, slice(0, cnt), slice(1, d + 1))), cr_e.read((all_, slice(d, n), slice(n - d, n))), cnt, d)
        cr_s.write((all_, slice(0, cnt), d), c_right)
        cr_e.write((all_, slice(d, n), n - 1 - d), c_right)

    if multi_root:
        root = cr_s.read((all_, 0, N))
    else:
        ms = np.arange(1, n)
        arc = S[:, 0, ms]
        left = cl_s.read((all_, 1, ms - 1))
        right = cr_s.read((all_, ms, N - ms))
        root = tape.sum(tape.times(tape.times(arc, left), right), 1)
    if not batched:
        root = tape.reshape(root, ())
    return root, tape


# ----------------------------------------------------------------------
# matrix-tree theorem
# ----------------------------------------------------------------------


def matrix_tree_partition(potentials, multi_root: bool = True, lengths=None):
    """Log-partition and arc marginals over non-projective trees.

    Each dependent's column is shifted by its best incoming score before
    exponentiation and the shifts are added back to the log-determinant.
    Returns ``(A, marginals)`` with marginals shaped like ``potentials``.
    """
    pots = _check_arcs(potentials)
    batched = pots.ndim == 3
    arcs = pots if batched else pots[None]
    override = None
    if lengths is not None:
        arcs, override = pad_arcs(arcs, lengths)
    B, n1, N = arcs.shape
    sq = square_scores(arcs)[:, :, 1:]
    shift = sq.max(axis=1)
    if np.any(np.isneginf(shift)):
        raise DistributionEmpty("some word has no finite-score head")
    W = np.exp(sq - shift[:, None, :])
    root_w, word_w = W[:, 0, :], W[:, 1:, :]
    eye = np.eye(N, dtype=bool)
    if multi_root:
        lap = np.where(eye, (root_w + word_w.sum(axis=1))[:, None, :], -word_w)
    else:
        lap = np.where(eye, word_w.sum(axis=1)[:, None, :], -word_w)
        lap[:, 0, :] = root_w
    sign, logdet = np.linalg.slogdet(lap)
    if np.any(sign <= 0) or not np.all(np.isfinite(logdet)):
        raise DistributionEmpty("Laplacian is singular: no spanning tree has positive weight")
    A = logdet + shift.sum(axis=1)
    inv = np.linalg.inv(lap)
    inv_t = np.swapaxes(inv, 1, 2)
    diag = np.diagonal(inv, axis1=1, axis2=2)
    marg = np.zeros((B, n1, N))
    if multi_root:
        marg[:, 0, :] = root_w * diag
        marg[:, 1:, :] = word_w * (diag[:, None, :] - inv_t)
    else:
        marg[:, 0, :] = root_w * inv[:, :, 0]
        not_first = np.ones(N)
        not_first[0] = 0.0
        marg[:, 1:, :] = word_w * (diag[:, None, :] * not_first[None, None, :] - inv_t * not_first[None, :, None])
    if override is not None:
        marg[override] = 0.0
    if not batched:
        return float(A[0]), marg[0]
    return A, marg


# ----------------------------------------------------------------------
# Chu-Liu / Edmonds
# ----------------------------------------------------------------------


def _find_cycle(heads: np.ndarray):
    n = len(heads)
    color = np.zeros(n, dtype=np.int8)
    for start in range(1, n):
        path, v = [], start
        while v > 0 and color[v] == 0:
            color[v] = 1
            path.append(v)
            v = heads[v]
        if v > 0 and color[v] == 1:
            return path[path.index(v):]
        for u in path:
            color[u] = 2
    return None


def _cle(scores: np.ndarray) -> np.ndarray:
    n = scores.shape[0]
    heads = np.argmax(scores, axis=0)
    heads[0] = -1
    cycle = _find_cycle(heads)
    if cycle is None:
        return heads
    in_cycle = np.zeros(n, dtype=bool)
    in_cycle[cycle] = True
    members = np.nonzero(in_cycle)[0]
    others = np.nonzero(~in_cycle)[0]
    c = len(others)
    pos = {int(v): i for i, v in enumerate(others)}
    sub = np.full((c + 1, c + 1), -np.inf)
    sub[:c, :c] = scores[np.ix_(others, others)]
    kept = scores[heads[members], members]
    enter = {}
    for i, u in enumerate(others):
        gain = scores[u, members] - kept
        j = int(np.argmax(gain))
        sub[i, c] = gain[j]
        enter[i] = int(members[j])
    leave = {}
    for i, v in enumerate(others):
        col = scores[members, v]
        j = int(np.argmax(col))
        sub[c, i] = col[j]
        leave[i] = int(members[j])
    sub_heads = _cle(sub)
    out = heads.copy()
    for i, v in enumerate(others):
        if v == 0:
            continue
        h = int(sub_heads[i])
        out[v] = leave[i] if h == c else int(others[h])
    h = int(sub_heads[c])
    out[enter[h]] = int(others[h])
    return out


def _feasible(scores: np.ndarray) -> bool:
    n = scores.shape[0]
    seen = {0}
    frontier = [0]
    while frontier:
        u = frontier.pop()
        for v in np.nonzero(np.isfinite(scores[u]))[0]:
            if int(v) not in seen:
                seen.add(int(v))
                frontier.append(int(v))
    return len(seen) == n


def _mst_heads(arcs: np.ndarray, multi_root: bool) -> tuple[list[int], float]:
    scores = square_scores(arcs)
    N = arcs.shape[1]
    if multi_root:
        if not _feasible(scores):
            raise DistributionEmpty("no spanning tree with finite score")
        heads = _cle(scores)
        hs = [int(h) for h in heads[1:]]
        return hs, float(sum(arcs[h, m] for m, h in enumerate(hs)))
    best = None
    for r in range(1, N + 1):
        if not np.isfinite(arcs[0, r - 1]):
            continue
        s = scores.copy()
        s[0, :] = -np.inf
        s[0, r] = arcs[0, r - 1]
        if not _feasible(s):
            continue
        heads = _cle(s)
        hs = [int(h) for h in heads[1:]]
        score = float(sum(arcs[h, m] for m, h in enumerate(hs)))
        if best is None or score > best[1]:
            best = (hs, score)
    if best is None:
        raise DistributionEmpty("no single-root tree with finite score")
    return best


def chuliu_edmonds_map(potentials, multi_root: bool = True) -> PartVector:
    """Maximum-score arborescence rooted at node 0 (ties prefer lower head index)."""
    arcs = _check_arcs(potentials)
    if arcs.ndim != 2:
        raise ValueError("chuliu_edmonds_map takes a single [N+1, N] instance")
    heads, _ = _mst_heads(arcs, multi_root)
    N = arcs.shape[1]
    return PartVector(dependency_np(N, multi_root), heads_to_indicator(heads, N))


def kbest_arborescences(potentials, k: int, multi_root: bool = True) -> list[tuple[list[int], float]]:
    """The ``k`` best trees by Lawler-style partitioning with constrained MAP calls."""
    arcs = _check_arcs(potentials)
    N = arcs.shape[1]

    def solve(include, exclude):
        a = arcs.copy()
        for h, m in exclude:
            a[h, m - 1] = -np.inf
        for h, m in include:
            keep = a[h, m - 1]
            a[:, m - 1] = -np.inf
            a[h, m - 1] = keep
        try:
            heads, score = _mst_heads(a, multi_root)
        except DistributionEmpty:
            return None
        return (heads, score) if np.isfinite(score) else None

    first = solve((), ())
    if first is None:
        raise DistributionEmpty("no tree with finite score")
    tick = itertools.count()
    heap = [(-first[1], next(tick), first[0], (), ())]
    out = []
    while heap and len(out) < k:
        neg, _, heads, include, exclude = heapq.heappop(heap)
        out.append((heads, -neg))
        inc = list(include)
        for m, h in enumerate(heads, start=1):
            arc = (h, m)
            if arc in include:
                continue
            found = solve(tuple(inc), exclude + (arc,))
            if found is not None:
                heapq.heappush(heap, (-found[1], next(tick), found[0], tuple(inc), exclude + (arc,)))
            inc.append(arc)
    return out


# ----------------------------------------------------------------------
# sampling
# ----------------------------------------------------------------------


def sample_arborescences(potentials, rng: np.random.Generator, k: int = 1, multi_root: bool = True) -> list[list[int]]:
    """Exact draws of head arrays.

    Multi-root trees use Wilson's loop-erased random walk toward the root;
    single-root trees are drawn word by word from matrix-tree marginals of
    the conditioned model.
    """
    arcs = _check_arcs(potentials)
    N = arcs.shape[1]
    if not multi_root:
        return _sample_conditioned(arcs, rng, k)
    sq = square_scores(arcs)[:, 1:]
    shift = sq.max(axis=0)
    if np.any(np.isneginf(shift)) or not _feasible(square_scores(arcs)):
        raise DistributionEmpty("no tree with finite score")
    W = np.exp(sq - shift[None, :])
    cdf = np.cumsum(W / W.sum(axis=0, keepdims=True), axis=0)
    cdf[-1, :] = 1.0
    out = []
    for _ in range(k):
        in_tree = [True] + [False] * N
        nxt = [0] * (N + 1)
        for i in range(1, N + 1):
            u = i
            while not in_tree[u]:
                h = int(np.searchsorted(cdf[:, u - 1], rng.random(), side="right"))
                nxt[u] = min(h, N)
                u = nxt[u]
            u = i
            while not in_tree[u]:
                in_tree[u] = True
                u = nxt[u]
        out.append(nxt[1:])
    return out


def _sample_conditioned(arcs: np.ndarray, rng, k: int) -> list[list[int]]:
    # all k draws advance together: fix word m's head, then re-condition
    N = arcs.shape[1]
    batch = np.repeat(arcs[None], k, axis=0)
    rows = np.arange(k)
    for m in range(N):
        _, marg = matrix_tree_partition(batch, multi_root=False)
        cdf = np.cumsum(np.clip(marg[:, :, m], 0.0, None), axis=1)
        u = rng.random(k) * cdf[:, -1]
        h = np.minimum((cdf <= u[:, None]).sum(axis=1), N)
        keep = batch[rows, h, m]
        batch[:, :, m] = -np.inf
        batch[rows, h, m] = keep
    return batch.argmax(axis=1).tolist()


# ----------------------------------------------------------------------
# families
# ----------------------------------------------------------------------


class _DepBase(Family):
    projective = True

    def part_shape(self, model):
        return (model.N + 1, model.N)

    def parts_per_structure(self, model):
        return model.N

    def encode(self, model, heads):
        heads = check_heads(heads, model.N, self.projective, model.options.get("multi_root", True))
        return heads_to_indicator(heads, model.N)

    def decode(self, model, indicator):
        heads = decode_heads(indicator, model.N)
        return check_heads(heads, model.N, self.projective, model.options.get("multi_root", True))

    def heatmap(self, model, marginals):
        return np.asarray(marginals)


@register("dep")
class Projective(_DepBase):
    name = "dep"

    def partition(self, model, potentials, semiring, features=None, lengths=None, **_):
        return eisner_partition(potentials, semiring, model.options.get("multi_root", True), lengths=lengths, features=features)


@register("dep-np")
class NonProjective(_DepBase):
    name = "dep-np"
    projective = False

    def partition(self, model, potentials, semiring, features=None, **_):
        raise NotImplementedError("non-projective trees have no chart program; use matrix_tree_partition")
