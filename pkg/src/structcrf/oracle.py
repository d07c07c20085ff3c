"""Brute-force reference answers by explicit enumeration of every structure.

Nothing here calls a chart program: each family's structures are generated
straight from their combinatorial definition and every quantity is a direct
sum over that list.  Small instances only.
"""

from __future__ import annotations

import itertools
import math
from functools import lru_cache

import numpy as np

from .models.base import ModelDescriptor, PartVector, flatten

LIMIT = 1_000_000


class EnumerationTooLarge(ValueError):
    """The structure set is too large to list."""


# ----------------------------------------------------------------------
# size estimates
# ----------------------------------------------------------------------


def catalan(n: int) -> int:
    return math.comb(2 * n, n) // (n + 1)


def delannoy(n: int, m: int) -> int:
    return sum(math.comb(m, k) * math.comb(n, k) * 2**k for k in range(min(n, m) + 1))


def compositions(n: int, k: int) -> int:
    """Number of ways to write ``n`` as an ordered sum of parts in ``1..k``."""
    ways = [1] + [0] * n
    for i in range(1, n + 1):
        ways[i] = sum(ways[i - p] for p in range(1, min(k, i) + 1))
    return ways[n]


def derivation_count(grammar, N: int) -> int:
    """Number of derivations of an ``N``-word string from the start symbol."""
    ways = {(1, a): 1 for a in range(grammar.nt)}
    for n in range(2, N + 1):
        for a in range(grammar.nt):
            ways[(n, a)] = sum(
                ways[(k, b)] * ways[(n - k, c)] for (h, b, c) in grammar.rules if h == a for k in range(1, n)
            )
    return ways[(N, grammar.start)]


def estimate(model: ModelDescriptor) -> int:
    """Closed-form count (or upper bound) of the structure set."""
    f, d = model.family, model.dims
    if f == "linear-chain":
        return d["C"] ** (d["T"] + 1)
    if f == "semi-markov":
        return compositions(d["N"], d["K"]) * d["C"] ** (d["N"] + 1)
    if f == "cky":
        return catalan(d["N"] - 1) * d["C"] ** (2 * d["N"] - 1)
    if f == "cfg":
        return derivation_count(model.grammar, d["N"])
    if f in ("dep", "dep-np"):
        return (d["N"] + 1) ** d["N"]
    if f == "alignment":
        n, m = d["N"], d["M"]
        return delannoy(n, m) if model.options["mode"] == "nw" else delannoy(n - 1, m - 1)
    raise ValueError(f"unknown family {f!r}")


# ----------------------------------------------------------------------
# per-family generators of part indicators
# ----------------------------------------------------------------------


def _chain(T, C):
    for labels in itertools.product(range(C), repeat=T + 1):
        z = np.zeros((T, C, C), dtype=np.int64)
        for t in range(T):
            z[t, labels[t], labels[t + 1]] = 1
        yield z


def _lengths_summing_to(n, k):
    if n == 0:
        yield ()
        return
    for first in range(1, min(k, n) + 1):
        for rest in _lengths_summing_to(n - first, k):
            yield (first,) + rest


def _semimarkov(N, K, C):
    for lens in _lengths_summing_to(N, K):
        for labels in itertools.product(range(C), repeat=len(lens) + 1):
            z = np.zeros((N, K, C, C), dtype=np.int64)
            start = 0
            for s, length in enumerate(lens):
                z[start, length - 1, labels[s], labels[s + 1]] = 1
                start += length
            yield z


@lru_cache(maxsize=None)
def bracketings(i: int, j: int) -> tuple:
    """Every binary bracketing of ``i..j`` as a tuple of spans."""
    if i == j:
        return (((i, i),),)
    out = []
    for k in range(i, j):
        for left in bracketings(i, k):
            for right in bracketings(k + 1, j):
                out.append(((i, j),) + left + right)
    return tuple(out)


def _cky(N, C):
    for spans in bracketings(0, N - 1):
        for labels in itertools.product(range(C), repeat=len(spans)):
            z = np.zeros((C, N, N), dtype=np.int64)
            for (i, j), c in zip(spans, labels):
                z[c, i, j] = 1
            yield z


def _derivations(rules, i, j, sym):
    """Yield (rule-use list, preterminal list) pairs for ``sym`` over ``i..j``."""
    if i == j:
        yield (), ((i, sym),)
        return
    for r, (a, b, c) in enumerate(rules):
        if a != sym:
            continue
        for k in range(i, j):
            for lr, lt in _derivations(rules, i, k, b):
                for rr, rt in _derivations(rules, k + 1, j, c):
                    yield (r,) + lr + rr, lt + rt


def _cfg(N, grammar):
    G, NT = grammar.size, grammar.nt
    for used, terms in _derivations(grammar.rules, 0, N - 1, grammar.start):
        z = np.zeros(G + N * NT, dtype=np.int64)
        for r in used:
            z[r] += 1
        for i, a in terms:
            z[G + i * NT + a] = 1
        yield z


def _is_tree(heads):
    for m in range(1, len(heads) + 1):
        seen, v = set(), m
        while v != 0:
            if v in seen:
                return False
            seen.add(v)
            v = heads[v - 1]
    return True


def _is_projective(heads):
    def dominated(w, h):
        while w != 0 and w != h:
            w = heads[w - 1]
        return w == h

    for m, h in enumerate(heads, start=1):
        for w in range(min(h, m) + 1, max(h, m)):
            if not dominated(w, h):
                return False
    return True


def head_arrays(N: int, projective: bool, multi_root: bool):
    for heads in itertools.product(range(N + 1), repeat=N):
        if any(h == m for m, h in enumerate(heads, start=1)):
            continue
        if not multi_root and heads.count(0) != 1:
            continue
        if not _is_tree(heads):
            continue
        if projective and not _is_projective(heads):
            continue
        yield heads


def _dep(N, projective, multi_root):
    for heads in head_arrays(N, projective, multi_root):
        z = np.zeros((N + 1, N), dtype=np.int64)
        for m, h in enumerate(heads, start=1):
            z[h, m - 1] = 1
        yield z


_STEP = {"diag": (1, 1, 0), "down": (1, 0, 1), "right": (0, 1, 2)}


def step_paths(n_end: int, m_end: int, steps):
    """Every step sequence from (0, 0) to (n_end, m_end)."""

    def walk(i, j):
        if (i, j) == (n_end, m_end):
            yield ()
            return
        for s in steps:
            di, dj, _ = _STEP[s]
            if i + di <= n_end and j + dj <= m_end:
                for rest in walk(i + di, j + dj):
                    yield (s,) + rest

    return walk(0, 0)


def _alignment(N, M, steps, mode):
    if mode == "nw":
        for path in step_paths(N, M, steps):
            z = np.zeros((3, N, M), dtype=np.int64)
            i = j = 0
            for s in path:
                di, dj, plane = _STEP[s]
                i, j = i + di, j + dj
                if i >= 1 and j >= 1:
                    z[plane, i - 1, j - 1] = 1
            yield z
    else:
        for path in step_paths(N - 1, M - 1, steps):
            z = np.zeros((3, N, M), dtype=np.int64)
            z[0, 0, 0] = 1
            i = j = 0
            for s in path:
                di, dj, plane = _STEP[s]
                i, j = i + di, j + dj
                z[0, i, j] = 1
                if plane:
                    z[plane, i, j] = 1
            yield z


def _cache_key(model: ModelDescriptor):
    return (
        model.family,
        tuple(sorted(model.dims.items())),
        tuple(sorted(model.options.items())),
        model.grammar,
    )


_MATRICES: dict = {}


def structure_matrix(model: ModelDescriptor, limit: int = LIMIT) -> np.ndarray:
    """``[|Z|, |P|]`` integer matrix, one row per structure (cached per model)."""
    key = _cache_key(model)
    if key in _MATRICES:
        return _MATRICES[key]
    est = estimate(model)
    if est > limit:
        raise EnumerationTooLarge(f"about {est} structures exceeds the enumeration limit of {limit}")
    f, d = model.family, model.dims
    if f == "linear-chain":
        gen = _chain(d["T"], d["C"])
    elif f == "semi-markov":
        gen = _semimarkov(d["N"], d["K"], d["C"])
    elif f == "cky":
        gen = _cky(d["N"], d["C"])
    elif f == "cfg":
        gen = _cfg(d["N"], model.grammar)
    elif f in ("dep", "dep-np"):
        gen = _dep(d["N"], f == "dep", model.options.get("multi_root", True))
    elif f == "alignment":
        gen = _alignment(d["N"], d["M"], model.options["steps"], model.options["mode"])
    else:
        raise ValueError(f"unknown family {f!r}")
    rows = [z.reshape(-1) for z in gen]
    mat = np.array(rows, dtype=np.int64).reshape(len(rows), model.n_parts)
    mat.setflags(write=False)
    if len(_MATRICES) > 64:
        _MATRICES.clear()
    _MATRICES[key] = mat
    return mat


def enumerate_structures(model: ModelDescriptor, limit: int = LIMIT) -> list[PartVector]:
    """Every structure of ``model`` as a PartVector (one entry per derivation for ``cfg``)."""
    return [PartVector(model, row) for row in structure_matrix(model, limit)]


# ----------------------------------------------------------------------
# reference quantities
# ----------------------------------------------------------------------


def score_vector(model, potentials) -> np.ndarray:
    """Score of every enumerated structure; unused ``-inf`` parts contribute nothing."""
    mat = structure_matrix(model)
    flat = flatten(model, potentials)
    masked = np.isneginf(flat)
    scores = mat @ np.where(masked, 0.0, flat)
    if masked.any():
        scores[(mat[:, masked] != 0).any(axis=1)] = -np.inf
    return scores


def reference_scores(model, potentials) -> list[tuple[PartVector, float]]:
    return list(zip(enumerate_structures(model), score_vector(model, potentials).tolist()))


def _lse(scores) -> float:
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0 or np.all(np.isneginf(s)):
        return -np.inf
    top = s.max()
    return float(top + np.log(np.sum(np.exp(s - top))))


def reference_partition(model, potentials) -> float:
    return _lse(score_vector(model, potentials))


def reference_probabilities(model, potentials) -> np.ndarray:
    """Probability of each row of ``structure_matrix(model)``."""
    s = score_vector(model, potentials)
    A = _lse(s)
    if not np.isfinite(A):
        return np.zeros_like(s)
    return np.exp(s - A)


def reference_distribution(model, potentials) -> list[tuple[PartVector, float]]:
    """``(z, probability)`` for every structure."""
    return list(zip(enumerate_structures(model), reference_probabilities(model, potentials).tolist()))


def reference_marginals(model, potentials) -> np.ndarray:
    """Expected part indicator, flat over the part set."""
    return reference_probabilities(model, potentials) @ structure_matrix(model)


def reference_entropy(model, potentials) -> float:
    probs = reference_probabilities(model, potentials)
    probs = probs[probs > 0]
    return float(-np.sum(probs * np.log(probs)))


def reference_expectation(model, potentials, r) -> float:
    rflat = flatten(model, r)
    return float(reference_probabilities(model, potentials) @ (structure_matrix(model) @ rflat))


def reference_topk(model, potentials, k: int) -> list[tuple[PartVector, float]]:
    """The ``k`` best finite-score structures, best first (stable on ties)."""
    s = score_vector(model, potentials)
    order = [i for i in np.argsort(-s, kind="stable") if np.isfinite(s[i])][:k]
    mat = structure_matrix(model)
    return [(PartVector(model, mat[i]), float(s[i])) for i in order]


def reference_max(model, potentials) -> float:
    s = score_vector(model, potentials)
    return float(s.max()) if s.size else -np.inf


def reference_count(model, potentials=None) -> int:
    """Number of structures whose score is finite (all of them when no potentials are given)."""
    if potentials is None:
        return int(structure_matrix(model).shape[0])
    return int(np.isfinite(score_vector(model, potentials)).sum())


def random_potentials(model: ModelDescriptor, rng: np.random.Generator, scale: float = 1.0):
    """Standard-normal potentials in the model's layout (a pair for ``cfg``)."""
    if model.family == "cfg":
        (G,), tshape = model.part_shape
        return scale * rng.normal(size=G), scale * rng.normal(size=tshape)
    return scale * rng.normal(size=model.part_shape)
