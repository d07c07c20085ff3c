"""Inside algorithm for a binary CNF grammar.

Parts are the ``G`` rule potentials ``l_rule[r]`` (a rule used twice in one
derivation counts twice) followed by the terminal potentials
``l_term[n, A]`` for preterminal ``A`` covering word ``n``.  Structures are
derivations; distinct derivations can share a part-count vector.
"""

from __future__ import annotations

import numpy as np

from ..adjoint import Tape
from ..semiring import Log, Semiring
from .base import Family, Grammar, StructureError, as_int_array, register


def _head_table(grammar: Grammar) -> np.ndarray:
    """``table[A, s]`` = index of the s-th rule headed by ``A``; ``G`` pads."""
    G = grammar.size
    by_head = [[r for r, rule in enumerate(grammar.rules) if rule[0] == a] for a in range(grammar.nt)]
    width = max(1, max(len(rs) for rs in by_head))
    table = np.full((grammar.nt, width), G, dtype=np.int64)
    for a, rs in enumerate(by_head):
        table[a, : len(rs)] = rs
    return table


def cfg_inside(rule_potentials, term_potentials, grammar: Grammar, semiring: Semiring = Log, lengths=None, features=None):
    """Returns ``(root, tape)``; the tape has two leaves (rules, terminals)."""
    rules = np.asarray(rule_potentials, dtype=np.float64)
    terms = np.asarray(term_potentials, dtype=np.float64)
    batched = terms.ndim == 3
    if not batched:
        rules, terms = rules[None], terms[None]
    B, N, NT = terms.shape
    G = grammar.size
    if rules.shape != (B, G):
        raise ValueError(f"rule potentials must have shape {(G,)} (per instance), got {rules.shape}")
    if NT != grammar.nt:
        raise ValueError(f"terminal potentials have {NT} symbols, grammar has {grammar.nt}")
    if np.isnan(rules).any() or np.isnan(terms).any():
        raise ValueError("NaN potential")
    if lengths is not None:
        lengths = np.broadcast_to(np.asarray(lengths, dtype=np.int64), (B,))
        if lengths.min() < 1 or lengths.max() > N:
            raise ValueError(f"lengths must lie in 1..{N}")
    f_rules, f_terms = (None, None) if features is None else features

    tape = Tape(semiring)
    rl = tape.leaf(rules if batched else rules[0], f_rules, name="rules")
    tl = tape.leaf(terms if batched else terms[0], f_terms, name="terms")
    rl = rl if batched else tape.reshape(rl, (1, G))
    tl = tl if batched else tape.reshape(tl, (1, N, NT))

    lhs_sym = np.array([r[1] for r in grammar.rules])
    rhs_sym = np.array([r[2] for r in grammar.rules])
    table = _head_table(grammar)
    rule_row = tape.reshape(rl, (B, 1, G))

    right = tape.chart((B, N, N, NT), name="right")
    left = tape.chart((B, N, N, NT), name="left")
    right.write((slice(None), slice(None), 0), tl)
    left.write((slice(None), slice(None), N - 1), tl)
    for d in range(1, N):
        n = N - d
        lhs = right.read((slice(None), slice(0, n), slice(0, d)))
        rhs = left.read((slice(None), slice(d, N), slice(N - d, N)))
        pair = tape.matmul(tape.transpose(lhs, (0, 1, 3, 2)), rhs, tag="width")
        scored = tape.times(pair[:, :, lhs_sym, rhs_sym], rule_row)
        padded = tape.concat([scored, tape.zero((B, n, 1))], axis=2)
        val = tape.sum(padded[:, :, table], 3)
        right.write((slice(None), slice(0, n), d), val)
        left.write((slice(None), slice(d, N), N - 1 - d), val)
    if lengths is None:
        root = right.read((slice(None), 0, N - 1, grammar.start))
    else:
        root = right.read((np.arange(B), 0, lengths - 1, grammar.start))
    if not batched:
        root = tape.reshape(root, ())
    return root, tape


def derivation_counts(grammar: Grammar, N: int, tree):
    """Rule-use counts and terminal indicator of a nested derivation."""
    rules = np.zeros(grammar.size, dtype=np.int64)
    terms = np.zeros((N, grammar.nt), dtype=np.int64)

    def walk(node, i, j, sym):
        try:
            a, b, s = int(node[0]), int(node[1]), int(node[2])
        except (TypeError, IndexError, ValueError) as exc:
            raise StructureError(f"malformed derivation node {node!r}") from exc
        if (a, b) != (i, j) or (sym is not None and s != sym) or not 0 <= s < grammar.nt:
            raise StructureError(f"node {node[:3]} does not fit span ({i}, {j})")
        if len(node) == 3:
            if i != j:
                raise StructureError(f"leaf ({i}, {j}) spans more than one word")
            terms[i, s] += 1
            return
        if len(node) != 6 or i == j:
            raise StructureError(f"malformed derivation node {node!r}")
        r = int(node[3])
        if not 0 <= r < grammar.size or grammar.rules[r][0] != s:
            raise StructureError(f"rule {r} cannot expand symbol {s}")
        _, lb, rb = grammar.rules[r]
        k = int(node[4][1])
        if not i <= k < j:
            raise StructureError(f"bad split {k} for ({i}, {j})")
        rules[r] += 1
        walk(node[4], i, k, lb)
        walk(node[5], k + 1, j, rb)

    walk(tree, 0, N - 1, grammar.start)
    return rules, terms


def _search(grammar, preterm, counts, i, j, sym):
    """Yield derivations of ``sym`` over ``i..j`` consuming exactly from ``counts``."""
    if i == j:
        if preterm[i] == sym:
            yield [i, j, sym]
        return
    for r, (a, b, c) in enumerate(grammar.rules):
        if a != sym or counts[r] == 0:
            continue
        counts[r] -= 1
        for k in range(i, j):
            for lt in _search(grammar, preterm, counts, i, k, b):
                for rt in _search(grammar, preterm, counts, k + 1, j, c):
                    yield [i, j, sym, r, lt, rt]
        counts[r] += 1


@register("cfg")
class ContextFree(Family):
    name = "cfg"

    def part_shape(self, model):
        return ((model.grammar.size,), (model.N, model.grammar.nt))

    def partition(self, model, potentials, semiring, features=None, lengths=None, **_):
        rules, terms = potentials
        return cfg_inside(rules, terms, model.grammar, semiring, lengths=lengths, features=features)

    def parts_per_structure(self, model):
        return 2 * model.N - 1

    def encode(self, model, tree):
        return derivation_counts(model.grammar, model.N, tree)

    def decode(self, model, indicator):
        N, g = model.N, model.grammar
        flat = np.concatenate([np.asarray(x).reshape(-1) for x in indicator]) if isinstance(indicator, tuple) else np.asarray(indicator).reshape(-1)
        flat = as_int_array(flat, (g.size + N * g.nt,))
        counts = flat[: g.size].copy()
        terms = flat[g.size :].reshape(N, g.nt)
        if np.any(terms.sum(axis=1) != 1) or terms.max(initial=0) > 1:
            raise StructureError("each word needs exactly one preterminal")
        if counts.sum() != N - 1:
            raise StructureError(f"a derivation of {N} words uses {N - 1} rules")
        preterm = terms.argmax(axis=1)
        target = counts.copy()
        for tree in _search(g, preterm, counts, 0, N - 1, g.start):
            rules, _ = derivation_counts(g, N, tree)
            if np.array_equal(rules, target):
                return tree
        raise StructureError("no derivation uses exactly these rules")

    def validate(self, model, indicator) -> bool:
        try:
            tree = self.decode(model, indicator)
        except StructureError:
            return False
        return tree is not None

    def heatmap(self, model, marginals):
        return np.asarray(marginals[1])
