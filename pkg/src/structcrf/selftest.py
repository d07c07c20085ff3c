"""Desk-scale oracle-equivalence checks run by ``structcrf selftest``."""

from __future__ import annotations

import time
from collections import Counter

import numpy as np

from . import models as M
from . import oracle as O
from .distribution import CrfDistribution
from .models.base import flatten

SEED = 20240611

GRAMMAR = M.Grammar(2, 0, ((0, 0, 1), (0, 1, 0), (1, 1, 1), (0, 0, 0)))


def small_models():
    return [
        M.linear_chain(3, 2),
        M.semi_markov(4, 2, 2),
        M.simple_cky(4, 2),
        M.cfg(3, GRAMMAR),
        M.dependency(3),
        M.dependency(3, multi_root=False),
        M.dependency_np(3),
        M.dependency_np(3, multi_root=False),
        M.alignment(2, 3),
        M.alignment(3, 2, mode="dtw"),
    ]


def _flat(model, x):
    return flatten(model, x)


def check_partition(rng, draws=5):
    worst = 0.0
    for model in small_models():
        for _ in range(draws):
            pots = O.random_potentials(model, rng)
            A = CrfDistribution(model, pots).log_partition()
            ref = O.reference_partition(model, pots)
            worst = max(worst, abs(A - ref) / (1 + abs(ref)))
    return worst <= 1e-8, f"max relative error {worst:.2e}"


def check_queries(rng, draws=3):
    problems = []
    for model in small_models():
        for _ in range(draws):
            pots = O.random_potentials(model, rng)
            d = CrfDistribution(model, pots)
            if np.abs(_flat(model, d.marginals()) - O.reference_marginals(model, pots)).max() > 1e-8:
                problems.append(f"{model.family} marginals")
            if abs(d.entropy() - O.reference_entropy(model, pots)) > 1e-8:
                problems.append(f"{model.family} entropy")
            for z, p in O.reference_distribution(model, pots)[:20]:
                if abs(d.log_prob(z) - np.log(p)) > 1e-8:
                    problems.append(f"{model.family} log_prob")
                    break
            k = min(5, O.reference_count(model))
            got = Counter(z.key() for z, _ in d.kmax(k))
            want = Counter(z.key() for z, _ in O.reference_topk(model, pots, k))
            if got != want:
                problems.append(f"{model.family} kmax")
            if d.count() != O.reference_count(model, pots):
                problems.append(f"{model.family} count")
    return not problems, ", ".join(problems) or "all queries match"


def check_gradients(rng, h=1e-4):
    worst = 0.0
    for model in small_models():
        pots = O.random_potentials(model, rng)
        d = CrfDistribution(model, pots)
        flat = _flat(model, pots)
        marg = _flat(model, d.marginals())
        for p in rng.choice(flat.size, size=min(5, flat.size), replace=False):
            up, down = flat.copy(), flat.copy()
            up[p] += h
            down[p] -= h
            fd = (
                CrfDistribution(model, M.unflatten(model, up)).log_partition()
                - CrfDistribution(model, M.unflatten(model, down)).log_partition()
            ) / (2 * h)
            worst = max(worst, abs(fd - marg[p]))
    return worst <= 1e-5, f"max |fd - marginal| {worst:.2e}"


def check_sampling(rng, draws=20000):
    worst = 0.0
    for model in (M.linear_chain(2, 2), M.dependency_np(3, multi_root=False), M.simple_cky(4, 1)):
        pots = O.random_potentials(model, rng)
        d = CrfDistribution(model, pots)
        seen = Counter(z.key() for z in d.sample(rng, draws))
        want = Counter()
        for z, p in O.reference_distribution(model, pots):
            want[z.key()] += p
        keys = set(seen) | set(want)
        tv = 0.5 * sum(abs(seen[k] / draws - want[k]) for k in keys)
        worst = max(worst, tv)
    return worst < 0.02, f"max total variation {worst:.4f}"


def check_counts():
    bad = []
    for T, C in [(1, 2), (3, 2), (2, 3)]:
        if CrfDistribution(M.linear_chain(T, C), np.zeros((T, C, C))).count() != C ** (T + 1):
            bad.append(f"chain {T},{C}")
    for N in range(1, 7):
        if CrfDistribution(M.simple_cky(N, 1), np.zeros((1, N, N))).count() != O.catalan(N - 1):
            bad.append(f"cky {N}")
    for N, Mm in [(1, 1), (2, 2), (3, 4)]:
        if CrfDistribution(M.alignment(N, Mm), np.zeros((3, N, Mm))).count() != O.delannoy(N, Mm):
            bad.append(f"alignment {N},{Mm}")
    for N in range(1, 5):
        A, _ = M.matrix_tree_partition(np.zeros((N + 1, N)))
        if abs(np.exp(A) - (N + 1) ** (N - 1)) > 1e-6 * (N + 1) ** (N - 1):
            bad.append(f"matrix-tree {N}")
    for N, K in [(4, 2), (5, 3), (6, 6)]:
        if CrfDistribution(M.semi_markov(N, K, 1), np.zeros((N, K, 1, 1))).count() != O.compositions(N, K):
            bad.append(f"semi-markov {N},{K}")
    return not bad, ", ".join(bad) or "closed forms reproduced"


CHECKS = [
    ("oracle log-partition", check_partition),
    ("oracle queries", check_queries),
    ("gradient check", check_gradients),
    ("sampling", check_sampling),
    ("combinatorial counts", lambda rng: check_counts()),
]


def main(quiet: bool = False) -> int:
    rng = np.random.default_rng(SEED)
    failures = 0
    start = time.perf_counter()
    for name, fn in CHECKS:
        ok, detail = fn(rng)
        failures += not ok
        if not quiet:
            print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    if not quiet:
        print(f"{len(CHECKS) - failures}/{len(CHECKS)} checks passed in {time.perf_counter() - start:.1f}s")
    return 1 if failures else 0


if __name__ == "__main__":
    raise SystemExit(main())
