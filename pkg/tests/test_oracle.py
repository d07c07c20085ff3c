import math

import numpy as np
import pytest

from structcrf import models as M
from structcrf import oracle as O


def test_cardinalities_match_closed_forms():
    assert len(O.enumerate_structures(M.linear_chain(2, 2))) == 8
    assert len(O.enumerate_structures(M.simple_cky(4, 1))) == 5
    assert len(O.enumerate_structures(M.dependency_np(3))) == 16
    assert len(O.enumerate_structures(M.alignment(3, 3))) == O.delannoy(3, 3)
    assert len(O.enumerate_structures(M.semi_markov(6, 3, 1))) == O.compositions(6, 3)
    for N in range(1, 5):
        assert O.reference_count(M.dependency_np(N)) == (N + 1) ** (N - 1)


def test_enumeration_is_duplicate_free():
    for model in [M.linear_chain(3, 2), M.simple_cky(4, 2), M.dependency(3), M.alignment(2, 3, mode="dtw")]:
        keys = [z.key() for z in O.enumerate_structures(model)]
        assert len(keys) == len(set(keys))


def test_closed_form_helpers():
    assert [O.catalan(n) for n in range(6)] == [1, 1, 2, 5, 14, 42]
    assert O.delannoy(2, 2) == 13 and O.delannoy(1, 1) == 3
    assert O.compositions(4, 2) == 5 and O.compositions(3, 3) == 4


def test_reference_values():
    model = M.linear_chain(2, 2)
    assert O.reference_partition(model, np.zeros((2, 2, 2))) == pytest.approx(math.log(8))
    det = np.full((2, 2, 2), -np.inf)
    det[0, 1, 1] = det[1, 1, 0] = 0.0
    assert O.reference_entropy(model, det) == 0.0


def test_reference_topk_sorted(rng):
    model = M.linear_chain(2, 2)
    pots = O.random_potentials(model, rng)
    top = O.reference_topk(model, pots, 3)
    scores = [s for _, s in top]
    assert scores == sorted(scores, reverse=True) and len(top) == 3
    assert scores[0] == O.reference_max(model, pots)


def test_reference_scores_are_finite_for_finite_potentials(rng):
    model = M.simple_cky(3, 2)
    assert np.isfinite(O.score_vector(model, O.random_potentials(model, rng))).all()


def test_masked_scores_are_neg_inf():
    pots = np.zeros((1, 2, 2))
    pots[0, 0, 0] = -np.inf
    s = O.score_vector(M.linear_chain(1, 2), pots)
    assert np.isneginf(s).sum() == 1 and O.reference_count(M.linear_chain(1, 2), pots) == 3


def test_guard_refuses_with_estimate():
    with pytest.raises(O.EnumerationTooLarge, match=str(3**21)):
        O.enumerate_structures(M.linear_chain(20, 3))


def test_oracle_shares_no_chart_code():
    import inspect

    src = inspect.getsource(O)
    for name in ("chain_partition", "cky_simple_partition", "eisner_partition", "matrix_tree", "alignment_partition", "adjoint"):
        assert name not in src
