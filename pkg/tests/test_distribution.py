import math
from collections import Counter

import numpy as np
import pytest

from structcrf import CrfDistribution, LogPartition
from structcrf import models as M
from structcrf import oracle as O
from structcrf.distribution import heatmap
from structcrf.models import DistributionEmpty, StructureError

GRAMMAR = M.Grammar(2, 0, ((0, 0, 1), (0, 1, 0), (1, 1, 1), (0, 0, 0)))


def uniform_chain():
    return CrfDistribution(M.linear_chain(2, 2), np.zeros((2, 2, 2)))


def deterministic_chain():
    pots = np.full((2, 2, 2), -np.inf)
    pots[0, 0, 1] = 1.5
    pots[1, 1, 1] = -0.5
    return CrfDistribution(M.linear_chain(2, 2), pots)


def test_log_partition_uniform_and_empty():
    assert uniform_chain().log_partition() == pytest.approx(math.log(8))
    empty = CrfDistribution(M.linear_chain(2, 2), np.full((2, 2, 2), -np.inf))
    A = empty.log_partition()
    assert isinstance(A, LogPartition) and A == -np.inf and A.empty and empty.empty
    assert not uniform_chain().empty


def test_log_partition_random_cky(rng):
    model = M.simple_cky(4, 2)
    pots = O.random_potentials(model, rng)
    assert CrfDistribution(model, pots).log_partition() == pytest.approx(O.reference_partition(model, pots), rel=1e-12)


def test_log_prob_values():
    d = uniform_chain()
    for z in O.enumerate_structures(d.model):
        assert d.log_prob(z) == pytest.approx(-math.log(8))
    det = deterministic_chain()
    z = det.from_structure([0, 1, 1])
    assert det.log_prob(z) == pytest.approx(0.0, abs=1e-15)


def test_log_prob_rejects_invalid_structure():
    d = uniform_chain()
    bad = np.zeros(8)
    bad[[1, 4]] = 1  # (0, 0->1) then (1, 0->0): labels disagree
    with pytest.raises(StructureError):
        d.log_prob(bad)
    assert not d.validate(bad)


def test_marginals_single_edge_and_deterministic():
    d = CrfDistribution(M.linear_chain(1, 2), np.zeros((1, 2, 2)))
    np.testing.assert_allclose(d.marginals(), 0.25, atol=1e-15)
    det = deterministic_chain()
    np.testing.assert_allclose(det.marginals(), np.isfinite(det.potentials).astype(float), atol=1e-15)


def test_marginals_of_empty_distribution_are_zero():
    d = CrfDistribution(M.simple_cky(3, 1), np.full((1, 3, 3), -np.inf))
    assert np.array_equal(d.marginals(), np.zeros((1, 3, 3)))


def test_marginals_are_read_only_copies():
    d = uniform_chain()
    m = d.marginals()
    m[0, 0, 0] = 7.0
    assert d.marginals()[0, 0, 0] == pytest.approx(0.25)
    with pytest.raises(ValueError):
        d.potentials[0, 0, 0] = 1.0


def test_argmax_and_kmax_agree():
    rng = np.random.default_rng(3)
    d = CrfDistribution(M.linear_chain(2, 2), rng.normal(size=(2, 2, 2)))
    z, s = d.argmax()
    (z1, s1), = d.kmax(1)
    assert z.key() == z1.key() and s == pytest.approx(s1)
    assert s == pytest.approx(O.reference_max(d.model, d.potentials))


def test_kmax_uniform_returns_everything():
    d = CrfDistribution(M.linear_chain(1, 2), np.zeros((1, 2, 2)))
    got = d.kmax(4)
    assert len(got) == 4 and len({z.key() for z, _ in got}) == 4
    assert all(s == 0 for _, s in got)
    assert len(d.kmax(10)) == 4


def test_kmax_top3_matches_oracle(rng):
    model = M.linear_chain(2, 2)
    pots = O.random_potentials(model, rng)
    got = CrfDistribution(model, pots).kmax(3)
    want = O.reference_topk(model, pots, 3)
    assert [z.key() for z, _ in got] == [z.key() for z, _ in want]


def test_kmax_rejects_nonpositive_k():
    with pytest.raises(ValueError):
        uniform_chain().kmax(0)
    with pytest.raises(ValueError):
        uniform_chain().sample(0, 0)


def test_nonprojective_argmax_documented_case():
    pots = np.zeros((3, 2))
    pots[1, 1] = 5.0
    d = CrfDistribution(M.dependency_np(2), pots)
    z, s = d.argmax()
    assert d.to_structure(z) == [0, 1] and s == 5.0


def test_empty_queries_raise():
    d = CrfDistribution(M.linear_chain(2, 2), np.full((2, 2, 2), -np.inf))
    for call in (d.argmax, lambda: d.kmax(2), lambda: d.sample(0), d.entropy, lambda: d.expectation(np.ones((2, 2, 2)))):
        with pytest.raises(DistributionEmpty):
            call()
    assert d.count() == 0


def test_entropy_values(rng):
    assert uniform_chain().entropy() == pytest.approx(math.log(8), abs=1e-12)
    assert deterministic_chain().entropy() == pytest.approx(0.0, abs=1e-12)
    model = M.simple_cky(3, 2)
    pots = O.random_potentials(model, rng)
    assert CrfDistribution(model, pots).entropy() == pytest.approx(O.reference_entropy(model, pots), abs=1e-10)


def test_entropy_with_huge_potentials_uses_stable_path(rng):
    model = M.linear_chain(3, 2)
    pots = O.random_potentials(model, rng) * 500
    assert CrfDistribution(model, pots).entropy() == pytest.approx(O.reference_entropy(model, pots), abs=1e-8)


def test_expectation_identities(rng):
    d = uniform_chain()
    assert d.expectation(np.ones((2, 2, 2))) == pytest.approx(2.0)
    model = M.semi_markov(4, 2, 2)
    pots = O.random_potentials(model, rng)
    dist = CrfDistribution(model, pots)
    r = rng.normal(size=model.part_shape)
    assert dist.expectation(r) == pytest.approx(O.reference_expectation(model, pots, r), abs=1e-10)
    assert dist.expectation(r) == pytest.approx(float(np.sum(dist.marginals() * r)), abs=1e-10)
    assert dist.entropy() == pytest.approx(dist.log_partition() - dist.expectation(pots), abs=1e-10)


def test_expectation_shape_mismatch():
    with pytest.raises(ValueError):
        uniform_chain().expectation(np.ones((3, 2, 2)))


def test_count_examples():
    assert uniform_chain().count() == 8
    assert CrfDistribution(M.simple_cky(4, 1), np.zeros((1, 4, 4))).count() == 5
    pots = np.zeros((3, 2))
    pots[1, 1] = -np.inf  # word 1 may not head word 2
    assert CrfDistribution(M.dependency_np(2), pots).count() == 2
    pots = np.zeros((3, 2))
    pots[0, 0] = -np.inf  # word 1 may not attach to the root
    assert CrfDistribution(M.dependency_np(2), pots).count() == 1


def test_sample_reproducible_and_exact(rng):
    model = M.dependency(3)
    pots = O.random_potentials(model, rng)
    d = CrfDistribution(model, pots)
    a = [z.key() for z in d.sample(11, 5)]
    assert a == [z.key() for z in d.sample(11, 5)]
    draws = 20_000
    seen = Counter(z.key() for z in d.sample(np.random.default_rng(5), draws))
    want = Counter()
    for z, p in O.reference_distribution(model, pots):
        want[z.key()] += p
    tv = 0.5 * sum(abs(seen[k] / draws - want[k]) for k in set(seen) | set(want))
    assert tv < 0.02


def test_structure_round_trips(rng):
    cases = [
        (M.linear_chain(2, 2), [0, 1, 0]),
        (M.dependency(2), [0, 1]),
        (M.simple_cky(3, 1), [0, 2, 0, [0, 0, 0], [1, 2, 0, [1, 1, 0], [2, 2, 0]]]),
        (M.alignment(2, 2), ["diag", "diag"]),
    ]
    for model, native in cases:
        d = CrfDistribution(model, O.random_potentials(model, rng))
        z = d.from_structure(native)
        assert d.validate(z)
        assert d.to_structure(z) == native
    for model in [M.semi_markov(4, 2, 2), M.cfg(3, GRAMMAR), M.dependency_np(3), M.alignment(2, 3, mode="dtw")]:
        d = CrfDistribution(model, O.random_potentials(model, rng))
        for z in O.enumerate_structures(model)[:25]:
            assert d.from_structure(d.to_structure(z)).key() == z.key()


def test_malformed_native_structure():
    d = uniform_chain()
    with pytest.raises(StructureError):
        d.from_structure([0, 1])
    with pytest.raises(StructureError):
        CrfDistribution(M.dependency(2), np.zeros((3, 2))).from_structure([2, 1])


def test_heatmap_shapes(rng):
    d = CrfDistribution(M.simple_cky(4, 2), rng.normal(size=(2, 4, 4)))
    img = heatmap(d)
    assert img.shape == (4, 4)
    np.testing.assert_allclose(img, d.marginals().sum(axis=0))


def test_nan_potentials_rejected():
    with pytest.raises(ValueError):
        CrfDistribution(M.linear_chain(2, 2), np.full((2, 2, 2), np.nan))


def test_order_option_does_not_change_answers(rng):
    pots = rng.normal(size=(6, 3, 3))
    a = CrfDistribution(M.linear_chain(6, 3), pots, order="serial")
    b = CrfDistribution(M.linear_chain(6, 3), pots, order="scan")
    assert a.log_partition() == pytest.approx(b.log_partition(), rel=1e-12)
    np.testing.assert_allclose(a.marginals(), b.marginals(), atol=1e-12)
