"""CRF distribution objects: one model descriptor plus its log-potentials."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .adjoint import backward_kmax, backward_log, backward_max, backward_sample
from .models import depparse
from .models.base import (
    DistributionEmpty,
    ModelDescriptor,
    PartVector,
    StructureError,
    check_potentials,
    family_of,
    flatten,
    unflatten,
)
from .semiring import Count, Expectation, KMax, Log, Max


class LogPartition(float):
    """A float log-partition that also records whether the support is empty."""

    empty: bool

    def __new__(cls, value, empty=False):
        obj = super().__new__(cls, value)
        obj.empty = bool(empty)
        return obj


def _rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.Generator(np.random.Philox(rng))


def _readonly(x):
    if isinstance(x, tuple):
        return tuple(_readonly(v) for v in x)
    x = np.array(x, dtype=np.float64, copy=True)
    x.setflags(write=False)
    return x


class CrfDistribution:
    """Distributional queries for one structured model.

    ``options`` are passed to the family's chart program (``order`` for
    chains and CKY).  Non-projective dependency models answer through the
    matrix-tree theorem and Chu-Liu/Edmonds instead of a chart.
    """

    def __init__(self, model: ModelDescriptor, potentials, **options):
        self.model = model
        self.potentials = _readonly(check_potentials(model, potentials))
        self.options = dict(options)
        self._family = family_of(model)

    @property
    def nonprojective(self) -> bool:
        return self.model.family == "dep-np"

    @property
    def multi_root(self) -> bool:
        return bool(self.model.options.get("multi_root", True))

    def _run(self, semiring, potentials=None, features=None):
        pots = self.potentials if potentials is None else potentials
        return self._family.partition(self.model, pots, semiring, features=features, **self.options)

    def _leaf_grads(self, grads) -> np.ndarray:
        """Concatenate per-leaf adjoints into one flat part vector."""
        return np.concatenate([np.asarray(g).reshape(-1) for g in grads])

    def _flat_potentials(self) -> np.ndarray:
        return flatten(self.model, self.potentials)

    # ------------------------------------------------------------------
    # partition and densities
    # ------------------------------------------------------------------

    def log_partition(self) -> LogPartition:
        try:
            if self.nonprojective:
                A, _ = depparse.matrix_tree_partition(self.potentials, self.multi_root)
            else:
                root, _ = self._run(Log)
                A = float(root.result())
        except DistributionEmpty:
            return LogPartition(-np.inf, True)
        return LogPartition(A, not np.isfinite(A))

    @property
    def empty(self) -> bool:
        return self.log_partition().empty

    def _require(self) -> float:
        A = self.log_partition()
        if A.empty:
            raise DistributionEmpty("no structure has finite score")
        return float(A)

    def score(self, z: PartVector) -> float:
        return z.score(self.potentials)

    def log_prob(self, z: PartVector) -> float:
        z = self._coerce(z)
        return self.score(z) - self._require()

    def marginals(self):
        """Part marginals shaped like the potentials (all zeros when empty)."""
        flat = self._flat_marginals()
        return unflatten(self.model, flat)

    def _flat_marginals(self) -> np.ndarray:
        if self.nonprojective:
            try:
                _, marg = depparse.matrix_tree_partition(self.potentials, self.multi_root)
            except DistributionEmpty:
                return np.zeros(self.model.n_parts)
            return marg.reshape(-1)
        try:
            root, tape = self._run(Log)
        except DistributionEmpty:
            return np.zeros(self.model.n_parts)
        return self._leaf_grads(backward_log(tape, root))

    # ------------------------------------------------------------------
    # structures
    # ------------------------------------------------------------------

    def argmax(self) -> tuple[PartVector, float]:
        if self.nonprojective:
            z = depparse.chuliu_edmonds_map(self.potentials, self.multi_root)
            return z, self.score(z)
        root, tape = self._run(Max)
        best = float(root.result())
        if not np.isfinite(best):
            raise DistributionEmpty("no structure has finite score")
        z = PartVector(self.model, self._leaf_grads(backward_max(tape, root)))
        return z, best

    def kmax(self, k: int) -> list[tuple[PartVector, float]]:
        """The ``k`` best structures, best first (fewer if the support is smaller)."""
        if int(k) < 1:
            raise ValueError("k must be positive")
        k = int(k)
        if self.nonprojective:
            N = self.model.N
            out = depparse.kbest_arborescences(self.potentials, k, self.multi_root)
            return [(PartVector(self.model, depparse.heads_to_indicator(h, N)), s) for h, s in out]
        root, tape = self._run(KMax(k))
        scores = np.asarray(root.value).reshape(k)
        if not np.isfinite(scores[0]):
            raise DistributionEmpty("no structure has finite score")
        out = []
        for lane in range(k):
            if not np.isfinite(scores[lane]):
                break
            z = PartVector(self.model, self._leaf_grads(backward_kmax(tape, root, lane)))
            out.append((z, float(scores[lane])))
        return out

    def sample(self, rng, k: int = 1) -> list[PartVector]:
        """``k`` independent exact draws; ``rng`` is a Generator or an integer seed."""
        if int(k) < 1:
            raise ValueError("k must be positive")
        gen = _rng(rng)
        if self.nonprojective:
            self._require()
            N = self.model.N
            heads = depparse.sample_arborescences(self.potentials, gen, int(k), self.multi_root)
            return [PartVector(self.model, depparse.heads_to_indicator(h, N)) for h in heads]
        root, tape = self._run(Log)
        if not np.isfinite(root.result()):
            raise DistributionEmpty("no structure has finite score")
        grads = backward_sample(tape, root, gen, int(k))
        flat = np.concatenate([g.reshape(int(k), -1) for g in grads], axis=1)
        return [PartVector(self.model, row) for row in flat]

    # ------------------------------------------------------------------
    # expectations
    # ------------------------------------------------------------------

    def _expect(self, features) -> float:
        """``E[z . features]`` through the expectation semiring.

        The semiring keeps real (not log) weights, so very large or very small
        partition values fall back to the marginal dot product.
        """
        fflat = flatten(self.model, features)
        if not self.nonprojective:
            with np.errstate(over="ignore", invalid="ignore"):
                root, _ = self._run(Expectation, features=unflatten(self.model, fflat))
            p, q = (float(v) for v in np.asarray(root.value).reshape(2))
            if np.isfinite(p) and np.isfinite(q) and p > 1e-250:
                return q / p
        marg = self._flat_marginals()
        used = marg != 0
        return float(np.dot(marg[used], fflat[used]))

    def entropy(self) -> float:
        """Shannon entropy in nats: ``A - E[z . l]``."""
        A = self._require()
        return max(0.0, A - self._expect(self.potentials))

    def expectation(self, r) -> float:
        """``E[z . r]`` for a part-shaped real tensor ``r``."""
        self._require()
        try:
            r = check_potentials(self.model, r)
        except StructureError as exc:
            raise ValueError(str(exc)) from exc
        return self._expect(r)

    def count(self) -> int:
        """Number of structures whose score is finite."""
        mask = unflatten(self.model, np.where(np.isfinite(self._flat_potentials()), 0.0, -np.inf))
        try:
            if self.nonprojective:
                A, _ = depparse.matrix_tree_partition(mask, self.multi_root)
                return int(round(np.exp(A)))
            root, _ = self._run(Count, potentials=mask)
        except DistributionEmpty:
            return 0
        return int(round(float(root.result())))

    # ------------------------------------------------------------------
    # structure codecs
    # ------------------------------------------------------------------

    def _coerce(self, z) -> PartVector:
        if not isinstance(z, PartVector):
            z = PartVector(self.model, np.asarray(z).reshape(-1))
        if z.model != self.model:
            raise StructureError("part vector belongs to a different model")
        if not self._family.validate(self.model, unflatten(self.model, z.indicator)):
            raise StructureError("part vector is not a legal structure")
        return z

    def to_structure(self, z: PartVector):
        z = PartVector(self.model, z.indicator) if isinstance(z, PartVector) else PartVector(self.model, np.asarray(z).reshape(-1))
        return self._family.decode(self.model, unflatten(self.model, z.indicator))

    def from_structure(self, structure) -> PartVector:
        ind = self._family.encode(self.model, structure)
        if isinstance(ind, tuple):
            ind = np.concatenate([np.asarray(x).reshape(-1) for x in ind])
        return PartVector(self.model, np.asarray(ind).reshape(-1))

    def validate(self, z) -> bool:
        try:
            self._coerce(z)
        except StructureError:
            return False
        return True

    def __repr__(self):
        return f"CrfDistribution({self.model.family}, dims={dict(self.model.dims)})"


def heatmap(dist: CrfDistribution, marginals: Optional[np.ndarray] = None) -> np.ndarray:
    """2-D view of the marginals used for image output."""
    marg = dist.marginals() if marginals is None else marginals
    return np.asarray(family_of(dist.model).heatmap(dist.model, marg), dtype=np.float64)
