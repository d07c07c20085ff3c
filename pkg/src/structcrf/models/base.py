"""Model descriptors, part vectors and the per-family plug-in interface."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence

import numpy as np


class DistributionEmpty(ValueError):
    """No structure of the model has finite score."""


class StructureError(ValueError):
    """A part vector or native structure is not a legal structure of the model."""


FAMILIES = ("linear-chain", "semi-markov", "cky", "cfg", "dep", "dep-np", "alignment")

STEP_NAMES = ("down", "right", "diag")


@dataclass(frozen=True)
class Grammar:
    """Binary CNF grammar: ``rules[r] = (A, B, C)`` for ``A -> B C``."""

    nt: int
    start: int
    rules: tuple[tuple[int, int, int], ...]

    def __post_init__(self):
        rules = tuple(tuple(int(s) for s in r) for r in self.rules)
        object.__setattr__(self, "rules", rules)
        if self.nt < 1:
            raise ValueError("grammar needs at least one nonterminal")
        if not 0 <= self.start < self.nt:
            raise ValueError(f"start symbol {self.start} outside 0..{self.nt - 1}")
        if not rules:
            raise ValueError("grammar needs at least one rule")
        for r in rules:
            if len(r) != 3 or not all(0 <= s < self.nt for s in r):
                raise ValueError(f"bad rule {r} for {self.nt} nonterminals")

    @property
    def size(self) -> int:
        return len(self.rules)


@dataclass(frozen=True)
class ModelDescriptor:
    family: str
    dims: Mapping[str, int]
    options: Mapping[str, Any] = field(default_factory=dict)
    grammar: Optional[Grammar] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        for k, v in self.dims.items():
            if int(v) < 1:
                raise ValueError(f"dimension {k}={v} must be positive")

    def __getattr__(self, name):
        dims = self.__dict__.get("dims", {})
        if name in dims:
            return dims[name]
        raise AttributeError(name)

    @property
    def part_shape(self):
        return family_of(self).part_shape(self)

    @property
    def n_parts(self) -> int:
        shape = self.part_shape
        if self.family == "cfg":
            return int(sum(np.prod(s) for s in shape))
        return int(np.prod(shape))


def linear_chain(T: int, C: int) -> ModelDescriptor:
    return ModelDescriptor("linear-chain", {"T": T, "C": C})


def semi_markov(N: int, K: int, C: int) -> ModelDescriptor:
    if K > N:
        raise ValueError(f"segment bound K={K} exceeds length N={N}")
    return ModelDescriptor("semi-markov", {"N": N, "K": K, "C": C})


def simple_cky(N: int, C: int) -> ModelDescriptor:
    return ModelDescriptor("cky", {"N": N, "C": C})


def cfg(N: int, grammar: Grammar) -> ModelDescriptor:
    return ModelDescriptor("cfg", {"N": N, "NT": grammar.nt, "G": grammar.size}, grammar=grammar)


def dependency(N: int, multi_root: bool = True) -> ModelDescriptor:
    return ModelDescriptor("dep", {"N": N}, {"multi_root": bool(multi_root)})


def dependency_np(N: int, multi_root: bool = True) -> ModelDescriptor:
    return ModelDescriptor("dep-np", {"N": N}, {"multi_root": bool(multi_root)})


def alignment(N: int, M: int, steps: Sequence[str] = STEP_NAMES, mode: str = "nw") -> ModelDescriptor:
    unknown = set(steps) - set(STEP_NAMES)
    steps = tuple(s for s in STEP_NAMES if s in set(steps))
    if not steps or unknown:
        raise ValueError("alignment needs a non-empty subset of down/right/diag")
    if mode not in ("nw", "dtw"):
        raise ValueError(f"alignment mode must be 'nw' or 'dtw', got {mode!r}")
    return ModelDescriptor("alignment", {"N": N, "M": M}, {"steps": steps, "mode": mode})


@dataclass(frozen=True, eq=False)
class PartVector:
    """Indicator over the flattened part set of ``model``.

    Entries are 0/1 for every family except ``cfg``, where a rule used twice in
    one derivation has count 2.
    """

    model: ModelDescriptor
    indicator: np.ndarray

    def __post_init__(self):
        ind = np.asarray(self.indicator).reshape(-1)
        if ind.shape[0] != self.model.n_parts:
            raise StructureError(f"indicator has {ind.shape[0]} entries, model has {self.model.n_parts} parts")
        ind = np.rint(ind).astype(np.int64)
        ind.setflags(write=False)
        object.__setattr__(self, "indicator", ind)

    @property
    def parts(self) -> list[int]:
        return [int(i) for i in np.nonzero(self.indicator)[0] for _ in range(int(self.indicator[i]))]

    def shaped(self):
        return unflatten(self.model, self.indicator)

    def key(self) -> bytes:
        return self.indicator.tobytes()

    def score(self, potentials) -> float:
        return dot_parts(self.indicator, flatten(self.model, potentials))

    def __eq__(self, other):
        return (
            isinstance(other, PartVector)
            and other.model == self.model
            and np.array_equal(other.indicator, self.indicator)
        )

    def __hash__(self):
        return hash(self.key())

    @classmethod
    def from_parts(cls, model: ModelDescriptor, parts: Sequence[int]) -> "PartVector":
        ind = np.zeros(model.n_parts, dtype=np.int64)
        for p in parts:
            if not 0 <= int(p) < model.n_parts:
                raise StructureError(f"part index {p} out of range")
            ind[int(p)] += 1
        return cls(model, ind)


def dot_parts(indicator, flat_potentials) -> float:
    """``z . l`` that ignores unused (possibly ``-inf``) parts."""
    ind = np.asarray(indicator)
    used = ind != 0
    return float(np.sum(ind[used] * np.asarray(flat_potentials)[used]))


def flatten(model: ModelDescriptor, potentials) -> np.ndarray:
    if model.family == "cfg":
        rules, terms = potentials
        return np.concatenate([np.asarray(rules, float).reshape(-1), np.asarray(terms, float).reshape(-1)])
    arr = np.asarray(potentials, dtype=np.float64)
    if arr.shape != tuple(model.part_shape):
        raise StructureError(f"potentials shape {arr.shape} != part layout {model.part_shape}")
    return arr.reshape(-1)


def unflatten(model: ModelDescriptor, flat):
    flat = np.asarray(flat)
    if model.family == "cfg":
        (G,), tshape = model.part_shape
        return flat[:G].copy(), flat[G:].reshape(tshape).copy()
    return flat.reshape(model.part_shape).copy()


def check_potentials(model: ModelDescriptor, potentials):
    """Coerce to float arrays in the family layout, rejecting NaN."""
    if model.family == "cfg":
        rules, terms = potentials
        rules = np.asarray(rules, dtype=np.float64)
        terms = np.asarray(terms, dtype=np.float64)
        (G,), tshape = model.part_shape
        if rules.shape != (G,) or terms.shape != tshape:
            raise StructureError(f"cfg potentials need shapes {(G,)} and {tshape}, got {rules.shape}, {terms.shape}")
        if np.isnan(rules).any() or np.isnan(terms).any():
            raise ValueError("NaN potential")
        return rules, terms
    arr = np.asarray(potentials, dtype=np.float64)
    if arr.shape != tuple(model.part_shape):
        raise StructureError(f"potentials shape {arr.shape} != part layout {model.part_shape}")
    if np.isnan(arr).any():
        raise ValueError("NaN potential")
    return arr


_REGISTRY: dict[str, Any] = {}


def register(name):
    def deco(cls):
        _REGISTRY[name] = cls()
        return cls

    return deco


def family_of(model: ModelDescriptor):
    from . import align as _a, chain as _c, context_free as _g, cky as _k, depparse as _d, semimarkov as _s  # noqa: F401

    return _REGISTRY[model.family]


class Family:
    """Per-family plug-in: part layout, chart program and structure codecs."""

    name = "abstract"
    fixed_size = True

    def part_shape(self, model):
        raise NotImplementedError

    def partition(self, model, potentials, semiring, features=None, **options):
        raise NotImplementedError

    def encode(self, model, structure) -> np.ndarray:
        """Native structure -> family-shaped indicator array."""
        raise NotImplementedError

    def decode(self, model, indicator):
        """Family-shaped indicator -> native structure (raises StructureError)."""
        raise NotImplementedError

    def heatmap(self, model, marginals) -> np.ndarray:
        raise NotImplementedError

    def parts_per_structure(self, model) -> Optional[int]:
        return None

    def validate(self, model, indicator) -> bool:
        try:
            native = self.decode(model, indicator)
            again = self.encode(model, native)
        except StructureError:
            return False
        return np.array_equal(np.asarray(again).reshape(-1), np.asarray(indicator).reshape(-1))


def as_int_array(indicator, shape) -> np.ndarray:
    arr = np.asarray(indicator)
    if arr.size != int(np.prod(shape)):
        raise StructureError(f"indicator size {arr.size} does not match {shape}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0) or np.any(arr != np.rint(arr)):
        raise StructureError("indicator entries must be non-negative integers")
    return np.rint(arr).astype(np.int64).reshape(shape)
