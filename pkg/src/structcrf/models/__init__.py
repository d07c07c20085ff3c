"""Model families: part layouts, chart programs and structure codecs."""

from __future__ import annotations

import numpy as np

from .align import alignment_partition
from .base import (
    FAMILIES,
    STEP_NAMES,
    DistributionEmpty,
    Grammar,
    ModelDescriptor,
    PartVector,
    StructureError,
    alignment,
    cfg,
    check_potentials,
    dependency,
    dependency_np,
    family_of,
    flatten,
    linear_chain,
    semi_markov,
    simple_cky,
    unflatten,
)
from .context_free import cfg_inside
from .chain import chain_partition, identity_matrix
from .cky import cky_simple_partition
from .depparse import chuliu_edmonds_map, eisner_partition, kbest_arborescences, matrix_tree_partition, sample_arborescences
from .semimarkov import semimarkov_partition


def validate_parts(model: ModelDescriptor, z) -> bool:
    """True iff ``z`` (a PartVector or flat indicator) is exactly one legal structure."""
    ind = z.indicator if isinstance(z, PartVector) else np.asarray(z).reshape(-1)
    if isinstance(z, PartVector) and z.model != model:
        return False
    if ind.shape[0] != model.n_parts:
        return False
    try:
        return bool(family_of(model).validate(model, unflatten(model, ind)))
    except StructureError:
        return False


__all__ = [
    "FAMILIES",
    "STEP_NAMES",
    "DistributionEmpty",
    "Grammar",
    "ModelDescriptor",
    "PartVector",
    "StructureError",
    "alignment",
    "alignment_partition",
    "cfg",
    "cfg_inside",
    "chain_partition",
    "check_potentials",
    "chuliu_edmonds_map",
    "cky_simple_partition",
    "dependency",
    "dependency_np",
    "eisner_partition",
    "family_of",
    "flatten",
    "identity_matrix",
    "kbest_arborescences",
    "linear_chain",
    "matrix_tree_partition",
    "sample_arborescences",
    "semi_markov",
    "semimarkov_partition",
    "simple_cky",
    "unflatten",
    "validate_parts",
]
