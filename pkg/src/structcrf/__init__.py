"""Structured CRF inference by semiring dynamic programming."""

from .distribution import CrfDistribution, LogPartition
from .models import (
    DistributionEmpty,
    Grammar,
    ModelDescriptor,
    PartVector,
    StructureError,
    alignment,
    cfg,
    dependency,
    dependency_np,
    linear_chain,
    semi_markov,
    simple_cky,
    validate_parts,
)
from .semiring import Count, Expectation, KMax, Log, Max, Sample, SemiringError

__version__ = "0.1.0"

__all__ = [
    "Count",
    "CrfDistribution",
    "DistributionEmpty",
    "Expectation",
    "Grammar",
    "KMax",
    "Log",
    "LogPartition",
    "Max",
    "ModelDescriptor",
    "PartVector",
    "Sample",
    "SemiringError",
    "StructureError",
    "alignment",
    "cfg",
    "dependency",
    "dependency_np",
    "linear_chain",
    "semi_markov",
    "simple_cky",
    "validate_parts",
]
