"""Executable error accounting for donation studies.

Misclassification correction and its forward model, post-stratification
weighting, measurement agreement statistics, and a representation-funnel
simulator that decomposes stagewise bias on synthetic populations.
"""

from .agreement import AgreementStats, agreement_stats
from .confusion import (
    ConfusionMatrix,
    CountVector,
    correct_counts,
    misclassify_simulate,
)
from .funnel import (
    ErrorLedger,
    FunnelConfig,
    FunnelResult,
    GroupSpec,
    PropensitySpec,
    SamplingDesign,
    decompose_errors,
    replicate,
    simulate_funnel,
)
from .weighting import Estimate, WeightSet, poststrat_weights, weighted_estimate

__all__ = [
    "AgreementStats",
    "agreement_stats",
    "ConfusionMatrix",
    "CountVector",
    "correct_counts",
    "misclassify_simulate",
    "ErrorLedger",
    "FunnelConfig",
    "FunnelResult",
    "GroupSpec",
    "PropensitySpec",
    "SamplingDesign",
    "decompose_errors",
    "replicate",
    "simulate_funnel",
    "Estimate",
    "WeightSet",
    "poststrat_weights",
    "weighted_estimate",
]
