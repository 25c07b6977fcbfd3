"""Misclassification: forward simulation and count correction.

A classifier with known error rates distorts a table of true counts in a
predictable way: expected observed counts are the confusion matrix times
the true counts.  Correction inverts that map.  For two classes with
sensitivity 0.90 and specificity 0.75, true counts (100, 100) show up as
(115, 85) in expectation, and correction recovers (100, 100) exactly.

Corrected counts can come out negative when the assumed rates are
inconsistent with the observed data; those are flagged, never truncated,
because truncation would hide the rate misspecification.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import SingularMatrixError

INFEASIBLE_FLAG = "infeasible-correction"

_COLUMN_SUM_TOL = 1e-12


@dataclass(frozen=True)
class ConfusionMatrix:
    """Column-stochastic k x k rates: entry (i, j) = P(predicted i | true j).

    Must be invertible; for k=2 that is exactly sensitivity + specificity
    != 1. Construction validates, so an unusable matrix fails fast.
    """

    rates: np.ndarray
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=float)
        object.__setattr__(self, "rates", rates)
        if rates.ndim != 2 or rates.shape[0] != rates.shape[1]:
            raise ValueError(f"rates must be square, got shape {rates.shape}")
        if np.any(rates < 0) or np.any(rates > 1):
            raise ValueError("rates must lie in [0, 1]")
        sums = rates.sum(axis=0)
        if np.any(np.abs(sums - 1.0) > _COLUMN_SUM_TOL):
            raise ValueError(f"columns must sum to 1, got {sums}")
        if self.labels and len(self.labels) != rates.shape[0]:
            raise ValueError("label count does not match matrix size")
        if abs(np.linalg.det(rates)) < 1e-12:
            raise SingularMatrixError(
                "confusion matrix is singular; counts cannot be corrected"
                + (" (sensitivity + specificity = 1)" if rates.shape[0] == 2 else "")
            )

    @property
    def k(self) -> int:
        return self.rates.shape[0]

    @property
    def sensitivity(self) -> float:
        if self.k != 2:
            raise ValueError("sensitivity is defined for 2-class matrices")
        return float(self.rates[0, 0])

    @property
    def specificity(self) -> float:
        if self.k != 2:
            raise ValueError("specificity is defined for 2-class matrices")
        return float(self.rates[1, 1])

    @classmethod
    def from_sensitivity_specificity(cls, sensitivity: float, specificity: float
                                     ) -> "ConfusionMatrix":
        """2-class matrix with the given true-positive/true-negative rates."""
        return cls(
            rates=np.array([
                [sensitivity, 1.0 - specificity],
                [1.0 - sensitivity, specificity],
            ]),
            labels=("positive", "negative"),
        )

    @classmethod
    def identity(cls, k: int, labels: tuple[str, ...] = ()) -> "ConfusionMatrix":
        return cls(rates=np.eye(k), labels=labels)


@dataclass(frozen=True)
class CountVector:
    """Per-class counts; expected (fractional) counts are allowed.

    Correction output may carry negative components, in which case the
    vector is flagged infeasible rather than silently clipped.
    """

    counts: tuple[float, ...]
    labels: tuple[str, ...] = ()
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        counts = tuple(float(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        if not all(np.isfinite(counts)):
            raise ValueError(f"counts must be finite, got {counts}")
        if self.labels and len(self.labels) != len(counts):
            raise ValueError("label count does not match counts")

    @property
    def infeasible(self) -> bool:
        return INFEASIBLE_FLAG in self.flags

    def as_array(self) -> np.ndarray:
        return np.array(self.counts, dtype=float)


def correct_counts(observed: CountVector, cm: ConfusionMatrix) -> CountVector:
    """Recover true class counts from observed ones: solve rates @ x = observed.

    Negative components signal error rates inconsistent with the data and
    flag the result infeasible.
    """
    obs = observed.as_array()
    if obs.shape[0] != cm.k:
        raise ValueError(f"observed has {obs.shape[0]} classes, matrix has {cm.k}")
    if np.any(obs < 0):
        raise ValueError("observed counts must be non-negative")
    try:
        corrected = np.linalg.solve(cm.rates, obs)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(str(exc)) from exc
    flags = (INFEASIBLE_FLAG,) if np.any(corrected < 0) else ()
    return CountVector(counts=tuple(corrected), labels=observed.labels or cm.labels,
                       flags=flags)


def misclassify_simulate(
    truth: CountVector,
    cm: ConfusionMatrix,
    mode: str = "expectation",
    seed: int | None = None,
) -> CountVector:
    """Forward model: what a classifier with these rates reports.

    expectation mode returns rates @ truth exactly; sample mode draws one
    multinomial realization per true class (truth must then be integer).
    """
    true = truth.as_array()
    if true.shape[0] != cm.k:
        raise ValueError(f"truth has {true.shape[0]} classes, matrix has {cm.k}")
    if np.any(true < 0):
        raise ValueError("true counts must be non-negative")

    if mode == "expectation":
        observed = cm.rates @ true
    elif mode == "sample":
        if not np.allclose(true, np.round(true)):
            raise ValueError("sample mode needs integer true counts")
        rng = np.random.default_rng(seed)
        observed = np.zeros(cm.k)
        for j in range(cm.k):
            observed += rng.multinomial(int(round(true[j])), cm.rates[:, j])
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return CountVector(counts=tuple(observed), labels=truth.labels or cm.labels)
