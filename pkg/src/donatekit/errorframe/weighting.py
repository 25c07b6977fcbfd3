"""Post-stratification weights and weighted estimation.

Respondents are reweighted so stratum totals match known frame totals
(weight N_h / n_h).  Strata present in the frame but empty among the
respondents cannot be repaired by weighting; they are reported as
uncovered and excluded from the calibration invariant instead of being
papered over.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..errors import EstimationError, FrameMismatchError


@dataclass(frozen=True)
class WeightSet:
    """Per-stratum expansion weights plus calibration bookkeeping."""

    stratum_weights: dict[str, float]
    respondents: dict[str, int]
    frame: dict[str, int]
    uncovered: tuple[str, ...]
    method: str = "poststratification"

    @property
    def weight_sum(self) -> float:
        """Sum of per-respondent weights; equals the covered frame total."""
        return sum(self.stratum_weights[h] * self.respondents[h]
                   for h in self.stratum_weights)

    def expand(self, strata: Sequence[str]) -> np.ndarray:
        """Per-unit weights for units labeled by stratum."""
        try:
            return np.array([self.stratum_weights[h] for h in strata])
        except KeyError as exc:
            raise FrameMismatchError(f"unit in unweighted stratum {exc}") from exc


def poststrat_weights(respondents: Mapping[str, int],
                      frame: Mapping[str, int]) -> WeightSet:
    """Weights N_h / n_h per stratum h.

    Every stratum with respondents must have a positive frame count.
    Frame strata without respondents are flagged uncovered; their frame
    totals are excluded from the weight-sum invariant.
    """
    weights: dict[str, float] = {}
    uncovered: list[str] = []
    for h, n_h in respondents.items():
        if n_h < 0:
            raise ValueError(f"negative respondent count in stratum {h!r}")
        if n_h == 0:
            continue
        if h not in frame or frame[h] <= 0:
            raise FrameMismatchError(
                f"respondents in stratum {h!r} but no frame count for it")
        weights[h] = frame[h] / n_h
    for h, big_n in frame.items():
        if big_n > 0 and respondents.get(h, 0) == 0:
            uncovered.append(h)
    return WeightSet(
        stratum_weights=weights,
        respondents={h: int(respondents[h]) for h in weights},
        frame={h: int(frame[h]) for h in frame},
        uncovered=tuple(sorted(uncovered)),
    )


@dataclass(frozen=True)
class Estimate:
    value: float
    se: float
    n: int


def weighted_estimate(values: Sequence[float],
                      weights: Sequence[float]) -> Estimate:
    """Weighted mean with linearized standard error.

    Mean is sum(w*y) / sum(w); the SE comes from the standard
    linearization of that ratio, sqrt(sum(w_i^2 (y_i - mean)^2)) / sum(w).
    """
    y = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    if y.size == 0:
        raise EstimationError("no observations to estimate from")
    if y.shape != w.shape:
        raise ValueError(f"{y.size} values but {w.size} weights")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    total = w.sum()
    mean = float((w * y).sum() / total)
    se = float(np.sqrt((w**2 * (y - mean) ** 2).sum()) / total)
    return Estimate(value=mean, se=se, n=int(y.size))
