"""Agreement between paired measurements of the same construct.

Duplicate measurements (say, a survey item next to a derived variable)
let a study quantify measurement error: Pearson correlation for numeric
pairs, Cohen's kappa for categorical ones, and the mean difference with
its 1.96-SD limits of agreement.  Zero-variance inputs make correlation
undefined, and it is reported as undefined, not as zero.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from numbers import Number
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class AgreementStats:
    n: int
    correlation: float | None
    kappa: float | None
    mean_diff: float | None
    loa_low: float | None
    loa_high: float | None


def agreement_stats(a: Sequence, b: Sequence) -> AgreementStats:
    """Compare two equal-length series of paired measurements.

    Numeric pairs get correlation and mean difference with limits of
    agreement; kappa treats each distinct value as a category, so it is
    defined for both label and numeric inputs.
    """
    a = list(a)
    b = list(b)
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    if len(a) < 2:
        raise ValueError("need at least 2 pairs")

    numeric = all(isinstance(v, Number) for v in a + b)
    correlation = mean_diff = loa_low = loa_high = None
    if numeric:
        x = np.asarray(a, dtype=float)
        y = np.asarray(b, dtype=float)
        if x.std() > 0 and y.std() > 0:
            correlation = float(np.corrcoef(x, y)[0, 1])
        diff = x - y
        mean_diff = float(diff.mean())
        spread = 1.96 * float(diff.std(ddof=1))
        loa_low, loa_high = mean_diff - spread, mean_diff + spread

    return AgreementStats(
        n=len(a),
        correlation=correlation,
        kappa=_cohens_kappa(a, b),
        mean_diff=mean_diff,
        loa_low=loa_low,
        loa_high=loa_high,
    )


def _cohens_kappa(a: list, b: list) -> float | None:
    """Chance-corrected agreement; None when chance agreement is total."""
    n = len(a)
    observed = sum(1 for x, y in zip(a, b) if x == y) / n
    freq_a = Counter(a)
    freq_b = Counter(b)
    expected = sum(freq_a[c] * freq_b.get(c, 0) for c in freq_a) / (n * n)
    if expected >= 1.0:
        return None
    return (observed - expected) / (1.0 - expected)
