"""Representation-funnel simulator and stagewise bias decomposition.

A donation study loses people at every stage: the frame misses part of
the target population, the sample is a random subset, and participation,
platform use, multi-step retrieval, and the final share-or-not decision
each filter further.  This simulator generates a synthetic population,
pushes it through those stages, and reports the study estimand at each
one, so the bias introduced per stage can be read off directly.

The estimand is the population mean of a per-unit outcome y (in the
shipped study: the person's home-vs-away emotion difference).  Stage
propensities are logistic in a latent covariate, the group, and
optionally the outcome itself; outcome-dependent consent is exactly the
mechanism that makes the final stage biased.

All randomness flows from one seed, and replications derive per-run
seeds, so any result is reproducible bit for bit.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..errors import DesignError

STAGES = ("population", "frame", "sample", "respondents", "compliant", "consented")

DELTAS = ("coverage_bias", "sampling_error", "nonresponse_bias",
          "compliance_bias", "consent_bias")

_TELESCOPE_TOL = 1e-9


@dataclass(frozen=True)
class GroupSpec:
    """One population subgroup: its share, outcome level, and frame coverage."""

    name: str
    share: float
    outcome_mean: float
    covered: bool = True


@dataclass(frozen=True)
class PropensitySpec:
    """Per-unit participation probability for one funnel stage.

    Either an exact constant (so degenerate designs can use exactly 1.0),
    or a logistic model over the latent covariate, the group, and the
    outcome. Outcome coefficients are how informative missingness enters.
    """

    constant: float | None = None
    intercept: float = 0.0
    coef_x: float = 0.0
    coef_outcome: float = 0.0
    group_effects: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.constant is not None and not 0.0 <= self.constant <= 1.0:
            raise ValueError(f"constant propensity {self.constant} outside [0, 1]")

    def probabilities(self, x: np.ndarray, y: np.ndarray,
                      groups: np.ndarray, group_names: list[str]) -> np.ndarray:
        if self.constant is not None:
            return np.full(x.shape, float(self.constant))
        eta = self.intercept + self.coef_x * x + self.coef_outcome * y
        if self.group_effects:
            effects = np.array([self.group_effects.get(g, 0.0) for g in group_names])
            eta = eta + effects[groups]
        return 1.0 / (1.0 + np.exp(-eta))


@dataclass(frozen=True)
class SamplingDesign:
    """How the sample is drawn from the frame.

    census takes everyone; srs draws `size` units; stratified draws
    `sizes[group]` per group; clustered assigns frame units round-robin to
    `cluster_count` clusters and draws `n_clusters` whole clusters.
    """

    method: str = "census"
    size: int | None = None
    sizes: Mapping[str, int] | None = None
    n_clusters: int | None = None
    cluster_count: int | None = None

    def __post_init__(self):
        if self.method not in ("census", "srs", "stratified", "clustered"):
            raise ValueError(f"unknown sampling method {self.method!r}")
        if self.method == "srs" and (self.size is None or self.size <= 0):
            raise ValueError("srs design needs a positive size")
        if self.method == "stratified" and not self.sizes:
            raise ValueError("stratified design needs per-group sizes")
        if self.method == "clustered" and not (self.n_clusters and self.cluster_count):
            raise ValueError("clustered design needs n_clusters and cluster_count")


@dataclass(frozen=True)
class FunnelConfig:
    """Synthetic-population study design.

    Outcome model: y = outcome_mean(group) + coef_x_outcome * x + sd * noise
    with x standard normal. Group sizes are deterministic (largest
    remainder), so analytic stage expectations are exact.
    """

    population_size: int
    groups: tuple[GroupSpec, ...]
    design: SamplingDesign = SamplingDesign()
    respond: PropensitySpec = PropensitySpec(constant=1.0)
    platform_use: PropensitySpec = PropensitySpec(constant=1.0)
    comply: PropensitySpec = PropensitySpec(constant=1.0)
    consent: PropensitySpec = PropensitySpec(constant=1.0)
    outcome_sd: float = 1.0
    coef_x_outcome: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.population_size <= 0:
            raise ValueError("population_size must be positive")
        if not self.groups:
            raise ValueError("at least one group is required")
        total = sum(g.share for g in self.groups)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"group shares must sum to 1, got {total}")

    @classmethod
    def from_dict(cls, raw: dict) -> "FunnelConfig":
        def prop(key: str) -> PropensitySpec:
            spec = raw.get(key, {})
            if isinstance(spec, (int, float)):
                return PropensitySpec(constant=float(spec))
            return PropensitySpec(
                constant=spec.get("constant"),
                intercept=spec.get("intercept", 0.0),
                coef_x=spec.get("coef_x", 0.0),
                coef_outcome=spec.get("coef_outcome", 0.0),
                group_effects=spec.get("group_effects", {}),
            )

        design_raw = raw.get("design", {})
        return cls(
            population_size=raw["population_size"],
            groups=tuple(
                GroupSpec(
                    name=g["name"],
                    share=g["share"],
                    outcome_mean=g["outcome_mean"],
                    covered=g.get("covered", True),
                )
                for g in raw["groups"]
            ),
            design=SamplingDesign(
                method=design_raw.get("method", "census"),
                size=design_raw.get("size"),
                sizes=design_raw.get("sizes"),
                n_clusters=design_raw.get("n_clusters"),
                cluster_count=design_raw.get("cluster_count"),
            ),
            respond=prop("respond"),
            platform_use=prop("platform_use"),
            comply=prop("comply"),
            consent=prop("consent"),
            outcome_sd=raw.get("outcome_sd", 1.0),
            coef_x_outcome=raw.get("coef_x_outcome", 0.0),
            seed=raw.get("seed", 0),
        )


@dataclass(frozen=True)
class FunnelResult:
    """Stage estimates plus the final-stage microdata needed for weighting."""

    estimates: dict[str, float]
    counts: dict[str, int]
    frame_group_counts: dict[str, int]
    final_y: np.ndarray
    final_groups: np.ndarray  # group index per final unit
    final_weights: np.ndarray  # design weights of final units
    group_names: tuple[str, ...]
    population_truth: float
    seed: int
    mode: str

    def final_group_names(self) -> list[str]:
        return [self.group_names[i] for i in self.final_groups]


def _group_counts(population_size: int, groups: tuple[GroupSpec, ...]) -> list[int]:
    """Largest-remainder apportionment of units to groups."""
    exact = [g.share * population_size for g in groups]
    counts = [int(np.floor(e)) for e in exact]
    remainder = population_size - sum(counts)
    order = sorted(range(len(groups)), key=lambda i: exact[i] - counts[i],
                   reverse=True)
    for i in order[:remainder]:
        counts[i] += 1
    return counts


def _weighted_mean(y: np.ndarray, w: np.ndarray) -> float:
    if y.size == 0:
        return float("nan")
    return float((w * y).sum() / w.sum())


def simulate_funnel(config: FunnelConfig, mode: str = "sample",
                    seed: int | None = None) -> FunnelResult:
    """Run the stage sequence once and record the estimand at every stage.

    sample mode draws the sample and every participation decision;
    expectation mode propagates propensity-weighted means instead (no
    stage randomness beyond the population itself), which is the
    large-sample limit analytic checks are written against.
    """
    if mode not in ("sample", "expectation"):
        raise ValueError(f"unknown mode {mode!r}")
    run_seed = config.seed if seed is None else seed
    rng = np.random.default_rng(run_seed)
    n = config.population_size

    counts = _group_counts(n, config.groups)
    group_idx = np.repeat(np.arange(len(config.groups)), counts)
    means = np.array([g.outcome_mean for g in config.groups])
    x = rng.standard_normal(n)
    y = means[group_idx] + config.coef_x_outcome * x \
        + config.outcome_sd * rng.standard_normal(n)

    estimates: dict[str, float] = {}
    stage_counts: dict[str, int] = {}
    truth = float(y.mean())
    estimates["population"] = truth
    stage_counts["population"] = n

    # Coverage: frame membership is a per-group indicator.
    covered = np.array([g.covered for g in config.groups])
    frame_mask = covered[group_idx]
    f_idx = np.flatnonzero(frame_mask)
    if f_idx.size == 0:
        raise DesignError("coverage excludes the entire population")
    estimates["frame"] = float(y[f_idx].mean())
    stage_counts["frame"] = int(f_idx.size)
    group_names = tuple(g.name for g in config.groups)
    frame_group_counts = {
        g.name: int((group_idx[f_idx] == i).sum())
        for i, g in enumerate(config.groups)
        if g.covered
    }

    # Sample draw (or the whole frame in expectation mode).
    if mode == "expectation":
        s_idx, weights = f_idx, np.ones(f_idx.size)
        estimates["sample"] = estimates["frame"]
    else:
        s_idx, weights = _draw_sample(config.design, f_idx, group_idx,
                                      group_names, rng)
        estimates["sample"] = _weighted_mean(y[s_idx], weights)
    stage_counts["sample"] = int(s_idx.size)

    # Attrition stages. Nonresponse covers both unwillingness and not
    # using the platform; they are separate propensities but one delta.
    stage_specs = [
        ("respondents", (config.respond, config.platform_use)),
        ("compliant", (config.comply,)),
        ("consented", (config.consent,)),
    ]
    idx, w = s_idx, weights
    keep_prob = np.ones(idx.size)
    for stage, specs in stage_specs:
        probs = [
            spec.probabilities(x[idx], y[idx], group_idx[idx], list(group_names))
            for spec in specs
        ]
        if mode == "expectation":
            for p in probs:
                keep_prob = keep_prob * p
            estimates[stage] = _weighted_mean(y[idx], w * keep_prob)
            stage_counts[stage] = int(round(keep_prob.sum()))
        else:
            mask = np.ones(idx.size, dtype=bool)
            for p in probs:
                mask &= rng.random(idx.size) < p
            idx, w = idx[mask], w[mask]
            keep_prob = np.ones(idx.size)
            estimates[stage] = _weighted_mean(y[idx], w)
            stage_counts[stage] = int(idx.size)

    if mode == "expectation":
        final_mask = keep_prob > 0
        final_idx, final_w = idx[final_mask], (w * keep_prob)[final_mask]
    else:
        final_idx, final_w = idx, w

    return FunnelResult(
        estimates=estimates,
        counts=stage_counts,
        frame_group_counts=frame_group_counts,
        final_y=y[final_idx].copy(),
        final_groups=group_idx[final_idx].copy(),
        final_weights=final_w.copy(),
        group_names=group_names,
        population_truth=truth,
        seed=run_seed,
        mode=mode,
    )


def _draw_sample(design: SamplingDesign, f_idx: np.ndarray,
                 group_idx: np.ndarray, group_names: tuple[str, ...],
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw the sample from the frame; returns (unit indices, design weights)."""
    frame_size = f_idx.size
    if design.method == "census":
        return f_idx, np.ones(frame_size)
    if design.method == "srs":
        if design.size > frame_size:
            raise DesignError(
                f"srs size {design.size} exceeds frame size {frame_size}")
        chosen = np.sort(rng.choice(f_idx, size=design.size, replace=False))
        return chosen, np.full(design.size, frame_size / design.size)
    if design.method == "stratified":
        chosen_parts = []
        weight_parts = []
        for name, n_h in design.sizes.items():
            g = group_names.index(name)
            stratum = f_idx[group_idx[f_idx] == g]
            if n_h > stratum.size:
                raise DesignError(
                    f"stratum {name!r} size {n_h} exceeds frame stratum {stratum.size}")
            part = rng.choice(stratum, size=n_h, replace=False)
            chosen_parts.append(part)
            weight_parts.append(np.full(n_h, stratum.size / n_h))
        chosen = np.concatenate(chosen_parts)
        weights = np.concatenate(weight_parts)
        order = np.argsort(chosen)
        return chosen[order], weights[order]
    # clustered: round-robin cluster assignment over the frame.
    if design.n_clusters > design.cluster_count:
        raise DesignError(
            f"cannot draw {design.n_clusters} of {design.cluster_count} clusters")
    clusters = np.arange(frame_size) % design.cluster_count
    drawn = rng.choice(design.cluster_count, size=design.n_clusters, replace=False)
    mask = np.isin(clusters, drawn)
    chosen = f_idx[mask]
    weight = design.cluster_count / design.n_clusters
    return chosen, np.full(chosen.size, weight)


@dataclass(frozen=True)
class ErrorLedger:
    """Stagewise bias decomposition; deltas telescope to the total."""

    estimates: dict[str, float]
    deltas: dict[str, float]
    total: float
    population_truth: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["stage", "estimate", "delta"])
        writer.writerow(["population", f"{self.estimates['population']!r}", ""])
        for stage, delta_name in zip(STAGES[1:], DELTAS):
            writer.writerow([stage, f"{self.estimates[stage]!r}",
                             f"{self.deltas[delta_name]!r}"])
        writer.writerow(["total", f"{self.estimates['consented']!r}",
                         f"{self.total!r}"])
        return buf.getvalue()

    def render(self) -> str:
        """Two-column text report: stage estimate, error introduced there."""
        lines = [f"{'stage':<14}{'estimate':>14}  {'error introduced':>18}"]
        lines.append(f"{'population':<14}{self.estimates['population']:>14.6f}")
        for stage, delta_name in zip(STAGES[1:], DELTAS):
            lines.append(
                f"{stage:<14}{self.estimates[stage]:>14.6f}  "
                f"{delta_name} = {self.deltas[delta_name]:+.6f}")
        lines.append(f"{'total':<14}{'':>14}  total error = {self.total:+.6f}")
        return "\n".join(lines) + "\n"


def decompose_errors(result: FunnelResult) -> ErrorLedger:
    """Delta per stage = estimate(stage) - estimate(previous stage)."""
    est = result.estimates
    deltas = {
        name: est[stage] - est[prev]
        for name, stage, prev in zip(DELTAS, STAGES[1:], STAGES[:-1])
    }
    total = est["consented"] - est["population"]
    drift = abs(sum(deltas.values()) - total)
    if np.isfinite(total) and drift > _TELESCOPE_TOL:
        raise AssertionError(f"ledger deltas do not telescope (drift {drift})")
    return ErrorLedger(estimates=dict(est), deltas=deltas, total=total,
                       population_truth=result.population_truth)


def replicate(config: FunnelConfig, reps: int,
              mode: str = "sample") -> list[FunnelResult]:
    """Run `reps` independent replications with per-run derived seeds.

    Seeds are spawned from the config seed, so results are reproducible
    and order-independent; replications are independent and could run in
    parallel.
    """
    seeds = np.random.SeedSequence(config.seed).generate_state(reps)
    return [simulate_funnel(config, mode=mode, seed=int(s)) for s in seeds]
