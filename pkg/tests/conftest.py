"""Shared builders for tests: tiny zips, study configs, record factories."""

from __future__ import annotations

import zipfile
from pathlib import Path

import pytest

from donatekit.core import Pseudonym, Timestamp
from donatekit.integrate import LinkSpec
from donatekit.study import ChecklistMeta, StudyConfig, VariableSpec
from donatekit.transform import (
    AFFECT_TRANSFORMER,
    HOME_TRANSFORMER,
    DerivedRecord,
    Provenance,
)

HOUR_MS = 3_600_000
DAY_MS = 86_400_000

# 2020-03-01T00:00:00Z, verified against an independent calendar oracle.
T0 = 1_583_020_800_000


def make_zip(path: Path, members: dict[str, bytes]) -> Path:
    with zipfile.ZipFile(path, "w") as zf:
        for name in sorted(members):
            zf.writestr(name, members[name])
    return path


def ts(offset_ms: int = 0) -> Timestamp:
    return Timestamp(epoch_ms=T0 + offset_ms)


def record(variable: str, offset_ms: int = 0, value=1.0, owner: str = "p01",
           provider: str = "instagram", transformer=AFFECT_TRANSFORMER,
           confidence: float = 1.0) -> DerivedRecord:
    return DerivedRecord(
        owner=Pseudonym(owner),
        at=ts(offset_ms),
        variable=variable,
        value=value,
        provenance=Provenance(provider=provider, transformer_id=transformer[0],
                              transformer_version=transformer[1],
                              confidence=confidence),
    )


@pytest.fixture
def study_config() -> StudyConfig:
    return StudyConfig(
        study_id="wellbeing-2020",
        variables=(
            VariableSpec(name="at_home", kind="boolean",
                         transformer_id=HOME_TRANSFORMER[0],
                         description="Whether you were at your home location"),
            VariableSpec(name="affect_positive_share", kind="fraction",
                         transformer_id=AFFECT_TRANSFORMER[0],
                         description="Daily share of positive face expressions"),
        ),
        # Hourly bins: finer than the ping cadence, so state variables do
        # not collide within a bin (linkage refuses conflicting duplicates).
        link=LinkSpec(
            bin_ms=HOUR_MS,
            tolerance_ms=60_000,
            window_start=Timestamp(epoch_ms=T0 - 30 * DAY_MS),
            window_end=Timestamp(epoch_ms=T0 + 365 * DAY_MS),
        ),
        transformer_accuracy={HOME_TRANSFORMER[0]: 0.93,
                              AFFECT_TRANSFORMER[0]: 0.82},
        checklist=ChecklistMeta(
            target_population="adolescents in one country",
            sampling_frame="high-school registers",
            data_controllers=("instagram", "google_takeout"),
        ),
    )
