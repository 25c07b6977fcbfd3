"""Study configuration: the declarative file every CLI command reads.

A study declares its variable registry (each variable bound to exactly
one transformer), the linkage parameters, declared transformer accuracy
rates, checklist metadata, and optionally a funnel design and fixture
specs.  Configs are plain JSON; validation failures raise ConfigError
with the offending field named.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .core import parse_timestamp
from .errors import ConfigError, TimestampError
from .errorframe import FunnelConfig
from .integrate import LinkSpec


@dataclass(frozen=True)
class VariableSpec:
    """One registered research variable and its transformer binding."""

    name: str
    kind: str  # boolean | fraction | number | label
    transformer_id: str
    description: str = ""


@dataclass(frozen=True)
class ChecklistMeta:
    target_population: str = ""
    sampling_frame: str = ""
    data_controllers: tuple[str, ...] = ()


@dataclass(frozen=True)
class StudyConfig:
    study_id: str
    variables: tuple[VariableSpec, ...]
    link: LinkSpec
    transformer_accuracy: dict[str, float] = field(default_factory=dict)
    checklist: ChecklistMeta = ChecklistMeta()
    funnel: FunnelConfig | None = None
    fixtures: tuple[dict, ...] = ()

    def __post_init__(self):
        names = [v.name for v in self.variables]
        if len(names) != len(set(names)):
            raise ConfigError(f"duplicate variable names in registry: {names}")
        if not self.variables:
            raise ConfigError("study declares no variables")

    def variable(self, name: str) -> VariableSpec:
        for v in self.variables:
            if v.name == name:
                return v
        raise ConfigError(f"variable {name!r} is not registered")

    def consent_variables(self) -> dict[str, tuple[str, str]]:
        """Variable -> (description, transformer_id), as the consent
        session wants it."""
        return {v.name: (v.description, v.transformer_id) for v in self.variables}

    def transformers(self) -> set[str]:
        return {v.transformer_id for v in self.variables}


def load_study_config(path: str | Path) -> StudyConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read study config {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"study config {path} is not valid JSON: {exc}") from exc
    return study_config_from_dict(raw)


def study_config_from_dict(raw: dict) -> StudyConfig:
    try:
        link_raw = raw["link"]
        link = LinkSpec(
            bin_ms=int(link_raw["bin_ms"]),
            tolerance_ms=int(link_raw.get("tolerance_ms", 0)),
            window_start=parse_timestamp(str(link_raw["window_start"])),
            window_end=parse_timestamp(str(link_raw["window_end"])),
        )
    except KeyError as exc:
        raise ConfigError(f"link section is missing {exc}") from exc
    except (TimestampError, ValueError) as exc:
        raise ConfigError(f"bad link section: {exc}") from exc

    try:
        variables = tuple(
            VariableSpec(
                name=v["name"],
                kind=v.get("kind", "number"),
                transformer_id=v["transformer"],
                description=v.get("description", ""),
            )
            for v in raw["variables"]
        )
    except KeyError as exc:
        raise ConfigError(f"variable entry is missing {exc}") from exc

    checklist_raw = raw.get("checklist", {})
    funnel = None
    if raw.get("funnel"):
        try:
            funnel = FunnelConfig.from_dict(raw["funnel"])
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad funnel section: {exc}") from exc

    try:
        return StudyConfig(
            study_id=str(raw["study_id"]),
            variables=variables,
            link=link,
            transformer_accuracy={
                str(k): float(v)
                for k, v in raw.get("transformer_accuracy", {}).items()
            },
            checklist=ChecklistMeta(
                target_population=checklist_raw.get("target_population", ""),
                sampling_frame=checklist_raw.get("sampling_frame", ""),
                data_controllers=tuple(checklist_raw.get("data_controllers", ())),
            ),
            funnel=funnel,
            fixtures=tuple(raw.get("fixtures", ())),
        )
    except KeyError as exc:
        raise ConfigError(f"study config is missing {exc}") from exc
