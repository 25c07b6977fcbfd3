"""Pipeline orchestration: archives in, derived store out; packages in,
linked dataset out.

run_pipeline is the respondent-side path (detect, manifest, parse,
transform, all local); ingest is the researcher-side path (verify
checksums, reject tampered packages, link, validate).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .consent import load_package
from .core import DdpArchive, Pseudonym, open_archive
from .errors import ArchiveError, NoHomeError, SchemaError
from .integrate import LinkedDataset, LinkReport, ValidationReport, link, validate
from .parsers import (
    ParseReport,
    parse_google_location,
    parse_instagram,
)
from .study import StudyConfig
from .transform import (
    AFFECT_TRANSFORMER,
    HOME_TRANSFORMER,
    DerivedRecord,
    EmotionClassifier,
    MockEmotionClassifier,
    TransformReport,
    aggregate_affect,
    classify_at_home,
    classify_emotion,
    infer_home,
    records_to_csv,
)


@dataclass
class PipelineResult:
    store: list[DerivedRecord]
    transform_report: TransformReport
    parse_reports: list[ParseReport] = field(default_factory=list)
    archives: list[DdpArchive] = field(default_factory=list)

    def write_store(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(records_to_csv(self.store), encoding="utf-8")
        return path


def run_pipeline(
    archive_paths,
    config: StudyConfig,
    pseudonym: Pseudonym,
    classifier: EmotionClassifier | None = None,
    night_window: tuple[int, int] = (0, 6),
    cluster_radius_m: float = 100.0,
) -> PipelineResult:
    """Detect, manifest, parse, and transform a respondent's archives.

    Only variables registered in the study produce records.  A missing
    home (no night pings) leaves at_home missing rather than fabricated;
    unreadable media count as transform failures but do not abort.
    """
    classifier = classifier or MockEmotionClassifier()
    report = TransformReport()
    parse_reports: list[ParseReport] = []
    archives: list[DdpArchive] = []
    store: list[DerivedRecord] = []

    pings = []
    media_with_faces = []
    want_home = any(v.transformer_id == HOME_TRANSFORMER[0] for v in config.variables)
    want_affect = any(v.transformer_id == AFFECT_TRANSFORMER[0]
                      for v in config.variables)

    for raw_path in archive_paths:
        archive = open_archive(raw_path)
        archives.append(archive)
        if archive.provider == "instagram":
            media, parse_report = parse_instagram(archive, pseudonym)
            parse_reports.append(parse_report)
            if not want_affect:
                continue
            for record in media:
                if record.kind not in ("photo", "video"):
                    continue
                try:
                    data = archive.read(record.file.relative_path)
                except ArchiveError as exc:
                    report.count(AFFECT_TRANSFORMER[0], failed=1)
                    report.note(f"unreadable media {record.file.relative_path}: {exc}")
                    continue
                faces = classify_emotion(record, data, classifier)
                media_with_faces.append((record, faces))
                report.count(AFFECT_TRANSFORMER[0], processed=1,
                             flagged=1 if record.flags else 0)
        elif archive.provider == "google_takeout":
            ping_records, parse_report = parse_google_location(archive, pseudonym)
            parse_reports.append(parse_report)
            pings.extend(ping_records)
        else:
            raise SchemaError(
                f"{archive.path}: unsupported provider {archive.provider!r}")

    if want_home and pings:
        try:
            home = infer_home(pings, night_window=night_window,
                              cluster_radius_m=cluster_radius_m)
        except NoHomeError as exc:
            report.note(f"home inference: {exc}; at_home left missing")
        else:
            if home.low_confidence:
                report.note(f"home inferred from only {home.support} night pings")
            for ping in pings:
                store.append(classify_at_home(ping, home))
                report.count(HOME_TRANSFORMER[0], processed=1)

    if want_affect and media_with_faces:
        affect_records = aggregate_affect(media_with_faces,
                                          bin_ms=config.link.bin_ms)
        store.extend(affect_records)

    registered = {v.name for v in config.variables}
    store = [r for r in store if r.variable in registered]
    store.sort(key=lambda r: r.sort_key())
    return PipelineResult(store=store, transform_report=report,
                          parse_reports=parse_reports, archives=archives)


@dataclass
class IngestResult:
    dataset: LinkedDataset
    link_report: LinkReport
    validation: ValidationReport
    pseudonyms: tuple[str, ...]


def ingest(package_paths, config: StudyConfig) -> IngestResult:
    """Researcher-side intake: verify every package, then link and validate.

    A checksum mismatch raises TamperError naming the package; nothing
    from a tampered package enters the dataset.
    """
    sources: dict[str, list[DerivedRecord]] = {}
    pseudonyms: list[str] = []
    for raw_path in package_paths:
        path = Path(raw_path)
        package = load_package(path)  # raises TamperError on any mismatch
        sources[path.stem] = list(package.records)
        pseudonyms.append(package.pseudonym.value)

    dataset, link_report = link(sources, config.link)
    report = validate(dataset, config.link)
    return IngestResult(dataset=dataset, link_report=link_report,
                        validation=report,
                        pseudonyms=tuple(sorted(set(pseudonyms))))
