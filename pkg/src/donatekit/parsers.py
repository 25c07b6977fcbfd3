"""Schema-versioned parsers from provider archives to raw records.

Each parser is a pure function of the archive bytes: identical archives
produce identical record lists and reports.  Parsers never skip silently;
anything not emitted is counted as dropped with a warning, so
emitted + dropped always equals the number of records in the source.

The fixture schemas handled here are versioned in-repo (see
docs in fixtures.py); they deliberately do not chase live provider
formats, which change continuously.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone

from .core import (
    MEDIA_IMAGE,
    MEDIA_VIDEO,
    DdpArchive,
    FileEntry,
    Pseudonym,
    Timestamp,
    parse_timestamp,
)
from .errors import NoCandidatesError, SchemaError, TimestampError

MEDIA_KINDS = ("photo", "video", "text_post")

LAT_E7_MAX = 900_000_000
LON_E7_MAX = 1_800_000_000

INSTAGRAM_MEDIA_INDEX = "media.json"
GOOGLE_LOCATION_FILE = "Location History.json"


@dataclass
class ParseReport:
    """Per-archive accounting: emitted + dropped covers every source record."""

    archive: str
    emitted: int = 0
    flagged: int = 0
    dropped: int = 0
    warnings: list[str] = field(default_factory=list)

    def warn(self, message: str) -> None:
        self.warnings.append(message)


@dataclass(frozen=True)
class MediaRecord:
    owner: Pseudonym
    taken_at: Timestamp | None
    file: FileEntry
    caption: str | None
    kind: str
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class LocationRecord:
    owner: Pseudonym
    at: Timestamp
    lat_e7: int
    lon_e7: int
    accuracy_m: float | None = None
    semantic_candidates: tuple[tuple[str, float], ...] = ()


def parse_instagram(
    archive: DdpArchive, owner: Pseudonym
) -> tuple[list[MediaRecord], ParseReport]:
    """Parse an instagram fixture archive into MediaRecords.

    Every entry in the media index becomes one record.  Media files found
    in the archive but absent from the index are emitted too, flagged
    `unindexed`, with the timestamp taken from zip member metadata; an
    index that misses files must not silently shrink the extraction.
    """
    report = ParseReport(archive=str(archive.path))
    index_entry = archive.entry(INSTAGRAM_MEDIA_INDEX)
    if index_entry is None:
        raise SchemaError(
            f"{archive.path}: expected media index {INSTAGRAM_MEDIA_INDEX!r} not found"
        )
    try:
        index = json.loads(archive.read(INSTAGRAM_MEDIA_INDEX))
    except (ValueError, UnicodeDecodeError) as exc:
        raise SchemaError(f"{archive.path}: malformed media index: {exc}") from exc
    if not isinstance(index, list):
        raise SchemaError(f"{archive.path}: media index is not an array")

    records: list[MediaRecord] = []
    indexed_paths: set[str] = set()
    for i, item in enumerate(index):
        path = item.get("path") if isinstance(item, dict) else None
        if not path:
            report.dropped += 1
            report.warn(f"index entry {i}: no path, dropped")
            continue
        indexed_paths.add(path)
        entry = archive.entry(path)
        if entry is None:
            report.dropped += 1
            report.warn(f"index entry {path!r}: file missing from archive, dropped")
            continue
        kind = item.get("kind", "photo")
        if kind not in MEDIA_KINDS:
            report.dropped += 1
            report.warn(f"index entry {path!r}: unknown kind {kind!r}, dropped")
            continue
        flags: tuple[str, ...] = ()
        taken_at: Timestamp | None = None
        raw_ts = item.get("taken_at")
        if raw_ts is None:
            flags = ("missing_timestamp",)
            report.warn(f"index entry {path!r}: no taken_at")
        else:
            try:
                taken_at = parse_timestamp(str(raw_ts))
            except TimestampError:
                flags = ("missing_timestamp",)
                report.warn(f"index entry {path!r}: unparseable taken_at {raw_ts!r}")
        records.append(MediaRecord(
            owner=owner,
            taken_at=taken_at,
            file=entry,
            caption=item.get("caption"),
            kind=kind,
            flags=flags,
        ))

    # Media files on disk but not in the index: emit and flag.
    for entry in archive.manifest:
        if entry.media_kind not in (MEDIA_IMAGE, MEDIA_VIDEO):
            continue
        if entry.relative_path in indexed_paths:
            continue
        records.append(MediaRecord(
            owner=owner,
            taken_at=_member_timestamp(archive, entry.relative_path),
            file=entry,
            caption=None,
            kind="photo" if entry.media_kind == MEDIA_IMAGE else "video",
            flags=("unindexed",),
        ))
        report.warn(f"media file {entry.relative_path!r} not in index, flagged")

    report.emitted = len(records)
    report.flagged = sum(1 for r in records if r.flags)
    return records, report


def _member_timestamp(archive: DdpArchive, relative_path: str) -> Timestamp | None:
    """Zip member mtime as a fallback timestamp (tagged provider_local)."""
    import zipfile

    try:
        with zipfile.ZipFile(archive.path) as zf:
            y, mo, d, h, mi, s = zf.getinfo(relative_path).date_time
        dt = datetime(y, mo, d, h, mi, s, tzinfo=timezone.utc)
    except (KeyError, ValueError, OSError):
        return None
    epoch = datetime(1970, 1, 1, tzinfo=timezone.utc)
    return Timestamp(epoch_ms=int((dt - epoch).total_seconds()) * 1000,
                     source_format="provider_local")


def parse_google_location(
    archive: DdpArchive, owner: Pseudonym
) -> tuple[list[LocationRecord], ParseReport]:
    """Parse a google_takeout fixture's location history into LocationRecords.

    Output is sorted ascending by timestamp.  Pings sharing a timestamp are
    deduplicated keeping the most accurate one (smallest accuracy radius);
    the drop is recorded in the report.  Out-of-range coordinates drop the
    record with a warning.
    """
    report = ParseReport(archive=str(archive.path))
    if archive.entry(GOOGLE_LOCATION_FILE) is None:
        raise SchemaError(
            f"{archive.path}: expected location file {GOOGLE_LOCATION_FILE!r} not found"
        )
    try:
        raw = json.loads(archive.read(GOOGLE_LOCATION_FILE))
    except (ValueError, UnicodeDecodeError) as exc:
        raise SchemaError(f"{archive.path}: malformed location file: {exc}") from exc
    if not isinstance(raw, list):
        raise SchemaError(f"{archive.path}: location file is not an array")

    parsed: list[LocationRecord] = []
    for i, item in enumerate(raw):
        if not isinstance(item, dict):
            report.dropped += 1
            report.warn(f"ping {i}: not an object, dropped")
            continue
        try:
            at = parse_timestamp(str(item["timestampMs"]), hint="epoch_ms")
            lat = int(item["latitudeE7"])
            lon = int(item["longitudeE7"])
        except (KeyError, ValueError, TimestampError) as exc:
            report.dropped += 1
            report.warn(f"ping {i}: malformed ({exc}), dropped")
            continue
        if abs(lat) > LAT_E7_MAX or abs(lon) > LON_E7_MAX:
            report.dropped += 1
            report.warn(f"ping {i}: coordinate out of range ({lat}, {lon}), dropped")
            continue
        accuracy = item.get("accuracy")
        if accuracy is not None:
            accuracy = float(accuracy)
            if accuracy < 0:
                report.warn(f"ping {i}: negative accuracy {accuracy}, ignored")
                accuracy = None
        candidates = []
        for cand in item.get("semanticCandidates", []):
            place = cand.get("placeId")
            prob = cand.get("probability")
            if place is None or prob is None or not 0.0 <= float(prob) <= 1.0:
                report.warn(f"ping {i}: bad semantic candidate {cand!r}, ignored")
                continue
            candidates.append((str(place), float(prob)))
        parsed.append(LocationRecord(
            owner=owner,
            at=at,
            lat_e7=lat,
            lon_e7=lon,
            accuracy_m=accuracy,
            semantic_candidates=tuple(candidates),
        ))

    # Dedupe identical (owner, timestamp) keeping the most accurate ping;
    # missing accuracy counts as least accurate. Then sort ascending.
    by_ms: dict[int, LocationRecord] = {}
    for rec in parsed:
        best = by_ms.get(rec.at.epoch_ms)
        if best is None:
            by_ms[rec.at.epoch_ms] = rec
        elif _accuracy_rank(rec) < _accuracy_rank(best):
            report.dropped += 1
            report.warn(f"duplicate ping at {rec.at.to_iso()}: kept more accurate")
            by_ms[rec.at.epoch_ms] = rec
        else:
            report.dropped += 1
            report.warn(f"duplicate ping at {rec.at.to_iso()}: dropped less accurate")
    records = [by_ms[ms] for ms in sorted(by_ms)]

    report.emitted = len(records)
    return records, report


def _accuracy_rank(rec: LocationRecord) -> float:
    return rec.accuracy_m if rec.accuracy_m is not None else float("inf")


def select_semantic_location(candidates) -> str:
    """Pick the place with the highest probability.

    Ties break to the lexicographically smallest place id, so the result
    is deterministic and invariant under permutation of the candidates.
    """
    candidates = list(candidates)
    if not candidates:
        raise NoCandidatesError("no semantic location candidates")
    return min(candidates, key=lambda c: (-c[1], c[0]))[0]
