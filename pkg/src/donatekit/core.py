"""Foundational types shared by the whole toolkit.

Covers the things every stage needs: opening a respondent's download
archive, building a content-sniffed manifest of its members, detecting
which provider produced it, normalizing the many timestamp formats
providers use, and study-scoped pseudonyms.

File types are decided from magic bytes, never from the file extension:
archives routinely contain images whose extension lies about the format,
and an extension-based extractor would systematically miss them.
"""

from __future__ import annotations

import hashlib
import secrets
import zipfile
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

from .errors import AmbiguousProviderError, ArchiveError, TimestampError

PROVIDER_INSTAGRAM = "instagram"
PROVIDER_GOOGLE_TAKEOUT = "google_takeout"
PROVIDER_UNKNOWN = "unknown"

SOURCE_FORMATS = ("iso8601", "epoch_s", "epoch_ms", "provider_local")

# Integers below this magnitude are read as epoch seconds, at or above it
# as epoch milliseconds. 10^11 seconds is year 5138; unambiguous in practice.
EPOCH_MS_CUTOFF = 10**11

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
_MS = timedelta(milliseconds=1)


# --------------------------------------------------------------------------
# Timestamps


@dataclass(frozen=True, order=True)
class Timestamp:
    """A UTC instant in integer milliseconds since the Unix epoch.

    source_format records what the raw input looked like; zoneless inputs
    are interpreted as UTC and tagged provider_local so downstream analyses
    can re-bin them under a study-level zone setting if needed.
    """

    epoch_ms: int
    source_format: str = field(default="epoch_ms", compare=False)

    def __post_init__(self):
        if self.source_format not in SOURCE_FORMATS:
            raise ValueError(f"unknown source_format {self.source_format!r}")

    def to_iso(self) -> str:
        """Render as ISO-8601 UTC; lossless under parse_timestamp."""
        secs, ms = divmod(self.epoch_ms, 1000)
        stamp = (_EPOCH + timedelta(seconds=secs)).strftime("%Y-%m-%dT%H:%M:%S")
        return f"{stamp}.{ms:03d}Z" if ms else f"{stamp}Z"

    def to_datetime(self) -> datetime:
        return _EPOCH + self.epoch_ms * _MS


def _parse_iso(raw: str, source_format: str | None) -> Timestamp:
    text = raw.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    try:
        dt = datetime.fromisoformat(text)
    except ValueError as exc:
        raise TimestampError(raw) from exc
    if dt.tzinfo is None:
        # No zone given: treat as UTC, keep the fact in the tag.
        dt = dt.replace(tzinfo=timezone.utc)
        fmt = source_format or "provider_local"
    else:
        fmt = source_format or "iso8601"
    return Timestamp(epoch_ms=(dt - _EPOCH) // _MS, source_format=fmt)


def parse_timestamp(raw: str, hint: str | None = None) -> Timestamp:
    """Normalize a raw timestamp string to a Timestamp.

    Accepts ISO-8601 (with or without zone; zoneless means UTC), epoch
    seconds, and epoch milliseconds.  Bare integers are disambiguated by
    magnitude (see EPOCH_MS_CUTOFF) unless `hint` names the format.
    Raises TimestampError for anything unparseable, carrying the raw value.
    """
    if not isinstance(raw, str) or not raw.strip():
        raise TimestampError(str(raw), "empty timestamp")
    if hint is not None and hint not in SOURCE_FORMATS:
        raise ValueError(f"unknown hint {hint!r}")

    text = raw.strip()
    if hint == "epoch_s" or hint == "epoch_ms":
        try:
            value = int(text)
        except ValueError as exc:
            raise TimestampError(raw) from exc
        ms = value * 1000 if hint == "epoch_s" else value
        return Timestamp(epoch_ms=ms, source_format=hint)
    if hint in ("iso8601", "provider_local"):
        return _parse_iso(text, hint)

    try:
        value = int(text)
    except ValueError:
        return _parse_iso(text, None)
    if abs(value) < EPOCH_MS_CUTOFF:
        return Timestamp(epoch_ms=value * 1000, source_format="epoch_s")
    return Timestamp(epoch_ms=value, source_format="epoch_ms")


# --------------------------------------------------------------------------
# Pseudonyms


@dataclass(frozen=True)
class Pseudonym:
    """Opaque study-scoped identifier; never a raw platform username."""

    value: str

    @classmethod
    def generate(cls) -> "Pseudonym":
        return cls(f"p{secrets.token_hex(4)}")


# --------------------------------------------------------------------------
# Manifest construction

MEDIA_IMAGE = "image"
MEDIA_VIDEO = "video"
MEDIA_STRUCTURED_TEXT = "structured_text"
MEDIA_OTHER = "other"

_IMAGE_MAGIC = (
    (b"\x89PNG\r\n\x1a\n", "png"),
    (b"\xff\xd8\xff", "jpeg"),
    (b"GIF87a", "gif"),
    (b"GIF89a", "gif"),
)
_VIDEO_MAGIC = (
    (b"\x1a\x45\xdf\xa3", "webm"),
)


def sniff_media_kind(data: bytes) -> tuple[str, str | None]:
    """Classify file content from magic bytes; returns (media_kind, format).

    Extension-agnostic on purpose: a PNG named photo.jpg is still an image.
    """
    if not data:
        return MEDIA_OTHER, None
    for magic, fmt in _IMAGE_MAGIC:
        if data.startswith(magic):
            return MEDIA_IMAGE, fmt
    if data[:4] == b"RIFF" and data[8:12] == b"WEBP":
        return MEDIA_IMAGE, "webp"
    for magic, fmt in _VIDEO_MAGIC:
        if data.startswith(magic):
            return MEDIA_VIDEO, fmt
    if data[4:8] == b"ftyp":
        return MEDIA_VIDEO, "mp4"
    if data[:4] == b"RIFF" and data[8:12] == b"AVI ":
        return MEDIA_VIDEO, "avi"
    head = data[:4096]
    if b"\x00" not in head:
        try:
            text = head.decode("utf-8")
        except UnicodeDecodeError:
            return MEDIA_OTHER, None
        stripped = text.lstrip()
        if stripped.startswith(("{", "[")):
            return MEDIA_STRUCTURED_TEXT, "json"
        return MEDIA_STRUCTURED_TEXT, "text"
    return MEDIA_OTHER, None


@dataclass(frozen=True)
class FileEntry:
    """One archive member: content-sniffed kind, size, and digest."""

    relative_path: str
    media_kind: str
    byte_size: int
    content_hash: str
    detected_format: str | None = None
    note: str | None = None


def build_manifest(path: str | Path) -> list[FileEntry]:
    """Build one FileEntry per archive member, nested directories included.

    Members that cannot be read degrade to media_kind `other` with a note
    instead of aborting, so one corrupt file cannot void a whole donation.
    Output is deterministically ordered by relative_path.
    """
    try:
        zf = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as exc:
        raise ArchiveError(f"cannot open archive {path}: {exc}") from exc

    entries = []
    with zf:
        for info in zf.infolist():
            if info.is_dir():
                entries.append(FileEntry(
                    relative_path=info.filename,
                    media_kind=MEDIA_OTHER,
                    byte_size=0,
                    content_hash=hashlib.sha256(b"").hexdigest(),
                    detected_format=None,
                ))
                continue
            try:
                data = zf.read(info.filename)
            except Exception as exc:  # corrupt member: flag, keep going
                entries.append(FileEntry(
                    relative_path=info.filename,
                    media_kind=MEDIA_OTHER,
                    byte_size=info.file_size,
                    content_hash=hashlib.sha256(b"").hexdigest(),
                    detected_format=None,
                    note=f"unreadable member: {exc}",
                ))
                continue
            kind, fmt = sniff_media_kind(data)
            entries.append(FileEntry(
                relative_path=info.filename,
                media_kind=kind,
                byte_size=len(data),
                content_hash=hashlib.sha256(data).hexdigest(),
                detected_format=fmt,
            ))
    entries.sort(key=lambda e: e.relative_path)
    return entries


def export_manifest(entries: list[FileEntry]) -> str:
    """Manifest wire format: `relative_path,media_kind,byte_size,hex_hash`
    per line, UTF-8, sorted by path."""
    lines = [
        f"{e.relative_path},{e.media_kind},{e.byte_size},{e.content_hash}"
        for e in sorted(entries, key=lambda e: e.relative_path)
    ]
    return "\n".join(lines) + ("\n" if lines else "")


# --------------------------------------------------------------------------
# Provider detection

# Signature file sets per fixture schema. A trailing slash means "any member
# under this directory". Detection requires the full set to be present.
_SIGNATURES = (
    (PROVIDER_INSTAGRAM, "v1", ("media.json", "media/")),
    (PROVIDER_GOOGLE_TAKEOUT, "v1", ("Location History.json",)),
)


def _signature_present(names: set[str], required: str) -> bool:
    if required.endswith("/"):
        return any(n == required or n.startswith(required) for n in names)
    return required in names


def detect_provider(path: str | Path) -> tuple[str, str]:
    """Detect the provider of an archive from its signature file set.

    Returns (provider, schema_version); ("unknown", "") when nothing
    matches. Never guesses: if more than one provider's signature set is
    fully present, raises AmbiguousProviderError.
    """
    try:
        with zipfile.ZipFile(path) as zf:
            names = set(zf.namelist())
    except (OSError, zipfile.BadZipFile) as exc:
        raise ArchiveError(f"cannot open archive {path}: {exc}") from exc

    matches = [
        (provider, version)
        for provider, version, required in _SIGNATURES
        if all(_signature_present(names, item) for item in required)
    ]
    providers = {m[0] for m in matches}
    if len(providers) > 1:
        raise AmbiguousProviderError(
            f"archive {path} matches multiple providers: {sorted(providers)}"
        )
    if matches:
        return matches[0]
    return PROVIDER_UNKNOWN, ""


# --------------------------------------------------------------------------
# Archives


@dataclass(frozen=True)
class DdpArchive:
    """A provider archive plus its exhaustive, content-sniffed manifest."""

    path: Path
    provider: str
    schema_version: str
    manifest: tuple[FileEntry, ...]

    def entry(self, relative_path: str) -> FileEntry | None:
        for e in self.manifest:
            if e.relative_path == relative_path:
                return e
        return None

    def read(self, relative_path: str) -> bytes:
        try:
            with zipfile.ZipFile(self.path) as zf:
                return zf.read(relative_path)
        except KeyError as exc:
            raise ArchiveError(f"no member {relative_path!r} in {self.path}") from exc
        except (OSError, zipfile.BadZipFile) as exc:
            raise ArchiveError(f"cannot read {relative_path!r}: {exc}") from exc


def open_archive(path: str | Path) -> DdpArchive:
    """Detect provider and build the manifest for a zip archive."""
    path = Path(path)
    provider, version = detect_provider(path)
    manifest = tuple(build_manifest(path))
    return DdpArchive(path=path, provider=provider,
                      schema_version=version, manifest=manifest)
