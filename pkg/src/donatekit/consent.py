"""Local consent session: review, per-variable decisions, packaging, purge.

The respondent reviews what was derived from their data, approves or
rejects each variable, and only then does a donation package exist.  The
package carries records of the approved variables and nothing else; its
checksum covers the canonical serialization so any later tampering is
detected at ingest.

The session is a one-way state machine (open, then finalized, then
purged). Decisions are immutable after finalize, and purge permanently
deletes the local artifacts the pipeline created, including the original
archives unless the respondent chooses to keep them.
"""

from __future__ import annotations

import hashlib
import secrets
import shutil
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

from .core import Pseudonym, Timestamp
from .errors import ConsentStateError, TamperError, UnknownVariableError
from .transform import (
    DerivedRecord,
    Illustration,
    ILLUSTRATIONS,
    records_from_csv,
    records_to_csv,
)

STATE_OPEN = "open"
STATE_FINALIZED = "finalized"
STATE_PURGED = "purged"

DECISION_PENDING = "pending"
DECISION_APPROVED = "approved"
DECISION_REJECTED = "rejected"

PACKAGE_RECORDS = "records.csv"
PACKAGE_MANIFEST = "manifest.txt"
PACKAGE_CHECKSUM = "checksum.txt"

# Fixed member mtime so identical content yields identical package bytes.
_PACKAGE_DATE = (2020, 1, 1, 0, 0, 0)


@dataclass
class VariableEntry:
    variable: str
    count: int
    decision: str = DECISION_PENDING
    description: str = ""
    transformer_id: str = ""


@dataclass
class ConsentSession:
    """Per-variable review state for one respondent's derived records."""

    session_id: str
    study_id: str
    pseudonym: Pseudonym
    records: tuple[DerivedRecord, ...]
    entries: dict[str, VariableEntry]
    state: str = STATE_OPEN
    status: str = ""
    local_artifacts: list[Path] = field(default_factory=list)
    archives: list[Path] = field(default_factory=list)
    previews_served: dict[str, int] = field(default_factory=dict)
    package: "DonationPackage | None" = None

    @property
    def nothing_to_share(self) -> bool:
        return not self.records

    @property
    def pending(self) -> list[str]:
        return [v for v, e in sorted(self.entries.items())
                if e.decision == DECISION_PENDING]


def start_session(
    records,
    study_id: str,
    pseudonym: Pseudonym,
    variables: dict[str, tuple[str, str]],
    local_artifacts: list[Path] | None = None,
    archives: list[Path] | None = None,
) -> ConsentSession:
    """Open a review session over a derived-record store.

    `variables` maps each registered variable to (description,
    transformer_id); every registered variable gets an entry with its
    record count, zero included, and starts pending.  An empty store opens
    in an explicit nothing-to-share state instead.
    """
    records = tuple(records)
    counts: dict[str, int] = {}
    for r in records:
        counts[r.variable] = counts.get(r.variable, 0) + 1

    entries: dict[str, VariableEntry] = {}
    if records:
        for variable, (description, transformer_id) in sorted(variables.items()):
            entries[variable] = VariableEntry(
                variable=variable,
                count=counts.get(variable, 0),
                description=description,
                transformer_id=transformer_id,
            )
    session = ConsentSession(
        session_id=f"s{secrets.token_hex(6)}",
        study_id=study_id,
        pseudonym=pseudonym,
        records=records,
        entries=entries,
        status="nothing to share" if not records else "",
        local_artifacts=list(local_artifacts or []),
        archives=list(archives or []),
    )
    return session


@dataclass(frozen=True)
class PreviewPage:
    variable: str
    page: int
    page_count: int
    rows: tuple[tuple[str, str, float], ...]  # (timestamp_iso, value, confidence)
    illustration: Illustration


def preview(session: ConsentSession, variable: str, page: int = 0,
            page_size: int = 50) -> PreviewPage:
    """Derived rows for one variable plus the transformer's canned
    input-to-output illustration.  Never returns raw archive bytes."""
    if variable not in session.entries:
        raise UnknownVariableError(f"no variable {variable!r} in this session")
    entry = session.entries[variable]
    rows = [
        (r.at.to_iso(), r.value_str(), r.provenance.confidence)
        for r in sorted(
            (r for r in session.records if r.variable == variable),
            key=lambda r: r.sort_key(),
        )
    ]
    page_count = max(1, -(-len(rows) // page_size))
    if not 0 <= page < page_count:
        raise UnknownVariableError(f"page {page} of {page_count} does not exist")
    start = page * page_size
    session.previews_served[variable] = session.previews_served.get(variable, 0) + 1
    illustration = ILLUSTRATIONS.get(
        entry.transformer_id,
        Illustration(input_excerpt="raw records from your archive",
                     output_excerpt=f"values of {variable}"),
    )
    return PreviewPage(
        variable=variable,
        page=page,
        page_count=page_count,
        rows=tuple(rows[start:start + page_size]),
        illustration=illustration,
    )


def record_decision(session: ConsentSession, variable: str,
                    decision: str) -> ConsentSession:
    """Store an approve/reject decision; overwriting is allowed until
    the session is finalized, immutable after."""
    if session.state != STATE_OPEN:
        raise ConsentStateError(
            f"session is {session.state}; decisions are immutable")
    if decision not in (DECISION_APPROVED, DECISION_REJECTED):
        raise ValueError(f"decision must be approved or rejected, got {decision!r}")
    if variable not in session.entries:
        raise UnknownVariableError(f"no variable {variable!r} in this session")
    session.entries[variable].decision = decision
    return session


@dataclass(frozen=True)
class DonationPackage:
    """The consented payload: approved variables' records, nothing else."""

    study_id: str
    pseudonym: Pseudonym
    records: tuple[DerivedRecord, ...]
    manifest: dict[str, int]
    created_at: Timestamp
    checksum: str


def _package_order(record: DerivedRecord):
    return (record.variable, record.at.epoch_ms,
            record.provenance.transformer_id)


def _manifest_text(study_id: str, pseudonym: Pseudonym,
                   manifest: dict[str, int]) -> str:
    lines = [f"study_id,{study_id}", f"pseudonym,{pseudonym.value}"]
    for variable, count in sorted(manifest.items()):
        lines.append(f"variable,{variable},{count}")
    return "\n".join(lines) + "\n"


def _checksum(records_csv: bytes, manifest_txt: bytes) -> str:
    return hashlib.sha256(records_csv + manifest_txt).hexdigest()


def finalize(session: ConsentSession, now: Timestamp | None = None
             ) -> DonationPackage | None:
    """Close the session and build the package of approved records.

    Every decision must be in; pending variables are listed in the error.
    If nothing was approved (or there was nothing to share) no package is
    produced and the session says so explicitly.
    """
    if session.state != STATE_OPEN:
        raise ConsentStateError(f"session is already {session.state}")
    pending = session.pending
    if pending:
        raise ConsentStateError(
            f"cannot finalize with pending decisions: {', '.join(pending)}")

    session.state = STATE_FINALIZED
    if session.nothing_to_share:
        session.status = "nothing to share"
        return None
    approved = {v for v, e in session.entries.items()
                if e.decision == DECISION_APPROVED}
    records = tuple(sorted(
        (r for r in session.records if r.variable in approved),
        key=_package_order,
    ))
    if not records:
        session.status = "nothing consented"
        return None

    manifest = {v: sum(1 for r in records if r.variable == v)
                for v in sorted(approved)}
    records_csv = records_to_csv(records, sort_key=_package_order).encode()
    manifest_txt = _manifest_text(session.study_id, session.pseudonym,
                                  manifest).encode()
    package = DonationPackage(
        study_id=session.study_id,
        pseudonym=session.pseudonym,
        records=records,
        manifest=manifest,
        created_at=now or Timestamp(epoch_ms=0),
        checksum=_checksum(records_csv, manifest_txt),
    )
    session.package = package
    session.status = "finalized"
    return package


def write_package(package: DonationPackage, path: str | Path) -> Path:
    """Serialize to the package file format: a zip of records.csv,
    manifest.txt, and checksum.txt.  Byte-identical for identical
    approved record sets."""
    path = Path(path)
    records_csv = records_to_csv(package.records, sort_key=_package_order).encode()
    manifest_txt = _manifest_text(package.study_id, package.pseudonym,
                                  package.manifest).encode()
    checksum_txt = (_checksum(records_csv, manifest_txt) + "\n").encode()
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, data in ((PACKAGE_RECORDS, records_csv),
                           (PACKAGE_MANIFEST, manifest_txt),
                           (PACKAGE_CHECKSUM, checksum_txt)):
            info = zipfile.ZipInfo(name, date_time=_PACKAGE_DATE)
            zf.writestr(info, data)
    return path


def load_package(path: str | Path) -> DonationPackage:
    """Read and verify a package file; raises TamperError on any mismatch."""
    path = Path(path)
    try:
        with zipfile.ZipFile(path) as zf:
            records_csv = zf.read(PACKAGE_RECORDS)
            manifest_txt = zf.read(PACKAGE_MANIFEST)
            checksum_txt = zf.read(PACKAGE_CHECKSUM)
    except KeyError as exc:
        raise TamperError(f"{path}: package member missing: {exc}") from exc
    except (zipfile.BadZipFile, OSError) as exc:
        raise TamperError(f"{path}: unreadable package: {exc}") from exc

    stated = checksum_txt.decode().strip()
    actual = _checksum(records_csv, manifest_txt)
    if stated != actual:
        raise TamperError(
            f"{path}: checksum mismatch (stated {stated[:12]}..., "
            f"actual {actual[:12]}...)")

    study_id = pseudonym = None
    manifest: dict[str, int] = {}
    for line in manifest_txt.decode().splitlines():
        if not line:
            continue
        kind, rest = line.split(",", 1)
        if kind == "study_id":
            study_id = rest
        elif kind == "pseudonym":
            pseudonym = rest
        elif kind == "variable":
            variable, count = rest.rsplit(",", 1)
            manifest[variable] = int(count)
    if study_id is None or pseudonym is None:
        raise TamperError(f"{path}: malformed package manifest")

    records = tuple(records_from_csv(records_csv.decode()))
    counts: dict[str, int] = {}
    for r in records:
        counts[r.variable] = counts.get(r.variable, 0) + 1
    if counts != manifest:
        raise TamperError(f"{path}: records do not match the package manifest")
    return DonationPackage(
        study_id=study_id,
        pseudonym=Pseudonym(pseudonym),
        records=records,
        manifest=manifest,
        created_at=Timestamp(epoch_ms=0),
        checksum=actual,
    )


def consent_summary(session: ConsentSession) -> dict:
    """Evidence record for the quality checklist: what was previewed,
    what was decided, whether the session was finalized."""
    return {
        "session_id": session.session_id,
        "finalized": session.state in (STATE_FINALIZED, STATE_PURGED),
        "status": session.status,
        "variables": sorted(session.entries),
        "decisions": {v: e.decision for v, e in sorted(session.entries.items())},
        "previews_served": dict(session.previews_served),
    }


@dataclass(frozen=True)
class PurgeReport:
    deleted: tuple[str, ...]
    kept: tuple[str, ...]
    errors: tuple[str, ...]

    @property
    def clean(self) -> bool:
        return not self.errors


def purge_local(session: ConsentSession, keep_archives: bool = False) -> PurgeReport:
    """Permanently delete the session's local artifacts.

    Derived stores and extracted files always go; the original archives go
    too unless the respondent asked to keep them.  Idempotent: a second
    run finds nothing to delete.  Failures are reported per path, never
    silent.
    """
    targets = list(session.local_artifacts)
    kept: list[str] = []
    if keep_archives:
        kept = [str(p) for p in session.archives]
    else:
        targets += list(session.archives)

    deleted: list[str] = []
    errors: list[str] = []
    for target in targets:
        target = Path(target)
        if not target.exists():
            continue
        try:
            if target.is_dir():
                shutil.rmtree(target)
            else:
                target.unlink()
            deleted.append(str(target))
        except OSError as exc:
            errors.append(f"{target}: {exc}")
    session.state = STATE_PURGED
    return PurgeReport(deleted=tuple(sorted(deleted)), kept=tuple(sorted(kept)),
                       errors=tuple(sorted(errors)))
