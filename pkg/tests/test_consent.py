"""Consent session state machine, donation packages, and local purge."""

from __future__ import annotations

import zipfile

import pytest

from donatekit.consent import (
    ConsentSession,
    consent_summary,
    finalize,
    load_package,
    preview,
    purge_local,
    record_decision,
    start_session,
    write_package,
)
from donatekit.core import Pseudonym
from donatekit.errors import ConsentStateError, TamperError, UnknownVariableError

from conftest import DAY_MS, HOUR_MS, record

OWNER = Pseudonym("p01")

VARIABLES = {
    "at_home": ("Whether you were at your home location", "home_proximity"),
    "affect_positive_share": ("Daily share of positive expressions", "face_affect"),
}


def store():
    records = [record("at_home", offset_ms=i * HOUR_MS, value=bool(i % 2))
               for i in range(6)]
    records += [record("affect_positive_share", offset_ms=d * DAY_MS, value=0.5)
                for d in range(3)]
    return records


def session():
    return start_session(store(), study_id="study-1", pseudonym=OWNER,
                         variables=VARIABLES)


def test_session_lists_registered_variables_pending():
    s = session()
    assert set(s.entries) == set(VARIABLES)
    assert s.entries["at_home"].count == 6
    assert s.entries["affect_positive_share"].count == 3
    assert s.pending == sorted(VARIABLES)
    assert not s.nothing_to_share


def test_empty_store_nothing_to_share():
    s = start_session([], study_id="study-1", pseudonym=OWNER,
                      variables=VARIABLES)
    assert s.nothing_to_share
    assert s.status == "nothing to share"
    assert s.entries == {}
    assert finalize(s) is None


def test_preview_rows_and_illustration():
    s = session()
    page = preview(s, "at_home")
    assert page.page_count == 1
    assert len(page.rows) == 6
    assert page.rows[0][1] in ("true", "false")
    assert page.illustration.input_excerpt
    assert s.previews_served["at_home"] == 1


def test_preview_pagination():
    records = [record("at_home", offset_ms=i * 60_000, value=True)
               for i in range(120)]
    s = start_session(records, study_id="study-1", pseudonym=OWNER,
                      variables=VARIABLES)
    first = preview(s, "at_home", page=0)
    last = preview(s, "at_home", page=2)
    assert first.page_count == 3
    assert len(first.rows) == 50
    assert len(last.rows) == 20
    with pytest.raises(UnknownVariableError):
        preview(s, "at_home", page=3)


def test_preview_unknown_variable():
    with pytest.raises(UnknownVariableError):
        preview(session(), "no_such_variable")


def test_decisions_overwrite_until_finalize():
    s = session()
    record_decision(s, "at_home", "rejected")
    record_decision(s, "at_home", "approved")
    assert s.entries["at_home"].decision == "approved"


def test_finalize_requires_all_decisions():
    s = session()
    record_decision(s, "at_home", "approved")
    with pytest.raises(ConsentStateError) as excinfo:
        finalize(s)
    assert "affect_positive_share" in str(excinfo.value)


def test_decision_after_finalize_rejected():
    s = session()
    for variable in VARIABLES:
        record_decision(s, variable, "approved")
    finalize(s)
    with pytest.raises(ConsentStateError):
        record_decision(s, "at_home", "rejected")


def test_finalize_filters_rejected_variables():
    s = session()
    record_decision(s, "at_home", "approved")
    record_decision(s, "affect_positive_share", "rejected")
    package = finalize(s)
    assert set(package.manifest) == {"at_home"}
    assert all(r.variable == "at_home" for r in package.records)
    assert len(package.records) == 6


def test_finalize_all_approved_keeps_everything():
    s = session()
    for variable in VARIABLES:
        record_decision(s, variable, "approved")
    package = finalize(s)
    assert len(package.records) == len(store())


def test_finalize_all_rejected_no_package():
    s = session()
    for variable in VARIABLES:
        record_decision(s, variable, "rejected")
    assert finalize(s) is None
    assert s.status == "nothing consented"
    assert s.state == "finalized"


def test_package_bytes_deterministic(tmp_path):
    def build(path):
        s = session()
        record_decision(s, "at_home", "approved")
        record_decision(s, "affect_positive_share", "rejected")
        return write_package(finalize(s), path)

    p1 = build(tmp_path / "one.zip")
    p2 = build(tmp_path / "two.zip")
    assert p1.read_bytes() == p2.read_bytes()


def test_package_round_trip_and_contents(tmp_path):
    s = session()
    record_decision(s, "at_home", "approved")
    record_decision(s, "affect_positive_share", "rejected")
    package = finalize(s)
    path = write_package(package, tmp_path / "donation.zip")

    loaded = load_package(path)
    assert loaded.checksum == package.checksum
    assert loaded.manifest == {"at_home": 6}
    assert loaded.pseudonym == OWNER
    assert loaded.study_id == "study-1"

    # consent gate: no trace of the rejected variable in the bytes
    assert b"affect_positive_share" not in path.read_bytes()


def test_tampered_package_detected(tmp_path):
    s = session()
    for variable in VARIABLES:
        record_decision(s, variable, "approved")
    path = write_package(finalize(s), tmp_path / "donation.zip")

    data = bytearray(path.read_bytes())
    at = data.find(b"at_home,true")
    assert at > 0
    data[at] ^= 0x01  # single flipped byte
    path.write_bytes(bytes(data))
    with pytest.raises(TamperError):
        load_package(path)


def test_manifest_tamper_detected(tmp_path):
    # Rewriting members without refreshing checksum.txt must be caught.
    s = session()
    for variable in VARIABLES:
        record_decision(s, variable, "approved")
    package = finalize(s)
    path = write_package(package, tmp_path / "donation.zip")

    with zipfile.ZipFile(path) as zf:
        members = {n: zf.read(n) for n in zf.namelist()}
    members["manifest.txt"] = members["manifest.txt"].replace(b"at_home", b"at_work")
    with zipfile.ZipFile(path, "w") as zf:
        for name, data in members.items():
            zf.writestr(name, data)
    with pytest.raises(TamperError):
        load_package(path)


def test_purge_idempotent(tmp_path):
    derived = tmp_path / "derived.csv"
    derived.write_text("data", encoding="utf-8")
    extracted = tmp_path / "extracted"
    extracted.mkdir()
    (extracted / "img.jpg").write_bytes(b"x")
    archive = tmp_path / "original.zip"
    archive.write_bytes(b"zipbytes")

    s = start_session(store(), study_id="study-1", pseudonym=OWNER,
                      variables=VARIABLES,
                      local_artifacts=[derived, extracted],
                      archives=[archive])
    for variable in VARIABLES:
        record_decision(s, variable, "approved")
    finalize(s)

    report = purge_local(s)
    assert not derived.exists()
    assert not extracted.exists()
    assert not archive.exists()
    assert set(report.deleted) == {str(derived), str(extracted), str(archive)}
    assert s.state == "purged"

    again = purge_local(s)
    assert again.deleted == ()
    assert again.clean


def test_purge_keep_archives(tmp_path):
    derived = tmp_path / "derived.csv"
    derived.write_text("data", encoding="utf-8")
    archive = tmp_path / "original.zip"
    archive.write_bytes(b"zipbytes")

    s = start_session(store(), study_id="study-1", pseudonym=OWNER,
                      variables=VARIABLES, local_artifacts=[derived],
                      archives=[archive])
    for variable in VARIABLES:
        record_decision(s, variable, "rejected")
    finalize(s)

    report = purge_local(s, keep_archives=True)
    assert archive.exists()
    assert not derived.exists()
    assert str(archive) in report.kept


def test_consent_summary_evidence():
    s = session()
    preview(s, "at_home")
    preview(s, "affect_positive_share")
    record_decision(s, "at_home", "approved")
    record_decision(s, "affect_positive_share", "rejected")
    finalize(s)
    summary = consent_summary(s)
    assert summary["finalized"] is True
    assert summary["decisions"]["at_home"] == "approved"
    assert summary["previews_served"] == {"at_home": 1, "affect_positive_share": 1}
