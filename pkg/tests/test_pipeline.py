"""End-to-end pipeline: fixtures in, derived store out, packages ingested."""

from __future__ import annotations

import pytest

from donatekit.consent import (
    finalize,
    record_decision,
    start_session,
    write_package,
)
from donatekit.core import Pseudonym
from donatekit.errors import SchemaError, TamperError
from donatekit.fixtures import generate_fixture
from donatekit.pipeline import ingest, run_pipeline

from conftest import make_zip

# Ping cadence at the study's hourly link bin, so at_home never collides.
IG_SPEC = {"provider": "instagram", "name": "ig", "n_jpeg": 6, "n_png": 2,
           "n_unindexed": 1, "step_minutes": 240}
G_SPEC = {"provider": "google_takeout", "name": "g", "n_pings": 300,
          "step_minutes": 60}


@pytest.fixture
def archives(tmp_path):
    ig, _ = generate_fixture(IG_SPEC, 5, tmp_path)
    g, _ = generate_fixture(G_SPEC, 6, tmp_path)
    return [ig, g]


def test_pipeline_produces_both_variables(archives, study_config):
    result = run_pipeline(archives, study_config, Pseudonym("p01"))
    variables = {r.variable for r in result.store}
    assert variables == {"at_home", "affect_positive_share"}
    at_home = [r for r in result.store if r.variable == "at_home"]
    assert len(at_home) == 300  # one per kept ping
    assert len(result.parse_reports) == 2


def test_pipeline_is_deterministic(archives, study_config):
    r1 = run_pipeline(archives, study_config, Pseudonym("p01"))
    r2 = run_pipeline(archives, study_config, Pseudonym("p01"))
    assert r1.store == r2.store


def test_pipeline_rejects_unknown_provider(tmp_path, study_config):
    mystery = make_zip(tmp_path / "mystery.zip", {"stuff.bin": b"\x00\x01"})
    with pytest.raises(SchemaError):
        run_pipeline([mystery], study_config, Pseudonym("p01"))


def test_pipeline_store_csv_round_trips(archives, study_config, tmp_path):
    result = run_pipeline(archives, study_config, Pseudonym("p01"))
    path = result.write_store(tmp_path / "derived.csv")
    from donatekit.transform import records_from_csv

    assert records_from_csv(path.read_text()) == result.store


def make_donation(tmp_path, study_config, pseudonym, archives_seed):
    ig, _ = generate_fixture(dict(IG_SPEC, name=f"ig_{pseudonym}"),
                             archives_seed, tmp_path)
    g, _ = generate_fixture(dict(G_SPEC, name=f"g_{pseudonym}"),
                            archives_seed + 1, tmp_path)
    result = run_pipeline([ig, g], study_config, Pseudonym(pseudonym))
    session = start_session(result.store, study_id=study_config.study_id,
                            pseudonym=Pseudonym(pseudonym),
                            variables=study_config.consent_variables())
    for variable in session.entries:
        record_decision(session, variable, "approved")
    package = finalize(session)
    return write_package(package, tmp_path / f"donation_{pseudonym}.zip")


def test_ingest_links_multiple_respondents(tmp_path, study_config):
    paths = [make_donation(tmp_path, study_config, f"p{i:02d}", seed)
             for i, seed in ((1, 10), (2, 20), (3, 30))]
    result = ingest(paths, study_config)
    assert result.pseudonyms == ("p01", "p02", "p03")
    owners = {row.owner for row in result.dataset.rows}
    assert owners == {"p01", "p02", "p03"}
    assert result.validation.duplicate_keys == 0


def test_ingest_rejects_tampered_package(tmp_path, study_config):
    path = make_donation(tmp_path, study_config, "p01", 40)
    data = bytearray(path.read_bytes())
    at = data.find(b"at_home,true")
    if at < 0:
        at = data.find(b"at_home,false")
    data[at + 1] ^= 0x01
    path.write_bytes(bytes(data))
    with pytest.raises(TamperError):
        ingest([path], study_config)


def test_ingest_empty_is_empty_dataset(study_config):
    result = ingest([], study_config)
    assert result.dataset.rows == []
    assert result.pseudonyms == ()
