"""Linkage on (pseudonym, time bin) and the validation guards."""

from __future__ import annotations

import pytest

from donatekit.core import Timestamp
from donatekit.errors import LinkageError
from donatekit.integrate import LinkSpec, link, validate

from conftest import DAY_MS, HOUR_MS, T0, record, ts

SPEC = LinkSpec(
    bin_ms=HOUR_MS,
    tolerance_ms=60_000,
    window_start=Timestamp(epoch_ms=T0 - DAY_MS),
    window_end=Timestamp(epoch_ms=T0 + 365 * DAY_MS),
)


def test_same_bin_records_merge():
    emotion = record("affect_positive_share", offset_ms=10 * 60_000, value=0.5)
    location = record("at_home", offset_ms=20 * 60_000, value=True)
    ds, report = link({"ig": [emotion], "loc": [location]}, SPEC)
    assert len(ds.rows) == 1
    row = ds.rows[0]
    assert set(row.cells) == {"affect_positive_share", "at_home"}
    assert report.match_rates[("ig", "loc")] == 1.0


def test_tolerance_pulls_across_bin_edge():
    # Emotion just before the hour, location 30 s after it: within the 60 s
    # tolerance the pair merges into the earlier bin.
    emotion = record("affect_positive_share", offset_ms=HOUR_MS - 10_000, value=0.5)
    location = record("at_home", offset_ms=HOUR_MS + 20_000, value=True)
    ds, _ = link({"ig": [emotion], "loc": [location]}, SPEC)
    assert len(ds.rows) == 1
    assert ds.rows[0].bin_start_ms == T0  # the earlier bin


def test_small_tolerance_keeps_rows_apart():
    tight = LinkSpec(bin_ms=HOUR_MS, tolerance_ms=10_000,
                     window_start=SPEC.window_start, window_end=SPEC.window_end)
    emotion = record("affect_positive_share", offset_ms=HOUR_MS - 10_000, value=0.5)
    location = record("at_home", offset_ms=HOUR_MS + 20_000, value=True)
    ds, report = link({"ig": [emotion], "loc": [location]}, tight)
    assert len(ds.rows) == 2
    assert all(len(r.cells) == 1 for r in ds.rows)
    assert report.match_rates[("ig", "loc")] == 0.0


def test_same_bin_partner_beats_edge_pull():
    # The early-offset record has a same-bin partner; it must stay put.
    emotion = record("affect_positive_share", offset_ms=HOUR_MS + 30_000, value=0.5)
    partner = record("at_home", offset_ms=HOUR_MS + 40_000, value=True)
    earlier = record("survey_mood", offset_ms=HOUR_MS - 20_000, value=0.9)
    ds, _ = link({"ig": [emotion], "loc": [partner], "survey": [earlier]}, SPEC)
    bins = sorted(r.bin_start_ms for r in ds.rows)
    assert bins == [T0, T0 + HOUR_MS]
    later_row = ds.row(emotion.owner.value, T0 + HOUR_MS)
    assert set(later_row.cells) == {"affect_positive_share", "at_home"}


def test_three_sources_pairwise_complete():
    sources = {
        name: [record(var, offset_ms=i * HOUR_MS + shift, value=float(i))
               for i in range(4)]
        for name, var, shift in (
            ("emotions", "affect_positive_share", 0),
            ("locations", "at_home", 60_000),
            ("survey", "survey_mood", 120_000),
        )
    }
    ds, report = link(sources, SPEC)
    assert len(ds.rows) == 4
    assert all(rate == 1.0 for rate in report.match_rates.values())
    assert len(report.match_rates) == 3  # all unordered pairs


def test_linkage_symmetric_in_source_order():
    a = [record("affect_positive_share", offset_ms=0, value=0.5)]
    b = [record("at_home", offset_ms=60_000, value=True)]
    ds1, _ = link({"a": a, "b": b}, SPEC)
    ds2, _ = link({"b": b, "a": a}, SPEC)
    assert ds1.to_csv() == ds2.to_csv()


def test_linking_with_empty_source_is_identity():
    a = [record("affect_positive_share", offset_ms=i * HOUR_MS, value=0.5)
         for i in range(3)]
    ds1, _ = link({"a": a}, SPEC)
    ds2, _ = link({"a": a, "empty": []}, SPEC)
    assert ds1.to_csv() == ds2.to_csv()


def test_unmatched_records_kept_as_partial_rows():
    emotion = record("affect_positive_share", offset_ms=0, value=0.5)
    far_location = record("at_home", offset_ms=6 * HOUR_MS, value=True)
    ds, _ = link({"ig": [emotion], "loc": [far_location]}, SPEC)
    assert len(ds.rows) == 2
    assert all(len(row.cells) == 1 for row in ds.rows)


def test_colliding_values_within_source_rejected():
    twice = [
        record("at_home", offset_ms=1000, value=True),
        record("at_home", offset_ms=2000, value=False),
    ]
    with pytest.raises(LinkageError):
        link({"loc": twice}, SPEC)


def test_identical_duplicates_collapse():
    twice = [
        record("at_home", offset_ms=1000, value=True),
        record("at_home", offset_ms=2000, value=True),
    ]
    ds, report = link({"loc": twice}, SPEC)
    assert len(ds.rows) == 1
    assert report.duplicate_collapsed == 1


def test_cross_source_conflict_resolved_deterministically():
    a = [record("survey_mood", offset_ms=0, value=0.9)]
    b = [record("survey_mood", offset_ms=1000, value=0.1)]
    ds1, report = link({"wave1": a, "wave2": b}, SPEC)
    assert len(report.cross_source_conflicts) == 1
    assert ds1.rows[0].cells["survey_mood"].value == 0.9  # smallest source name
    ds2, _ = link({"wave2": b, "wave1": a}, SPEC)
    assert ds1.to_csv() == ds2.to_csv()


def test_provenance_traceable_to_input():
    rec = record("at_home", offset_ms=0, value=True)
    ds, _ = link({"loc": [rec]}, SPEC)
    cell = ds.rows[0].cells["at_home"]
    assert cell.record is rec
    assert cell.source == "loc"
    assert cell.at_ms == rec.at.epoch_ms


def test_csv_export_shape():
    ds, _ = link({
        "ig": [record("affect_positive_share", offset_ms=0, value=0.5)],
        "loc": [record("at_home", offset_ms=60_000, value=True)],
    }, SPEC)
    lines = ds.to_csv().splitlines()
    assert lines[0] == "pseudonym,bin_start_iso,affect_positive_share,at_home"
    assert lines[1].startswith("p01,2020-03-01T00:00:00Z,0.5,true")


# --------------------------------------------------------------------------
# validation


def test_validate_clean_dataset_passes():
    ds, _ = link({"ig": [record("affect_positive_share", offset_ms=0, value=0.5)]},
                 SPEC)
    report = validate(ds, SPEC)
    assert report.passed
    assert report.out_of_window == 0
    assert report.outliers == ()
    assert report.duplicate_keys == 0


def test_validate_out_of_window_flagged():
    eleven_years = 11 * 365 * DAY_MS
    ds, _ = link({"ig": [
        record("affect_positive_share", offset_ms=0, value=0.5),
        record("affect_positive_share", offset_ms=eleven_years, value=0.5),
    ]}, SPEC)
    report = validate(ds, SPEC)
    assert report.out_of_window == 1
    assert not report.passed
    assert "2031" in report.out_of_window_cells[0]


def test_validate_outlier_flagged_by_mad_rule():
    records = [record("survey_mood", offset_ms=i * HOUR_MS, value=v)
               for i, v in enumerate([1.0, 1.1, 0.9, 1.05, 0.95, 100.0])]
    ds, _ = link({"survey": records}, SPEC)
    report = validate(ds, SPEC)
    [finding] = report.outliers
    assert finding.value == 100.0
    # oracle: direct MAD computation on the fixture values
    values = sorted([1.0, 1.1, 0.9, 1.05, 0.95, 100.0])
    med = (values[2] + values[3]) / 2
    deviations = sorted(abs(v - med) for v in values)
    mad = (deviations[2] + deviations[3]) / 2
    assert finding.score == pytest.approx(abs(100.0 - med) / mad)


def test_validate_identical_values_no_outliers():
    records = [record("survey_mood", offset_ms=i * HOUR_MS, value=1.0)
               for i in range(6)]
    ds, _ = link({"survey": records}, SPEC)
    assert validate(ds, SPEC).outliers == ()  # MAD 0 means skip, not flag


def test_validate_booleans_not_scanned_for_outliers():
    records = [record("at_home", offset_ms=i * HOUR_MS, value=(i == 0))
               for i in range(10)]
    ds, _ = link({"loc": records}, SPEC)
    assert validate(ds, SPEC).outliers == ()


def test_validate_does_not_mutate(study_config):
    ds, _ = link({"ig": [record("affect_positive_share", offset_ms=0, value=0.5)]},
                 SPEC)
    before = ds.to_csv()
    validate(ds, SPEC)
    assert ds.to_csv() == before
