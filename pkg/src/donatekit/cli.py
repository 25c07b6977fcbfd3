"""Command-line entry points for respondents and researchers.

Respondent side: `fixture gen` (synthetic archives), `parse`, `transform`,
`consent serve`.  Researcher side: `package verify`, `ingest`, `link`,
`correct-counts`, `weights`, `simulate-funnel`, `checklist`.

Exit codes: 0 success, 1 stage failure, 2 configuration error.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click

from . import consent as consent_mod
from .checklist import StudyEvidence, report_checklist
from .consent_service import ConsentService, serve
from .core import Pseudonym, export_manifest, open_archive
from .errorframe import (
    ConfusionMatrix,
    CountVector,
    correct_counts,
    decompose_errors,
    FunnelConfig,
    poststrat_weights,
    replicate,
    simulate_funnel,
)
from .errorframe.funnel import DELTAS
from .errorframe.weighting import WeightSet
from .errors import ConfigError, DonateKitError
from .fixtures import generate_fixture
from .integrate import LinkReport, link as link_records, validate
from .parsers import parse_google_location, parse_instagram
from .pipeline import ingest as ingest_packages, run_pipeline
from .study import load_study_config
from .transform import (
    DensenessReport,
    OwnerDenseness,
    denseness_check,
    records_from_csv,
)

EXIT_STAGE_FAILURE = 1
EXIT_CONFIG_ERROR = 2


def _cli_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(EXIT_CONFIG_ERROR)
        except DonateKitError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_STAGE_FAILURE)

    return wrapper


@click.group()
def main():
    """Local-first data donation toolkit."""


# --------------------------------------------------------------------------
# fixtures


@main.group()
def fixture():
    """Synthetic fixture archives with ground-truth sidecars."""


@fixture.command("gen")
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True))
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", "out_dir", default="fixtures", show_default=True)
@_cli_errors
def fixture_gen(spec_path: str, seed: int, out_dir: str):
    """Generate archives from a fixture spec file (JSON)."""
    raw = json.loads(Path(spec_path).read_text(encoding="utf-8"))
    specs = raw.get("fixtures", raw) if isinstance(raw, dict) else raw
    if not isinstance(specs, list):
        raise ConfigError(f"{spec_path}: expected a list of fixture specs")
    for i, spec in enumerate(specs):
        zip_path, sidecar = generate_fixture(spec, spec.get("seed", seed + i),
                                             out_dir)
        click.echo(f"wrote {zip_path} (truth: {sidecar})")


# --------------------------------------------------------------------------
# respondent pipeline


@main.command()
@click.argument("archives", nargs=-1, required=True,
                type=click.Path(exists=True))
@click.option("--pseudonym", default=None, help="Study-scoped identifier.")
@click.option("--manifest-out", default=None, type=click.Path(),
              help="Write the manifest export here.")
@_cli_errors
def parse(archives, pseudonym, manifest_out):
    """Detect provider, build the manifest, and parse each archive."""
    owner = Pseudonym(pseudonym) if pseudonym else Pseudonym.generate()
    for raw_path in archives:
        archive = open_archive(raw_path)
        click.echo(f"{archive.path}: provider={archive.provider} "
                   f"schema={archive.schema_version or 'n/a'} "
                   f"members={len(archive.manifest)}")
        if manifest_out:
            Path(manifest_out).write_text(export_manifest(list(archive.manifest)),
                                          encoding="utf-8")
            click.echo(f"  manifest -> {manifest_out}")
        if archive.provider == "instagram":
            records, report = parse_instagram(archive, owner)
        elif archive.provider == "google_takeout":
            records, report = parse_google_location(archive, owner)
        else:
            click.echo("  no parser for this provider", err=True)
            sys.exit(EXIT_STAGE_FAILURE)
        click.echo(f"  emitted={report.emitted} flagged={report.flagged} "
                   f"dropped={report.dropped}")
        for warning in report.warnings:
            click.echo(f"  warning: {warning}")


@main.command()
@click.argument("archives", nargs=-1, required=True,
                type=click.Path(exists=True))
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True))
@click.option("--pseudonym", default=None)
@click.option("--out", "out_dir", default="pipeline_out", show_default=True)
@_cli_errors
def transform(archives, config_path, pseudonym, out_dir):
    """Run the local pipeline: detect, manifest, parse, transform."""
    config = load_study_config(config_path)
    owner = Pseudonym(pseudonym) if pseudonym else Pseudonym.generate()
    result = run_pipeline(archives, config, owner)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    store_path = result.write_store(out / "derived.csv")
    click.echo(f"derived store: {store_path} ({len(result.store)} records)")

    denseness = denseness_check(result.store, period_ms=config.link.bin_ms)
    (out / "denseness_report.json").write_text(
        json.dumps(_denseness_to_dict(denseness), indent=2), encoding="utf-8")

    report = {
        "pseudonym": owner.value,
        "processed": result.transform_report.processed,
        "failed": result.transform_report.failed,
        "flagged": result.transform_report.flagged,
        "notes": result.transform_report.notes,
        "parse": [
            {"archive": r.archive, "emitted": r.emitted,
             "flagged": r.flagged, "dropped": r.dropped,
             "warnings": r.warnings}
            for r in result.parse_reports
        ],
    }
    (out / "transform_report.json").write_text(json.dumps(report, indent=2),
                                               encoding="utf-8")
    click.echo(f"reports in {out}")
    if not denseness.passed:
        click.echo("denseness check FAILED (see denseness_report.json)")


# --------------------------------------------------------------------------
# consent service


@main.group()
def consent():
    """Local consent review."""


@consent.command("serve")
@click.option("--store", "store_path", required=True,
              type=click.Path(exists=True), help="derived.csv from transform.")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True))
@click.option("--port", default=0, show_default="random free port", type=int)
@click.option("--workdir", default="consent_out", show_default=True,
              help="Where the package and summary are written.")
@click.option("--ui", "ui_dir", default=None, type=click.Path(exists=True),
              help="Built frontend to serve at /.")
@click.option("--archive", "archive_paths", multiple=True,
              type=click.Path(), help="Original archives, for purge.")
@_cli_errors
def consent_serve(store_path, config_path, port, workdir, ui_dir, archive_paths):
    """Serve the consent session on loopback until interrupted."""
    config = load_study_config(config_path)
    records = records_from_csv(Path(store_path).read_text(encoding="utf-8"))
    owners = {r.owner.value for r in records}
    if len(owners) > 1:
        raise ConfigError(f"store has records for {len(owners)} pseudonyms; "
                          "one consent session serves one respondent")
    owner = Pseudonym(owners.pop()) if owners else Pseudonym.generate()
    session = consent_mod.start_session(
        records,
        study_id=config.study_id,
        pseudonym=owner,
        variables=config.consent_variables(),
        local_artifacts=[Path(store_path)],
        archives=[Path(p) for p in archive_paths],
    )
    service = ConsentService(session, package_dir=workdir, ui_dir=ui_dir)
    serve(service, port=port)


@main.group()
def package():
    """Donation package tools."""


@package.command("verify")
@click.argument("packages", nargs=-1, required=True,
                type=click.Path(exists=True))
@_cli_errors
def package_verify(packages):
    """Verify package checksums; exits nonzero on any tampering."""
    for raw_path in packages:
        pkg = consent_mod.load_package(raw_path)
        click.echo(f"{raw_path}: OK checksum={pkg.checksum[:16]}... "
                   f"records={len(pkg.records)}")


# --------------------------------------------------------------------------
# researcher side


@main.command()
@click.argument("packages", nargs=-1, required=True,
                type=click.Path(exists=True))
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", "out_dir", default="ingest_out", show_default=True)
@_cli_errors
def ingest(packages, config_path, out_dir):
    """Verify, link, and validate donation packages."""
    config = load_study_config(config_path)
    result = ingest_packages(packages, config)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "linked.csv").write_text(result.dataset.to_csv(), encoding="utf-8")
    (out / "link_report.json").write_text(
        json.dumps(_link_report_to_dict(result.link_report), indent=2),
        encoding="utf-8")
    validation = result.validation
    (out / "validation_report.json").write_text(json.dumps({
        "out_of_window": validation.out_of_window,
        "out_of_window_cells": list(validation.out_of_window_cells),
        "outliers": [
            {"variable": o.variable, "owner": o.owner,
             "value": o.value, "score": o.score}
            for o in validation.outliers
        ],
        "duplicate_keys": validation.duplicate_keys,
        "checks": validation.checks,
    }, indent=2), encoding="utf-8")

    click.echo(f"linked {len(result.dataset.rows)} rows for "
               f"{len(result.pseudonyms)} pseudonym(s); reports in {out}")
    if not validation.passed:
        for check, ok in validation.checks.items():
            if not ok:
                click.echo(f"validation: {check} FAILED")


@main.command("link")
@click.argument("csvs", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", "out_path", default="linked.csv", show_default=True)
@_cli_errors
def link_cmd(csvs, config_path, out_path):
    """Link derived-record CSVs (donations, survey extracts) into one table."""
    config = load_study_config(config_path)
    sources = {
        Path(p).stem: records_from_csv(Path(p).read_text(encoding="utf-8"))
        for p in csvs
    }
    dataset, report = link_records(sources, config.link)
    Path(out_path).write_text(dataset.to_csv(), encoding="utf-8")
    click.echo(f"linked {report.records_linked} records into "
               f"{len(dataset.rows)} rows -> {out_path}")
    for pair, rate in sorted(report.match_rates.items()):
        shown = "n/a" if rate is None else f"{rate:.0%}"
        click.echo(f"  match rate {pair[0]} x {pair[1]}: {shown}")


@main.command("correct-counts")
@click.option("--observed", required=True,
              help="Comma-separated observed counts, e.g. 115,85.")
@click.option("--sensitivity", type=float, default=None)
@click.option("--specificity", type=float, default=None)
@click.option("--matrix", "matrix_path", type=click.Path(exists=True),
              default=None, help="JSON file with a k x k rates matrix.")
@_cli_errors
def correct_counts_cmd(observed, sensitivity, specificity, matrix_path):
    """Correct observed class counts for known misclassification rates."""
    counts = CountVector(tuple(float(v) for v in observed.split(",")))
    if matrix_path:
        raw = json.loads(Path(matrix_path).read_text(encoding="utf-8"))
        cm = ConfusionMatrix(rates=raw["rates"],
                             labels=tuple(raw.get("labels", ())))
    elif sensitivity is not None and specificity is not None:
        cm = ConfusionMatrix.from_sensitivity_specificity(sensitivity, specificity)
    else:
        raise ConfigError("give --matrix or both --sensitivity and --specificity")
    corrected = correct_counts(counts, cm)
    click.echo("corrected: " + ", ".join(f"{c:.6f}" for c in corrected.counts))
    if corrected.infeasible:
        click.echo("warning: negative corrected counts; "
                   "the assumed rates are inconsistent with the data")


def _parse_strata(text: str) -> dict[str, int]:
    out = {}
    for part in text.split(","):
        name, _, value = part.partition("=")
        if not value:
            raise ConfigError(f"bad stratum spec {part!r}; use name=count")
        out[name.strip()] = int(value)
    return out


@main.command()
@click.option("--frame", required=True, help="e.g. A=800,B=200")
@click.option("--respondents", required=True, help="e.g. A=50,B=5")
@click.option("--out", "out_path", default=None, type=click.Path())
@_cli_errors
def weights(frame, respondents, out_path):
    """Post-stratification weights from frame and respondent counts."""
    weight_set = poststrat_weights(_parse_strata(respondents),
                                   _parse_strata(frame))
    for stratum, w in sorted(weight_set.stratum_weights.items()):
        click.echo(f"{stratum}: weight {w:g}")
    click.echo(f"weight sum: {weight_set.weight_sum:g}")
    if weight_set.uncovered:
        click.echo(f"uncovered strata: {', '.join(weight_set.uncovered)}")
    if out_path:
        Path(out_path).write_text(json.dumps({
            "stratum_weights": weight_set.stratum_weights,
            "respondents": weight_set.respondents,
            "frame": weight_set.frame,
            "uncovered": list(weight_set.uncovered),
        }, indent=2), encoding="utf-8")


@main.command("simulate-funnel")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True),
              help="Funnel JSON (or a study config with a funnel section).")
@click.option("--reps", default=1, show_default=True, type=int)
@click.option("--mode", default="sample", show_default=True,
              type=click.Choice(["sample", "expectation"]))
@click.option("--out", "out_path", default=None, type=click.Path(),
              help="Write per-replication ledger deltas as CSV.")
@_cli_errors
def simulate_funnel_cmd(config_path, reps, mode, out_path):
    """Simulate the representation funnel and decompose stagewise bias."""
    raw = json.loads(Path(config_path).read_text(encoding="utf-8"))
    if "funnel" in raw:
        raw = raw["funnel"]
    try:
        config = FunnelConfig.from_dict(raw)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad funnel config: {exc}") from exc

    if reps == 1:
        ledger = decompose_errors(simulate_funnel(config, mode=mode))
        click.echo(ledger.render())
        if out_path:
            Path(out_path).write_text(ledger.to_csv(), encoding="utf-8")
        return

    ledgers = [decompose_errors(r) for r in replicate(config, reps, mode=mode)]
    click.echo(f"{reps} replications (mode={mode}):")
    import numpy as np

    for delta in DELTAS + ("total",):
        values = np.array([
            l.total if delta == "total" else l.deltas[delta] for l in ledgers
        ])
        se = values.std(ddof=1) / np.sqrt(reps) if reps > 1 else 0.0
        click.echo(f"  {delta:<18} mean {values.mean():+.6f}  mc-se {se:.6f}")
    if out_path:
        lines = ["rep," + ",".join(DELTAS) + ",total"]
        for i, ledger in enumerate(ledgers):
            row = [str(i)] + [repr(ledger.deltas[d]) for d in DELTAS]
            row.append(repr(ledger.total))
            lines.append(",".join(row))
        Path(out_path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# checklist


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True))
@click.option("--evidence-dir", default=None, type=click.Path(exists=True),
              help="Directory with reports written by other commands.")
@click.option("--out", "out_path", default=None, type=click.Path())
@_cli_errors
def checklist(config_path, evidence_dir, out_path):
    """Evaluate the study quality checklist from collected evidence."""
    config = load_study_config(config_path)
    evidence = _load_evidence(Path(evidence_dir)) if evidence_dir else StudyEvidence()
    report = report_checklist(config, evidence)
    text = report.render()
    click.echo(text)
    if out_path:
        Path(out_path).write_text(text, encoding="utf-8")
    automated_failures = [r.item_id for r in report.failures]
    if automated_failures:
        click.echo(f"failed items: {', '.join(automated_failures)}", err=True)


# --------------------------------------------------------------------------
# evidence (de)serialization helpers


def _denseness_to_dict(report: DensenessReport) -> dict:
    return {
        "period_ms": report.period_ms,
        "min_count": report.min_count,
        "owners": [
            {"owner": o.owner, "passed": o.passed,
             "gaps": [list(g) for g in o.gaps]}
            for o in report.owners
        ],
    }


def _link_report_to_dict(report: LinkReport) -> dict:
    return {
        "match_rates": {f"{a}|{b}": rate
                        for (a, b), rate in report.match_rates.items()},
        "records_linked": report.records_linked,
        "duplicate_collapsed": report.duplicate_collapsed,
        "cross_source_conflicts": list(report.cross_source_conflicts),
    }


def _load_evidence(evidence_dir: Path) -> StudyEvidence:
    evidence = StudyEvidence()

    path = evidence_dir / "denseness_report.json"
    if path.exists():
        raw = json.loads(path.read_text(encoding="utf-8"))
        evidence.denseness = DensenessReport(
            period_ms=raw["period_ms"],
            min_count=raw["min_count"],
            owners=tuple(
                OwnerDenseness(owner=o["owner"], passed=o["passed"],
                               gaps=tuple(tuple(g) for g in o["gaps"]))
                for o in raw["owners"]
            ),
        )

    path = evidence_dir / "link_report.json"
    if path.exists():
        raw = json.loads(path.read_text(encoding="utf-8"))
        evidence.link_report = LinkReport(
            match_rates={
                tuple(key.split("|", 1)): rate
                for key, rate in raw["match_rates"].items()
            },
            records_linked=raw["records_linked"],
            duplicate_collapsed=raw["duplicate_collapsed"],
            cross_source_conflicts=tuple(raw["cross_source_conflicts"]),
        )

    path = evidence_dir / "weights.json"
    if path.exists():
        raw = json.loads(path.read_text(encoding="utf-8"))
        evidence.weights = WeightSet(
            stratum_weights=raw["stratum_weights"],
            respondents=raw["respondents"],
            frame=raw["frame"],
            uncovered=tuple(raw["uncovered"]),
        )

    path = evidence_dir / "consent_summary.json"
    if path.exists():
        evidence.consent_summary = json.loads(path.read_text(encoding="utf-8"))

    return evidence


if __name__ == "__main__":
    main()
