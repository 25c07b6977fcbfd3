"""Quality-control checklist for donation studies.

A fixed enumeration of checks across the measurement side (construct,
indicators, data controllers, extraction, transformation, linkage) and
the representation side (target population, frame, sample, respondents,
retrieval, consent).  Items the toolkit can evidence from run reports are
automated pass/fail; scientific-judgment items are emitted as manual with
a prompt instead of fake-passing.
"""

from __future__ import annotations

from dataclasses import dataclass

from .integrate import LinkReport, ValidationReport
from .errorframe import WeightSet
from .study import StudyConfig
from .transform import DensenessReport

STATUS_PASS = "pass"
STATUS_FAIL = "fail"
STATUS_MANUAL = "manual"


@dataclass(frozen=True)
class ChecklistItem:
    item_id: str
    category: str
    text: str
    automated: bool = False


# The fixed item set. Automated items are evaluated from collected run
# evidence; everything else needs a human judgment and says so.
CHECKLIST_ITEMS: tuple[ChecklistItem, ...] = (
    # Measurement side: construct
    ChecklistItem("construct_defined", "construct",
                  "The concept under study is explicitly defined"),
    ChecklistItem("construct_matches_scope", "construct",
                  "The concept matches the scope of the research question"),
    # Indicators
    ChecklistItem("indicators_cover_construct", "indicators",
                  "Observable proxies sufficiently represent every facet of the concept"),
    ChecklistItem("indicators_observable", "indicators",
                  "The chosen proxies are actually recorded by data platforms"),
    # Data controllers / archives
    ChecklistItem("controllers_measure_indicators", "controllers",
                  "Selected platforms record the proxies of interest"),
    ChecklistItem("indicator_denseness", "controllers",
                  "Measurement density is sufficient for the research purpose",
                  automated=True),
    ChecklistItem("controller_credibility", "controllers",
                  "The credibility of each platform's records has been assessed"),
    ChecklistItem("controller_count_minimized", "controllers",
                  "The number of platforms requested per respondent is minimized"),
    # Extraction
    ChecklistItem("indicator_presence_per_format", "extraction",
                  "Proxy presence was checked for every file format in the archive"),
    ChecklistItem("extraction_scripts_validated", "extraction",
                  "Extraction scripts are validated with known accuracy rates"),
    # Transformation
    ChecklistItem("transformation_selected", "transformation",
                  "A transformation producing outcome values per proxy is chosen"),
    ChecklistItem("transformation_training_comparable", "transformation",
                  "The transformation was trained on data similar to donated archives"),
    ChecklistItem("transformation_accuracy_declared", "transformation",
                  "Each transformer has a declared accuracy rate from a comparable dataset",
                  automated=True),
    ChecklistItem("transformation_no_systematic_bias", "transformation",
                  "The transformation does not systematically include, exclude, or "
                  "misclassify identifiable cases"),
    ChecklistItem("outcomes_cover_indicators", "transformation",
                  "Output values represent every proxy that was identified"),
    # Analysis (measurement side)
    ChecklistItem("linked_on_person_level", "analysis",
                  "Shared data are linked on person level, one column per variable",
                  automated=True),
    ChecklistItem("respondents_identifiable", "analysis",
                  "Respondents are identified by a study-scoped pseudonym"),
    ChecklistItem("variables_identified", "analysis",
                  "Every variable is clearly identified for each respondent"),
    # Representation side: target population
    ChecklistItem("target_population_defined", "target_population",
                  "A target population matching the research purpose is identified"),
    ChecklistItem("subgroups_includable", "target_population",
                  "Every identifiable subgroup can in principle enter the study"),
    # Sampling frame
    ChecklistItem("subgroups_in_frame", "frame",
                  "Every identifiable subgroup is present in the sampling frame"),
    ChecklistItem("frame_matches_purpose", "frame",
                  "The available frame has been evaluated against the research purpose"),
    # Sample
    ChecklistItem("inclusion_probability_positive", "sample",
                  "Every frame subgroup has a nonzero probability of selection"),
    ChecklistItem("inclusion_probability_known", "sample",
                  "Selection probabilities are known and weights calibrate to the frame",
                  automated=True),
    # Respondents
    ChecklistItem("communication_clear", "respondents",
                  "Communication with sampled people is clear and simple"),
    ChecklistItem("communication_language", "respondents",
                  "Communication is available in the respondent's language"),
    ChecklistItem("procedure_explained_stepwise", "respondents",
                  "The procedure is explained step by step before it starts"),
    # Retrieval / software
    ChecklistItem("software_usability_validated", "retrieval",
                  "The collection software's usability was validated independently"),
    ChecklistItem("software_cross_platform", "retrieval",
                  "The software runs on the devices and OS versions respondents use"),
    ChecklistItem("assistance_available", "retrieval",
                  "Assistance is available around the clock during collection"),
    # Analysis (representation side)
    ChecklistItem("final_data_reviewed_before_sharing", "analysis",
                  "Respondents saw the final derived data before it was shared",
                  automated=True),
)


@dataclass(frozen=True)
class ChecklistResult:
    item_id: str
    category: str
    text: str
    status: str
    evidence: str


@dataclass(frozen=True)
class ChecklistReport:
    results: tuple[ChecklistResult, ...]

    def result(self, item_id: str) -> ChecklistResult:
        for r in self.results:
            if r.item_id == item_id:
                return r
        raise KeyError(item_id)

    @property
    def failures(self) -> tuple[ChecklistResult, ...]:
        return tuple(r for r in self.results if r.status == STATUS_FAIL)

    def render(self) -> str:
        marks = {STATUS_PASS: "[x]", STATUS_FAIL: "[!]", STATUS_MANUAL: "[ ]"}
        lines = []
        category = None
        for r in self.results:
            if r.category != category:
                category = r.category
                lines.append(f"\n## {category}")
            lines.append(f"{marks[r.status]} {r.text}")
            if r.evidence:
                lines.append(f"    evidence: {r.evidence}")
        return "\n".join(lines).strip() + "\n"


@dataclass
class StudyEvidence:
    """Run artifacts the automated checklist items are judged from."""

    denseness: DensenessReport | None = None
    link_report: LinkReport | None = None
    validation: ValidationReport | None = None
    weights: WeightSet | None = None
    consent_summary: dict | None = None  # {"previews_served", "finalized", "variables"}


def report_checklist(config: StudyConfig, evidence: StudyEvidence) -> ChecklistReport:
    """Evaluate automated items from evidence; emit the rest as manual.

    Automated items never claim manual: with no evidence they fail, with
    a pointer explaining what is missing.
    """
    results = []
    for item in CHECKLIST_ITEMS:
        if not item.automated:
            results.append(ChecklistResult(
                item_id=item.item_id, category=item.category, text=item.text,
                status=STATUS_MANUAL,
                evidence=_manual_prompt(item, config),
            ))
            continue
        status, pointer = _evaluate(item.item_id, config, evidence)
        results.append(ChecklistResult(
            item_id=item.item_id, category=item.category, text=item.text,
            status=status, evidence=pointer,
        ))
    return ChecklistReport(results=tuple(results))


def _manual_prompt(item: ChecklistItem, config: StudyConfig) -> str:
    hints = {
        "target_population_defined": config.checklist.target_population,
        "subgroups_in_frame": config.checklist.sampling_frame,
        "controllers_measure_indicators": ", ".join(
            config.checklist.data_controllers),
    }
    hint = hints.get(item.item_id, "")
    prompt = "needs reviewer judgment"
    return f"{prompt}; declared: {hint}" if hint else prompt


def _evaluate(item_id: str, config: StudyConfig,
              evidence: StudyEvidence) -> tuple[str, str]:
    if item_id == "indicator_denseness":
        report = evidence.denseness
        if report is None:
            return STATUS_FAIL, "no denseness report was produced"
        if report.passed:
            return STATUS_PASS, (
                f"denseness check passed for {len(report.owners)} owner(s) "
                f"at period {report.period_ms} ms")
        failing = [o.owner for o in report.owners if not o.passed]
        return STATUS_FAIL, f"denseness gaps for owner(s): {', '.join(failing)}"

    if item_id == "transformation_accuracy_declared":
        missing = sorted(config.transformers() - set(config.transformer_accuracy))
        if missing:
            return STATUS_FAIL, f"no declared accuracy for: {', '.join(missing)}"
        declared = ", ".join(f"{k}={v}" for k, v in
                             sorted(config.transformer_accuracy.items()))
        return STATUS_PASS, f"declared accuracy rates: {declared}"

    if item_id == "linked_on_person_level":
        if evidence.link_report is None:
            return STATUS_FAIL, "no linkage report; ingest has not run"
        rates = ", ".join(
            f"{a}-{b}: {'n/a' if r is None else f'{r:.0%}'}"
            for (a, b), r in sorted(evidence.link_report.match_rates.items()))
        return STATUS_PASS, f"linked {evidence.link_report.records_linked} " \
                            f"records; match rates {rates or 'n/a'}"

    if item_id == "inclusion_probability_known":
        weights = evidence.weights
        if weights is None:
            return STATUS_FAIL, "no calibrated weight set available"
        covered = sum(weights.frame[h] for h in weights.stratum_weights)
        drift = abs(weights.weight_sum - covered)
        if drift > 1e-9:
            return STATUS_FAIL, f"weights do not calibrate (drift {drift})"
        note = f"weights sum to covered frame total {covered}"
        if weights.uncovered:
            note += f"; uncovered strata: {', '.join(weights.uncovered)}"
        return STATUS_PASS, note

    if item_id == "final_data_reviewed_before_sharing":
        summary = evidence.consent_summary
        if not summary:
            return STATUS_FAIL, "no consent session summary available"
        if not summary.get("finalized"):
            return STATUS_FAIL, "consent session was never finalized"
        unseen = [v for v in summary.get("variables", ())
                  if not summary.get("previews_served", {}).get(v)]
        if unseen:
            return STATUS_FAIL, f"variables never previewed: {', '.join(unseen)}"
        return STATUS_PASS, "all variables previewed before finalize"

    raise KeyError(f"no evaluator for automated item {item_id!r}")
