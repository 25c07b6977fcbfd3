"""Researcher-side linkage of record sets on person and time level.

Records from different sources end up in the same row when their
pseudonyms match and their timestamps fall in the same time bin; a record
just after a bin edge may instead join partners in the earlier bin when
it lies within the link tolerance of one (deterministically assigned to
the earlier bin).  Unmatched records are kept as partial rows, never
dropped, so downstream nonresponse accounting stays honest.

Validation flags what linkage cannot fix: timestamps outside the study
window, robust outliers, and duplicate keys.  It never mutates data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .core import Timestamp
from .errors import LinkageError
from .transform import DerivedRecord

OUTLIER_MAD_THRESHOLD = 5.0


@dataclass(frozen=True)
class LinkSpec:
    """Linkage parameters; bin width is study-specific and mandatory."""

    bin_ms: int
    tolerance_ms: int
    window_start: Timestamp
    window_end: Timestamp

    def __post_init__(self):
        if self.bin_ms <= 0:
            raise ValueError("bin width must be positive")
        if self.tolerance_ms < 0:
            raise ValueError("tolerance must be non-negative")
        if self.tolerance_ms > self.bin_ms:
            raise ValueError("tolerance must not exceed the bin width")
        if self.window_start.epoch_ms >= self.window_end.epoch_ms:
            raise ValueError("study window start must precede its end")


@dataclass(frozen=True)
class Cell:
    """One value in a linked row, traceable to the record it came from."""

    value: bool | int | float | str
    source: str
    at_ms: int
    record: DerivedRecord | None = None


@dataclass
class Row:
    owner: str
    bin_start_ms: int
    cells: dict[str, Cell] = field(default_factory=dict)

    @property
    def key(self) -> tuple[str, int]:
        return (self.owner, self.bin_start_ms)


@dataclass
class LinkedDataset:
    rows: list[Row]
    variables: tuple[str, ...]

    def row(self, owner: str, bin_start_ms: int) -> Row | None:
        for r in self.rows:
            if r.key == (owner, bin_start_ms):
                return r
        return None

    def to_csv(self) -> str:
        """Wide export: pseudonym,bin_start_iso then one column per variable."""
        header = ["pseudonym", "bin_start_iso", *self.variables]
        lines = [",".join(header)]
        for row in sorted(self.rows, key=lambda r: r.key):
            bin_iso = Timestamp(epoch_ms=row.bin_start_ms).to_iso()
            values = []
            for var in self.variables:
                cell = row.cells.get(var)
                values.append(_cell_str(cell) if cell else "")
            lines.append(",".join([row.owner, bin_iso, *values]))
        return "\n".join(lines) + "\n"


def _cell_str(cell: Cell) -> str:
    if isinstance(cell.value, bool):
        return "true" if cell.value else "false"
    return str(cell.value)


@dataclass(frozen=True)
class LinkReport:
    """Linkage accounting: pairwise match rates and what was merged away."""

    match_rates: dict[tuple[str, str], float | None]
    records_linked: int
    duplicate_collapsed: int
    cross_source_conflicts: tuple[str, ...]


def link(sources: Mapping[str, Sequence[DerivedRecord]],
         spec: LinkSpec) -> tuple[LinkedDataset, LinkReport]:
    """Merge named record sets into rows keyed (pseudonym, time bin).

    Identical duplicate values collapse silently; colliding values for the
    same (key, variable) from one source raise a duplicate error naming
    the offenders.  Across sources, conflicts are resolved to the
    lexicographically smallest source name and reported, keeping the merge
    symmetric under source reordering.
    """
    # Nominal bin per record, indexed so the edge rule can find partners.
    placed: list[tuple[str, DerivedRecord, int]] = []  # (source, record, bin)
    bins_by_owner: dict[str, dict[str, set[int]]] = {}  # owner -> source -> bins
    times_by_owner: dict[str, dict[str, list[tuple[int, int]]]] = {}

    for source in sorted(sources):
        for rec in sources[source]:
            b = rec.at.epoch_ms // spec.bin_ms
            placed.append((source, rec, b))
            bins_by_owner.setdefault(rec.owner.value, {}).setdefault(
                source, set()).add(b)
            times_by_owner.setdefault(rec.owner.value, {}).setdefault(
                source, []).append((rec.at.epoch_ms, b))

    def other_source_in_bin(owner: str, source: str, b: int) -> bool:
        return any(b in bins for s, bins in bins_by_owner.get(owner, {}).items()
                   if s != source)

    def edge_partner(owner: str, source: str, at_ms: int, b: int) -> bool:
        for s, stamps in times_by_owner.get(owner, {}).items():
            if s == source:
                continue
            for t, tb in stamps:
                if tb == b - 1 and at_ms - t <= spec.tolerance_ms:
                    return True
        return False

    rows: dict[tuple[str, int], Row] = {}
    candidates: dict[tuple[str, int, str], list[tuple[str, Cell]]] = {}
    collapsed = 0
    for source, rec, b in placed:
        owner = rec.owner.value
        offset = rec.at.epoch_ms - b * spec.bin_ms
        assigned = b
        if 0 <= offset < spec.tolerance_ms and not other_source_in_bin(owner, source, b):
            if edge_partner(owner, source, rec.at.epoch_ms, b):
                assigned = b - 1
        cell = Cell(value=rec.value, source=source, at_ms=rec.at.epoch_ms,
                    record=rec)
        candidates.setdefault((owner, assigned, rec.variable), []).append(
            (source, cell))

    conflicts: list[str] = []
    for (owner, b, variable), cands in sorted(candidates.items()):
        per_source: dict[str, Cell] = {}
        for source, cell in cands:
            existing = per_source.get(source)
            if existing is None:
                per_source[source] = cell
            elif existing.value == cell.value:
                collapsed += 1
            else:
                raise LinkageError(
                    f"source {source!r} has colliding values for "
                    f"({owner}, bin {b}, {variable}): "
                    f"{existing.value!r} vs {cell.value!r}")
        winner_source = min(per_source)
        distinct = {_cell_str(c) for c in per_source.values()}
        if len(distinct) > 1:
            conflicts.append(
                f"({owner}, bin {b}, {variable}): values {sorted(distinct)} "
                f"from {sorted(per_source)}; kept {winner_source!r}")
        else:
            collapsed += len(per_source) - 1
        row = rows.setdefault((owner, b), Row(owner=owner,
                                              bin_start_ms=b * spec.bin_ms))
        row.cells[variable] = per_source[winner_source]

    variables = tuple(sorted({rec.variable for _, rec, _ in placed}))
    dataset = LinkedDataset(rows=[rows[k] for k in sorted(rows)],
                            variables=variables)

    # Pairwise match rates over row keys each source contributed to.
    keys_by_source: dict[str, set[tuple[str, int]]] = {s: set() for s in sources}
    for (owner, b, _variable), cands in candidates.items():
        for source, _cell in cands:
            keys_by_source[source].add((owner, b))
    names = sorted(sources)
    match_rates: dict[tuple[str, str], float | None] = {}
    for i, s1 in enumerate(names):
        for s2 in names[i + 1:]:
            union = keys_by_source[s1] | keys_by_source[s2]
            if not union:
                match_rates[(s1, s2)] = None
            else:
                both = keys_by_source[s1] & keys_by_source[s2]
                match_rates[(s1, s2)] = len(both) / len(union)

    report = LinkReport(
        match_rates=match_rates,
        records_linked=len(placed),
        duplicate_collapsed=collapsed,
        cross_source_conflicts=tuple(conflicts),
    )
    return dataset, report


@dataclass(frozen=True)
class OutlierFinding:
    variable: str
    owner: str
    value: float
    score: float


@dataclass(frozen=True)
class ValidationReport:
    """Integration guards; an empty report means every check passed."""

    out_of_window: int
    out_of_window_cells: tuple[str, ...]
    outliers: tuple[OutlierFinding, ...]
    duplicate_keys: int
    checks: dict[str, bool]

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def validate(ds: LinkedDataset, spec: LinkSpec) -> ValidationReport:
    """Flag out-of-window timestamps, robust outliers, and duplicate keys.

    Outliers use the median/MAD rule |v - median| / MAD > 5 per numeric
    variable; a variable with no spread (MAD 0) is skipped rather than
    flagging everything.  Reporting only: the dataset is not modified.
    """
    out_cells: list[str] = []
    for row in ds.rows:
        for variable, cell in sorted(row.cells.items()):
            if not spec.window_start.epoch_ms <= cell.at_ms <= spec.window_end.epoch_ms:
                at_iso = Timestamp(epoch_ms=cell.at_ms).to_iso()
                out_cells.append(f"{row.owner}/{variable}@{at_iso}")

    by_variable: dict[str, list[tuple[str, float]]] = {}
    for row in ds.rows:
        for variable, cell in row.cells.items():
            if isinstance(cell.value, bool) or not isinstance(cell.value, (int, float)):
                continue
            by_variable.setdefault(variable, []).append((row.owner, float(cell.value)))

    outliers: list[OutlierFinding] = []
    for variable, pairs in sorted(by_variable.items()):
        values = sorted(v for _, v in pairs)
        med = _median(values)
        mad = _median(sorted(abs(v - med) for v in values))
        if mad == 0:
            continue  # no spread: skip rather than flag everything
        for owner, v in pairs:
            score = abs(v - med) / mad
            if score > OUTLIER_MAD_THRESHOLD:
                outliers.append(OutlierFinding(variable=variable, owner=owner,
                                               value=v, score=score))

    seen: set[tuple[str, int]] = set()
    duplicates = 0
    for row in ds.rows:
        if row.key in seen:
            duplicates += 1
        seen.add(row.key)

    checks = {
        "within_window": not out_cells,
        "no_outliers": not outliers,
        "unique_keys": duplicates == 0,
    }
    return ValidationReport(
        out_of_window=len(out_cells),
        out_of_window_cells=tuple(out_cells),
        outliers=tuple(outliers),
        duplicate_keys=duplicates,
        checks=checks,
    )


def _median(sorted_values: list[float]) -> float:
    n = len(sorted_values)
    mid = n // 2
    if n % 2:
        return sorted_values[mid]
    return (sorted_values[mid - 1] + sorted_values[mid]) / 2
