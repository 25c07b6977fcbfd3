"""Local transformation of raw records into derived research variables.

Everything here runs on the respondent's device.  Transformers reduce raw
records to minimal derived values (a boolean at-home flag, a daily share
of positive faces); raw coordinates, media bytes, and captions never
appear in a derived value.  Missing data stays missing: transformers do
not impute.

The emotion classifier is an interface.  The shipped mock labels by
filename token so pipelines are fully testable without a computer-vision
model, and the noisy wrapper perturbs any classifier's labels through a
configured confusion matrix for simulation studies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .core import Pseudonym, Timestamp
from .errors import NoHomeError
from .parsers import LocationRecord, MediaRecord

EMOTION_LABELS = ("positive", "negative", "neutral")

VAR_AT_HOME = "at_home"
VAR_AFFECT_POSITIVE_SHARE = "affect_positive_share"

HOME_TRANSFORMER = ("home_proximity", "1")
AFFECT_TRANSFORMER = ("face_affect", "1")

DAY_MS = 86_400_000

_EARTH_RADIUS_M = 6_371_000.0
_METERS_PER_DEG = 111_320.0


# --------------------------------------------------------------------------
# Derived records


@dataclass(frozen=True)
class Provenance:
    provider: str
    transformer_id: str
    transformer_version: str
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class DerivedRecord:
    """The unit that flows from transformer to consent to researcher.

    Values are restricted to booleans, finite reals, and short categorical
    labels; anything that could smuggle raw data out is rejected here.
    """

    owner: Pseudonym
    at: Timestamp
    variable: str
    value: bool | int | float | str
    provenance: Provenance

    def __post_init__(self):
        v = self.value
        if isinstance(v, float) and not math.isfinite(v):
            raise ValueError(f"{self.variable}: non-finite value {v}")
        if isinstance(v, str) and (len(v) > 64 or "\n" in v or "," in v):
            raise ValueError(f"{self.variable}: value is not a short label")

    def sort_key(self):
        return (self.owner.value, self.at.epoch_ms, self.variable,
                self.provenance.transformer_id)

    def value_str(self) -> str:
        if isinstance(self.value, bool):
            return "true" if self.value else "false"
        return str(self.value)


CSV_HEADER = ("pseudonym,timestamp_iso,variable,value,"
              "provider,transformer_id,transformer_version,confidence")


def records_to_csv(records, sort_key=None) -> str:
    """Derived-record export contract; deterministic row order."""
    lines = [CSV_HEADER]
    for r in sorted(records, key=sort_key or (lambda r: r.sort_key())):
        p = r.provenance
        lines.append(
            f"{r.owner.value},{r.at.to_iso()},{r.variable},{r.value_str()},"
            f"{p.provider},{p.transformer_id},{p.transformer_version},"
            f"{p.confidence!s}"
        )
    return "\n".join(lines) + "\n"


def records_from_csv(text: str) -> list[DerivedRecord]:
    lines = text.strip().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError("not a derived-record CSV (bad header)")
    records = []
    for line in lines[1:]:
        if not line:
            continue
        (pseud, ts, variable, value, provider,
         tid, tver, conf) = line.split(",", 7)
        records.append(DerivedRecord(
            owner=Pseudonym(pseud),
            at=_parse_iso_ts(ts),
            variable=variable,
            value=_parse_value(value),
            provenance=Provenance(provider, tid, tver, float(conf)),
        ))
    return records


def _parse_iso_ts(text: str) -> Timestamp:
    from .core import parse_timestamp

    return parse_timestamp(text)


def _parse_value(text: str):
    if text == "true":
        return True
    if text == "false":
        return False
    try:
        return float(text)
    except ValueError:
        return text


# --------------------------------------------------------------------------
# Home inference and at-home classification


@dataclass(frozen=True)
class HomeLocation:
    lat_e7: int
    lon_e7: int
    support: int
    radius_m: float
    low_confidence: bool = False


def _in_night_window(epoch_ms: int, window: tuple[int, int], utc_offset_min: int) -> bool:
    hour = ((epoch_ms // 60_000 + utc_offset_min) % 1440) / 60.0
    start, end = window
    if start <= end:
        return start <= hour < end
    return hour >= start or hour < end


def infer_home(
    pings: list[LocationRecord],
    night_window: tuple[int, int] = (0, 6),
    cluster_radius_m: float = 100.0,
    min_support: int = 10,
    utc_offset_min: int = 0,
) -> HomeLocation:
    """Estimate the home location as the modal night-time cluster.

    Night pings are bucketed onto a grid with cells of side
    cluster_radius_m; the centroid of the most populated cell wins, ties
    going to the smallest cell key. Support below min_support marks the
    result low-confidence rather than discarding it.  Zero night pings
    raise NoHomeError: downstream at_home becomes missing, never invented.
    """
    night = [p for p in pings
             if _in_night_window(p.at.epoch_ms, night_window, utc_offset_min)]
    if not night:
        raise NoHomeError(
            f"no pings in night window {night_window[0]:02d}:00-{night_window[1]:02d}:00")

    cells: dict[tuple[int, int], list[LocationRecord]] = {}
    for p in night:
        lat_deg = p.lat_e7 / 1e7
        lon_deg = p.lon_e7 / 1e7
        cell = (
            math.floor(lat_deg * _METERS_PER_DEG / cluster_radius_m),
            math.floor(lon_deg * _METERS_PER_DEG
                       * math.cos(math.radians(lat_deg)) / cluster_radius_m),
        )
        cells.setdefault(cell, []).append(p)

    modal = min(cells, key=lambda c: (-len(cells[c]), c))
    members = cells[modal]
    return HomeLocation(
        lat_e7=round(sum(p.lat_e7 for p in members) / len(members)),
        lon_e7=round(sum(p.lon_e7 for p in members) / len(members)),
        support=len(members),
        radius_m=cluster_radius_m,
        low_confidence=len(members) < min_support,
    )


def great_circle_m(lat1_e7: int, lon1_e7: int, lat2_e7: int, lon2_e7: int) -> float:
    """Haversine distance in meters between two e7-scaled coordinates."""
    lat1, lon1, lat2, lon2 = (math.radians(v / 1e7)
                              for v in (lat1_e7, lon1_e7, lat2_e7, lon2_e7))
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    a = (math.sin(dlat / 2) ** 2
         + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2)
    return 2 * _EARTH_RADIUS_M * math.asin(math.sqrt(a))


def classify_at_home(ping: LocationRecord, home: HomeLocation) -> DerivedRecord:
    """Derive the boolean at_home variable for one ping.

    Within home.radius_m of home counts as at home, boundary inclusive.
    Confidence shrinks with the ping's reported accuracy radius but is
    floored at 0.5; a missing accuracy is treated as exact.
    """
    distance = great_circle_m(ping.lat_e7, ping.lon_e7, home.lat_e7, home.lon_e7)
    accuracy = ping.accuracy_m if ping.accuracy_m is not None else 0.0
    confidence = max(0.5, 1.0 - min(1.0, accuracy / home.radius_m))
    return DerivedRecord(
        owner=ping.owner,
        at=ping.at,
        variable=VAR_AT_HOME,
        value=distance <= home.radius_m,
        provenance=Provenance(
            provider="google_takeout",
            transformer_id=HOME_TRANSFORMER[0],
            transformer_version=HOME_TRANSFORMER[1],
            confidence=confidence,
        ),
    )


# --------------------------------------------------------------------------
# Emotion classification


@dataclass(frozen=True)
class FaceEmotion:
    label: str
    confidence: float
    bbox: tuple[int, int, int, int] = (0, 0, 1, 1)

    def __post_init__(self):
        if self.label not in EMOTION_LABELS:
            raise ValueError(f"unknown emotion label {self.label!r}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if any(v < 0 for v in self.bbox):
            raise ValueError(f"negative bbox {self.bbox}")


class EmotionClassifier(Protocol):
    """Contract for pluggable face-emotion models: media bytes in,
    per-face labels out."""

    def classify(self, filename: str, data: bytes) -> list[FaceEmotion]: ...


class MockEmotionClassifier:
    """Deterministic stand-in keyed on filename tokens.

    `happy` yields one positive face at 1.0, `sad` one negative face at
    1.0, `face` one neutral face at 0.6, anything else no faces.  Exists
    so pipelines and the consent flow are testable end to end without a
    real computer-vision model.
    """

    def classify(self, filename: str, data: bytes) -> list[FaceEmotion]:
        name = filename.lower()
        if "happy" in name:
            return [FaceEmotion(label="positive", confidence=1.0)]
        if "sad" in name:
            return [FaceEmotion(label="negative", confidence=1.0)]
        if "face" in name:
            return [FaceEmotion(label="neutral", confidence=0.6)]
        return []


class NoisyEmotionClassifier:
    """Wrap any classifier and misclassify labels per a confusion matrix.

    Each face's true label is resampled from the matrix column for that
    label. With the identity matrix the wrapped model's output is returned
    face-for-face unchanged, which is what makes the wrapper safe to keep
    in simulation pipelines.
    """

    def __init__(self, inner: EmotionClassifier, confusion, seed: int,
                 labels: tuple[str, ...] = EMOTION_LABELS):
        if confusion.k != len(labels):
            raise ValueError(
                f"confusion matrix is {confusion.k}-class, got {len(labels)} labels")
        self._inner = inner
        self._confusion = confusion
        self._labels = labels
        self._rng = np.random.default_rng(seed)

    def classify(self, filename: str, data: bytes) -> list[FaceEmotion]:
        out = []
        for face in self._inner.classify(filename, data):
            j = self._labels.index(face.label)
            column = self._confusion.rates[:, j]
            i = int(self._rng.choice(len(self._labels), p=column))
            if i == j:
                out.append(face)
            else:
                out.append(FaceEmotion(label=self._labels[i],
                                       confidence=face.confidence,
                                       bbox=face.bbox))
        return out


def classify_emotion(media: MediaRecord, data: bytes,
                     model: EmotionClassifier) -> list[FaceEmotion]:
    """Run the plugged classifier on one photo or video."""
    if media.kind not in ("photo", "video"):
        raise ValueError(f"cannot classify emotion on kind {media.kind!r}")
    filename = media.file.relative_path.rsplit("/", 1)[-1]
    return model.classify(filename, data)


# --------------------------------------------------------------------------
# Affect aggregation


def aggregate_affect(
    faces_per_media: list[tuple[MediaRecord, list[FaceEmotion]]],
    bin_ms: int = DAY_MS,
) -> list[DerivedRecord]:
    """Share of positive faces per (owner, time bin).

    Bins with zero detected faces produce no record: an empty bin is
    missing data, not a zero. Media without a usable timestamp cannot be
    binned and are skipped.
    """
    if bin_ms <= 0:
        raise ValueError("bin width must be positive")
    bins: dict[tuple[str, int], list[FaceEmotion]] = {}
    owners: dict[str, Pseudonym] = {}
    for media, faces in faces_per_media:
        if media.taken_at is None or not faces:
            continue
        key = (media.owner.value, media.taken_at.epoch_ms // bin_ms)
        bins.setdefault(key, []).extend(faces)
        owners[media.owner.value] = media.owner

    records = []
    for (owner_value, bin_index), faces in sorted(bins.items()):
        positive = sum(1 for f in faces if f.label == "positive")
        confidence = sum(f.confidence for f in faces) / len(faces)
        records.append(DerivedRecord(
            owner=owners[owner_value],
            at=Timestamp(epoch_ms=bin_index * bin_ms, source_format="epoch_ms"),
            variable=VAR_AFFECT_POSITIVE_SHARE,
            value=positive / len(faces),
            provenance=Provenance(
                provider="instagram",
                transformer_id=AFFECT_TRANSFORMER[0],
                transformer_version=AFFECT_TRANSFORMER[1],
                confidence=confidence,
            ),
        ))
    return records


# --------------------------------------------------------------------------
# Denseness check


@dataclass(frozen=True)
class OwnerDenseness:
    owner: str
    passed: bool
    gaps: tuple[tuple[int, int], ...]  # [start_ms, end_ms) of deficient stretches


@dataclass(frozen=True)
class DensenessReport:
    period_ms: int
    min_count: int
    owners: tuple[OwnerDenseness, ...]

    @property
    def passed(self) -> bool:
        return all(o.passed for o in self.owners)


def denseness_check(records, period_ms: int, min_count: int = 1) -> DensenessReport:
    """Check that each owner has at least min_count records per period.

    Windows run from the owner's first record to their last; consecutive
    deficient windows merge into one reported gap interval. A measurement
    too sparse for the study's question must fail loudly here, before
    anyone consents to share it.
    """
    if period_ms <= 0 or min_count <= 0:
        raise ValueError("period and min_count must be positive")
    per_owner: dict[str, list[int]] = {}
    for r in records:
        per_owner.setdefault(r.owner.value, []).append(r.at.epoch_ms)

    owners = []
    for owner, stamps in sorted(per_owner.items()):
        first, last = min(stamps), max(stamps)
        counts: dict[int, int] = {}
        for ms in stamps:
            counts[ms // period_ms] = counts.get(ms // period_ms, 0) + 1
        gaps: list[tuple[int, int]] = []
        gap_start: int | None = None
        for w in range(first // period_ms, last // period_ms + 1):
            deficient = counts.get(w, 0) < min_count
            if deficient and gap_start is None:
                gap_start = w * period_ms
            elif not deficient and gap_start is not None:
                gaps.append((gap_start, w * period_ms))
                gap_start = None
        if gap_start is not None:
            gaps.append((gap_start, (last // period_ms + 1) * period_ms))
        owners.append(OwnerDenseness(owner=owner, passed=not gaps, gaps=tuple(gaps)))
    return DensenessReport(period_ms=period_ms, min_count=min_count,
                           owners=tuple(owners))


# --------------------------------------------------------------------------
# Transform reporting and preview illustrations


@dataclass
class TransformReport:
    """Counts per transformer of processed / failed / flagged items."""

    processed: dict[str, int] = field(default_factory=dict)
    failed: dict[str, int] = field(default_factory=dict)
    flagged: dict[str, int] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def count(self, transformer_id: str, *, processed: int = 0,
              failed: int = 0, flagged: int = 0) -> None:
        for bucket, n in (("processed", processed), ("failed", failed),
                          ("flagged", flagged)):
            if n:
                d = getattr(self, bucket)
                d[transformer_id] = d.get(transformer_id, 0) + n

    def note(self, message: str) -> None:
        self.notes.append(message)


@dataclass(frozen=True)
class Illustration:
    """Canned input-to-output example shown during consent review."""

    input_excerpt: str
    output_excerpt: str


ILLUSTRATIONS = {
    HOME_TRANSFORMER[0]: Illustration(
        input_excerpt=("location ping 2020-03-01T02:10:00Z, "
                       "coordinates withheld (accuracy 12 m)"),
        output_excerpt="at_home: true (confidence 0.88)",
    ),
    AFFECT_TRANSFORMER[0]: Illustration(
        input_excerpt="photo happy_face.jpg taken 2020-03-01T12:00:00Z",
        output_excerpt=("face 1: positive (confidence 1.00) -> "
                        "affect_positive_share for 2020-03-01: 1.0"),
    ),
}
