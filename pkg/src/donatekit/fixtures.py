"""Synthetic archive generator with ground-truth sidecars.

Desk-scale stand-ins for real provider archives.  Each generated zip is a
deterministic function of (spec, seed), byte for byte, and comes with a
`<name>.truth.json` sidecar recording exactly what was planted: renamed
extensions, unindexed media, out-of-range coordinates, duplicate pings,
and the true at-home assignment per ping.  Sidecars live next to the
archive, never inside it; they are the oracle source for tests.

Fixture schema v1:
  instagram       media.json index (array of {path, taken_at, caption,
                  kind}) plus media files under media/.
  google_takeout  Location History.json: array of {timestampMs (string),
                  latitudeE7, longitudeE7, accuracy, semanticCandidates:
                  [{placeId, probability}]}.
"""

from __future__ import annotations

import json
import math
import random
import zipfile
from pathlib import Path

from .errors import ConfigError

# Minimal but sniffable media payloads; per-file random suffixes keep
# content hashes distinct without disturbing the leading magic bytes.
PNG_BYTES = (
    b"\x89PNG\r\n\x1a\n\x00\x00\x00\rIHDR\x00\x00\x00\x01\x00\x00\x00\x01"
    b"\x08\x06\x00\x00\x00\x1f\x15\xc4\x89\x00\x00\x00\nIDATx\x9cc\x00\x01"
    b"\x00\x00\x05\x00\x01\r\n-\xb4\x00\x00\x00\x00IEND\xaeB`\x82"
)
JPEG_BYTES = (
    b"\xff\xd8\xff\xe0\x00\x10JFIF\x00\x01\x01\x00\x00\x01\x00\x01\x00\x00"
    b"\xff\xdb\x00\x43\x00" + bytes(64) + b"\xff\xd9"
)
MP4_BYTES = b"\x00\x00\x00\x18ftypmp42\x00\x00\x00\x00mp42isom"

_ZIP_DATE = (2020, 1, 1, 0, 0, 0)
_MOODS = ("happy", "sad", "face", "landscape")


def _write_zip(path: Path, members: dict[str, bytes]) -> None:
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(members):
            info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
            zf.writestr(info, members[name])


def generate_fixture(spec: dict, seed: int, out_dir: str | Path
                     ) -> tuple[Path, Path]:
    """Generate one fixture archive; returns (zip path, sidecar path)."""
    provider = spec.get("provider")
    if provider == "instagram":
        return generate_instagram_fixture(spec, seed, out_dir)
    if provider == "google_takeout":
        return generate_google_fixture(spec, seed, out_dir)
    raise ConfigError(f"fixture spec has unknown provider {provider!r}")


# --------------------------------------------------------------------------
# instagram


def generate_instagram_fixture(spec: dict, seed: int, out_dir: str | Path
                               ) -> tuple[Path, Path]:
    """Media archive with optional planted extraction traps.

    Spec keys (all optional except name): n_jpeg, n_png,
    n_png_renamed_as_jpg (a subset of n_png stored under a .jpg name),
    n_videos, n_unindexed (media files left out of the index),
    start (ISO), step_minutes, caption_every.
    """
    name = spec.get("name", "instagram_fixture")
    n_jpeg = int(spec.get("n_jpeg", 3))
    n_png = int(spec.get("n_png", 0))
    n_renamed = int(spec.get("n_png_renamed_as_jpg", 0))
    n_videos = int(spec.get("n_videos", 0))
    n_unindexed = int(spec.get("n_unindexed", 0))
    step_minutes = int(spec.get("step_minutes", 90))
    caption_every = int(spec.get("caption_every", 3))
    start_ms = _start_ms(spec)
    if n_renamed > n_png:
        raise ConfigError("n_png_renamed_as_jpg cannot exceed n_png")

    rng = random.Random(seed)
    dirs = ("media/photos", "media/trips/2020", "media/stories")
    members: dict[str, bytes] = {"media/": b""}
    index: list[dict] = []
    mood_counts = {m: 0 for m in _MOODS}
    renamed: list[dict] = []
    fmt_counts: dict[str, int] = {}

    def media_bytes(base: bytes) -> bytes:
        return base + bytes(rng.randrange(256) for _ in range(8))

    plan: list[tuple[str, str]] = []  # (true format, extension)
    plan += [("jpeg", "jpg")] * n_jpeg
    plan += [("png", "jpg")] * n_renamed
    plan += [("png", "png")] * (n_png - n_renamed)
    plan += [("mp4", "mp4")] * n_videos

    for i, (fmt, ext) in enumerate(plan):
        mood = _MOODS[i % len(_MOODS)]
        mood_counts[mood] += 1
        directory = dirs[i % len(dirs)]
        path = f"{directory}/{mood}_{i:03d}.{ext}"
        base = {"jpeg": JPEG_BYTES, "png": PNG_BYTES, "mp4": MP4_BYTES}[fmt]
        members[path] = media_bytes(base)
        fmt_counts[fmt] = fmt_counts.get(fmt, 0) + 1
        if fmt == "png" and ext == "jpg":
            renamed.append({"path": path, "true_format": "png"})
        taken_at_ms = start_ms + i * step_minutes * 60_000
        entry = {
            "path": path,
            "taken_at": _iso(taken_at_ms),
            "kind": "video" if fmt == "mp4" else "photo",
        }
        if caption_every and i % caption_every == 0:
            entry["caption"] = f"day {i} note"
        index.append(entry)

    unindexed_paths = []
    for i in range(n_unindexed):
        mood = _MOODS[(len(plan) + i) % len(_MOODS)]
        mood_counts[mood] += 1
        path = f"media/archive/{mood}_extra_{i:03d}.jpg"
        members[path] = media_bytes(JPEG_BYTES)
        fmt_counts["jpeg"] = fmt_counts.get("jpeg", 0) + 1
        unindexed_paths.append(path)

    members["media.json"] = json.dumps(index, sort_keys=True).encode()

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    zip_path = out_dir / f"{name}.zip"
    _write_zip(zip_path, members)

    truth = {
        "provider": "instagram",
        "seed": seed,
        "media_total": len(plan) + n_unindexed,
        "indexed_paths": sorted(e["path"] for e in index),
        "unindexed_paths": sorted(unindexed_paths),
        "renamed": renamed,
        "format_counts": fmt_counts,
        "mood_counts": mood_counts,
    }
    sidecar = out_dir / f"{name}.truth.json"
    sidecar.write_text(json.dumps(truth, indent=2, sort_keys=True),
                       encoding="utf-8")
    return zip_path, sidecar


# --------------------------------------------------------------------------
# google takeout


def generate_google_fixture(spec: dict, seed: int, out_dir: str | Path
                            ) -> tuple[Path, Path]:
    """Location history with a known home, planted duplicates, and
    out-of-range coordinates.

    Spec keys: n_pings, start (ISO), step_minutes, home/away (lat_e7,
    lon_e7 pairs), night_home_fraction, day_home_fraction,
    n_duplicate_ts, n_out_of_range, jitter_m.
    """
    name = spec.get("name", "google_fixture")
    n_pings = int(spec.get("n_pings", 200))
    step_minutes = int(spec.get("step_minutes", 30))
    start_ms = _start_ms(spec)
    home = tuple(spec.get("home", (521000000, 48000000)))
    away = tuple(spec.get("away", (521450000, 48600000)))
    night_home = float(spec.get("night_home_fraction", 0.9))
    day_home = float(spec.get("day_home_fraction", 0.3))
    n_dups = int(spec.get("n_duplicate_ts", 0))
    n_bad = int(spec.get("n_out_of_range", 0))
    jitter_m = float(spec.get("jitter_m", 25.0))

    rng = random.Random(seed)
    jitter_e7 = int(jitter_m / 111_320.0 * 1e7)

    rows: list[dict] = []
    truth_pings: list[dict] = []
    night_home_count = night_away_count = 0
    for i in range(n_pings):
        t_ms = start_ms + i * step_minutes * 60_000
        hour = (t_ms // 3_600_000) % 24
        is_night = hour < 6
        at_home = rng.random() < (night_home if is_night else day_home)
        if is_night:
            if at_home:
                night_home_count += 1
            else:
                night_away_count += 1
        base = home if at_home else away
        lat = base[0] + rng.randint(-jitter_e7, jitter_e7)
        lon = base[1] + rng.randint(-jitter_e7, jitter_e7)
        accuracy = rng.randint(5, 45)
        if at_home:
            p = round(rng.uniform(0.55, 0.9), 4)
            candidates = [{"placeId": "home", "probability": p},
                          {"placeId": "gym", "probability": round(0.95 - p, 4)}]
        else:
            p = round(rng.uniform(0.5, 0.85), 4)
            candidates = [{"placeId": "work", "probability": p},
                          {"placeId": "cafe", "probability": round(0.9 - p, 4)}]
        rows.append({
            "timestampMs": str(t_ms),
            "latitudeE7": lat,
            "longitudeE7": lon,
            "accuracy": accuracy,
            "semanticCandidates": candidates,
        })
        truth_pings.append({"t_ms": t_ms, "at_home": at_home,
                            "accuracy": accuracy})

    duplicate_ts: list[int] = []
    for _ in range(n_dups):
        src = rows[rng.randrange(len(rows))]
        dup = dict(src)
        dup["accuracy"] = int(src["accuracy"]) + 40  # strictly worse
        rows.append(dup)
        duplicate_ts.append(int(src["timestampMs"]))

    out_of_range_ts: list[int] = []
    for i in range(n_bad):
        t_ms = start_ms + (n_pings + i) * step_minutes * 60_000
        rows.append({
            "timestampMs": str(t_ms),
            "latitudeE7": 950_000_000,  # beyond the pole
            "longitudeE7": 0,
            "accuracy": 10,
        })
        out_of_range_ts.append(t_ms)

    rng.shuffle(rows)  # parsers must sort, so the file must not be sorted

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    zip_path = out_dir / f"{name}.zip"
    _write_zip(zip_path, {
        "Location History.json": json.dumps(rows, sort_keys=True).encode(),
    })

    truth = {
        "provider": "google_takeout",
        "seed": seed,
        "rows_in_file": len(rows),
        "expected_emitted": n_pings,
        "expected_dropped": n_dups + n_bad,
        "duplicate_timestamps_ms": sorted(duplicate_ts),
        "out_of_range_timestamps_ms": sorted(out_of_range_ts),
        "home": {"lat_e7": home[0], "lon_e7": home[1]},
        "away": {"lat_e7": away[0], "lon_e7": away[1]},
        "night_home_count": night_home_count,
        "night_away_count": night_away_count,
        "pings": sorted(truth_pings, key=lambda p: p["t_ms"]),
    }
    sidecar = out_dir / f"{name}.truth.json"
    sidecar.write_text(json.dumps(truth, indent=2, sort_keys=True),
                       encoding="utf-8")
    return zip_path, sidecar


# --------------------------------------------------------------------------


def _start_ms(spec: dict) -> int:
    from .core import parse_timestamp

    return parse_timestamp(str(spec.get("start", "2020-03-01T00:00:00Z"))).epoch_ms


def _iso(epoch_ms: int) -> str:
    from .core import Timestamp

    return Timestamp(epoch_ms=epoch_ms).to_iso()
