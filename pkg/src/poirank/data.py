"""Check-in parsing, filtering, chronological splitting, and dataset
statistics.

Input format: UTF-8 text, one check-in per line,
``user_id,poi_id,timestamp,lat,lon``; lines starting with ``#`` are
skipped. Ids are remapped to dense ranges on parse (users 0..N-1, POIs
1..M with 0 reserved for padding) in first-appearance order.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np


class ParseError(ValueError):
    """Malformed input line; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str) -> None:
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class ValidationError(ValueError):
    """Field value outside its documented range."""

    def __init__(self, line_no: int, message: str) -> None:
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class EmptyDatasetError(ValueError):
    """Filtering removed every user."""


class DegenerateDatasetError(ValueError):
    """Zero variance in training coordinates; normalization undefined."""


@dataclass(frozen=True)
class CheckIn:
    """One (user, POI, time, place) event. poi_id >= 1; 0 is padding."""
    user_id: int
    poi_id: int
    timestamp: int
    lat: float
    lon: float


@dataclass
class DatasetStats:
    mu_lat: float
    sigma_lat: float
    mu_lon: float
    sigma_lon: float
    popularity: dict[int, int]
    num_pois: int
    num_users: int


@dataclass
class SplitDataset:
    """Per-user chronological train/eval lists plus training statistics.

    poi_coords maps every surviving POI id to its canonical (lat, lon),
    taken from the POI's first occurrence; candidate slates are built
    from it.
    """
    train: dict[int, list[CheckIn]]
    eval: dict[int, list[CheckIn]]
    stats: DatasetStats
    poi_coords: dict[int, tuple[float, float]] = field(default_factory=dict)


def parse_checkins(source: Iterable[str] | TextIO):
    """Parse a line stream into check-ins with dense ids.

    Returns (checkins, user_map, poi_map) where the maps go from the
    original id token to the dense id.
    """
    checkins: list[CheckIn] = []
    user_map: dict[str, int] = {}
    poi_map: dict[str, int] = {}
    for line_no, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 5:
            raise ParseError(line_no, f"expected 5 comma-separated fields, got {len(parts)}")
        user_tok, poi_tok, ts_tok, lat_tok, lon_tok = (p.strip() for p in parts)
        try:
            timestamp = int(ts_tok)
        except ValueError:
            raise ParseError(line_no, f"non-integer timestamp {ts_tok!r}") from None
        try:
            lat = float(lat_tok)
            lon = float(lon_tok)
        except ValueError:
            raise ParseError(line_no, "non-numeric coordinate") from None
        if not -90.0 <= lat <= 90.0:
            raise ValidationError(line_no, f"latitude {lat} outside [-90, 90]")
        if not -180.0 <= lon <= 180.0:
            raise ValidationError(line_no, f"longitude {lon} outside [-180, 180]")
        if user_tok not in user_map:
            user_map[user_tok] = len(user_map)
        if poi_tok not in poi_map:
            poi_map[poi_tok] = len(poi_map) + 1  # 0 reserved for padding
        checkins.append(CheckIn(user_map[user_tok], poi_map[poi_tok], timestamp, lat, lon))
    return checkins, user_map, poi_map


def _filter_fixpoint(checkins: list[CheckIn], user_min: int, poi_min: int) -> list[CheckIn]:
    """Alternate user/POI count filtering until nothing changes."""
    current = checkins
    while True:
        user_counts = Counter(c.user_id for c in current)
        kept = [c for c in current if user_counts[c.user_id] >= user_min]
        poi_counts = Counter(c.poi_id for c in kept)
        kept = [c for c in kept if poi_counts[c.poi_id] >= poi_min]
        if len(kept) == len(current):
            return kept
        current = kept


def filter_and_split(checkins: list[CheckIn], min_count: int = 10,
                     holdout: int = 30) -> SplitDataset:
    """Filter infrequent users/POIs to a fixpoint, then hold out each
    user's most recent `holdout` check-ins for evaluation.

    A user additionally needs > holdout check-ins post-filter so that
    every eval instance has at least one history event; users at or
    below that bar are dropped (and the fixpoint rerun).
    """
    if not checkins:
        raise EmptyDatasetError("no check-ins to filter")
    user_min = max(min_count, holdout + 1)
    kept = _filter_fixpoint(checkins, user_min, min_count)
    if not kept:
        raise EmptyDatasetError(
            f"all data filtered away (min_count={min_count}, holdout={holdout})")

    by_user: dict[int, list[CheckIn]] = {}
    for c in kept:
        by_user.setdefault(c.user_id, []).append(c)

    train: dict[int, list[CheckIn]] = {}
    evals: dict[int, list[CheckIn]] = {}
    for user, events in by_user.items():
        ordered = sorted(events, key=lambda c: c.timestamp)  # stable: ties keep input order
        train[user] = ordered[:-holdout]
        evals[user] = ordered[-holdout:]

    stats = compute_stats(train)
    poi_coords: dict[int, tuple[float, float]] = {}
    for c in kept:
        if c.poi_id not in poi_coords:
            poi_coords[c.poi_id] = (c.lat, c.lon)
    return SplitDataset(train=train, eval=evals, stats=stats, poi_coords=poi_coords)


def compute_stats(train: dict[int, list[CheckIn]]) -> DatasetStats:
    """Population mean/std of training coordinates plus POI popularity."""
    events = [c for seq in train.values() for c in seq]
    if not events:
        raise EmptyDatasetError("empty training split")
    lats = np.array([c.lat for c in events], dtype=np.float64)
    lons = np.array([c.lon for c in events], dtype=np.float64)
    sigma_lat = float(lats.std())
    sigma_lon = float(lons.std())
    if sigma_lat <= 0.0 or sigma_lon <= 0.0:
        raise DegenerateDatasetError(
            f"zero coordinate variance (sigma_lat={sigma_lat}, sigma_lon={sigma_lon})")
    popularity = Counter(c.poi_id for c in events)
    all_pois = {c.poi_id for c in events}
    return DatasetStats(
        mu_lat=float(lats.mean()),
        sigma_lat=sigma_lat,
        mu_lon=float(lons.mean()),
        sigma_lon=sigma_lon,
        popularity=dict(popularity),
        num_pois=len(all_pois),
        num_users=len(train),
    )


# ---------------------------------------------------------------------------
# Cache format: sectioned key/value + whitespace-delimited record text
# ---------------------------------------------------------------------------

def write_cache(split: SplitDataset, path: str, source_digest: str = "") -> None:
    stats = split.stats
    with open(path, "w", encoding="utf-8") as f:
        f.write("# poirank dataset cache v1\n")
        f.write("[stats]\n")
        f.write(f"source_digest={source_digest}\n")
        f.write(f"users={stats.num_users}\n")
        f.write(f"pois={stats.num_pois}\n")
        f.write(f"mu_lat={stats.mu_lat!r}\n")
        f.write(f"sigma_lat={stats.sigma_lat!r}\n")
        f.write(f"mu_lon={stats.mu_lon!r}\n")
        f.write(f"sigma_lon={stats.sigma_lon!r}\n")
        f.write("[popularity]\n")
        for poi in sorted(split.stats.popularity):
            f.write(f"{poi} {stats.popularity[poi]}\n")
        f.write("[poi_coords]\n")
        for poi in sorted(split.poi_coords):
            lat, lon = split.poi_coords[poi]
            f.write(f"{poi} {lat!r} {lon!r}\n")
        for section, data in (("train", split.train), ("eval", split.eval)):
            f.write(f"[{section}]\n")
            for user in sorted(data):
                for c in data[user]:
                    f.write(f"{c.user_id} {c.poi_id} {c.timestamp} {c.lat!r} {c.lon!r}\n")


def read_cache(path: str) -> tuple[SplitDataset, str]:
    """Load a cache file; returns (split, source_digest)."""
    kv: dict[str, str] = {}
    popularity: dict[int, int] = {}
    poi_coords: dict[int, tuple[float, float]] = {}
    train: dict[int, list[CheckIn]] = {}
    evals: dict[int, list[CheckIn]] = {}
    section = ""
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1]
                continue
            if section == "stats":
                key, _, value = line.partition("=")
                kv[key] = value
            elif section == "popularity":
                poi, count = line.split()
                popularity[int(poi)] = int(count)
            elif section == "poi_coords":
                poi, lat, lon = line.split()
                poi_coords[int(poi)] = (float(lat), float(lon))
            elif section in ("train", "eval"):
                u, p, t, lat, lon = line.split()
                c = CheckIn(int(u), int(p), int(t), float(lat), float(lon))
                target = train if section == "train" else evals
                target.setdefault(c.user_id, []).append(c)
    stats = DatasetStats(
        mu_lat=float(kv["mu_lat"]),
        sigma_lat=float(kv["sigma_lat"]),
        mu_lon=float(kv["mu_lon"]),
        sigma_lon=float(kv["sigma_lon"]),
        popularity=popularity,
        num_pois=int(kv["pois"]),
        num_users=int(kv["users"]),
    )
    split = SplitDataset(train=train, eval=evals, stats=stats, poi_coords=poi_coords)
    return split, kv.get("source_digest", "")
