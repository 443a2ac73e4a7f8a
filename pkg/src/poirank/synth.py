"""Synthetic check-in corpora.

`generate_checkins` builds a candidate-dependent corpus: each user cycles
through a few daily intent slots (morning / midday / evening), each slot
anchored to one geographic zone, and every next visit is drawn from POIs
near the current slot's anchor. Zones sit tens of kilometers apart while
POIs inside a zone sit within walking distance, so candidate-to-history
distance carries most of the signal and recency separates the active
slot from stale ones.

`generate_favorites` builds the trivial memorization corpus: every user
deterministically revisits a single favorite POI.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KM_PER_DEG_LAT = 111.195
SLOT_HOURS = (9, 13, 19)


@dataclass
class SynthSpec:
    users: int = 40
    pois: int = 120
    events_per_user: int = 70
    zones: int = 6
    zone_spacing_deg: float = 0.5
    zone_radius_km: float = 0.4
    base_lat: float = 40.0
    base_lon: float = -74.0
    seed: int = 0


def _zone_centers(spec: SynthSpec) -> np.ndarray:
    cols = int(np.ceil(np.sqrt(spec.zones)))
    centers = []
    for z in range(spec.zones):
        centers.append((spec.base_lat + spec.zone_spacing_deg * (z // cols),
                        spec.base_lon + spec.zone_spacing_deg * (z % cols)))
    return np.array(centers, dtype=np.float64)


def _poi_layout(spec: SynthSpec, rng: np.random.Generator):
    """POI id -> (zone, lat, lon); ids 1..pois round-robin over zones."""
    centers = _zone_centers(spec)
    zone_of = {}
    coords = {}
    for poi in range(1, spec.pois + 1):
        zone = (poi - 1) % spec.zones
        clat, clon = centers[zone]
        dlat = rng.uniform(-spec.zone_radius_km, spec.zone_radius_km) / KM_PER_DEG_LAT
        dlon = (rng.uniform(-spec.zone_radius_km, spec.zone_radius_km)
                / (KM_PER_DEG_LAT * np.cos(np.radians(clat))))
        zone_of[poi] = zone
        coords[poi] = (clat + dlat, clon + dlon)
    return zone_of, coords


def generate_checkins(spec: SynthSpec) -> list[tuple[int, int, int, float, float]]:
    """Rows of (user, poi, timestamp, lat, lon), chronological per user."""
    rng = np.random.default_rng(spec.seed)
    zone_of, coords = _poi_layout(spec, rng)
    pois_by_zone = [[p for p, z in zone_of.items() if z == zone] for zone in range(spec.zones)]
    rows: list[tuple[int, int, int, float, float]] = []
    for user in range(spec.users):
        slot_zones = rng.permutation(spec.zones)[:len(SLOT_HOURS)]
        events = 0
        day = 0
        while events < spec.events_per_user:
            for slot, zone in zip(SLOT_HOURS, slot_zones):
                t = day * 86400 + slot * 3600 + int(rng.integers(0, 1800))
                for _ in range(int(rng.integers(2, 5))):
                    if events >= spec.events_per_user:
                        break
                    poi = int(rng.choice(pois_by_zone[zone]))
                    lat, lon = coords[poi]
                    rows.append((user, poi, t, lat, lon))
                    events += 1
                    t += int(rng.integers(1200, 3600))
            day += 1
    return rows


def generate_favorites(users: int = 50, pois: int = 100, events_per_user: int = 40,
                       seed: int = 0) -> list[tuple[int, int, int, float, float]]:
    """Each user visits a single deterministic favorite, hourly."""
    rng = np.random.default_rng(seed)
    rows = []
    coords = {}
    for poi in range(1, pois + 1):
        coords[poi] = (40.0 + 0.01 * ((poi - 1) // 10), -74.0 + 0.01 * ((poi - 1) % 10))
    for user in range(users):
        favorite = (user % pois) + 1
        t0 = int(rng.integers(0, 86400))
        lat, lon = coords[favorite]
        for i in range(events_per_user):
            rows.append((user, favorite, t0 + i * 3600, lat, lon))
    return rows


def write_checkin_file(rows: list[tuple[int, int, int, float, float]], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("# user_id,poi_id,timestamp,lat,lon\n")
        for user, poi, t, lat, lon in rows:
            f.write(f"{user},{poi},{t},{lat!r},{lon!r}\n")
