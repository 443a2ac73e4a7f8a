"""Spatiotemporal arithmetic: great-circle distance, calendar features,
time gaps, and the fixed bucketization feeding the attention bias tables.

Everything here is pure and stateless. Bucket boundaries are half-open
intervals [b_{i-1}, b_i) with the boundary value falling in the upper
bucket, so bucket(3600) == 1 for the time boundaries below.
"""

from __future__ import annotations

import math

import numpy as np

EARTH_RADIUS_KM = 6371.0

# Gap boundaries in seconds: 1h, 6h, 24h, 7d, 30d (month = 30 days).
TIME_BUCKET_BOUNDARIES = (3600, 21600, 86400, 604800, 2592000)
NUM_TIME_BUCKETS = len(TIME_BUCKET_BOUNDARIES) + 1

# Distance boundaries in kilometers.
DIST_BUCKET_BOUNDARIES = (0.1, 0.5, 2.0, 10.0)
NUM_DIST_BUCKETS = len(DIST_BUCKET_BOUNDARIES) + 1

SECONDS_PER_DAY = 86400
# 1970-01-01 was a Thursday; weekday convention is Monday=0.
EPOCH_WEEKDAY = 3


def haversine_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in kilometers between two (lat, lon) points."""
    phi1 = math.radians(lat1)
    phi2 = math.radians(lat2)
    dphi = math.radians(lat2 - lat1)
    dlam = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(a)))


def haversine_km_vec(lat1, lon1, lat2, lon2):
    """Vectorized haversine over numpy arrays (broadcasting allowed)."""
    phi1 = np.radians(np.asarray(lat1, dtype=np.float64))
    phi2 = np.radians(np.asarray(lat2, dtype=np.float64))
    dphi = np.radians(np.asarray(lat2, dtype=np.float64) - np.asarray(lat1, dtype=np.float64))
    dlam = np.radians(np.asarray(lon2, dtype=np.float64) - np.asarray(lon1, dtype=np.float64))
    a = np.sin(dphi / 2.0) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.minimum(1.0, np.sqrt(a)))


def time_features(timestamp: int) -> tuple[int, int]:
    """(hour 0..23, weekday Monday=0..Sunday=6) for a UTC Unix timestamp."""
    hour = (timestamp % SECONDS_PER_DAY) // 3600
    weekday = (timestamp // SECONDS_PER_DAY + EPOCH_WEEKDAY) % 7
    return int(hour), int(weekday)


def time_features_vec(timestamps) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized time_features over an integer array."""
    ts = np.asarray(timestamps, dtype=np.int64)
    hours = (ts % SECONDS_PER_DAY) // 3600
    weekdays = (ts // SECONDS_PER_DAY + EPOCH_WEEKDAY) % 7
    return hours, weekdays


def time_gap(t_i: int, t_last: int) -> int:
    """Non-negative gap between an event and the most recent one."""
    return max(0, t_last - t_i)


def bucketize_time(delta: float) -> int:
    """Bucket index 0..5 for a non-negative time gap in seconds."""
    i = 0
    for b in TIME_BUCKET_BOUNDARIES:
        if delta < b:
            return i
        i += 1
    return i


def bucketize_dist(d: float) -> int:
    """Bucket index 0..4 for a non-negative distance in kilometers."""
    i = 0
    for b in DIST_BUCKET_BOUNDARIES:
        if d < b:
            return i
        i += 1
    return i


_TIME_BOUNDS_ARR = np.asarray(TIME_BUCKET_BOUNDARIES, dtype=np.float64)
_DIST_BOUNDS_ARR = np.asarray(DIST_BUCKET_BOUNDARIES, dtype=np.float64)


def bucketize_time_vec(deltas) -> np.ndarray:
    """Vectorized bucketize_time; boundary values go to the upper bucket."""
    return np.searchsorted(_TIME_BOUNDS_ARR, np.asarray(deltas, dtype=np.float64), side="right")


def bucketize_dist_vec(dists) -> np.ndarray:
    """Vectorized bucketize_dist; boundary values go to the upper bucket."""
    return np.searchsorted(_DIST_BOUNDS_ARR, np.asarray(dists, dtype=np.float64), side="right")
