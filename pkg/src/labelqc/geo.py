"""Geodesic distances, same-type spatial clustering, and the centroid fast path.

All distance work is plain linear scan over numpy arrays: at desk scale
(thousands of points) that is well under a millisecond per query, so no
spatial index is kept. Costs are O(n) per query and O(n^2) for clustering.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from labelqc.data import CrowdLabel, GeoPoint, LabelType
from labelqc.errors import DataError

EARTH_RADIUS_M = 6_371_000.0
DEFAULT_CLUSTER_THRESHOLD_M = 10.0

_CLUSTER_INDEX_MAGIC = b"LQCI"
_CLUSTER_INDEX_VERSION = 1


def haversine(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters on a sphere of radius EARTH_RADIUS_M."""
    lat1, lon1, lat2, lon2 = map(np.radians, (a.lat, a.lon, b.lat, b.lon))
    s = (
        np.sin((lat2 - lat1) / 2.0) ** 2
        + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2.0) ** 2
    )
    return float(2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.minimum(s, 1.0))))


def _haversine_many(lat: float, lon: float, lats: np.ndarray, lons: np.ndarray) -> np.ndarray:
    lat1 = np.radians(lat)
    lon1 = np.radians(lon)
    lat2 = np.radians(lats)
    lon2 = np.radians(lons)
    s = (
        np.sin((lat2 - lat1) / 2.0) ** 2
        + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2.0) ** 2
    )
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.minimum(s, 1.0)))


@dataclass(frozen=True)
class Infrastructure:
    """Street furniture the distance features are measured against."""

    intersections: tuple[GeoPoint, ...]
    road_segments: tuple[tuple[GeoPoint, GeoPoint], ...]

    @staticmethod
    def from_jsonl(path: str | Path) -> "Infrastructure":
        intersections, segments = [], []
        with open(path, encoding="utf-8") as f:
            for i, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                rec = json.loads(line)
                kind = rec.get("kind")
                if kind == "intersection":
                    intersections.append(GeoPoint(rec["lat"], rec["lon"]))
                elif kind == "segment":
                    segments.append(
                        (GeoPoint(rec["lat1"], rec["lon1"]), GeoPoint(rec["lat2"], rec["lon2"]))
                    )
                else:
                    raise DataError(f"{path}:{i}: unknown kind {kind!r}")
        return Infrastructure(tuple(intersections), tuple(segments))

    def to_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for p in self.intersections:
                f.write(json.dumps({"kind": "intersection", "lat": p.lat, "lon": p.lon}) + "\n")
            for a, b in self.road_segments:
                f.write(
                    json.dumps(
                        {"kind": "segment", "lat1": a.lat, "lon1": a.lon, "lat2": b.lat, "lon2": b.lon}
                    )
                    + "\n"
                )


@dataclass(frozen=True)
class ClusterIndex:
    """Per-type cluster centroids with member counts, for the inference fast path."""

    city_id: str
    threshold_m: float
    # per label type: (centroid lat, centroid lon, member_count) rows
    centroids: dict[LabelType, np.ndarray]

    def save(self, path: str | Path) -> None:
        rows = []
        for lt in LabelType:
            arr = self.centroids.get(lt)
            if arr is None:
                continue
            for lat, lon, count in arr:
                rows.append((int(lt), float(lat), float(lon), int(count)))
        city = self.city_id.encode("utf-8")
        with open(path, "wb") as f:
            f.write(_CLUSTER_INDEX_MAGIC)
            f.write(struct.pack("<IdH", _CLUSTER_INDEX_VERSION, self.threshold_m, len(city)))
            f.write(city)
            f.write(struct.pack("<I", len(rows)))
            for lt, lat, lon, count in rows:
                f.write(struct.pack("<BddI", lt, lat, lon, count))

    @staticmethod
    def load(path: str | Path) -> "ClusterIndex":
        with open(path, "rb") as f:
            magic = f.read(4)
            if magic != _CLUSTER_INDEX_MAGIC:
                raise DataError(f"{path}: not a cluster index file")
            version, threshold, citylen = struct.unpack("<IdH", f.read(14))
            if version != _CLUSTER_INDEX_VERSION:
                raise DataError(f"{path}: unsupported cluster index version {version}")
            city = f.read(citylen).decode("utf-8")
            (n,) = struct.unpack("<I", f.read(4))
            per_type: dict[LabelType, list] = {lt: [] for lt in LabelType}
            for _ in range(n):
                lt, lat, lon, count = struct.unpack("<BddI", f.read(21))
                per_type[LabelType(lt)].append((lat, lon, count))
        centroids = {
            lt: np.array(rows, dtype=np.float64).reshape(-1, 3) for lt, rows in per_type.items()
        }
        return ClusterIndex(city_id=city, threshold_m=threshold, centroids=centroids)


def cluster(
    labels: Sequence[CrowdLabel],
    threshold_m: float = DEFAULT_CLUSTER_THRESHOLD_M,
    city_id: str = "",
) -> tuple[ClusterIndex, np.ndarray]:
    """Single-linkage clustering per label type.

    Two labels connect when their haversine distance is <= threshold_m;
    clusters are the connected components. Returns the centroid index plus a
    0/1 vector marking labels whose component has at least two members (the
    batch-path "clustered" feature).
    """
    if threshold_m <= 0:
        raise DataError(f"threshold_m must be positive, got {threshold_m}")
    member_flags = np.zeros(len(labels), dtype=np.int64)
    centroids: dict[LabelType, np.ndarray] = {}
    if not labels:
        return (
            ClusterIndex(city_id, threshold_m, {lt: np.zeros((0, 3)) for lt in LabelType}),
            member_flags,
        )
    if not city_id:
        city_id = labels[0].city_id

    for lt in LabelType:
        idx = [i for i, lb in enumerate(labels) if lb.label_type == lt]
        if not idx:
            centroids[lt] = np.zeros((0, 3))
            continue
        lats = np.array([labels[i].position.lat for i in idx])
        lons = np.array([labels[i].position.lon for i in idx])
        n = len(idx)
        parent = list(range(n))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        # Candidate pairs come from a degree-grid of >= threshold-sized cells
        # (3x3 neighborhood); membership itself is decided by exact haversine,
        # so results match a full O(n^2) scan.
        cell_lat = threshold_m / 111_000.0
        max_cos = max(np.cos(np.radians(np.max(np.abs(lats)))), 1e-6)
        cell_lon = threshold_m / (111_000.0 * max_cos)
        grid: dict[tuple[int, int], list[int]] = {}
        keys = [
            (int(np.floor(lats[i] / cell_lat)), int(np.floor(lons[i] / cell_lon)))
            for i in range(n)
        ]
        for i, key in enumerate(keys):
            grid.setdefault(key, []).append(i)
        for i in range(n):
            ki, kj = keys[i]
            cand = [
                j
                for di in (-1, 0, 1)
                for dj in (-1, 0, 1)
                for j in grid.get((ki + di, kj + dj), ())
                if j > i
            ]
            if not cand:
                continue
            cand = np.array(cand)
            d = _haversine_many(lats[i], lons[i], lats[cand], lons[cand])
            for j in cand[d <= threshold_m]:
                ri, rj = find(i), find(int(j))
                if ri != rj:
                    parent[rj] = ri
        comps: dict[int, list[int]] = {}
        for i in range(n):
            comps.setdefault(find(i), []).append(i)
        rows = []
        for members in comps.values():
            # Sort member coordinates before averaging so the centroid bits do
            # not depend on input order.
            pts = sorted(zip(lats[members], lons[members]))
            rows.append(
                (
                    float(np.mean([p[0] for p in pts])),
                    float(np.mean([p[1] for p in pts])),
                    len(members),
                )
            )
            if len(members) >= 2:
                for m in members:
                    member_flags[idx[m]] = 1
        rows.sort()
        centroids[lt] = np.array(rows, dtype=np.float64).reshape(-1, 3)
    return ClusterIndex(city_id, threshold_m, centroids), member_flags


def fast_clustered(label: CrowdLabel, index: ClusterIndex) -> bool:
    """Centroid shortcut: is the label within threshold of a same-type centroid?

    Approximates full reclustering; exact only when clusters are tighter than
    the threshold radius around their centroid.
    """
    arr = index.centroids.get(label.label_type)
    if arr is None or len(arr) == 0:
        return False
    d = _haversine_many(label.position.lat, label.position.lon, arr[:, 0], arr[:, 1])
    return bool(np.any(d[arr[:, 2] >= 1] <= index.threshold_m))


def _equirect_xy(lat: float, lon: float, ref_lat: float, ref_lon: float) -> tuple[float, float]:
    # Local equirectangular projection centered on the reference point;
    # error is negligible at the sub-kilometer scales of sidewalk data.
    x = np.radians(lon - ref_lon) * np.cos(np.radians(ref_lat)) * EARTH_RADIUS_M
    y = np.radians(lat - ref_lat) * EARTH_RADIUS_M
    return float(x), float(y)


def point_segment_distance_m(p: GeoPoint, a: GeoPoint, b: GeoPoint) -> float:
    """Distance from point to great-circle segment via local planar projection."""
    ax, ay = _equirect_xy(a.lat, a.lon, p.lat, p.lon)
    bx, by = _equirect_xy(b.lat, b.lon, p.lat, p.lon)
    dx, dy = bx - ax, by - ay
    seg2 = dx * dx + dy * dy
    if seg2 == 0.0:
        t = 0.0
    else:
        t = max(0.0, min(1.0, (-(ax * dx + ay * dy)) / seg2))
    cx, cy = ax + t * dx, ay + t * dy
    return float(np.hypot(cx, cy))


def distance_features(label: CrowdLabel, infra: Infrastructure) -> tuple[float, float]:
    """(distance to nearest intersection, distance to nearest road segment)."""
    if not infra.intersections:
        raise DataError("infrastructure has no intersections")
    if not infra.road_segments:
        raise DataError("infrastructure has no road segments")
    lats = np.array([p.lat for p in infra.intersections])
    lons = np.array([p.lon for p in infra.intersections])
    di = float(np.min(_haversine_many(label.position.lat, label.position.lon, lats, lons)))
    dr = min(point_segment_distance_m(label.position, a, b) for a, b in infra.road_segments)
    return di, dr
