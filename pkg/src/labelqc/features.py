"""Builds FeatureVectors from raw labels plus city infrastructure.

Two paths produce identical vectors except for the "clustered" bit:
the batch path runs full same-type clustering, the online path uses the
precomputed centroid index (the service's fast path).
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from labelqc.data import CrowdLabel, FeatureVector, way_type_code
from labelqc.errors import DataError
from labelqc.geo import (
    EARTH_RADIUS_M,
    ClusterIndex,
    Infrastructure,
    cluster,
    fast_clustered,
)


def _feature_from_parts(lb: CrowdLabel, di: float, dr: float, clustered: bool) -> FeatureVector:
    return FeatureVector(
        severity_value=float(lb.severity) if lb.severity is not None else 0.0,
        zoom=float(lb.zoom),
        distance_i=di,
        distance_r=dr,
        label_type=int(lb.label_type),
        way_type=way_type_code(lb.way_type),
        clustered=int(clustered),
        has_tag=int(len(lb.tags) > 0),
        has_description=int(lb.description is not None),
        has_severity=int(lb.severity is not None),
    )


class _InfraArrays:
    """Infrastructure flattened to numpy arrays for vectorized distance scans."""

    def __init__(self, infra: Infrastructure):
        if not infra.intersections:
            raise DataError("infrastructure has no intersections")
        if not infra.road_segments:
            raise DataError("infrastructure has no road segments")
        self.int_lat = np.array([p.lat for p in infra.intersections])
        self.int_lon = np.array([p.lon for p in infra.intersections])
        self.seg_a_lat = np.array([a.lat for a, _ in infra.road_segments])
        self.seg_a_lon = np.array([a.lon for a, _ in infra.road_segments])
        self.seg_b_lat = np.array([b.lat for _, b in infra.road_segments])
        self.seg_b_lon = np.array([b.lon for _, b in infra.road_segments])

    def distances(self, lat: float, lon: float) -> tuple[float, float]:
        lat1 = np.radians(lat)
        s = (
            np.sin((np.radians(self.int_lat) - lat1) / 2.0) ** 2
            + np.cos(lat1)
            * np.cos(np.radians(self.int_lat))
            * np.sin((np.radians(self.int_lon) - np.radians(lon)) / 2.0) ** 2
        )
        di = float(np.min(2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.minimum(s, 1.0)))))

        # Point-to-segment in a local equirectangular frame around the label.
        k = np.cos(lat1) * EARTH_RADIUS_M
        m = EARTH_RADIUS_M
        ax = np.radians(self.seg_a_lon - lon) * k
        ay = np.radians(self.seg_a_lat - lat) * m
        bx = np.radians(self.seg_b_lon - lon) * k
        by = np.radians(self.seg_b_lat - lat) * m
        dx, dy = bx - ax, by - ay
        seg2 = dx * dx + dy * dy
        t = np.where(seg2 > 0.0, -(ax * dx + ay * dy) / np.where(seg2 > 0, seg2, 1.0), 0.0)
        t = np.clip(t, 0.0, 1.0)
        dr = float(np.min(np.hypot(ax + t * dx, ay + t * dy)))
        return di, dr


def featurize_batch(
    labels: Sequence[CrowdLabel],
    infra: Infrastructure,
    threshold_m: float = 10.0,
    index: Optional[ClusterIndex] = None,
) -> tuple[list[FeatureVector], ClusterIndex]:
    """Features for a whole dataset; clustering is computed over the dataset.

    Pass a prebuilt ``index`` to skip reclustering (flags then come from the
    fast path instead of exact component membership).
    """
    arrays = _InfraArrays(infra)
    if index is None:
        index, flags = cluster(labels, threshold_m)
    else:
        flags = np.array([int(fast_clustered(lb, index)) for lb in labels])
    out = []
    for lb, fl in zip(labels, flags):
        di, dr = arrays.distances(lb.position.lat, lb.position.lon)
        out.append(_feature_from_parts(lb, di, dr, bool(fl)))
    return out, index


def featurize_online(
    label: CrowdLabel, arrays: "_InfraArrays | Infrastructure", index: ClusterIndex
) -> FeatureVector:
    """Single-label features for the serving hot path (centroid shortcut)."""
    if isinstance(arrays, Infrastructure):
        arrays = _InfraArrays(arrays)
    di, dr = arrays.distances(label.position.lat, label.position.lon)
    return _feature_from_parts(label, di, dr, fast_clustered(label, index))


def infra_arrays(infra: Infrastructure) -> _InfraArrays:
    """Precompute the scan arrays once (the service does this at startup)."""
    return _InfraArrays(infra)
