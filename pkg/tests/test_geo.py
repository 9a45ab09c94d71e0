import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from labelqc.data import GeoPoint, LabelType
from labelqc.errors import DataError
from labelqc.geo import (
    DEFAULT_CLUSTER_THRESHOLD_M,
    EARTH_RADIUS_M,
    ClusterIndex,
    Infrastructure,
    cluster,
    distance_features,
    fast_clustered,
    haversine,
    point_segment_distance_m,
)
from labelqc.synth import SynthConfig, generate

from conftest import make_label

coords = st.tuples(
    st.floats(min_value=-80, max_value=80),
    st.floats(min_value=-179, max_value=179),
)


class TestHaversine:
    def test_identity(self):
        p = GeoPoint(47.6062, -122.3321)
        assert haversine(p, p) == 0.0

    def test_seattle_chicago(self):
        # Frozen from an independent spherical-law-of-cosines calculation
        # (R = 6,371,000 m): 2,788,857 m.
        d = haversine(GeoPoint(47.6062, -122.3321), GeoPoint(41.8781, -87.6298))
        assert d == pytest.approx(2_788_857.0, abs=5_000.0)

    def test_antipodal(self):
        d = haversine(GeoPoint(10.0, 20.0), GeoPoint(-10.0, -160.0))
        assert d == pytest.approx(math.pi * EARTH_RADIUS_M, abs=1_000.0)

    @given(coords, coords)
    @settings(max_examples=100)
    def test_symmetry_and_nonnegativity(self, a, b):
        pa, pb = GeoPoint(*a), GeoPoint(*b)
        d1, d2 = haversine(pa, pb), haversine(pb, pa)
        assert d1 == pytest.approx(d2, rel=1e-12)
        assert d1 >= 0.0

    @given(coords, coords, coords)
    @settings(max_examples=100)
    def test_triangle_inequality(self, a, b, c):
        pa, pb, pc = GeoPoint(*a), GeoPoint(*b), GeoPoint(*c)
        ab, bc, ac = haversine(pa, pb), haversine(pb, pc), haversine(pa, pc)
        assert ac <= ab + bc + 1e-6 * max(1.0, ac)


def _brute_force_components(labels, threshold_m):
    """O(n^2) union-find oracle over exact pairwise haversine distances."""
    by_type = {}
    for i, lb in enumerate(labels):
        by_type.setdefault(lb.label_type, []).append(i)
    comp = {}
    for lt, idx in by_type.items():
        parent = {i: i for i in idx}

        def find(x):
            while parent[x] != x:
                x = parent[x]
            return x

        for a in range(len(idx)):
            for b in range(a + 1, len(idx)):
                i, j = idx[a], idx[b]
                if haversine(labels[i].position, labels[j].position) <= threshold_m:
                    ri, rj = find(i), find(j)
                    if ri != rj:
                        parent[rj] = ri
        for i in idx:
            comp[i] = (lt, find(i))
    return comp


class TestCluster:
    def test_two_labels_within_threshold_merge(self):
        a = make_label(id="a", lat=47.61, lon=-122.33)
        b = make_label(id="b", lat=47.61 + 5 / 111_195.0, lon=-122.33)
        index, flags = cluster([a, b], threshold_m=10.0)
        rows = index.centroids[LabelType.CurbRamp]
        assert len(rows) == 1 and rows[0, 2] == 2
        assert flags.tolist() == [1, 1]

    def test_two_labels_beyond_threshold_stay_apart(self):
        a = make_label(id="a", lat=47.61, lon=-122.33)
        b = make_label(id="b", lat=47.61 + 15 / 111_195.0, lon=-122.33)
        index, flags = cluster([a, b], threshold_m=10.0)
        rows = index.centroids[LabelType.CurbRamp]
        assert len(rows) == 2 and flags.tolist() == [0, 0]

    def test_matches_brute_force_union_find(self):
        rng = np.random.default_rng(5)
        labels = [
            make_label(
                id=f"r{i}",
                label_type=LabelType(int(rng.integers(0, 5))),
                lat=47.61 + float(rng.uniform(0, 60)) / 111_195.0,
                lon=-122.33 + float(rng.uniform(0, 60)) / 75_000.0,
            )
            for i in range(50)
        ]
        oracle = _brute_force_components(labels, 10.0)
        _, flags = cluster(labels, threshold_m=10.0)
        from collections import Counter

        sizes = Counter(oracle.values())
        expected = [1 if sizes[oracle[i]] >= 2 else 0 for i in range(len(labels))]
        assert flags.tolist() == expected
        # component-size multiset must match too
        _, flags2 = cluster(labels, threshold_m=10.0)
        assert flags2.tolist() == flags.tolist()

    def test_permutation_invariance(self):
        rng = np.random.default_rng(9)
        labels = [
            make_label(
                id=f"p{i}",
                lat=47.61 + float(rng.uniform(0, 30)) / 111_195.0,
                lon=-122.33 + float(rng.uniform(0, 30)) / 75_000.0,
            )
            for i in range(40)
        ]
        index1, flags1 = cluster(labels, 10.0)
        perm = rng.permutation(len(labels))
        shuffled = [labels[i] for i in perm]
        index2, flags2 = cluster(shuffled, 10.0)
        assert flags2.tolist() == [flags1[i] for i in perm]
        assert np.array_equal(
            index1.centroids[LabelType.CurbRamp], index2.centroids[LabelType.CurbRamp]
        )

    def test_empty_input(self):
        index, flags = cluster([], 10.0)
        assert flags.size == 0
        assert all(len(v) == 0 for v in index.centroids.values())

    def test_bad_threshold(self):
        with pytest.raises(DataError):
            cluster([], 0.0)


class TestFastClustered:
    def test_label_at_centroid(self):
        lb = make_label()
        index, _ = cluster([lb, lb], 10.0)
        assert fast_clustered(lb, index) is True

    def test_eleven_meters_from_only_centroid(self):
        lb = make_label()
        index, _ = cluster([lb], 10.0)
        far = make_label(id="far", lat=lb.position.lat + 11 / 111_195.0)
        assert fast_clustered(far, index) is False

    def test_other_type_centroids_ignored(self):
        lb = make_label(label_type=LabelType.Obstacle)
        index, _ = cluster([lb], 10.0)
        probe = make_label(id="p", label_type=LabelType.CurbRamp)
        assert fast_clustered(probe, index) is False

    def test_agreement_beyond_double_threshold(self, small_city):
        labels, _, _ = small_city
        index, _ = cluster(list(labels), DEFAULT_CLUSTER_THRESHOLD_M)
        by_type = {}
        for lb in labels:
            by_type.setdefault(lb.label_type, []).append(lb)
        rng = np.random.default_rng(0)
        checked = 0
        for _ in range(300):
            lt = LabelType(int(rng.integers(0, 5)))
            probe = make_label(
                id="probe",
                label_type=lt,
                lat=47.61 + float(rng.uniform(-0.01, 0.03)),
                lon=-122.33 + float(rng.uniform(-0.01, 0.03)),
            )
            same = by_type.get(lt, [])
            if not same:
                continue
            dmin = min(haversine(probe.position, x.position) for x in same)
            if dmin > 2 * DEFAULT_CLUSTER_THRESHOLD_M:
                checked += 1
                assert fast_clustered(probe, index) is False
        assert checked > 100

    def test_roundtrip_serialization(self, tmp_path, small_city):
        labels, _, _ = small_city
        index, _ = cluster(list(labels), 10.0, city_id="testville")
        path = tmp_path / "clusters.bin"
        index.save(path)
        loaded = ClusterIndex.load(path)
        assert loaded.city_id == index.city_id
        assert loaded.threshold_m == index.threshold_m
        for lt in LabelType:
            assert np.array_equal(loaded.centroids[lt], index.centroids[lt])


def _grid_infra():
    pts = [GeoPoint(47.61 + i * 0.001, -122.33 + j * 0.001) for i in range(3) for j in range(3)]
    segs = []
    for i in range(3):
        for j in range(2):
            segs.append((pts[i * 3 + j], pts[i * 3 + j + 1]))
    return Infrastructure(tuple(pts), tuple(segs))


class TestDistanceFeatures:
    def test_on_intersection_is_zero(self):
        infra = _grid_infra()
        lb = make_label(lat=infra.intersections[0].lat, lon=infra.intersections[0].lon)
        di, _ = distance_features(lb, infra)
        assert di == 0.0

    def test_equidistant_takes_min(self):
        infra = _grid_infra()
        a, b = infra.intersections[0], infra.intersections[1]
        mid = GeoPoint((a.lat + b.lat) / 2, (a.lon + b.lon) / 2)
        lb = make_label(lat=mid.lat, lon=mid.lon)
        di, _ = distance_features(lb, infra)
        assert di == pytest.approx(haversine(mid, a), rel=1e-6)
        assert di == pytest.approx(haversine(mid, b), rel=1e-6)

    def test_matches_exhaustive_scan(self):
        infra = _grid_infra()
        rng = np.random.default_rng(11)
        for _ in range(20):
            lb = make_label(
                lat=47.61 + float(rng.uniform(-0.001, 0.003)),
                lon=-122.33 + float(rng.uniform(-0.001, 0.003)),
            )
            di, dr = distance_features(lb, infra)
            oracle_di = min(haversine(lb.position, p) for p in infra.intersections)
            oracle_dr = min(
                point_segment_distance_m(lb.position, a, b) for a, b in infra.road_segments
            )
            assert di == pytest.approx(oracle_di, rel=1e-9)
            assert dr == pytest.approx(oracle_dr, rel=1e-6)

    def test_empty_infra_rejected(self):
        with pytest.raises(DataError):
            distance_features(make_label(), Infrastructure((), ()))

    def test_infra_jsonl_roundtrip(self, tmp_path):
        infra = _grid_infra()
        p = tmp_path / "infra.jsonl"
        infra.to_jsonl(p)
        loaded = Infrastructure.from_jsonl(p)
        assert loaded == infra


class TestPointSegment:
    def test_point_on_segment(self):
        a, b = GeoPoint(47.61, -122.33), GeoPoint(47.611, -122.33)
        mid = GeoPoint(47.6105, -122.33)
        assert point_segment_distance_m(mid, a, b) < 0.01

    def test_degenerate_segment(self):
        a = GeoPoint(47.61, -122.33)
        p = GeoPoint(47.6101, -122.33)
        assert point_segment_distance_m(p, a, a) == pytest.approx(
            haversine(p, a), rel=1e-4
        )

    def test_beyond_endpoint_clamps(self):
        a, b = GeoPoint(47.61, -122.33), GeoPoint(47.611, -122.33)
        p = GeoPoint(47.612, -122.33)  # past b along the line
        assert point_segment_distance_m(p, a, b) == pytest.approx(
            haversine(p, b), rel=1e-4
        )
