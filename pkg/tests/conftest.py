import numpy as np
import pytest

from labelqc.data import CrowdLabel, FeatureVector, GeoPoint, LabelType
from labelqc.synth import SynthConfig, generate

FIXTURES = __file__.rsplit("/", 1)[0] + "/fixtures"


def make_label(
    id="x-1",
    label_type=LabelType.CurbRamp,
    lat=47.61,
    lon=-122.33,
    severity=None,
    tags=(),
    description=None,
    zoom=0,
    heading=0.0,
    pitch=0.0,
    way_type="residential",
    user_id="u0",
    city_id="testville",
    expert_verdict=None,
):
    return CrowdLabel(
        id=id,
        label_type=label_type,
        position=GeoPoint(lat, lon),
        severity=severity,
        tags=tuple(tags),
        description=description,
        zoom=zoom,
        heading=heading,
        pitch=pitch,
        way_type=way_type,
        user_id=user_id,
        city_id=city_id,
        expert_verdict=expert_verdict,
    )


def make_features(
    severity_value=0.0,
    zoom=0.0,
    distance_i=10.0,
    distance_r=3.0,
    label_type=0,
    way_type=0,
    clustered=0,
    has_tag=0,
    has_description=0,
    has_severity=0,
):
    return FeatureVector(
        severity_value=severity_value,
        zoom=zoom,
        distance_i=distance_i,
        distance_r=distance_r,
        label_type=label_type,
        way_type=way_type,
        clustered=clustered,
        has_tag=has_tag,
        has_description=has_description,
        has_severity=has_severity,
    )


def random_features(rng, n):
    return [
        make_features(
            severity_value=float(rng.integers(0, 6)),
            zoom=float(rng.integers(0, 4)),
            distance_i=float(rng.uniform(0, 120)),
            distance_r=float(rng.uniform(0, 40)),
            label_type=int(rng.integers(0, 5)),
            way_type=int(rng.integers(0, 6)),
            clustered=int(rng.integers(0, 2)),
            has_tag=int(rng.integers(0, 2)),
            has_description=int(rng.integers(0, 2)),
            has_severity=int(rng.integers(0, 2)),
        )
        for _ in range(n)
    ]


@pytest.fixture(scope="session")
def small_city():
    """200 synthetic labels plus infrastructure and truth, shared per session."""
    return generate(SynthConfig(n_labels=200, seed=42))
