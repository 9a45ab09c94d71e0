"""Synthetic crowd-label generator with planted ground truth.

Stands in for the unavailable production data: a jittered street grid with
way-typed segments and driveway stubs, plus a behavior model that makes
diligence signals (zoom, tags, descriptions, severity extremes) correlate
with correctness, and plants the classic error mode of ramp labels placed
mid-block on service ways. The planted truth is returned separately and must
never flow into the pipeline; only tests may read it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from labelqc.data import CrowdLabel, GeoPoint, LabelType
from labelqc.errors import DataError
from labelqc.geo import EARTH_RADIUS_M, Infrastructure

_TYPE_TAGS = {
    LabelType.CurbRamp: ("narrow", "points-into-traffic", "steep"),
    LabelType.MissingCurbRamp: ("alternate-route-present", "unclear-crossing"),
    LabelType.Obstacle: ("pole", "fire-hydrant", "vegetation", "trash-can", "parked-car"),
    LabelType.SurfaceProblem: ("cracks", "bumpy", "uneven", "grass"),
    LabelType.MissingSidewalk: ("ends-abruptly", "gravel", "street-has-no-sidewalks"),
}


@dataclass(frozen=True)
class BehaviorModel:
    """Diligence-signal probabilities conditioned on label correctness."""

    p_zoom_correct: float = 0.55
    p_zoom_wrong: float = 0.18
    p_tag_correct: float = 0.42
    p_tag_wrong: float = 0.15
    p_desc_correct: float = 0.06
    p_desc_wrong: float = 0.015
    p_severity_present: float = 0.55
    p_extreme_correct: float = 0.18
    p_extreme_wrong: float = 0.06


@dataclass(frozen=True)
class GeoModel:
    # 0 means "scale the street grid with the label count" so label density
    # stays desk-realistic instead of piling thousands of labels onto a few
    # blocks.
    grid_nx: int = 0
    grid_ny: int = 0
    spacing_m: float = 150.0
    origin_lat: float = 47.61
    origin_lon: float = -122.33
    jitter_m: float = 4.0
    corner_spread_m: float = 9.0  # ramp-label scatter around an intersection
    driveway_rate: float = 0.25  # driveway stubs per residential segment
    # "other" stands for ways the map source could not classify; the way-type
    # heuristic abstains there, which keeps its firing rate realistic.
    way_type_weights: tuple[tuple[str, float], ...] = (
        ("residential", 0.40),
        ("tertiary", 0.10),
        ("secondary", 0.06),
        ("primary", 0.06),
        ("service", 0.08),
        ("other", 0.30),
    )
    # Chance an incorrect ramp label lands at a driveway instead of at an
    # intersection corner (the classic confusion mode).
    p_driveway_confusion: float = 0.75
    # How driveway-confused labels split across map situations:
    #   known   - the driveway is a mapped service stub (way_type "service")
    #   unmapped- the way is absent from the map source (way_type "other",
    #             label sits off the mapped road network)
    #   onroad  - mistake against the residential roadway itself, mid-block
    #   rest    - residential block is mapped but the stub is not; the label
    #             carries "residential" and sits off-road mid-block
    p_driveway_known: float = 0.40
    p_driveway_unmapped: float = 0.25
    p_driveway_onroad: float = 0.0
    # Lateral offset (meters) of off-road placements from the block centerline.
    offroad_range: tuple[float, float] = (22.0, 45.0)
    # Non-ramp mistakes occasionally land far from any mapped road.
    p_offroad_wrong: float = 0.12


@dataclass(frozen=True)
class SynthConfig:
    n_labels: int = 1000
    type_mix: tuple[float, float, float, float, float] = (0.30, 0.18, 0.18, 0.22, 0.12)
    base_error_rate: tuple[float, float, float, float, float] = (0.28, 0.30, 0.32, 0.30, 0.26)
    behavior: BehaviorModel = field(default_factory=BehaviorModel)
    geo: GeoModel = field(default_factory=GeoModel)
    co_label_rate: float = 0.35
    # Wrong labels join existing sites at co_label_rate times this factor;
    # 1.0 makes the clustered bit pure coverage with no class signal.
    co_label_wrong_factor: float = 0.5
    city_id: str = "synth-a"
    n_users: int = 40
    seed: int = 0

    def __post_init__(self):
        if abs(sum(self.type_mix) - 1.0) > 1e-9:
            raise DataError(f"type_mix must sum to 1, got {sum(self.type_mix)}")
        for p in self.type_mix:
            if not 0.0 < p < 1.0:
                raise DataError("type_mix entries must be in (0,1)")
        for e in self.base_error_rate:
            if not 0.0 < e < 1.0:
                raise DataError("base_error_rate entries must be in (0,1)")
        if not 0.0 <= self.co_label_rate < 1.0:
            raise DataError("co_label_rate must be in [0,1)")

    def to_json(self) -> str:
        raw = {
            "n_labels": self.n_labels,
            "type_mix": list(self.type_mix),
            "base_error_rate": list(self.base_error_rate),
            "behavior": vars(self.behavior).copy(),
            "geo": {**vars(self.geo),
                    "way_type_weights": [list(w) for w in self.geo.way_type_weights],
                    "offroad_range": list(self.geo.offroad_range)},
            "co_label_rate": self.co_label_rate,
            "co_label_wrong_factor": self.co_label_wrong_factor,
            "city_id": self.city_id,
            "n_users": self.n_users,
            "seed": self.seed,
        }
        return json.dumps(raw, indent=2)

    @staticmethod
    def from_json(text: str) -> "SynthConfig":
        raw = json.loads(text)
        geo_raw = raw.get("geo", {})
        if "way_type_weights" in geo_raw:
            geo_raw = {**geo_raw, "way_type_weights": tuple((w, float(p)) for w, p in geo_raw["way_type_weights"])}
        if "offroad_range" in geo_raw:
            geo_raw = {**geo_raw, "offroad_range": tuple(geo_raw["offroad_range"])}
        return SynthConfig(
            n_labels=raw["n_labels"],
            type_mix=tuple(raw["type_mix"]),
            base_error_rate=tuple(raw["base_error_rate"]),
            behavior=BehaviorModel(**raw.get("behavior", {})),
            geo=GeoModel(**geo_raw),
            co_label_rate=raw.get("co_label_rate", 0.35),
            co_label_wrong_factor=raw.get("co_label_wrong_factor", 0.5),
            city_id=raw.get("city_id", "synth-a"),
            n_users=raw.get("n_users", 40),
            seed=raw.get("seed", 0),
        )

    @staticmethod
    def from_file(path: str | Path) -> "SynthConfig":
        return SynthConfig.from_json(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class SynthTruth:
    """Planted per-label truth; test-harness eyes only."""

    true_correct: dict[str, bool]
    behaviors: dict[str, dict]

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for label_id in self.true_correct:
                f.write(
                    json.dumps(
                        {
                            "id": label_id,
                            "true_correct": self.true_correct[label_id],
                            "behaviors": self.behaviors[label_id],
                        }
                    )
                    + "\n"
                )

    @staticmethod
    def load(path: str | Path) -> "SynthTruth":
        true_correct, behaviors = {}, {}
        with open(path, encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    rec = json.loads(line)
                    true_correct[rec["id"]] = rec["true_correct"]
                    behaviors[rec["id"]] = rec["behaviors"]
        return SynthTruth(true_correct, behaviors)


def _offset(lat: float, lon: float, dx_m: float, dy_m: float) -> GeoPoint:
    dlat = np.degrees(dy_m / EARTH_RADIUS_M)
    dlon = np.degrees(dx_m / (EARTH_RADIUS_M * np.cos(np.radians(lat))))
    return GeoPoint(lat + dlat, lon + dlon)


def _build_city(geo: GeoModel, rng: np.random.Generator, n_labels: int):
    """Jittered grid of intersections, way-typed block segments, driveways."""
    nx = geo.grid_nx or int(np.clip(np.ceil(np.sqrt(n_labels / 6.0)), 8, 60))
    ny = geo.grid_ny or nx
    inter = {}
    for i in range(nx):
        for j in range(ny):
            inter[(i, j)] = _offset(
                geo.origin_lat,
                geo.origin_lon,
                i * geo.spacing_m + rng.normal(0, geo.jitter_m),
                j * geo.spacing_m + rng.normal(0, geo.jitter_m),
            )
    names = [w for w, _ in geo.way_type_weights]
    probs = np.array([p for _, p in geo.way_type_weights])
    probs = probs / probs.sum()
    segments = []  # (a, b, way_type)
    for (i, j), a in inter.items():
        for di, dj in ((1, 0), (0, 1)):
            if (i + di, j + dj) in inter:
                b = inter[(i + di, j + dj)]
                way = names[int(rng.choice(len(names), p=probs))]
                segments.append((a, b, way))
    # Mapped driveway stubs hang off residential blocks and are part of the
    # road network the distance features see.
    residential = [s for s in segments if s[2] == "residential"]
    stubs = []
    n_drive = rng.binomial(len(residential), min(1.0, geo.driveway_rate)) if residential else 0
    for _ in range(n_drive):
        a, b, _ = residential[int(rng.integers(len(residential)))]
        t = rng.uniform(0.3, 0.7)
        mid = GeoPoint(a.lat + t * (b.lat - a.lat), a.lon + t * (b.lon - a.lon))
        dx = rng.uniform(8, 14) * rng.choice((-1, 1))
        dy = rng.uniform(8, 14) * rng.choice((-1, 1))
        stubs.append((mid, _offset(mid.lat, mid.lon, dx, dy), "service"))
    infra = Infrastructure(
        intersections=tuple(inter.values()),
        road_segments=tuple((a, b) for a, b, _ in segments + stubs),
    )
    return infra, list(inter.values()), segments, stubs


def _point_on_segment(a: GeoPoint, b: GeoPoint, rng) -> GeoPoint:
    t = rng.uniform(0.15, 0.85)
    return GeoPoint(a.lat + t * (b.lat - a.lat), a.lon + t * (b.lon - a.lon))


def generate(cfg: SynthConfig) -> tuple[list[CrowdLabel], Infrastructure, SynthTruth]:
    """Deterministic synthesis of (labels, infrastructure, planted truth)."""
    rng = np.random.default_rng(cfg.seed)
    infra, intersections, segments, stubs = _build_city(cfg.geo, rng, cfg.n_labels)
    residential_blocks = [s for s in segments if s[2] == "residential"] or segments
    g = cfg.geo
    b = cfg.behavior
    mix = np.array(cfg.type_mix)

    # Shared "real feature" sites per type. Co-located labels come from these
    # small pools, so clusters are tight blobs instead of roadside chains.
    def fresh_spot(lt: LabelType) -> tuple[GeoPoint, str]:
        if lt in (LabelType.CurbRamp, LabelType.MissingCurbRamp):
            corner = intersections[int(rng.integers(len(intersections)))]
            way = segments[int(rng.integers(len(segments)))][2]  # adjoining road
            s = g.corner_spread_m
            return (
                _offset(corner.lat, corner.lon, rng.uniform(-s, s), rng.uniform(-s, s)),
                way,
            )
        a, bseg, way = segments[int(rng.integers(len(segments)))]
        p = _point_on_segment(a, bseg, rng)
        return _offset(p.lat, p.lon, rng.normal(0, 3.0), rng.normal(0, 3.0)), way

    sites: dict[int, list[tuple[GeoPoint, str]]] = {}
    for lt in LabelType:
        expected = cfg.n_labels * mix[int(lt)] * cfg.co_label_rate
        n_sites = max(4, int(np.ceil(expected / 3.0)))  # mean occupancy ~3
        sites[int(lt)] = [fresh_spot(lt) for _ in range(n_sites)]

    labels: list[CrowdLabel] = []
    true_correct: dict[str, bool] = {}
    behaviors: dict[str, dict] = {}
    for i in range(cfg.n_labels):
        lt = LabelType(int(rng.choice(len(mix), p=mix)))
        correct = bool(rng.random() >= cfg.base_error_rate[int(lt)])
        placed_midblock = False
        placed_offroad = False
        at_site = rng.random() < (cfg.co_label_rate if correct else cfg.co_label_rate * cfg.co_label_wrong_factor)
        if at_site and sites[int(lt)]:
            base, way = sites[int(lt)][int(rng.integers(len(sites[int(lt)])))]
            pos = _offset(base.lat, base.lon, rng.normal(0, 2.0), rng.normal(0, 2.0))
        elif lt in (LabelType.CurbRamp, LabelType.MissingCurbRamp) and not correct and rng.random() < g.p_driveway_confusion:
            placed_midblock = True
            mode = rng.random()
            if stubs and mode < g.p_driveway_known:
                # Mapped driveway: the label sits on a service stub.
                a, bseg, way = stubs[int(rng.integers(len(stubs)))]
                pos = _point_on_segment(a, bseg, rng)
            elif mode < g.p_driveway_known + g.p_driveway_onroad:
                # Mid-block against the roadway itself.
                a, bseg, way = residential_blocks[int(rng.integers(len(residential_blocks)))]
                on_road = _point_on_segment(a, bseg, rng)
                pos = _offset(on_road.lat, on_road.lon, rng.normal(0, 3.0), rng.normal(0, 3.0))
            else:
                # Off-road beside a residential block, mid-way between
                # intersections; the way class is "other" when the map source
                # has no record of the driveway's way at all.
                a, bseg, way = residential_blocks[int(rng.integers(len(residential_blocks)))]
                if mode < g.p_driveway_known + g.p_driveway_onroad + g.p_driveway_unmapped:
                    way = "other"
                on_road = _point_on_segment(a, bseg, rng)
                off = rng.uniform(*g.offroad_range) * rng.choice((-1, 1))
                pos = _offset(on_road.lat, on_road.lon, *rng.permutation((off, rng.normal(0, 2.0))))
                placed_offroad = True
        elif lt not in (LabelType.CurbRamp, LabelType.MissingCurbRamp) and not correct and rng.random() < g.p_offroad_wrong:
            a, bseg, way = segments[int(rng.integers(len(segments)))]
            on_road = _point_on_segment(a, bseg, rng)
            off = rng.uniform(*g.offroad_range) * rng.choice((-1, 1))
            pos = _offset(on_road.lat, on_road.lon, *rng.permutation((off, rng.normal(0, 2.0))))
            placed_offroad = True
        else:
            # Fresh, uncrowded location (correct one-off labels, plus the hard
            # residual mistakes that look geometrically plausible).
            pos, way = fresh_spot(lt)

        zoomed = rng.random() < (b.p_zoom_correct if correct else b.p_zoom_wrong)
        zoom = int(rng.integers(2, 4)) if zoomed else int(rng.integers(0, 2))
        tagged = rng.random() < (b.p_tag_correct if correct else b.p_tag_wrong)
        tags = tuple(rng.choice(_TYPE_TAGS[lt], size=1)) if tagged else ()
        described = rng.random() < (b.p_desc_correct if correct else b.p_desc_wrong)
        description = f"note-{i}" if described else None
        severity = None
        if rng.random() < b.p_severity_present:
            extreme = rng.random() < (b.p_extreme_correct if correct else b.p_extreme_wrong)
            if lt == LabelType.MissingSidewalk:
                # Absent sidewalks are a high-severity issue; low ratings are
                # the planted mistake signature.
                severity = int(rng.choice((4, 5))) if correct else int(rng.choice((1, 2)))
            elif extreme:
                severity = int(rng.choice((1, 5)))
            else:
                severity = int(rng.choice((2, 3, 4)))
        label_id = f"{cfg.city_id}-{i:06d}"
        labels.append(
            CrowdLabel(
                id=label_id,
                label_type=lt,
                position=pos,
                severity=severity,
                tags=tags,
                description=description,
                zoom=zoom,
                heading=float(rng.uniform(0, 360.0) % 360.0),
                pitch=float(rng.uniform(-35, 10)),
                way_type=way,
                user_id=f"u{int(rng.integers(cfg.n_users)):03d}",
                city_id=cfg.city_id,
                expert_verdict=None,
            )
        )
        true_correct[label_id] = correct
        behaviors[label_id] = {
            "zoomed": zoomed,
            "tagged": tagged,
            "described": described,
            "severity_present": severity is not None,
            "midblock": placed_midblock,
            "offroad": placed_offroad,
        }
    return labels, infra, SynthTruth(true_correct, behaviors)


def make_expert_set(
    labels: list[CrowdLabel], truth: SynthTruth, fraction: float, seed: int
) -> list[CrowdLabel]:
    """Sample a fraction and attach planted truth as (noiseless) expert verdicts."""
    if not 0.0 < fraction <= 1.0:
        raise DataError(f"fraction must be in (0,1], got {fraction}")
    rng = np.random.default_rng(seed)
    k = int(np.floor(fraction * len(labels)))
    pick = sorted(rng.choice(len(labels), size=k, replace=False))
    return [replace(labels[i], expert_verdict=truth.true_correct[labels[i].id]) for i in pick]


def shift_city(cfg: SynthConfig, **deltas) -> SynthConfig:
    """Perturb a config into a "different city" for transfer experiments.

    Supported deltas: spacing_scale, error_delta, zoom_delta, tag_delta,
    co_label_delta, plus any SynthConfig field passed verbatim (seed,
    city_id, n_labels, ...). Probability results are range-checked.
    """
    geo = cfg.geo
    b = cfg.behavior
    if "spacing_scale" in deltas:
        geo = replace(geo, spacing_m=geo.spacing_m * deltas.pop("spacing_scale"))
    if "error_delta" in deltas:
        d = deltas.pop("error_delta")
        rates = tuple(e + d for e in cfg.base_error_rate)
        if not all(0.0 < e < 1.0 for e in rates):
            raise DataError(f"error_delta {d} pushes an error rate out of (0,1)")
        cfg = replace(cfg, base_error_rate=rates)
    if "zoom_delta" in deltas:
        d = deltas.pop("zoom_delta")
        p1, p2 = b.p_zoom_correct + d, b.p_zoom_wrong + d
        if not (0.0 < p1 < 1.0 and 0.0 < p2 < 1.0):
            raise DataError(f"zoom_delta {d} pushes a probability out of (0,1)")
        b = replace(b, p_zoom_correct=p1, p_zoom_wrong=p2)
    if "tag_delta" in deltas:
        d = deltas.pop("tag_delta")
        p1, p2 = b.p_tag_correct + d, b.p_tag_wrong + d
        if not (0.0 < p1 < 1.0 and 0.0 < p2 < 1.0):
            raise DataError(f"tag_delta {d} pushes a probability out of (0,1)")
        b = replace(b, p_tag_correct=p1, p_tag_wrong=p2)
    if "co_label_delta" in deltas:
        d = deltas.pop("co_label_delta")
        r = cfg.co_label_rate + d
        if not 0.0 <= r < 1.0:
            raise DataError(f"co_label_delta {d} pushes co_label_rate out of [0,1)")
        cfg = replace(cfg, co_label_rate=r)
    return replace(cfg, geo=geo, behavior=b, **deltas)


def planted_vote_matrix(
    n: int,
    accuracies: tuple[float, ...],
    coverages: tuple[float, ...],
    pi: float = 0.6,
    seed: int = 0,
):
    """Direct vote-matrix sampler with known per-LF accuracy and propensity.

    Returns (VoteMatrix, planted truth vector). Used by tests to validate the
    label model's parameter recovery independently of the full generator.
    """
    from labelqc.lf import ABSTAIN, CORRECT, WRONG, VoteMatrix

    rng = np.random.default_rng(seed)
    y = rng.random(n) < pi
    votes = np.full((n, len(accuracies)), ABSTAIN, dtype=np.int8)
    for j, (acc, cov) in enumerate(zip(accuracies, coverages)):
        speaks = rng.random(n) < cov
        agrees = rng.random(n) < acc
        vote_correct = np.where(agrees, y, ~y)
        votes[speaks, j] = np.where(vote_correct[speaks], CORRECT, WRONG)
    names = tuple(f"lf{j}" for j in range(len(accuracies)))
    return VoteMatrix(votes=votes, lf_names=names), y
