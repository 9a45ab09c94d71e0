"""The eight labeling functions, their registry, and vote-matrix analysis.

Each LF is a pure heuristic over one FeatureVector returning Correct, Wrong,
or Abstain. Votes are encoded as int8: 1 = Correct, 0 = Wrong, -1 = Abstain
(matching the polarity codes in the analysis table).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from labelqc.data import FeatureVector, LabelType, way_type_code
from labelqc.errors import DataError

CORRECT = 1
WRONG = 0
ABSTAIN = -1

_RAMP_TYPES = (int(LabelType.CurbRamp), int(LabelType.MissingCurbRamp))
_BEHAVIOR_TYPES = (int(LabelType.Obstacle), int(LabelType.SurfaceProblem))


@dataclass(frozen=True)
class LFConfig:
    """Thresholds for the heuristic rules; all overridable from a config file."""

    intersection_threshold_m: float = 25.0
    road_threshold_m: float = 15.0
    zoom_min: int = 2
    severity_extremes: frozenset[int] = frozenset({1, 5})
    missing_sidewalk_low_severity_max: int = 2
    correct_way_types: frozenset[str] = frozenset({"primary", "secondary", "tertiary", "residential"})
    wrong_way_types: frozenset[str] = frozenset({"service"})

    def __post_init__(self):
        if self.intersection_threshold_m <= 0 or self.road_threshold_m <= 0:
            raise DataError("LF distance thresholds must be positive")
        if not self.severity_extremes <= {1, 2, 3, 4, 5}:
            raise DataError(f"severity_extremes outside 1-5: {self.severity_extremes}")

    @staticmethod
    def from_file(path: str | Path) -> "LFConfig":
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
        kwargs = {}
        for key in (
            "intersection_threshold_m", "road_threshold_m", "zoom_min",
            "missing_sidewalk_low_severity_max",
        ):
            if key in raw:
                kwargs[key] = raw[key]
        for key in ("severity_extremes", "correct_way_types", "wrong_way_types"):
            if key in raw:
                kwargs[key] = frozenset(raw[key])
        return LFConfig(**kwargs)

    def _codes(self, names: frozenset[str]) -> frozenset[int]:
        return frozenset(way_type_code(w) for w in names)


def lf_distance_i(fv: FeatureVector, cfg: LFConfig) -> int:
    """Ramp labels on residential ways far from any intersection are wrong."""
    if fv.label_type in _RAMP_TYPES and fv.way_type == way_type_code("residential"):
        if fv.distance_i > cfg.intersection_threshold_m:
            return WRONG
    return ABSTAIN


def lf_clustered(fv: FeatureVector, cfg: LFConfig) -> int:
    return CORRECT if fv.clustered else ABSTAIN


def lf_severity(fv: FeatureVector, cfg: LFConfig) -> int:
    # Wrong beats Correct when both clauses fire (low-severity MissingSidewalk
    # with severity 1 is also an "extreme").
    if not fv.has_severity:
        return ABSTAIN
    sev = int(fv.severity_value)
    if fv.label_type == int(LabelType.MissingSidewalk) and sev <= cfg.missing_sidewalk_low_severity_max:
        return WRONG
    if sev in cfg.severity_extremes:
        return CORRECT
    return ABSTAIN


def lf_zoom(fv: FeatureVector, cfg: LFConfig) -> int:
    if fv.zoom >= cfg.zoom_min:
        return CORRECT
    if fv.zoom == 0 and fv.label_type in _BEHAVIOR_TYPES:
        return WRONG
    return ABSTAIN


def lf_tag(fv: FeatureVector, cfg: LFConfig) -> int:
    return CORRECT if fv.has_tag else ABSTAIN


def lf_description(fv: FeatureVector, cfg: LFConfig) -> int:
    return CORRECT if fv.has_description else ABSTAIN


def lf_distance_r(fv: FeatureVector, cfg: LFConfig) -> int:
    return WRONG if fv.distance_r > cfg.road_threshold_m else ABSTAIN


def lf_way_type(fv: FeatureVector, cfg: LFConfig) -> int:
    if fv.way_type in cfg._codes(cfg.wrong_way_types):
        return WRONG
    if fv.label_type in _RAMP_TYPES and fv.way_type in cfg._codes(cfg.correct_way_types):
        return CORRECT
    return ABSTAIN


# Registry order is fixed; vote-matrix columns follow it.
REGISTRY: tuple[tuple[str, Callable[[FeatureVector, LFConfig], int]], ...] = (
    ("distance_i", lf_distance_i),
    ("clustered", lf_clustered),
    ("severity", lf_severity),
    ("zoom", lf_zoom),
    ("tag", lf_tag),
    ("description", lf_description),
    ("distance_r", lf_distance_r),
    ("way_type", lf_way_type),
)

LF_NAMES = tuple(name for name, _ in REGISTRY)

# Vote values each LF may legally emit (the analyzer's observed polarity must
# stay inside these sets).
DECLARED_POLARITY: dict[str, frozenset[int]] = {
    "distance_i": frozenset({WRONG}),
    "clustered": frozenset({CORRECT}),
    "severity": frozenset({WRONG, CORRECT}),
    "zoom": frozenset({WRONG, CORRECT}),
    "tag": frozenset({CORRECT}),
    "description": frozenset({CORRECT}),
    "distance_r": frozenset({WRONG}),
    "way_type": frozenset({WRONG, CORRECT}),
}


@dataclass(frozen=True)
class VoteMatrix:
    votes: np.ndarray  # (n, m) int8 in {1, 0, -1}
    lf_names: tuple[str, ...]

    def __post_init__(self):
        if self.votes.ndim != 2 or self.votes.shape[1] != len(self.lf_names):
            raise DataError("vote matrix shape does not match LF names")

    @property
    def n(self) -> int:
        return self.votes.shape[0]

    @property
    def m(self) -> int:
        return self.votes.shape[1]

    def covered(self) -> np.ndarray:
        """Rows where at least one LF did not abstain."""
        return np.any(self.votes != ABSTAIN, axis=1)


def apply_all(
    features: Sequence[Optional[FeatureVector]],
    cfg: LFConfig,
    registry: Sequence[tuple[str, Callable]] = REGISTRY,
    ids: Optional[Sequence[str]] = None,
) -> VoteMatrix:
    """Apply every registered LF row-wise; column j is LF j."""
    votes = np.full((len(features), len(registry)), ABSTAIN, dtype=np.int8)
    for i, fv in enumerate(features):
        if fv is None:
            who = ids[i] if ids is not None else f"#{i}"
            raise DataError(f"label {who}: missing features")
        for j, (_, fn) in enumerate(registry):
            votes[i, j] = fn(fv, cfg)
    return VoteMatrix(votes=votes, lf_names=tuple(name for name, _ in registry))


@dataclass(frozen=True)
class LFStatsRow:
    name: str
    polarity: tuple[int, ...]  # sorted non-abstain votes ever emitted
    coverage: float
    overlap: float
    conflict: float


@dataclass(frozen=True)
class LFStats:
    rows: tuple[LFStatsRow, ...]

    def as_table(self) -> str:
        header = f"{'LF':<12} {'Polarity':<10} {'Coverage':>9} {'Overlaps':>9} {'Conflicts':>10}"
        lines = [header, "-" * len(header)]
        for r in self.rows:
            pol = "[" + ", ".join(str(v) for v in r.polarity) + "]"
            lines.append(
                f"{r.name:<12} {pol:<10} {r.coverage:>9.3f} {r.overlap:>9.3f} {r.conflict:>10.3f}"
            )
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            r.name: {
                "polarity": list(r.polarity),
                "coverage": r.coverage,
                "overlap": r.overlap,
                "conflict": r.conflict,
            }
            for r in self.rows
        }


def analyze(matrix: VoteMatrix) -> LFStats:
    """Coverage, overlap, and conflict fractions per LF, plus observed polarity."""
    if matrix.n == 0:
        raise DataError("cannot analyze an empty vote matrix")
    v = matrix.votes
    n = float(matrix.n)
    nonabs = v != ABSTAIN
    n_nonabs_row = nonabs.sum(axis=1)
    n_correct_row = (v == CORRECT).sum(axis=1)
    n_wrong_row = (v == WRONG).sum(axis=1)
    rows = []
    for j, name in enumerate(matrix.lf_names):
        col = v[:, j]
        cov = nonabs[:, j]
        coverage = float(cov.sum() / n)
        overlap = float((cov & (n_nonabs_row >= 2)).sum() / n)
        conflict = float(
            (
                ((col == CORRECT) & (n_wrong_row >= 1))
                | ((col == WRONG) & (n_correct_row >= 1))
            ).sum()
            / n
        )
        polarity = tuple(sorted({int(x) for x in col[cov]}))
        rows.append(LFStatsRow(name, polarity, coverage, overlap, conflict))
    return LFStats(tuple(rows))
