"""Domain types, file ingestion, and deterministic splitting/balancing."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from labelqc.errors import DataError

CSV_HEADER = [
    "id", "label_type", "lat", "lon", "severity", "tags", "description",
    "zoom", "heading", "pitch", "way_type", "user_id", "city_id",
    "expert_verdict",
]

# Bounded road-hierarchy vocabulary; anything else maps to "other".
WAY_TYPE_VOCAB = ("residential", "primary", "secondary", "tertiary", "service", "other")


class LabelType(IntEnum):
    """The five label types, with stable serialization codes."""

    CurbRamp = 0
    MissingCurbRamp = 1
    Obstacle = 2
    SurfaceProblem = 3
    MissingSidewalk = 4


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        # numpy scalars sneak in from generators; normalize for clean reprs
        # and value-equality after serialization round-trips.
        object.__setattr__(self, "lat", float(self.lat))
        object.__setattr__(self, "lon", float(self.lon))
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise DataError(f"non-finite coordinates ({self.lat}, {self.lon})")
        if not (-90.0 <= self.lat <= 90.0):
            raise DataError(f"latitude out of range: {self.lat}")
        if not (-180.0 <= self.lon <= 180.0):
            raise DataError(f"longitude out of range: {self.lon}")


@dataclass(frozen=True)
class CrowdLabel:
    """One crowdsourced annotation plus the viewport state it was placed with."""

    id: str
    label_type: LabelType
    position: GeoPoint
    severity: Optional[int]
    tags: tuple[str, ...]
    description: Optional[str]
    zoom: int
    heading: float
    pitch: float
    way_type: str
    user_id: str
    city_id: str
    expert_verdict: Optional[bool] = None

    def __post_init__(self):
        if self.severity is not None and self.severity not in (1, 2, 3, 4, 5):
            raise DataError(f"label {self.id}: severity out of range: {self.severity}")
        if self.zoom < 0:
            raise DataError(f"label {self.id}: zoom must be >= 0, got {self.zoom}")
        if any(t == "" for t in self.tags):
            raise DataError(f"label {self.id}: tags contain an empty string")
        if not (0.0 <= self.heading < 360.0):
            raise DataError(f"label {self.id}: heading out of [0,360): {self.heading}")
        if not (-90.0 <= self.pitch <= 90.0):
            raise DataError(f"label {self.id}: pitch out of [-90,90]: {self.pitch}")


@dataclass(frozen=True)
class FeatureVector:
    """Model input for one label.

    Numericals are raw (standardization happens inside the model using the
    bundle's stored stats); categoricals are integer codes into the schema.
    """

    severity_value: float  # 0.0 when severity absent
    zoom: float
    distance_i: float  # meters to nearest intersection
    distance_r: float  # meters to nearest road segment
    label_type: int
    way_type: int  # index into WAY_TYPE_VOCAB
    clustered: int  # 0/1
    has_tag: int
    has_description: int
    has_severity: int

    def __post_init__(self):
        for name in ("distance_i", "distance_r"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0.0):
                raise DataError(f"{name} must be finite and >= 0, got {v}")
        if not 0 <= self.label_type < len(LabelType):
            raise DataError(f"label_type code out of range: {self.label_type}")
        if not 0 <= self.way_type < len(WAY_TYPE_VOCAB):
            raise DataError(f"way_type code out of range: {self.way_type}")
        for name in ("clustered", "has_tag", "has_description", "has_severity"):
            if getattr(self, name) not in (0, 1):
                raise DataError(f"{name} must be 0/1")


def way_type_code(way_type: str) -> int:
    try:
        return WAY_TYPE_VOCAB.index(way_type)
    except ValueError:
        return WAY_TYPE_VOCAB.index("other")


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[int, ...]
    validation: tuple[int, ...]
    test: tuple[int, ...]
    seed: int
    warnings: tuple[str, ...] = ()

    def subsets(self) -> dict[str, tuple[int, ...]]:
        return {"train": self.train, "validation": self.validation, "test": self.test}


# ---------------------------------------------------------------------------
# ingestion / emission


def _parse_optional_int(raw: str) -> Optional[int]:
    return None if raw == "" else int(raw)


def _row_to_label(row: dict, rowno: int) -> CrowdLabel:
    def fail(fieldname, msg):
        raise DataError(f"row {rowno}, field '{fieldname}': {msg}")

    type_name = row["label_type"]
    if isinstance(type_name, str) and type_name not in LabelType.__members__:
        fail("label_type", f"unknown label_type {type_name!r}")
    try:
        severity = row["severity"]
        if isinstance(severity, str):
            severity = _parse_optional_int(severity)
    except ValueError:
        fail("severity", f"not an integer: {row['severity']!r}")
    if severity is not None and severity not in (1, 2, 3, 4, 5):
        fail("severity", f"out of range 1-5: {severity}")

    tags = row["tags"]
    if isinstance(tags, str):
        tags = tuple(t for t in tags.split("|") if t != "")
    else:
        tags = tuple(tags)
    desc = row["description"] or None
    verdict = row.get("expert_verdict")
    if isinstance(verdict, str):
        verdict = {"": None, "true": True, "false": False}.get(verdict.lower(), "bad")
        if verdict == "bad":
            fail("expert_verdict", f"expected true/false/empty, got {row['expert_verdict']!r}")
    try:
        return CrowdLabel(
            id=str(row["id"]),
            label_type=LabelType[type_name] if isinstance(type_name, str) else LabelType(type_name),
            position=GeoPoint(float(row["lat"]), float(row["lon"])),
            severity=severity,
            tags=tags,
            description=desc,
            zoom=int(row["zoom"]),
            heading=float(row["heading"]),
            pitch=float(row["pitch"]),
            way_type=str(row["way_type"]),
            user_id=str(row["user_id"]),
            city_id=str(row["city_id"]),
            expert_verdict=verdict,
        )
    except DataError as e:
        raise DataError(f"row {rowno}: {e}") from e
    except (KeyError, ValueError, TypeError) as e:
        raise DataError(f"row {rowno}: {e}") from e


def ingest(path: str | Path, format: str = None) -> list[CrowdLabel]:
    """Parse a CSV or JSONL label file; all rows parse or the call fails.

    The format is inferred from the suffix when not given explicitly.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    fmt = format or ("jsonl" if path.suffix in (".jsonl", ".ndjson") else "csv")
    labels: list[CrowdLabel] = []
    if fmt == "csv":
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames is None:
                return []
            if list(reader.fieldnames) != CSV_HEADER:
                raise DataError(f"bad CSV header in {path}: {reader.fieldnames}")
            for i, row in enumerate(reader, start=2):  # header is line 1
                labels.append(_row_to_label(row, i))
    elif fmt == "jsonl":
        with open(path, encoding="utf-8") as f:
            for i, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as e:
                    raise DataError(f"row {i}: invalid JSON: {e}") from e
                row.setdefault("severity", None)
                row.setdefault("description", None)
                row.setdefault("expert_verdict", None)
                labels.append(_row_to_label(row, i))
    else:
        raise DataError(f"unknown format {fmt!r}")
    return labels


def _label_to_row(lb: CrowdLabel) -> dict:
    return {
        "id": lb.id,
        "label_type": lb.label_type.name,
        "lat": lb.position.lat,
        "lon": lb.position.lon,
        "severity": lb.severity,
        "tags": list(lb.tags),
        "description": lb.description,
        "zoom": lb.zoom,
        "heading": lb.heading,
        "pitch": lb.pitch,
        "way_type": lb.way_type,
        "user_id": lb.user_id,
        "city_id": lb.city_id,
        "expert_verdict": lb.expert_verdict,
    }


def emit(labels: Iterable[CrowdLabel], path: str | Path, format: str = None) -> int:
    """Write labels to CSV/JSONL in the documented schema. Returns row count."""
    path = Path(path)
    fmt = format or ("jsonl" if path.suffix in (".jsonl", ".ndjson") else "csv")
    n = 0
    if fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(CSV_HEADER)
            for lb in labels:
                row = _label_to_row(lb)
                writer.writerow([
                    row["id"], row["label_type"], repr(row["lat"]), repr(row["lon"]),
                    "" if row["severity"] is None else row["severity"],
                    "|".join(row["tags"]),
                    "" if row["description"] is None else row["description"],
                    row["zoom"], repr(row["heading"]), repr(row["pitch"]),
                    row["way_type"], row["user_id"], row["city_id"],
                    "" if row["expert_verdict"] is None else str(row["expert_verdict"]).lower(),
                ])
                n += 1
    elif fmt == "jsonl":
        with open(path, "w", encoding="utf-8") as f:
            for lb in labels:
                f.write(json.dumps(_label_to_row(lb)) + "\n")
                n += 1
    else:
        raise DataError(f"unknown format {fmt!r}")
    return n


# ---------------------------------------------------------------------------
# splitting / sampling

SPLIT_FRACTIONS = (0.70, 0.20, 0.10)
MIN_CELL_PER_SUBSET = 20


def _largest_remainder(n: int, fractions: Sequence[float]) -> list[int]:
    # Integer apportionment of n into parts within +/-1 of exact proportion.
    exact = [n * f for f in fractions]
    base = [int(math.floor(e)) for e in exact]
    short = n - sum(base)
    order = sorted(range(len(fractions)), key=lambda i: exact[i] - base[i], reverse=True)
    for i in order[:short]:
        base[i] += 1
    return base


def split(
    dataset: Sequence[CrowdLabel],
    seed: int,
    classes: Optional[Sequence[bool]] = None,
) -> DatasetSplit:
    """Deterministic stratified 70/20/10 split.

    Stratification cells are (label_type, class). ``classes`` defaults to the
    labels' expert verdicts; pipelines pass thresholded soft labels instead.
    Cells too small to guarantee 20 examples per subset are split anyway and
    recorded as warnings.
    """
    if not dataset:
        raise DataError("cannot split an empty dataset")
    if classes is None:
        if any(lb.expert_verdict is None for lb in dataset):
            raise DataError("split requires expert verdicts or explicit classes")
        classes = [bool(lb.expert_verdict) for lb in dataset]
    if len(classes) != len(dataset):
        raise DataError("classes length does not match dataset")

    rng = np.random.default_rng(seed)
    cells: dict[tuple[LabelType, bool], list[int]] = {}
    for i, (lb, cls) in enumerate(zip(dataset, classes)):
        cells.setdefault((lb.label_type, bool(cls)), []).append(i)

    parts: tuple[list[int], list[int], list[int]] = ([], [], [])
    warnings = []
    for key in sorted(cells, key=lambda k: (int(k[0]), k[1])):
        idx = np.array(cells[key], dtype=np.int64)
        rng.shuffle(idx)
        counts = _largest_remainder(len(idx), SPLIT_FRACTIONS)
        if counts[2] < MIN_CELL_PER_SUBSET:
            warnings.append(
                f"cell ({key[0].name}, {'correct' if key[1] else 'incorrect'}) has "
                f"{len(idx)} examples; cannot guarantee {MIN_CELL_PER_SUBSET} per subset"
            )
        pos = 0
        for part, c in zip(parts, counts):
            part.extend(int(j) for j in idx[pos:pos + c])
            pos += c
    return DatasetSplit(
        train=tuple(sorted(parts[0])),
        validation=tuple(sorted(parts[1])),
        test=tuple(sorted(parts[2])),
        seed=seed,
        warnings=tuple(warnings),
    )


def sample_downstream(
    dataset: Sequence[CrowdLabel], k_per_type: int, seed: int
) -> list[CrowdLabel]:
    """Draw a class-balanced fine-tuning sample: k per type, half per verdict."""
    if k_per_type <= 0 or k_per_type % 2 != 0:
        raise DataError(f"k_per_type must be a positive even integer, got {k_per_type}")
    if any(lb.expert_verdict is None for lb in dataset):
        raise DataError("sample_downstream requires expert verdicts on every example")
    rng = np.random.default_rng(seed)
    half = k_per_type // 2
    chosen: list[CrowdLabel] = []
    for lt in LabelType:
        for verdict in (True, False):
            pool = [lb for lb in dataset if lb.label_type == lt and lb.expert_verdict == verdict]
            if len(pool) < half:
                raise DataError(
                    f"MissingCell({lt.name}, {'correct' if verdict else 'incorrect'}): "
                    f"need {half}, have {len(pool)}"
                )
            pick = rng.choice(len(pool), size=half, replace=False)
            chosen.extend(pool[int(i)] for i in sorted(pick))
    return chosen
