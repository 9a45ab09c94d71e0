"""Low-latency HTTP inference service for mistake flagging.

The bundle, infrastructure arrays, and cluster index are loaded once and
never mutated, so request handling is thread-safe; the feedback log is the
only shared mutable state and is serialized through a lock.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Literal, Optional

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from labelqc.data import CrowdLabel, GeoPoint, LabelType
from labelqc.errors import DataError
from labelqc.features import featurize_online, infra_arrays
from labelqc.geo import ClusterIndex, Infrastructure
from labelqc.model import ModelBundle, encode_features, forward, tokenize_batch

log = logging.getLogger("labelqc.service")


class InferenceRequest(BaseModel, extra="forbid"):
    id: str
    label_type: str
    lat: float
    lon: float
    severity: Optional[int] = Field(default=None, ge=1, le=5)
    tags: list[str] = Field(default_factory=list)
    description: Optional[str] = None
    zoom: int = Field(ge=0)
    heading: float = Field(ge=0.0, lt=360.0)
    pitch: float = Field(ge=-90.0, le=90.0)
    way_type: str
    user_id: str
    city_id: str


class Timing(BaseModel):
    prep_ms: float
    infer_ms: float


class InferenceResponse(BaseModel):
    p_correct: float
    flagged: bool
    model_version: str
    timing: Timing


class FeedbackRequest(BaseModel, extra="forbid"):
    label_id: str
    action: Literal["keep", "delete", "viewed_mistakes", "viewed_examples"]


@dataclass
class ServiceState:
    bundle: ModelBundle
    infra: Infrastructure
    index: ClusterIndex
    threshold: float
    bundle_bytes: int
    feedback_path: Path

    def __post_init__(self):
        self.arrays = infra_arrays(self.infra)
        self.lock = threading.Lock()


def _to_crowd_label(req: InferenceRequest) -> CrowdLabel:
    if req.label_type not in LabelType.__members__:
        raise DataError(f"unknown label_type {req.label_type!r}")
    return CrowdLabel(
        id=req.id,
        label_type=LabelType[req.label_type],
        position=GeoPoint(req.lat, req.lon),
        severity=req.severity,
        tags=tuple(req.tags),
        description=req.description,
        zoom=req.zoom,
        heading=req.heading,
        pitch=req.pitch,
        way_type=req.way_type,
        user_id=req.user_id,
        city_id=req.city_id,
    )


def create_app(state: Optional[ServiceState] = None) -> FastAPI:
    app = FastAPI(title="labelqc inference service")
    app.state.svc = state
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.exception_handler(RequestValidationError)
    async def schema_violation(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": "schema", "detail": exc.errors()})

    def require_state() -> ServiceState | JSONResponse:
        if app.state.svc is None:
            return JSONResponse(status_code=503, content={"error": "model not loaded"})
        return app.state.svc

    @app.post("/v1/infer")
    def infer(req: InferenceRequest):
        svc = require_state()
        if isinstance(svc, JSONResponse):
            return svc
        t0 = time.perf_counter()
        try:
            label = _to_crowd_label(req)
            if label.city_id != svc.index.city_id:
                raise DataError(
                    f"unknown city_id {label.city_id!r}; service holds {svc.index.city_id!r}"
                )
            fv = featurize_online(label, svc.arrays, svc.index)
        except DataError as e:
            return JSONResponse(status_code=400, content={"error": "schema", "detail": str(e)})
        t1 = time.perf_counter()
        x_num, x_cat = encode_features([fv], svc.bundle.schema)
        p, _ = forward(tokenize_batch(x_num, x_cat, svc.bundle), svc.bundle, dropout_active=False)
        p_correct = float(p[0])
        t2 = time.perf_counter()
        log.info("infer id=%s p=%.4f prep_ms=%.2f infer_ms=%.2f", req.id, p_correct,
                 (t1 - t0) * 1e3, (t2 - t1) * 1e3)
        return InferenceResponse(
            p_correct=p_correct,
            flagged=p_correct < svc.threshold,
            model_version=svc.bundle.version,
            timing=Timing(prep_ms=(t1 - t0) * 1e3, infer_ms=(t2 - t1) * 1e3),
        )

    @app.get("/v1/model")
    def model_info():
        svc = require_state()
        if isinstance(svc, JSONResponse):
            return svc
        return {
            "version": svc.bundle.version,
            "schema": svc.bundle.schema.to_dict(),
            "threshold": svc.threshold,
            "bundle_size_bytes": svc.bundle_bytes,
        }

    @app.post("/v1/feedback")
    def feedback(req: FeedbackRequest):
        svc = require_state()
        if isinstance(svc, JSONResponse):
            return svc
        line = json.dumps(
            {
                "ts": datetime.now(timezone.utc).isoformat(),
                "label_id": req.label_id,
                "action": req.action,
            }
        )
        with svc.lock:
            with open(svc.feedback_path, "a", encoding="utf-8") as f:
                f.write(line + "\n")
        return {"ok": True}

    return app


def load_state(
    bundle_path: str | Path,
    infra_path: str | Path,
    clusters_path: str | Path,
    threshold: float = 0.5,
    feedback_path: str | Path = "decisions.jsonl",
) -> ServiceState:
    bundle_bytes = Path(bundle_path).read_bytes()
    return ServiceState(
        bundle=ModelBundle.load_bytes(bundle_bytes),
        infra=Infrastructure.from_jsonl(infra_path),
        index=ClusterIndex.load(clusters_path),
        threshold=threshold,
        bundle_bytes=len(bundle_bytes),
        feedback_path=Path(feedback_path),
    )
