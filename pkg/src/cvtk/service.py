"""HTTP service over the streaming classifier.

Models load once at startup; clients POST base64 images and get annotated
records back. The CLI's ``serve`` command runs this app and ``remote
classify`` is a thin client against it.
"""

from __future__ import annotations

import base64
import threading
from typing import Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .pipeline import AnnotatedRecord, PipelineConfig, StreamClassifier
from .schemas import TASKS


class ClassifyRequest(BaseModel):
    record_id: str = Field(min_length=1)
    image_b64: str


class BatchClassifyRequest(BaseModel):
    images: list[ClassifyRequest]


class TaskPredictionOut(BaseModel):
    label_index: int
    label: str
    probability: float
    probabilities: list[float]


class ClassifyResponse(BaseModel):
    record_id: str
    predictions: dict[str, TaskPredictionOut] = {}
    duplicate_of: Optional[str] = None
    error: Optional[str] = None
    filtered: bool = False
    latency_ms: float


class BatchClassifyResponse(BaseModel):
    records: list[ClassifyResponse]


class HealthResponse(BaseModel):
    status: str
    version: str
    mode: str
    tasks: list[str]


class TaskSchemaOut(BaseModel):
    task_id: str
    class_labels: list[str]
    num_classes: int


def _to_response(record: AnnotatedRecord) -> ClassifyResponse:
    return ClassifyResponse(
        record_id=record.record_id,
        predictions={
            t: TaskPredictionOut(
                label_index=p.label_index,
                label=p.label,
                probability=p.probability,
                probabilities=p.probabilities,
            )
            for t, p in record.predictions.items()
        },
        duplicate_of=record.duplicate_of,
        error=record.error,
        filtered=record.filtered,
        latency_ms=record.latency_ms,
    )


def create_app(config: PipelineConfig, classifier: Optional[StreamClassifier] = None) -> FastAPI:
    clf = classifier or StreamClassifier(config)
    # The signature index mutates on every request; inference owns the model.
    lock = threading.Lock()
    app = FastAPI(title="cvtk classification service", version=__version__)

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(
            status="ok", version=__version__, mode=config.mode, tasks=clf.task_ids
        )

    @app.get("/tasks", response_model=list[TaskSchemaOut])
    def tasks():
        return [
            TaskSchemaOut(
                task_id=t.task_id, class_labels=list(t.class_labels), num_classes=t.num_classes
            )
            for t in TASKS.values()
        ]

    def _classify_one(item: ClassifyRequest) -> ClassifyResponse:
        try:
            data = base64.b64decode(item.image_b64, validate=True)
        except Exception:
            raise HTTPException(status_code=422, detail="image_b64 is not valid base64")
        with lock:
            record = clf.classify_bytes(item.record_id, data)
        return _to_response(record)

    @app.post("/classify", response_model=ClassifyResponse)
    def classify(item: ClassifyRequest):
        return _classify_one(item)

    @app.post("/classify-batch", response_model=BatchClassifyResponse)
    def classify_batch(batch: BatchClassifyRequest):
        return BatchClassifyResponse(records=[_classify_one(item) for item in batch.images])

    return app
