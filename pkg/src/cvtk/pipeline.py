"""Streaming classification pipeline: decode -> duplicate filter -> classify
-> emit annotated records, with per-stage latency accounting and a
throughput report.

Every input yields exactly one output record: a prediction record, a
duplicate record (no predictions) or an error record. Records are emitted in
arrival order and written incrementally, so an interrupted run leaves a
valid prefix.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Union

import numpy as np
import torch
from PIL import Image

from .curation import compute_signature, hamming
from .schemas import TASK_ORDER, TASKS, Manifest
from .train import Checkpoint, _segment_softmax, preprocess

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = {".jpg", ".jpeg", ".png", ".bmp", ".gif", ".webp"}


class PipelineError(RuntimeError):
    pass


@dataclass
class PipelineConfig:
    mode: str  # "single_task_chain" | "multitask"
    checkpoints: Union[Checkpoint, dict[str, Checkpoint]]
    dedup_enabled: bool = True
    hamming_threshold: int = 10
    batch_size: int = 128
    filter_noninformative: bool = False

    def __post_init__(self):
        if self.mode not in ("single_task_chain", "multitask"):
            raise PipelineError(f"unknown mode {self.mode!r}")
        if self.mode == "single_task_chain":
            if not isinstance(self.checkpoints, dict):
                raise PipelineError("single_task_chain needs a task -> checkpoint mapping")
            missing = set(TASK_ORDER) - set(self.checkpoints)
            if missing:
                raise PipelineError(f"single_task_chain missing checkpoints for {sorted(missing)}")
        else:
            if not isinstance(self.checkpoints, Checkpoint):
                raise PipelineError("multitask mode needs one multitask checkpoint")


@dataclass
class TaskPrediction:
    label_index: int
    label: str
    probability: float
    probabilities: list[float]


@dataclass
class AnnotatedRecord:
    record_id: str
    image_ref: str
    predictions: dict[str, TaskPrediction] = field(default_factory=dict)
    duplicate_of: Optional[str] = None
    error: Optional[str] = None
    filtered: bool = False
    latency_ms: float = 0.0
    stage_ms: dict[str, float] = field(default_factory=dict)

    def to_json_obj(self) -> dict:
        return {
            "record_id": self.record_id,
            "image_ref": self.image_ref,
            "predictions": {
                t: {
                    "label_index": p.label_index,
                    "label": p.label,
                    "probability": p.probability,
                    "probabilities": p.probabilities,
                }
                for t, p in self.predictions.items()
            },
            "duplicate_of": self.duplicate_of,
            "error": self.error,
            "filtered": self.filtered,
            "latency_ms": round(self.latency_ms, 3),
            "stage_ms": {k: round(v, 3) for k, v in self.stage_ms.items()},
        }


class SignatureIndex:
    """Running exact/near duplicate index over the images seen so far."""

    def __init__(self, hamming_threshold: int):
        self.hamming_threshold = hamming_threshold
        self.by_digest: dict[str, str] = {}
        self.phashes: list[tuple[int, str]] = []

    def check_and_add(self, record_id: str, image_bytes: bytes) -> Optional[str]:
        """Returns the id of the first matching earlier record, if any."""
        sig = compute_signature(image_bytes, record_id)
        match = self.by_digest.get(sig.exact_digest)
        if match is None:
            for phash, rid in self.phashes:
                if hamming(phash, sig.phash) <= self.hamming_threshold:
                    match = rid
                    break
        self.by_digest.setdefault(sig.exact_digest, record_id)
        self.phashes.append((sig.phash, record_id))
        return match

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(
                {
                    "hamming_threshold": self.hamming_threshold,
                    "by_digest": self.by_digest,
                    "phashes": [[p, rid] for p, rid in self.phashes],
                }
            ),
            encoding="utf-8",
        )

    @classmethod
    def load(cls, path: str | Path) -> "SignatureIndex":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        idx = cls(data["hamming_threshold"])
        idx.by_digest = dict(data["by_digest"])
        idx.phashes = [(int(p), rid) for p, rid in data["phashes"]]
        return idx


class StreamClassifier:
    """Loads the configured models once and classifies images on demand.

    The signature index is the only mutable state; callers must serialize
    access to ``classify_bytes`` per instance (one consumer or a lock).
    """

    def __init__(self, config: PipelineConfig, index: Optional[SignatureIndex] = None):
        self.config = config
        self.index = index or SignatureIndex(config.hamming_threshold)
        self.models: dict[str, torch.nn.Module] = {}
        self.ckpts: dict[str, Checkpoint] = {}
        from .train import instantiate_model

        if config.mode == "multitask":
            ckpt = config.checkpoints
            self.ckpts["__multitask__"] = ckpt
            self.models["__multitask__"] = instantiate_model(ckpt)
            self.task_ids = list(ckpt.task_ids)
        else:
            for task_id, ckpt in config.checkpoints.items():
                if task_id not in TASKS:
                    raise PipelineError(f"unknown task {task_id!r} in checkpoints")
                if ckpt.is_multitask:
                    raise PipelineError(f"chain mode expects single-task checkpoints ({task_id})")
                self.ckpts[task_id] = ckpt
                self.models[task_id] = instantiate_model(ckpt)
            self.task_ids = [t for t in TASK_ORDER if t in self.ckpts]

    def _predict_pil(self, images: list[Image.Image]) -> list[dict[str, TaskPrediction]]:
        """Predictions for a batch of decoded images, honoring the filter flag."""
        results: list[dict[str, TaskPrediction]] = [dict() for _ in images]
        if not images:
            return results

        def run(ckpt: Checkpoint, model, subset: list[int]):
            tensors = torch.stack([preprocess(images[i], ckpt.image_size()) for i in subset])
            with torch.no_grad():
                logits = model(tensors)
            segs = _segment_softmax(logits, ckpt.num_classes)
            for row, i in enumerate(subset):
                for k, task_id in enumerate(ckpt.task_ids):
                    probs = segs[k][row].numpy()
                    idx = int(np.argmax(probs))
                    results[i][task_id] = TaskPrediction(
                        label_index=idx,
                        label=TASKS[task_id].label_name(idx),
                        probability=float(probs[idx]),
                        probabilities=[float(x) for x in probs],
                    )

        everyone = list(range(len(images)))
        if self.config.mode == "multitask":
            run(self.ckpts["__multitask__"], self.models["__multitask__"], everyone)
        else:
            order = self.task_ids
            if self.config.filter_noninformative and "informativeness" in order:
                order = ["informativeness"] + [t for t in order if t != "informativeness"]
            kept = everyone
            for task_id in order:
                run(self.ckpts[task_id], self.models[task_id], kept)
                if self.config.filter_noninformative and task_id == "informativeness":
                    kept = [
                        i
                        for i in everyone
                        if results[i]["informativeness"].label == "informative"
                    ]
        return results

    def _apply_filter(self, record: AnnotatedRecord) -> None:
        info = record.predictions.get("informativeness")
        if info is not None and info.label != "informative":
            record.predictions = {"informativeness": info}
            record.filtered = True

    def classify_bytes(self, record_id: str, image_bytes: bytes, image_ref: str = "") -> AnnotatedRecord:
        """Classify one in-memory image (service entry point)."""
        start = time.perf_counter()
        record = AnnotatedRecord(record_id=record_id, image_ref=image_ref)
        t0 = time.perf_counter()
        try:
            import io

            img = Image.open(io.BytesIO(image_bytes))
            img = img.convert("RGB")
        except Exception as e:
            record.error = f"decode failed: {e}"
            record.stage_ms["decode"] = (time.perf_counter() - t0) * 1000
            record.latency_ms = (time.perf_counter() - start) * 1000
            return record
        record.stage_ms["decode"] = (time.perf_counter() - t0) * 1000

        if self.config.dedup_enabled:
            t0 = time.perf_counter()
            match = self.index.check_and_add(record_id, image_bytes)
            record.stage_ms["dedup"] = (time.perf_counter() - t0) * 1000
            if match is not None:
                record.duplicate_of = match
                record.latency_ms = (time.perf_counter() - start) * 1000
                return record

        t0 = time.perf_counter()
        record.predictions = self._predict_pil([img])[0]
        record.stage_ms["inference"] = (time.perf_counter() - t0) * 1000
        if self.config.filter_noninformative:
            self._apply_filter(record)
        record.latency_ms = (time.perf_counter() - start) * 1000
        return record


def iter_source(source: Union[str, Path, Iterable]) -> Iterator[tuple[str, Path]]:
    """Yield (record_id, path) pairs from a directory, list file or iterable."""
    if isinstance(source, (str, Path)):
        src = Path(source)
        if src.is_dir():
            paths = sorted(p for p in src.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS)
        elif src.is_file():
            base = src.parent
            paths = []
            for line in src.read_text(encoding="utf-8").splitlines():
                line = line.strip()
                if not line:
                    continue
                p = Path(line)
                paths.append(p if p.is_absolute() else base / p)
        else:
            raise PipelineError(f"source not found: {src}")
    else:
        paths = [Path(p) for p in source]
    seen: set[str] = set()
    for i, p in enumerate(paths):
        rid = p.stem
        if rid in seen:
            rid = f"{rid}_{i}"
        seen.add(rid)
        yield rid, p


def classify_stream(
    source, config: PipelineConfig, classifier: Optional[StreamClassifier] = None
) -> Iterator[AnnotatedRecord]:
    """Classify a stream of image paths, batching inference.

    Duplicates and decode failures bypass inference but still produce one
    record each, in arrival order.
    """
    clf = classifier or StreamClassifier(config)
    window: list[AnnotatedRecord] = []
    pending: list[tuple[int, Image.Image]] = []  # (index into window, image)

    def flush() -> Iterator[AnnotatedRecord]:
        if pending:
            t0 = time.perf_counter()
            preds = clf._predict_pil([img for _, img in pending])
            share = (time.perf_counter() - t0) * 1000 / len(pending)
            for (win_idx, _), pred in zip(pending, preds):
                rec = window[win_idx]
                rec.predictions = pred
                if config.filter_noninformative:
                    clf._apply_filter(rec)
                rec.stage_ms["inference"] = share
                rec.latency_ms = sum(rec.stage_ms.values())
            pending.clear()
        yield from window
        window.clear()

    for record_id, path in iter_source(source):
        rec = AnnotatedRecord(record_id=record_id, image_ref=str(path))
        t0 = time.perf_counter()
        try:
            data = path.read_bytes()
            img = Image.open(path).convert("RGB")
        except Exception as e:
            rec.error = f"decode failed: {e}"
            rec.stage_ms["decode"] = (time.perf_counter() - t0) * 1000
            rec.latency_ms = sum(rec.stage_ms.values())
            window.append(rec)
            continue
        rec.stage_ms["decode"] = (time.perf_counter() - t0) * 1000

        duplicate = None
        if config.dedup_enabled:
            t0 = time.perf_counter()
            duplicate = clf.index.check_and_add(record_id, data)
            rec.stage_ms["dedup"] = (time.perf_counter() - t0) * 1000
        if duplicate is not None:
            rec.duplicate_of = duplicate
            rec.latency_ms = sum(rec.stage_ms.values())
            window.append(rec)
            continue

        window.append(rec)
        pending.append((len(window) - 1, img))
        if len(pending) >= config.batch_size:
            yield from flush()
    yield from flush()


@dataclass
class RunLog:
    stage_ms: list[dict[str, float]]
    wall_seconds: float

    @property
    def images(self) -> int:
        return len(self.stage_ms)


@dataclass
class ThroughputReport:
    images: int
    wall_seconds: float
    images_per_second: float
    stage_mean_ms: dict[str, float]
    stage_p95_ms: dict[str, float]
    mean_latency_ms: float
    p95_latency_ms: float

    def to_json_obj(self) -> dict:
        return {
            "images": self.images,
            "wall_seconds": self.wall_seconds,
            "images_per_second": self.images_per_second,
            "stage_mean_ms": self.stage_mean_ms,
            "stage_p95_ms": self.stage_p95_ms,
            "mean_latency_ms": self.mean_latency_ms,
            "p95_latency_ms": self.p95_latency_ms,
        }


def throughput_report(run_log: RunLog) -> ThroughputReport:
    """Wall-clock throughput plus mean/95th-percentile latency per stage."""
    if run_log.images == 0:
        raise PipelineError("empty run: nothing to report")
    if run_log.wall_seconds <= 0:
        raise PipelineError("wall_seconds must be positive")
    stages = sorted({k for row in run_log.stage_ms for k in row if k != "total"})
    mean = {}
    p95 = {}
    for stage in stages:
        values = np.array([row.get(stage, 0.0) for row in run_log.stage_ms])
        mean[stage] = float(values.mean())
        p95[stage] = float(np.percentile(values, 95))
    totals = np.array([row.get("total", sum(v for k, v in row.items() if k != "total")) for row in run_log.stage_ms])
    return ThroughputReport(
        images=run_log.images,
        wall_seconds=run_log.wall_seconds,
        images_per_second=run_log.images / run_log.wall_seconds,
        stage_mean_ms=mean,
        stage_p95_ms=p95,
        mean_latency_ms=float(totals.mean()),
        p95_latency_ms=float(np.percentile(totals, 95)),
    )


def run_pipeline(
    source,
    config: PipelineConfig,
    out_path: str | Path,
    classifier: Optional[StreamClassifier] = None,
) -> ThroughputReport:
    """Stream records to a JSONL file (flushed per record) plus a summary file."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    stage_rows: list[dict[str, float]] = []
    start = time.perf_counter()
    with out_path.open("w", encoding="utf-8") as fh:
        for record in classify_stream(source, config, classifier):
            fh.write(json.dumps(record.to_json_obj()) + "\n")
            fh.flush()
            row = dict(record.stage_ms)
            row["total"] = record.latency_ms
            stage_rows.append(row)
    wall = time.perf_counter() - start
    report = throughput_report(RunLog(stage_rows, wall))
    summary_path = out_path.with_name(out_path.name + ".summary.json")
    summary_path.write_text(json.dumps(report.to_json_obj(), indent=2), encoding="utf-8")
    return report


def read_records(path: str | Path) -> list[dict]:
    """Parse an output JSONL file (e.g. for downstream consumers or tests)."""
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(json.loads(line))
    return out


def manifest_from_source(source) -> Manifest:
    """Convenience: wrap a stream source into an unlabeled manifest."""
    from .schemas import ImageRecord

    records = [
        ImageRecord(record_id=rid, image_ref=str(path)) for rid, path in iter_source(source)
    ]
    return Manifest(records=records)
