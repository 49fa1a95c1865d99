"""Task schemas, label encoding, image records and the manifest file format.

Every other module consumes these types. Manifests are line-delimited JSON
(one record per line, optional header line) and are immutable after load.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1"

# Serialized sentinel for "this task has no label on this record".
MISSING = -1


class LabelError(ValueError):
    """Raised for unknown labels or out-of-range class indices."""


class ManifestError(ValueError):
    """Raised for structurally invalid manifests (duplicate ids, bad file)."""


@dataclass(frozen=True)
class TaskSchema:
    """A classification task and its ordered class labels.

    The label order is fixed; it defines class-index semantics everywhere
    (encoding, model heads, metrics).
    """

    task_id: str
    class_labels: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.class_labels)) != len(self.class_labels):
            raise ValueError(f"duplicate labels in task {self.task_id!r}")
        if not self.class_labels:
            raise ValueError(f"task {self.task_id!r} has no labels")

    @property
    def num_classes(self) -> int:
        return len(self.class_labels)

    def label_name(self, index: int) -> str:
        if not 0 <= index < self.num_classes:
            raise LabelError(f"class index {index} out of range for task {self.task_id!r}")
        return self.class_labels[index]


def _normalize(name: str) -> str:
    s = name.lower()
    for ch in (",", "_", "-", "/"):
        s = s.replace(ch, " ")
    return " ".join(s.split())


# Known spelling variants across the source datasets. The canonical forms
# follow each task description's own enumeration; anything not listed here
# must already normalize to a canonical label.
_LABEL_ALIASES = {
    "little to no damage": "little or none",
    "little or no damage": "little or none",
    "severe": "severe damage",
    "mild": "mild damage",
}


DISASTER_TYPES = TaskSchema(
    "disaster_types",
    (
        "earthquake",
        "fire",
        "flood",
        "hurricane",
        "landslide",
        "other disaster",
        "not disaster",
    ),
)

INFORMATIVENESS = TaskSchema("informativeness", ("informative", "not informative"))

HUMANITARIAN = TaskSchema(
    "humanitarian",
    (
        "affected injured or dead people",
        "infrastructure and utility damage",
        "rescue volunteering or donation effort",
        "not humanitarian",
    ),
)

DAMAGE_SEVERITY = TaskSchema(
    "damage_severity",
    ("severe damage", "mild damage", "little or none"),
)

# Canonical task order; LabelVector.as_list() and multitask head layouts
# follow this ordering.
TASKS: dict[str, TaskSchema] = {
    t.task_id: t
    for t in (DISASTER_TYPES, INFORMATIVENESS, HUMANITARIAN, DAMAGE_SEVERITY)
}
TASK_ORDER: tuple[str, ...] = tuple(TASKS)

# Short aliases accepted on the CLI (--tasks info,hum etc.).
TASK_ALIASES = {
    "dt": "disaster_types",
    "info": "informativeness",
    "hum": "humanitarian",
    "ds": "damage_severity",
}


def get_task(name: str) -> TaskSchema:
    key = TASK_ALIASES.get(name.lower(), name.lower())
    try:
        return TASKS[key]
    except KeyError:
        raise LabelError(f"unknown task {name!r}; expected one of {sorted(TASKS)}") from None


def encode_label(task: TaskSchema, label_name: str) -> int:
    """Return the zero-based class index of ``label_name`` in ``task``.

    Matching is case- and punctuation-insensitive and resolves known
    spelling variants from the source datasets.
    """
    norm = _normalize(label_name)
    norm = _LABEL_ALIASES.get(norm, norm)
    for i, canonical in enumerate(task.class_labels):
        if _normalize(canonical) == norm:
            return i
    raise LabelError(f"unknown label {label_name!r} for task {task.task_id!r}")


@dataclass(frozen=True)
class LabelVector:
    """Per-task class indices for one image; absent tasks are MISSING.

    Stored sparsely as a task_id -> index mapping. ``as_list()`` gives the
    dense form in canonical task order with -1 sentinels.
    """

    indices: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for task_id, idx in self.indices.items():
            if task_id not in TASKS:
                raise LabelError(f"unknown task {task_id!r} in label vector")
            idx = int(idx)
            if idx == MISSING:
                continue
            if not 0 <= idx < TASKS[task_id].num_classes:
                raise LabelError(
                    f"class index {idx} out of range for task {task_id!r} "
                    f"(expects [0, {TASKS[task_id].num_classes}))"
                )
            clean[task_id] = idx
        object.__setattr__(self, "indices", clean)

    def get(self, task_id: str) -> int:
        return self.indices.get(task_id, MISSING)

    def has(self, task_id: str) -> bool:
        return task_id in self.indices

    @property
    def tasks(self) -> tuple[str, ...]:
        return tuple(t for t in TASK_ORDER if t in self.indices)

    def as_list(self) -> list[int]:
        return [self.get(t) for t in TASK_ORDER]

    def to_json_obj(self) -> dict[str, int]:
        return {t: self.indices[t] for t in TASK_ORDER if t in self.indices}

    def __eq__(self, other):
        return isinstance(other, LabelVector) and dict(self.indices) == dict(other.indices)

    def __hash__(self):
        return hash(tuple(sorted(self.indices.items())))


def label_vector(raw: Mapping[str, str]) -> LabelVector:
    """Encode a task -> label-name mapping into a LabelVector.

    Any invalid name aborts the whole vector; at least one label is required.
    """
    if not raw:
        raise LabelError("at least one label required")
    indices = {}
    for task_name, label_name in raw.items():
        task = get_task(task_name)
        indices[task.task_id] = encode_label(task, label_name)
    return LabelVector(indices)


@dataclass(frozen=True)
class ImageRecord:
    record_id: str
    image_ref: str
    labels: LabelVector = field(default_factory=LabelVector)
    source_dataset: str = ""

    def to_json_obj(self) -> dict:
        obj = {
            "record_id": self.record_id,
            "source_dataset": self.source_dataset,
            "image_ref": self.image_ref,
            "labels": self.labels.to_json_obj(),
        }
        return obj


SPLIT_NAMES = ("train", "dev", "test")


@dataclass
class Manifest:
    """An ordered collection of unique ImageRecords, optionally split-tagged.

    Immutable by convention after construction; loading never mutates an
    existing instance, so manifests are safe to share across workers.
    """

    records: list[ImageRecord] = field(default_factory=list)
    split_tag: Optional[str] = None
    schema_version: str = SCHEMA_VERSION
    # Directory the manifest was loaded from; used to resolve relative
    # image_refs. Not serialized.
    base_dir: Optional[Path] = field(default=None, compare=False)

    def __post_init__(self):
        if self.split_tag is not None and self.split_tag not in SPLIT_NAMES:
            raise ManifestError(f"invalid split_tag {self.split_tag!r}")
        seen = set()
        for r in self.records:
            if r.record_id in seen:
                raise ManifestError(f"duplicate record_id {r.record_id!r}")
            seen.add(r.record_id)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def record_ids(self) -> list[str]:
        return [r.record_id for r in self.records]

    def by_id(self) -> dict[str, ImageRecord]:
        return {r.record_id: r for r in self.records}

    def resolve_ref(self, record: ImageRecord) -> Path:
        p = Path(record.image_ref)
        if not p.is_absolute() and self.base_dir is not None:
            return self.base_dir / p
        return p

    def with_records(self, records: Iterable[ImageRecord], split_tag=None) -> "Manifest":
        return Manifest(
            records=list(records),
            split_tag=split_tag if split_tag is not None else self.split_tag,
            schema_version=self.schema_version,
            base_dir=self.base_dir,
        )


@dataclass
class LineIssue:
    line_no: int
    reason: str


def _parse_record_line(obj: dict) -> ImageRecord:
    if not isinstance(obj, dict):
        raise ManifestError("record line is not an object")
    record_id = obj.get("record_id")
    image_ref = obj.get("image_ref")
    if not isinstance(record_id, str) or not record_id:
        raise ManifestError("missing or invalid record_id")
    if not isinstance(image_ref, str) or not image_ref:
        raise ManifestError("missing or invalid image_ref")
    source = obj.get("source_dataset", "")
    if not isinstance(source, str):
        raise ManifestError("source_dataset must be a string")
    raw_labels = obj.get("labels", {})
    if not isinstance(raw_labels, dict):
        raise ManifestError("labels must be an object")
    try:
        labels = LabelVector(raw_labels)
    except LabelError as e:
        raise ManifestError(str(e)) from None
    return ImageRecord(record_id=record_id, image_ref=image_ref, labels=labels, source_dataset=source)


def scan_manifest(path: str | Path) -> tuple[Manifest, list[LineIssue]]:
    """Parse a manifest file, collecting per-line issues instead of failing.

    A leading header line (an object with ``schema_version`` and no
    ``record_id``) sets file-level metadata; every other line must be a
    record. Malformed lines are skipped and reported.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest file not found: {path}")
    records: list[ImageRecord] = []
    issues: list[LineIssue] = []
    split_tag = None
    schema_version = SCHEMA_VERSION
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                issues.append(LineIssue(line_no, f"invalid JSON: {e.msg}"))
                continue
            if line_no == 1 and isinstance(obj, dict) and "schema_version" in obj and "record_id" not in obj:
                schema_version = str(obj["schema_version"])
                split_tag = obj.get("split_tag")
                if split_tag is not None and split_tag not in SPLIT_NAMES:
                    issues.append(LineIssue(line_no, f"invalid split_tag {split_tag!r}"))
                    split_tag = None
                continue
            try:
                rec = _parse_record_line(obj)
            except ManifestError as e:
                issues.append(LineIssue(line_no, str(e)))
                continue
            if rec.record_id in seen:
                issues.append(LineIssue(line_no, f"duplicate record_id {rec.record_id!r}"))
                continue
            seen.add(rec.record_id)
            records.append(rec)
    manifest = Manifest(
        records=records,
        split_tag=split_tag,
        schema_version=schema_version,
        base_dir=path.parent,
    )
    return manifest, issues


def load_manifest(path: str | Path) -> Manifest:
    """Load a manifest, skipping (and logging) malformed lines."""
    manifest, issues = scan_manifest(path)
    for issue in issues:
        log.warning("%s:%d skipped: %s", path, issue.line_no, issue.reason)
    if issues:
        log.warning("%s: %d line(s) rejected, %d record(s) loaded", path, len(issues), len(manifest))
    return manifest


def save_manifest(manifest: Manifest, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        header = {"schema_version": manifest.schema_version}
        if manifest.split_tag is not None:
            header["split_tag"] = manifest.split_tag
        fh.write(json.dumps(header) + "\n")
        for rec in manifest.records:
            fh.write(json.dumps(rec.to_json_obj()) + "\n")


def class_histograms(manifest: Manifest) -> dict[str, dict[str, int]]:
    """Per-task label-name counts over a manifest."""
    out: dict[str, dict[str, int]] = {}
    for task_id, task in TASKS.items():
        counts = {name: 0 for name in task.class_labels}
        for rec in manifest:
            idx = rec.labels.get(task_id)
            if idx != MISSING:
                counts[task.label_name(idx)] += 1
        if any(counts.values()):
            out[task_id] = counts
    return out
