"""Near-duplicate detection, stratified splitting and dataset consolidation.

Signatures pair a cryptographic digest (exact duplicates) with a 64-bit
difference hash (near duplicates). Split plans are deterministic in
(manifest, ratios, seed) and cross-split duplicate groups are always
migrated into train.
"""

from __future__ import annotations

import hashlib
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np
from PIL import Image

from .schemas import MISSING, ImageRecord, Manifest, TaskSchema

log = logging.getLogger(__name__)

DEFAULT_HAMMING_THRESHOLD = 10
DEFAULT_RATIOS = (0.7, 0.1, 0.2)
SPLITS = ("train", "dev", "test")


class SignatureError(ValueError):
    """Raised when an image cannot be decoded for signing."""


class SplitPlanError(ValueError):
    """Raised for invalid ratios or inconsistent plan state."""


@dataclass(frozen=True)
class ImageSignature:
    record_id: str
    phash: int  # 64-bit difference hash
    exact_digest: str  # sha256 of the raw byte stream


def dhash64(image: Image.Image) -> int:
    """64-bit difference hash: grayscale 9x8 downsample, adjacent-column compare."""
    g = image.convert("L").resize((9, 8), Image.LANCZOS)
    px = np.asarray(g)
    bits = 0
    for row in range(8):
        for col in range(8):
            bits = (bits << 1) | int(px[row, col] > px[row, col + 1])
    return bits


def hamming(a: int, b: int) -> int:
    return (a ^ b).bit_count()


def compute_signature(image_bytes: bytes, record_id: str = "") -> ImageSignature:
    digest = hashlib.sha256(image_bytes).hexdigest()
    try:
        img = Image.open(io.BytesIO(image_bytes))
        img.load()
    except Exception as e:
        raise SignatureError(f"cannot decode image for {record_id!r}: {e}") from e
    return ImageSignature(record_id=record_id, phash=dhash64(img), exact_digest=digest)


def signatures_for_manifest(manifest: Manifest, workers: int = 4) -> tuple[list[ImageSignature], list[str]]:
    """Signature per record; returns (signatures, record_ids that failed).

    Image refs are resolved against the manifest's base directory. Hashing is
    read-only and parallel over records.
    """

    def one(rec: ImageRecord):
        path = manifest.resolve_ref(rec)
        try:
            data = path.read_bytes()
            return compute_signature(data, rec.record_id), None
        except (OSError, SignatureError) as e:
            return None, (rec.record_id, str(e))

    sigs, failed = [], []
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for sig, err in pool.map(one, manifest.records):
            if sig is not None:
                sigs.append(sig)
            else:
                failed.append(err[0])
                log.warning("signature failed for %s: %s", err[0], err[1])
    return sigs, failed


@dataclass(frozen=True)
class DuplicateGroup:
    record_ids: tuple[str, ...]
    kind: str  # "exact" | "near"

    def __post_init__(self):
        if len(self.record_ids) < 2:
            raise ValueError("duplicate group needs at least 2 members")
        if self.kind not in ("exact", "near"):
            raise ValueError(f"invalid group kind {self.kind!r}")


class _UnionFind:
    def __init__(self, items):
        self.parent = {x: x for x in items}

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def find_duplicates(
    signatures: Sequence[ImageSignature], hamming_threshold: int = DEFAULT_HAMMING_THRESHOLD
) -> list[DuplicateGroup]:
    """Group signatures into disjoint exact/near duplicate groups.

    Exact groups share a byte digest. Near groups are connected components of
    the pairwise Hamming-threshold relation (transitive closure), so chains of
    near-duplicates end up in one group. A component that is not digest-uniform
    is reported as "near".
    """
    if not 0 <= hamming_threshold <= 64:
        raise ValueError("hamming_threshold must be in [0, 64]")
    if not signatures:
        return []
    ids = [s.record_id for s in signatures]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate record_ids among signatures")
    uf = _UnionFind(ids)
    by_digest: dict[str, str] = {}
    for s in signatures:
        if s.exact_digest in by_digest:
            uf.union(by_digest[s.exact_digest], s.record_id)
        else:
            by_digest[s.exact_digest] = s.record_id
    for i in range(len(signatures)):
        for j in range(i + 1, len(signatures)):
            if hamming(signatures[i].phash, signatures[j].phash) <= hamming_threshold:
                uf.union(signatures[i].record_id, signatures[j].record_id)

    components: dict[str, list[ImageSignature]] = {}
    for s in signatures:
        components.setdefault(uf.find(s.record_id), []).append(s)
    groups = []
    for members in components.values():
        if len(members) < 2:
            continue
        digests = {m.exact_digest for m in members}
        kind = "exact" if len(digests) == 1 else "near"
        groups.append(DuplicateGroup(tuple(sorted(m.record_id for m in members)), kind))
    groups.sort(key=lambda g: g.record_ids)
    return groups


@dataclass
class SplitPlan:
    assignments: dict[str, str]  # record_id -> split name
    ratios: tuple[float, float, float] = DEFAULT_RATIOS
    seed: int = 0

    def __post_init__(self):
        for rid, split in self.assignments.items():
            if split not in SPLITS:
                raise SplitPlanError(f"invalid split {split!r} for {rid!r}")

    def split_of(self, record_id: str) -> str:
        return self.assignments[record_id]

    def ids_in(self, split: str) -> list[str]:
        return [rid for rid, s in self.assignments.items() if s == split]

    def sizes(self) -> dict[str, int]:
        out = {s: 0 for s in SPLITS}
        for s in self.assignments.values():
            out[s] += 1
        return out


def _largest_remainder_counts(n: int, ratios: Sequence[float]) -> list[int]:
    quotas = [n * r for r in ratios]
    base = [int(q) for q in quotas]
    remaining = n - sum(base)
    by_frac = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - base[i]), i))
    for i in by_frac[:remaining]:
        base[i] += 1
    return base


def make_splits(
    manifest: Manifest,
    ratios: tuple[float, float, float] = DEFAULT_RATIOS,
    seed: int = 0,
    stratify_task: Optional[TaskSchema] = None,
) -> SplitPlan:
    """Assign every record to train/dev/test, stratified per class.

    Within each stratum the counts follow the ratios to within one record
    (largest-remainder rounding). Strata smaller than 3 records go wholly to
    train. Deterministic per (manifest, ratios, seed); each stratum uses its
    own seeded shuffle so assignments do not depend on other strata.
    """
    import random

    if abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitPlanError(f"ratios must sum to 1, got {ratios}")
    if any(r < 0 for r in ratios):
        raise SplitPlanError("ratios must be non-negative")

    strata: dict[object, list[str]] = {}
    for rec in manifest:
        if stratify_task is None:
            key = "__all__"
        else:
            idx = rec.labels.get(stratify_task.task_id)
            key = idx if idx != MISSING else "__unlabeled__"
        strata.setdefault(key, []).append(rec.record_id)

    assignments: dict[str, str] = {}
    for key in sorted(strata, key=str):
        ids = sorted(strata[key])
        if len(ids) < 3:
            log.warning("stratum %r has %d record(s) (<3): placing all in train", key, len(ids))
            for rid in ids:
                assignments[rid] = "train"
            continue
        rng = random.Random(f"{seed}|{key}")
        rng.shuffle(ids)
        n_train, n_dev, n_test = _largest_remainder_counts(len(ids), ratios)
        for rid in ids[:n_train]:
            assignments[rid] = "train"
        for rid in ids[n_train : n_train + n_dev]:
            assignments[rid] = "dev"
        for rid in ids[n_train + n_dev :]:
            assignments[rid] = "test"
    return SplitPlan(assignments=assignments, ratios=tuple(ratios), seed=seed)


def resolve_cross_split_duplicates(plan: SplitPlan, groups: Iterable[DuplicateGroup]) -> SplitPlan:
    """Move every duplicate group that spans two splits wholly into train."""
    assignments = dict(plan.assignments)
    for group in groups:
        splits = set()
        for rid in group.record_ids:
            if rid not in assignments:
                raise SplitPlanError(f"group member {rid!r} not covered by plan")
            splits.add(assignments[rid])
        if len(splits) > 1:
            for rid in group.record_ids:
                assignments[rid] = "train"
    return replace(plan, assignments=assignments)


def apply_plan(manifest: Manifest, plan: SplitPlan) -> dict[str, Manifest]:
    """Materialize one split-tagged manifest per split."""
    by_split: dict[str, list[ImageRecord]] = {s: [] for s in SPLITS}
    for rec in manifest:
        by_split[plan.split_of(rec.record_id)].append(rec)
    return {s: manifest.with_records(recs, split_tag=s) for s, recs in by_split.items()}


def _namespace(idx: int, rec: ImageRecord) -> str:
    prefix = rec.source_dataset if rec.source_dataset else f"ds{idx}"
    return f"{prefix}/{rec.record_id}"


def consolidate(
    datasets: Sequence[tuple[Manifest, SplitPlan]],
    signatures: Optional[Sequence[ImageSignature]] = None,
    hamming_threshold: int = DEFAULT_HAMMING_THRESHOLD,
) -> tuple[Manifest, SplitPlan]:
    """Merge per-dataset splits into consolidated splits.

    Record ids are namespaced by source dataset. When byte-identical images
    across sources carry conflicting labels, the record from the larger
    source dataset wins and the other is dropped (logged). Duplicate groups
    are then recomputed across the union and any group spanning splits is
    migrated into train.

    ``signatures`` may be precomputed (keyed by the namespaced ids); when
    omitted they are computed from each record's image bytes, and records
    whose images cannot be read simply do not participate in deduplication.
    """
    sized = sorted(range(len(datasets)), key=lambda i: -len(datasets[i][0]))
    order = {i: rank for rank, i in enumerate(sized)}  # 0 = largest

    records: list[ImageRecord] = []
    assignments: dict[str, str] = {}
    origin: dict[str, int] = {}
    for i, (manifest, plan) in enumerate(datasets):
        for rec in manifest:
            nid = _namespace(i, rec)
            if nid in assignments:
                raise SplitPlanError(f"record id collision after namespacing: {nid!r}")
            records.append(replace(rec, record_id=nid))
            assignments[nid] = plan.split_of(rec.record_id)
            origin[nid] = i

    if signatures is None:
        sigs = []
        for i, (manifest, _plan) in enumerate(datasets):
            got, _failed = signatures_for_manifest(manifest)
            for s in got:
                rec = manifest.by_id()[s.record_id]
                sigs.append(replace(s, record_id=_namespace(i, rec)))
    else:
        sigs = list(signatures)

    # Conflicting labels on byte-identical images: larger source wins.
    by_digest: dict[str, list[ImageSignature]] = {}
    for s in sigs:
        by_digest.setdefault(s.exact_digest, []).append(s)
    rec_by_id = {r.record_id: r for r in records}
    dropped: set[str] = set()
    for digest, members in by_digest.items():
        if len(members) < 2:
            continue
        ranked = sorted(members, key=lambda s: (order[origin[s.record_id]], s.record_id))
        winner = rec_by_id[ranked[0].record_id]
        for s in ranked[1:]:
            other = rec_by_id[s.record_id]
            conflict = any(
                other.labels.get(t) != MISSING
                and winner.labels.get(t) != MISSING
                and other.labels.get(t) != winner.labels.get(t)
                for t in winner.labels.tasks
            )
            if conflict:
                log.warning(
                    "label conflict on identical images: keeping %s, dropping %s",
                    winner.record_id,
                    other.record_id,
                )
                dropped.add(other.record_id)

    records = [r for r in records if r.record_id not in dropped]
    assignments = {rid: s for rid, s in assignments.items() if rid not in dropped}
    sigs = [s for s in sigs if s.record_id not in dropped]

    plan = SplitPlan(assignments=assignments, ratios=datasets[0][1].ratios if datasets else DEFAULT_RATIOS)
    groups = find_duplicates(sigs, hamming_threshold)
    plan = resolve_cross_split_duplicates(plan, groups)
    manifest = Manifest(records=sorted(records, key=lambda r: r.record_id))
    return manifest, plan


@dataclass
class SplitStats:
    """Per-split per-class counts for one task, Tables-style."""

    task_id: str
    rows: dict[str, dict[str, int]]  # class label -> {train, dev, test, total}
    totals: dict[str, int] = field(default_factory=dict)

    def to_json_obj(self) -> dict:
        return {"task": self.task_id, "classes": self.rows, "totals": self.totals}


def split_stats(manifest: Manifest, plan: SplitPlan, task: TaskSchema) -> SplitStats:
    rows = {name: {s: 0 for s in SPLITS} for name in task.class_labels}
    for rec in manifest:
        idx = rec.labels.get(task.task_id)
        if idx == MISSING:
            continue
        rows[task.label_name(idx)][plan.split_of(rec.record_id)] += 1
    for counts in rows.values():
        counts["total"] = sum(counts[s] for s in SPLITS)
    totals = {s: sum(rows[c][s] for c in rows) for s in SPLITS}
    totals["total"] = sum(totals[s] for s in SPLITS)
    return SplitStats(task_id=task.task_id, rows=rows, totals=totals)


def render_stats(stats: SplitStats) -> str:
    cols = ("train", "dev", "test", "total")
    label_w = max([len("Class labels")] + [len(c) for c in stats.rows])
    lines = [f"== {stats.task_id} =="]
    header = "Class labels".ljust(label_w) + "".join(c.rjust(9) for c in ("Train", "Dev", "Test", "Total"))
    lines.append(header)
    for name, counts in stats.rows.items():
        lines.append(name.ljust(label_w) + "".join(str(counts[c]).rjust(9) for c in cols))
    lines.append("Total".ljust(label_w) + "".join(str(stats.totals[c]).rjust(9) for c in cols))
    return "\n".join(lines)
