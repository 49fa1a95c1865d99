"""Build multi-task train/dev/test manifests from per-task splits.

Three-step construction: test ids claim every image first, then dev, then
train, so no image appears in two output splits. Each output record carries
every task label known for that image; unlabeled tasks stay missing.
"""

from __future__ import annotations

import logging
from dataclasses import replace
from typing import Mapping, Sequence

from .schemas import ImageRecord, LabelVector, Manifest, TASKS

log = logging.getLogger(__name__)


class LabelConflictError(ValueError):
    """Same (record, task) labeled differently across input manifests."""

    def __init__(self, offenders):
        self.offenders = offenders
        lines = ", ".join(f"{rid}/{task}: {a} vs {b}" for rid, task, a, b in offenders)
        super().__init__(f"conflicting labels: {lines}")


def merge_multitask(
    per_task: Mapping[str, tuple[Manifest, Manifest, Manifest]],
) -> tuple[Manifest, Manifest, Manifest]:
    """Merge per-task (train, dev, test) manifests into combined splits.

    Membership rule: an image present in any task's test set lands in the
    combined test set; otherwise if present in any dev set it lands in dev;
    otherwise in train. Its labels from every input follow it, which removes
    the image from the other tasks' train/dev sets. Identity keys on
    record_id (same image implies same id across tasks).
    """
    for task_id in per_task:
        if task_id not in TASKS:
            raise KeyError(f"unknown task {task_id!r}")

    labels: dict[str, dict[str, int]] = {}
    refs: dict[str, ImageRecord] = {}
    membership: dict[str, set[str]] = {"train": set(), "dev": set(), "test": set()}
    conflicts: list[tuple[str, str, int, int]] = []

    for task_id, triple in per_task.items():
        if len(triple) != 3:
            raise ValueError(f"task {task_id!r}: expected (train, dev, test) manifests")
        for split, manifest in zip(("train", "dev", "test"), triple):
            for rec in manifest:
                membership[split].add(rec.record_id)
                refs.setdefault(rec.record_id, rec)
                got = labels.setdefault(rec.record_id, {})
                for t in rec.labels.tasks:
                    idx = rec.labels.get(t)
                    if t in got and got[t] != idx:
                        conflicts.append((rec.record_id, t, got[t], idx))
                    else:
                        got[t] = idx
    if conflicts:
        raise LabelConflictError(conflicts)

    out: dict[str, list[ImageRecord]] = {"train": [], "dev": [], "test": []}
    for rid in sorted(refs):
        if rid in membership["test"]:
            split = "test"
        elif rid in membership["dev"]:
            split = "dev"
        else:
            split = "train"
        rec = replace(refs[rid], labels=LabelVector(labels[rid]))
        out[split].append(rec)

    return (
        Manifest(records=out["train"], split_tag="train"),
        Manifest(records=out["dev"], split_tag="dev"),
        Manifest(records=out["test"], split_tag="test"),
    )


def complete_label_subset(
    merged: Sequence[Manifest], tasks: Sequence[str]
) -> list[Manifest]:
    """Keep only records labeled for every requested task; splits preserved."""
    wanted = []
    for t in tasks:
        if t not in TASKS:
            raise KeyError(f"unknown task {t!r}")
        wanted.append(t)
    out = []
    total = 0
    for manifest in merged:
        kept = [rec for rec in manifest if all(rec.labels.has(t) for t in wanted)]
        total += len(kept)
        out.append(manifest.with_records(kept))
    if total == 0:
        log.warning("complete-label subset over %s is empty", list(wanted))
    return out
