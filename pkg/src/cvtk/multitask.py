"""Masked multi-task loss over concatenated per-task output segments.

Rows missing a task's label (sentinel -1) are excluded from that task's
cross-entropy; per-task means are summed so every task weighs equally.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass
from typing import Optional, Sequence, Union

import torch
import torch.nn.functional as F
from torch.utils.data import DataLoader

from .models import MultitaskModel
from .schemas import MISSING, Manifest, TASKS
from .train import (
    Checkpoint,
    ManifestDataset,
    TrainConfig,
    TrainingError,
    _seed_everything,
    plateau_lr_schedule,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HeadLayout:
    """Concatenated output layout: task i occupies [offset_i, offset_i + n_i)."""

    task_ids: tuple[str, ...]
    num_classes: tuple[int, ...]

    def __post_init__(self):
        if len(self.task_ids) != len(self.num_classes):
            raise ValueError("task_ids and num_classes must align")
        if any(n < 1 for n in self.num_classes):
            raise ValueError("class counts must be positive")

    @property
    def offsets(self) -> tuple[int, ...]:
        out, total = [], 0
        for n in self.num_classes:
            out.append(total)
            total += n
        return tuple(out)

    @property
    def total(self) -> int:
        return sum(self.num_classes)

    def segment(self, task_index: int) -> tuple[int, int]:
        if not 0 <= task_index < len(self.num_classes):
            raise IndexError(f"task index {task_index} out of range")
        start = self.offsets[task_index]
        return start, start + self.num_classes[task_index]

    @classmethod
    def for_tasks(cls, task_ids: Sequence[str]) -> "HeadLayout":
        return cls(tuple(task_ids), tuple(TASKS[t].num_classes for t in task_ids))


def slice_task(predictions: torch.Tensor, task_index: int, layout: HeadLayout) -> torch.Tensor:
    """The contiguous output columns belonging to one task."""
    if predictions.shape[-1] != layout.total:
        raise ValueError(
            f"prediction width {predictions.shape[-1]} != layout total {layout.total}"
        )
    start, stop = layout.segment(task_index)
    return predictions[..., start:stop]


def batch_loss(
    predictions: torch.Tensor,
    batch_labels: Union[torch.Tensor, Sequence[torch.Tensor]],
    num_classes: Sequence[int],
) -> torch.Tensor:
    """Sum over tasks of the mean cross-entropy on rows with a valid label.

    ``batch_labels`` is either a (batch, tasks) tensor or a per-task sequence
    of length-batch label tensors, with -1 marking a missing label. Tasks with
    no valid row contribute zero; a batch with no valid label anywhere is an
    error (no gradient signal).
    """
    if isinstance(batch_labels, torch.Tensor):
        if batch_labels.dim() == 1:
            batch_labels = batch_labels.unsqueeze(1)
        per_task = [batch_labels[:, i] for i in range(batch_labels.shape[1])]
    else:
        per_task = [torch.as_tensor(t) for t in batch_labels]
    if len(per_task) != len(num_classes):
        raise ValueError("one label column per task required")

    layout = HeadLayout(tuple(str(i) for i in range(len(num_classes))), tuple(num_classes))
    total = predictions.new_zeros(())
    any_valid = False
    for i, labels in enumerate(per_task):
        valid = labels != MISSING
        if not bool(valid.any()):
            continue
        any_valid = True
        seg = slice_task(predictions, i, layout)
        total = total + F.cross_entropy(seg[valid], labels[valid])
    if not any_valid:
        raise ValueError("every label is missing for every task in this batch")
    return total


def multitask_accuracy(
    predictions: torch.Tensor,
    batch_labels: torch.Tensor,
    layout: HeadLayout,
) -> dict[str, tuple[int, int]]:
    """Per-task (correct, counted) pairs over rows with a valid label."""
    out = {}
    for i, task_id in enumerate(layout.task_ids):
        labels = batch_labels[:, i]
        valid = labels != MISSING
        if not bool(valid.any()):
            out[task_id] = (0, 0)
            continue
        seg = slice_task(predictions, i, layout)
        pred = seg[valid].argmax(dim=1)
        out[task_id] = (int((pred == labels[valid]).sum()), int(valid.sum()))
    return out


def evaluate_multitask(
    model, loader: DataLoader, layout: HeadLayout, device: torch.device
) -> dict:
    model.eval()
    correct = {t: 0 for t in layout.task_ids}
    counted = {t: 0 for t in layout.task_ids}
    total_loss, batches = 0.0, 0
    with torch.no_grad():
        for images, labels in loader:
            images, labels = images.to(device), labels.to(device)
            logits = model(images)
            total_loss += batch_loss(logits, labels, layout.num_classes).item()
            batches += 1
            for t, (c, n) in multitask_accuracy(logits, labels, layout).items():
                correct[t] += c
                counted[t] += n
    accs = {t: (correct[t] / counted[t] if counted[t] else 0.0) for t in layout.task_ids}
    present = [a for t, a in accs.items() if counted[t]]
    return {
        "loss": total_loss / max(batches, 1),
        "per_task_accuracy": accs,
        "mean_accuracy": sum(present) / len(present) if present else 0.0,
    }


def train_multitask(
    model: Optional[MultitaskModel],
    train_manifest: Manifest,
    dev_manifest: Manifest,
    config: TrainConfig,
    tasks: Optional[Sequence[str]] = None,
    augment_policy=None,
) -> tuple[Checkpoint, list[dict]]:
    """Same recipe as single-task training but with the masked batch loss.

    The scheduler and best-checkpoint selection watch the unweighted mean of
    per-task dev accuracies. Per-task dev accuracies are logged each epoch.
    """
    if tasks is None:
        present = sorted(
            {t for rec in train_manifest for t in rec.labels.tasks},
            key=list(TASKS).index,
        )
        if not present:
            raise TrainingError("train manifest carries no labels")
        tasks = present
    layout = HeadLayout.for_tasks(tasks)
    if model is None:
        model = MultitaskModel(config.backbone, list(layout.num_classes), pretrained=config.pretrained)
    if tuple(model.num_classes) != layout.num_classes:
        raise TrainingError(
            f"model heads {model.num_classes} do not match task layout {layout.num_classes}"
        )

    train_mf = train_manifest.with_records(
        [r for r in train_manifest if any(r.labels.has(t) for t in tasks)]
    )
    if len(train_mf) == 0:
        raise TrainingError("no records labeled for the requested tasks")

    _seed_everything(config.seed)
    device = config.resolved_device()
    size = config.resolved_image_size()
    train_ds = ManifestDataset(train_mf, list(tasks), size, augment_policy, seed=config.seed, training=True)
    dev_ds = ManifestDataset(dev_manifest, list(tasks), size)
    gen = torch.Generator().manual_seed(config.seed)
    train_loader = DataLoader(train_ds, batch_size=config.batch_size, shuffle=True, generator=gen)
    dev_loader = DataLoader(dev_ds, batch_size=config.batch_size)

    model = model.to(device)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay)

    history: list[dict] = []
    dev_means: list[float] = []
    best = (-1.0, -1)
    best_state = None
    lr = config.learning_rate
    for epoch in range(1, config.max_epochs + 1):
        train_ds.set_epoch(epoch)
        model.train()
        total_loss, batches = 0.0, 0
        for images, labels in train_loader:
            images, labels = images.to(device), labels.to(device)
            optimizer.zero_grad()
            loss = batch_loss(model(images), labels, layout.num_classes)
            loss.backward()
            optimizer.step()
            total_loss += loss.item()
            batches += 1
        dev = evaluate_multitask(model, dev_loader, layout, device)
        row = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": total_loss / max(batches, 1),
            "dev_loss": dev["loss"],
            "dev_mean_acc": dev["mean_accuracy"],
        }
        for t, a in dev["per_task_accuracy"].items():
            row[f"dev_acc_{t}"] = a
        history.append(row)
        if dev["mean_accuracy"] > best[0]:
            best = (dev["mean_accuracy"], epoch)
            best_state = copy.deepcopy({k: v.cpu() for k, v in model.state_dict().items()})
        dev_means.append(dev["mean_accuracy"])
        lr = plateau_lr_schedule(dev_means, config.learning_rate, config.plateau_factor, config.plateau_patience)[-1]
        for group in optimizer.param_groups:
            group["lr"] = lr

    ckpt = Checkpoint(
        backbone=config.backbone,
        task_ids=layout.task_ids,
        num_classes=layout.num_classes,
        state_dict=best_state,
        epoch=best[1],
        dev_metrics={"mean_accuracy": best[0]},
        config=asdict(config),
    )
    return ckpt, history
