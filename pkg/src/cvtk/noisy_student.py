"""Self-training loop: teacher pseudo-labels an unlabeled pool, survivors are
confidence-filtered and class-balanced, and a noised student trains on the
combined labeled + pseudo-labeled stream. Optionally iterated with the
student promoted to teacher.
"""

from __future__ import annotations

import copy
import logging
import random
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import torch
import torch.nn.functional as F
from torch.utils.data import DataLoader

from .augment import AugmentPolicy
from .models import build_model, input_size_for
from .schemas import ImageRecord, LabelVector, Manifest, TaskSchema
from .train import (
    Checkpoint,
    ManifestDataset,
    TrainConfig,
    TrainingError,
    _seed_everything,
    evaluate_single,
    instantiate_model,
    plateau_lr_schedule,
    predict,
)

log = logging.getLogger(__name__)

# Dev-tuned confidence thresholds per task.
DEFAULT_THRESHOLDS = {
    "disaster_types": 0.7,
    "informativeness": 0.8,
    "humanitarian": 0.45,
    "damage_severity": 0.45,
}

# Grid swept when the threshold is tuned on the dev set.
THRESHOLD_GRID = tuple(round(0.05 * i, 2) for i in range(1, 20))


@dataclass
class NoisyStudentConfig:
    task_id: str
    confidence_threshold: Optional[float] = None  # None -> task default
    labeled_batch: int = 16
    unlabeled_batch: int = 48
    augment: AugmentPolicy = field(default_factory=lambda: AugmentPolicy(num_ops=5, magnitude=12))
    dropout_rate: float = 0.2
    iterations: int = 1
    student_backbone: Optional[str] = None  # None -> same as teacher
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.confidence_threshold is None:
            self.confidence_threshold = DEFAULT_THRESHOLDS[self.task_id]
        if not 0 < self.confidence_threshold < 1:
            raise ValueError("confidence_threshold must be in (0, 1)")
        if self.labeled_batch <= 0 or self.unlabeled_batch <= 0:
            raise ValueError("batch sizes must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


@dataclass(frozen=True)
class PseudoLabel:
    record_id: str
    image_ref: str
    predicted_class: int
    confidence: float  # max of the teacher's probability vector


def pseudo_label(teacher: Checkpoint, unlabeled: Manifest, batch_size: int = 64) -> list[PseudoLabel]:
    """Teacher predictions over an unlabeled manifest; one entry per decodable image."""
    if teacher.is_multitask:
        raise TrainingError("pseudo-labeling expects a single-task teacher checkpoint")
    paths = [unlabeled.resolve_ref(rec) for rec in unlabeled]
    preds = predict(teacher, paths, batch_size=batch_size)
    out = []
    skipped = 0
    for rec, pred in zip(unlabeled, preds):
        if not pred.ok:
            skipped += 1
            continue
        out.append(
            PseudoLabel(
                record_id=rec.record_id,
                image_ref=rec.image_ref,
                predicted_class=pred.predicted_class(),
                confidence=pred.confidence(),
            )
        )
    if skipped:
        log.warning("pseudo-labeling skipped %d undecodable image(s)", skipped)
    return out


def filter_and_balance(
    pseudo: list[PseudoLabel],
    threshold: float,
    task: TaskSchema,
    base_dir=None,
) -> Manifest:
    """Keep confident pseudo-labels and equalize class counts.

    Entries with confidence <= threshold are dropped (strictly-greater rule).
    With m the smallest surviving per-class count, each class keeps its m
    highest-confidence entries; any class with zero survivors empties the
    result (warned).
    """
    if not 0 < threshold < 1:
        raise ValueError("threshold must be in (0, 1)")
    survivors: dict[int, list[PseudoLabel]] = {c: [] for c in range(task.num_classes)}
    for p in pseudo:
        if p.confidence > threshold:
            survivors[p.predicted_class].append(p)
    m = min(len(v) for v in survivors.values())
    if m == 0:
        log.warning(
            "filter_and_balance: some class has no survivor above %.2f; empty output", threshold
        )
        return Manifest(records=[], split_tag="train", base_dir=base_dir)
    records = []
    for c in range(task.num_classes):
        top = sorted(survivors[c], key=lambda p: (-p.confidence, p.record_id))[:m]
        for p in top:
            records.append(
                ImageRecord(
                    record_id=p.record_id,
                    image_ref=p.image_ref,
                    labels=LabelVector({task.task_id: c}),
                    source_dataset="pseudo",
                )
            )
    records.sort(key=lambda r: r.record_id)
    return Manifest(records=records, split_tag="train", base_dir=base_dir)


def _combined_batches(labeled_loader, pseudo_ds, unlabeled_batch: int, rng: random.Random):
    """Pair each labeled batch with a freshly drawn pseudo-labeled batch.

    The pseudo pool is sampled without replacement per epoch, cycling and
    reshuffling when exhausted.
    """
    order: list[int] = []

    def next_indices(n):
        nonlocal order
        out = []
        while len(out) < n:
            if not order:
                order = list(range(len(pseudo_ds)))
                rng.shuffle(order)
            out.append(order.pop())
        return out

    for images, labels in labeled_loader:
        idxs = next_indices(unlabeled_batch)
        p_images = torch.stack([pseudo_ds[i][0] for i in idxs])
        p_labels = torch.stack([pseudo_ds[i][1] for i in idxs])
        yield torch.cat([images, p_images]), torch.cat([labels, p_labels])


def train_student(
    labeled_train: Manifest,
    labeled_dev: Manifest,
    pseudo: Manifest,
    config: NoisyStudentConfig,
    task: TaskSchema,
) -> tuple[Checkpoint, list[dict]]:
    """Train a noised student on combined labeled and pseudo-labeled images.

    Each step concatenates ``labeled_batch`` labeled and ``unlabeled_batch``
    pseudo images and takes the average cross-entropy over the combined batch.
    Noise = augmentation on the student's inputs plus dropout before its head.
    The student starts from pretrained weights (per the train sub-config).
    """
    if len(pseudo) == 0:
        raise TrainingError("pseudo-labeled manifest is empty")
    tcfg = config.train
    backbone = config.student_backbone or tcfg.backbone
    _seed_everything(tcfg.seed)
    model = build_model(
        backbone, task.num_classes, pretrained=tcfg.pretrained, head_dropout=config.dropout_rate
    )
    device = tcfg.resolved_device()
    size = tcfg.image_size or input_size_for(backbone)

    labeled_mf = labeled_train.with_records([r for r in labeled_train if r.labels.has(task.task_id)])
    if len(labeled_mf) == 0:
        raise TrainingError(f"no records labeled for {task.task_id!r} in labeled manifest")
    labeled_ds = ManifestDataset(
        labeled_mf, [task.task_id], size, config.augment, seed=tcfg.seed, training=True
    )
    pseudo_ds = ManifestDataset(
        pseudo, [task.task_id], size, config.augment, seed=tcfg.seed + 1, training=True
    )
    dev_ds = ManifestDataset(labeled_dev, [task.task_id], size)
    if len(pseudo_ds) == 0:
        raise TrainingError("all pseudo-labeled images failed to decode")
    gen = torch.Generator().manual_seed(tcfg.seed)
    labeled_loader = DataLoader(labeled_ds, batch_size=config.labeled_batch, shuffle=True, generator=gen)
    dev_loader = DataLoader(dev_ds, batch_size=tcfg.batch_size)

    model = model.to(device)
    optimizer = torch.optim.Adam(model.parameters(), lr=tcfg.learning_rate, weight_decay=tcfg.weight_decay)
    rng = random.Random(tcfg.seed)

    history: list[dict] = []
    dev_accs: list[float] = []
    best = (-1.0, -1)
    best_state = None
    lr = tcfg.learning_rate
    for epoch in range(1, tcfg.max_epochs + 1):
        labeled_ds.set_epoch(epoch)
        pseudo_ds.set_epoch(epoch)
        model.train()
        total_loss, steps = 0.0, 0
        step_batch = 0
        for images, labels in _combined_batches(labeled_loader, pseudo_ds, config.unlabeled_batch, rng):
            images, labels = images.to(device), labels.to(device)
            step_batch = labels.numel()
            optimizer.zero_grad()
            loss = F.cross_entropy(model(images), labels)
            loss.backward()
            optimizer.step()
            total_loss += loss.item()
            steps += 1
        dev_loss, dev_acc = evaluate_single(model, dev_loader, device)
        history.append(
            {
                "epoch": epoch,
                "lr": lr,
                "train_loss": total_loss / max(steps, 1),
                "dev_loss": dev_loss,
                "dev_acc": dev_acc,
                "step_batch": step_batch,
            }
        )
        if dev_acc > best[0]:
            best = (dev_acc, epoch)
            best_state = copy.deepcopy({k: v.cpu() for k, v in model.state_dict().items()})
        dev_accs.append(dev_acc)
        lr = plateau_lr_schedule(dev_accs, tcfg.learning_rate, tcfg.plateau_factor, tcfg.plateau_patience)[-1]
        for group in optimizer.param_groups:
            group["lr"] = lr

    ckpt = Checkpoint(
        backbone=backbone,
        task_ids=(task.task_id,),
        num_classes=(task.num_classes,),
        state_dict=best_state,
        epoch=best[1],
        dev_metrics={"accuracy": best[0]},
        config=asdict(tcfg),
        head_dropout=config.dropout_rate,
    )
    return ckpt, history


@dataclass
class SelfTrainingRound:
    round: int
    threshold: float
    pseudo_total: int
    pseudo_kept: int
    dev_accuracy: float


@dataclass
class SelfTrainingResult:
    student: Checkpoint
    rounds: list[SelfTrainingRound]


def iterate(
    labeled_train: Manifest,
    labeled_dev: Manifest,
    unlabeled: Manifest,
    config: NoisyStudentConfig,
    task: TaskSchema,
    teacher: Optional[Checkpoint] = None,
) -> SelfTrainingResult:
    """Run the full self-training loop for ``config.iterations`` rounds.

    A teacher is trained on the labeled data unless one is supplied; each
    round pseudo-labels the pool, filters and balances, trains a student, and
    promotes it to teacher. Checkpoint lineage is recorded per round.
    """
    from .train import train as train_single

    if teacher is None:
        _seed_everything(config.train.seed)
        model = build_model(config.train.backbone, task.num_classes, pretrained=config.train.pretrained)
        teacher, _ = train_single(model, labeled_train, labeled_dev, config.train, task=task)
    rounds: list[SelfTrainingRound] = []
    student = teacher
    for r in range(1, config.iterations + 1):
        pseudo = pseudo_label(student, unlabeled)
        kept = filter_and_balance(
            pseudo, config.confidence_threshold, task, base_dir=unlabeled.base_dir
        )
        if len(kept) == 0:
            log.warning("round %d: empty pseudo set; stopping early", r)
            break
        new_student, _hist = train_student(labeled_train, labeled_dev, kept, config, task)
        new_student.lineage = list(student.lineage) + [
            {"round": r, "teacher_epoch": student.epoch, "teacher_backbone": student.backbone}
        ]
        rounds.append(
            SelfTrainingRound(
                round=r,
                threshold=config.confidence_threshold,
                pseudo_total=len(pseudo),
                pseudo_kept=len(kept),
                dev_accuracy=new_student.dev_metrics.get("accuracy", 0.0),
            )
        )
        student = new_student
    return SelfTrainingResult(student=student, rounds=rounds)


def sweep_threshold(
    labeled_train: Manifest,
    labeled_dev: Manifest,
    unlabeled: Manifest,
    config: NoisyStudentConfig,
    task: TaskSchema,
    grid=THRESHOLD_GRID,
) -> tuple[float, list[tuple[float, float]]]:
    """Pick the confidence threshold maximizing student dev accuracy.

    Trains one teacher, then one student per grid point; expensive, intended
    for desk-scale data. Returns (best threshold, [(threshold, dev acc)]).
    """
    from .train import train as train_single

    _seed_everything(config.train.seed)
    model = build_model(config.train.backbone, task.num_classes, pretrained=config.train.pretrained)
    teacher, _ = train_single(model, labeled_train, labeled_dev, config.train, task=task)
    pseudo = pseudo_label(teacher, unlabeled)
    scores = []
    for threshold in grid:
        kept = filter_and_balance(pseudo, threshold, task, base_dir=unlabeled.base_dir)
        if len(kept) == 0:
            scores.append((threshold, 0.0))
            continue
        cfg = replace(config, confidence_threshold=threshold)
        student, _ = train_student(labeled_train, labeled_dev, kept, cfg, task)
        scores.append((threshold, student.dev_metrics.get("accuracy", 0.0)))
    best = max(scores, key=lambda s: s[1])[0]
    return best, scores
