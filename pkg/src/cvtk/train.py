"""Single-task transfer-learning harness: Adam, dev-plateau LR decay,
best-dev checkpointing and per-epoch history suitable for overfitting plots.
"""

from __future__ import annotations

import copy
import json
import logging
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from PIL import Image
from torch.utils.data import DataLoader, Dataset

from . import augment as aug
from .models import (
    IMAGENET_MEAN,
    IMAGENET_STD,
    MultitaskModel,
    build_model,
    input_size_for,
)
from .schemas import MISSING, Manifest, TASKS, TaskSchema

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-5
    plateau_factor: float = 0.1
    plateau_patience: int = 10
    max_epochs: int = 150
    weight_decay: float = 0.0  # 1e-3 when training with augmentation
    batch_size: int = 16
    seed: int = 0
    backbone: str = "resnet18"
    pretrained: bool = True
    # None -> the backbone's canonical input resolution.
    image_size: Optional[int] = None
    device: str = "auto"

    def __post_init__(self):
        if self.learning_rate <= 0 or self.plateau_factor <= 0:
            raise ValueError("rates must be positive")
        if self.plateau_patience >= self.max_epochs:
            raise ValueError("plateau_patience must be < max_epochs")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")

    def resolved_image_size(self) -> int:
        return self.image_size or input_size_for(self.backbone)

    def resolved_device(self) -> torch.device:
        if self.device == "auto":
            return torch.device("cuda" if torch.cuda.is_available() else "cpu")
        return torch.device(self.device)


def load_train_config(path: str | Path) -> tuple[TrainConfig, Optional[aug.AugmentPolicy]]:
    """Read a config file (JSON or YAML); returns (train config, augment policy).

    The ``augment`` section uses keys {enabled, N, M}; N/M may also be spelled
    num_ops/magnitude. Augmentation defaults to disabled.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix in (".yaml", ".yml"):
        import yaml

        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    data = dict(data or {})
    aug_cfg = data.pop("augment", {}) or {}
    policy = None
    if aug_cfg.get("enabled"):
        policy = aug.AugmentPolicy(
            num_ops=int(aug_cfg.get("N", aug_cfg.get("num_ops", 5))),
            magnitude=int(aug_cfg.get("M", aug_cfg.get("magnitude", 12))),
        )
    known = {f for f in TrainConfig.__dataclass_fields__}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return TrainConfig(**data), policy


def plateau_lr_schedule(
    dev_accuracies: Sequence[float],
    initial_lr: float,
    factor: float = 0.1,
    patience: int = 10,
) -> list[float]:
    """Learning rate in effect after each recorded dev accuracy.

    Strict improvement over the best seen accuracy resets the stall counter;
    once the counter reaches ``patience`` the rate is multiplied by ``factor``
    and the counter restarts. Pure function of the accuracy history.
    """
    lrs = []
    best = float("-inf")
    stalled = 0
    lr = initial_lr
    for acc in dev_accuracies:
        if acc > best:
            best = acc
            stalled = 0
        else:
            stalled += 1
            if stalled >= patience:
                lr *= factor
                stalled = 0
        lrs.append(lr)
    return lrs


class ManifestDataset(Dataset):
    """Decodes, augments and normalizes manifest images.

    Records whose image cannot be opened are dropped at construction and
    counted in ``skipped``. Labels come out as a scalar for a single task or
    a vector (with -1 sentinels) for several tasks.
    """

    def __init__(
        self,
        manifest: Manifest,
        tasks: Sequence[str],
        image_size: int,
        augment_policy: Optional[aug.AugmentPolicy] = None,
        seed: int = 0,
        training: bool = False,
    ):
        self.tasks = list(tasks)
        self.image_size = image_size
        self.augment_policy = augment_policy if training else None
        self.seed = seed
        self.epoch = 0
        self.items: list[tuple[Path, list[int], str]] = []
        self.skipped = 0
        for rec in manifest:
            path = manifest.resolve_ref(rec)
            try:
                with Image.open(path) as im:
                    im.verify()
            except Exception as e:
                self.skipped += 1
                log.warning("skipping undecodable image %s: %s", path, e)
                continue
            labels = [rec.labels.get(t) for t in self.tasks]
            self.items.append((path, labels, rec.record_id))
        if self.skipped:
            log.warning("dataset: skipped %d undecodable image(s)", self.skipped)

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, idx: int):
        path, labels, _rid = self.items[idx]
        with Image.open(path) as im:
            img = im.convert("RGB")
        if self.augment_policy is not None:
            rng = random.Random(self.seed * 1_000_003 + self.epoch * 8191 + idx)
            img = aug.apply(self.augment_policy, img, rng)
        tensor = preprocess(img, self.image_size)
        label = torch.tensor(labels[0] if len(self.tasks) == 1 else labels, dtype=torch.long)
        return tensor, label


def preprocess(img: Image.Image, image_size: int) -> torch.Tensor:
    img = img.convert("RGB").resize((image_size, image_size), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float32) / 255.0
    arr = (arr - np.array(IMAGENET_MEAN, dtype=np.float32)) / np.array(IMAGENET_STD, dtype=np.float32)
    return torch.from_numpy(arr.transpose(2, 0, 1))


@dataclass
class Checkpoint:
    backbone: str
    task_ids: tuple[str, ...]
    num_classes: tuple[int, ...]
    state_dict: dict
    epoch: int
    dev_metrics: dict
    config: dict
    head_dropout: float = 0.0
    lineage: list = field(default_factory=list)

    @property
    def is_multitask(self) -> bool:
        return len(self.task_ids) > 1

    @property
    def task_id(self) -> str:
        if self.is_multitask:
            raise ValueError("multitask checkpoint has no single task_id")
        return self.task_ids[0]

    def image_size(self) -> int:
        return self.config.get("image_size") or input_size_for(self.backbone)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "backbone": ckpt.backbone,
            "task_ids": list(ckpt.task_ids),
            "num_classes": list(ckpt.num_classes),
            "state_dict": ckpt.state_dict,
            "epoch": ckpt.epoch,
            "dev_metrics": ckpt.dev_metrics,
            "config": ckpt.config,
            "head_dropout": ckpt.head_dropout,
            "lineage": ckpt.lineage,
        },
        path,
    )


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise TrainingError(f"checkpoint not found: {path}")
    blob = torch.load(path, map_location="cpu", weights_only=False)
    return Checkpoint(
        backbone=blob["backbone"],
        task_ids=tuple(blob["task_ids"]),
        num_classes=tuple(blob["num_classes"]),
        state_dict=blob["state_dict"],
        epoch=blob["epoch"],
        dev_metrics=blob["dev_metrics"],
        config=blob["config"],
        head_dropout=blob.get("head_dropout", 0.0),
        lineage=blob.get("lineage", []),
    )


def instantiate_model(ckpt: Checkpoint) -> nn.Module:
    if ckpt.is_multitask:
        model = MultitaskModel(
            ckpt.backbone, list(ckpt.num_classes), pretrained=False, head_dropout=ckpt.head_dropout
        )
    else:
        model = build_model(
            ckpt.backbone, ckpt.num_classes[0], pretrained=False, head_dropout=ckpt.head_dropout
        )
    model.load_state_dict(ckpt.state_dict)
    model.eval()
    return model


def _seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


def infer_task(manifest: Manifest) -> TaskSchema:
    present = {t for rec in manifest for t in rec.labels.tasks}
    if len(present) != 1:
        raise TrainingError(
            f"cannot infer task from manifest labeling {sorted(present)}; pass task explicitly"
        )
    return TASKS[present.pop()]


def _labeled_subset(manifest: Manifest, task_id: str) -> Manifest:
    return manifest.with_records([r for r in manifest if r.labels.has(task_id)])


def evaluate_single(model: nn.Module, loader: DataLoader, device: torch.device) -> tuple[float, float]:
    """Mean cross-entropy loss and accuracy over a single-task loader."""
    model.eval()
    total_loss, correct, n = 0.0, 0, 0
    with torch.no_grad():
        for images, labels in loader:
            images, labels = images.to(device), labels.to(device)
            logits = model(images)
            total_loss += F.cross_entropy(logits, labels, reduction="sum").item()
            correct += (logits.argmax(dim=1) == labels).sum().item()
            n += labels.numel()
    if n == 0:
        raise TrainingError("evaluation set is empty")
    return total_loss / n, correct / n


def train(
    model: nn.Module,
    train_manifest: Manifest,
    dev_manifest: Manifest,
    config: TrainConfig,
    augment_policy: Optional[aug.AugmentPolicy] = None,
    task: Optional[TaskSchema] = None,
) -> tuple[Checkpoint, list[dict]]:
    """Fine-tune ``model`` on a single task.

    Adam optimization; after each epoch dev accuracy is measured and the
    learning rate follows the plateau schedule. The checkpoint with the best
    dev accuracy (earliest epoch on ties) is returned together with the
    per-epoch history rows {epoch, lr, train_loss, train_acc, dev_loss,
    dev_acc}.
    """
    task = task or infer_task(train_manifest)
    train_mf = _labeled_subset(train_manifest, task.task_id)
    dev_mf = _labeled_subset(dev_manifest, task.task_id)
    if len(train_mf) == 0:
        raise TrainingError(f"no records labeled for task {task.task_id!r} in train manifest")
    if len(dev_mf) == 0:
        raise TrainingError(f"no records labeled for task {task.task_id!r} in dev manifest")

    _seed_everything(config.seed)
    device = config.resolved_device()
    size = config.resolved_image_size()
    train_ds = ManifestDataset(
        train_mf, [task.task_id], size, augment_policy, seed=config.seed, training=True
    )
    dev_ds = ManifestDataset(dev_mf, [task.task_id], size)
    if len(train_ds) == 0:
        raise TrainingError("all training images failed to decode")
    gen = torch.Generator().manual_seed(config.seed)
    train_loader = DataLoader(train_ds, batch_size=config.batch_size, shuffle=True, generator=gen)
    dev_loader = DataLoader(dev_ds, batch_size=config.batch_size)

    model = model.to(device)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay
    )

    history: list[dict] = []
    dev_accs: list[float] = []
    best = (-1.0, -1)  # (dev acc, epoch)
    best_state = None
    lr = config.learning_rate
    for epoch in range(1, config.max_epochs + 1):
        train_ds.set_epoch(epoch)
        model.train()
        total_loss, correct, n = 0.0, 0, 0
        for images, labels in train_loader:
            images, labels = images.to(device), labels.to(device)
            optimizer.zero_grad()
            logits = model(images)
            loss = F.cross_entropy(logits, labels)
            loss.backward()
            optimizer.step()
            total_loss += loss.item() * labels.numel()
            correct += (logits.argmax(dim=1) == labels).sum().item()
            n += labels.numel()
        train_loss, train_acc = total_loss / n, correct / n
        dev_loss, dev_acc = evaluate_single(model, dev_loader, device)
        history.append(
            {
                "epoch": epoch,
                "lr": lr,
                "train_loss": train_loss,
                "train_acc": train_acc,
                "dev_loss": dev_loss,
                "dev_acc": dev_acc,
            }
        )
        if dev_acc > best[0]:
            best = (dev_acc, epoch)
            best_state = copy.deepcopy({k: v.cpu() for k, v in model.state_dict().items()})
        dev_accs.append(dev_acc)
        lr = plateau_lr_schedule(
            dev_accs, config.learning_rate, config.plateau_factor, config.plateau_patience
        )[-1]
        for group in optimizer.param_groups:
            group["lr"] = lr

    ckpt = Checkpoint(
        backbone=config.backbone,
        task_ids=(task.task_id,),
        num_classes=(task.num_classes,),
        state_dict=best_state,
        epoch=best[1],
        dev_metrics={"accuracy": best[0]},
        config=asdict(config),
    )
    return ckpt, history


@dataclass
class Prediction:
    """Per-task probability vectors for one image, or a decode error."""

    probs_by_task: dict[str, np.ndarray] = field(default_factory=dict)
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.probs_by_task[t] for t in self.probs_by_task])

    def predicted_class(self, task_id: Optional[str] = None) -> int:
        if task_id is None:
            (probs,) = self.probs_by_task.values()
        else:
            probs = self.probs_by_task[task_id]
        return int(np.argmax(probs))

    def confidence(self, task_id: Optional[str] = None) -> float:
        if task_id is None:
            (probs,) = self.probs_by_task.values()
        else:
            probs = self.probs_by_task[task_id]
        return float(np.max(probs))


def _segment_softmax(logits: torch.Tensor, num_classes: Sequence[int]) -> list[torch.Tensor]:
    out = []
    offset = 0
    for n in num_classes:
        out.append(F.softmax(logits[:, offset : offset + n], dim=1))
        offset += n
    return out


def predict(
    ckpt: Checkpoint,
    images: Sequence,
    batch_size: int = 16,
    model: Optional[nn.Module] = None,
    device: Optional[torch.device] = None,
) -> list[Prediction]:
    """Run a checkpoint over images (paths or PIL images).

    Decode failures produce an error entry at the image's position; the batch
    continues. Probability vectors are softmax outputs per task segment.
    """
    device = device or torch.device("cpu")
    if model is None:
        model = instantiate_model(ckpt).to(device)
    model.eval()
    size = ckpt.image_size()

    results: list[Optional[Prediction]] = [None] * len(images)
    batch: list[tuple[int, torch.Tensor]] = []

    def flush():
        if not batch:
            return
        tensors = torch.stack([t for _, t in batch]).to(device)
        with torch.no_grad():
            logits = model(tensors)
        segs = _segment_softmax(logits, ckpt.num_classes)
        for row, (pos, _) in enumerate(batch):
            probs = {
                task_id: segs[k][row].cpu().numpy() for k, task_id in enumerate(ckpt.task_ids)
            }
            results[pos] = Prediction(probs_by_task=probs)
        batch.clear()

    for pos, item in enumerate(images):
        try:
            if isinstance(item, Image.Image):
                img = item
            else:
                with Image.open(item) as im:
                    img = im.convert("RGB")
            tensor = preprocess(img, size)
        except Exception as e:
            results[pos] = Prediction(error=str(e))
            continue
        batch.append((pos, tensor))
        if len(batch) >= batch_size:
            flush()
    flush()
    return results  # type: ignore[return-value]


def save_history(history: list[dict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for row in history:
            fh.write(json.dumps(row) + "\n")


def load_history(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


def plot_history(history: list[dict], out_path: str | Path) -> None:
    """Render loss and accuracy curves (train vs dev) to an image file."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    epochs = [row["epoch"] for row in history]
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(11, 4))
    ax_loss.plot(epochs, [r["train_loss"] for r in history], label="train")
    ax_loss.plot(epochs, [r["dev_loss"] for r in history], label="dev")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.legend()
    acc_keys = [k for k in history[0] if k.endswith("_acc")]
    for key in acc_keys:
        ax_acc.plot(epochs, [r[key] for r in history], label=key.replace("_acc", ""))
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    ax_acc.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
