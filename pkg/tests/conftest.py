"""Shared fixtures: synthetic blob datasets and desk-scale trained checkpoints.

The toy classification signal is blob size (small vs large disk), which a
small CNN learns in a few epochs and which survives augmentation noise.
"""

from __future__ import annotations

import random
from pathlib import Path

import numpy as np
import pytest
from PIL import Image, ImageDraw

from cvtk.models import build_model
from cvtk.schemas import ImageRecord, LabelVector, Manifest
from cvtk.train import TrainConfig, train

TOY_SIZE = 48


def draw_blob(cls: int, size: int, rng: random.Random) -> Image.Image:
    """Class 0: small disk, class 1: large disk; noisy gray background."""
    base = rng.randint(30, 70)
    img = Image.new("RGB", (size, size), (base, base, base))
    d = ImageDraw.Draw(img)
    color = tuple(rng.randint(150, 255) for _ in range(3))
    if cls == 0:
        r = rng.randint(size // 12, size // 8)
    else:
        r = rng.randint(size // 3 - 2, size // 3 + 4)
    cx = rng.randint(r + 1, size - r - 1)
    cy = rng.randint(r + 1, size - r - 1)
    d.ellipse([cx - r, cy - r, cx + r, cy + r], fill=color)
    arr = np.asarray(img, dtype=np.int16)
    noise = np.random.default_rng(rng.randint(0, 10**9)).integers(-10, 10, arr.shape)
    return Image.fromarray(np.clip(arr + noise, 0, 255).astype("uint8"))


def textured_image(seed: int, size: tuple[int, int] = (96, 72)) -> Image.Image:
    """Structured image (oriented gradients + rectangles): JPEG-stable dhash,
    but hashes of different seeds stay far apart."""
    rng = random.Random(seed)
    w, h = size
    arr = np.zeros((h, w, 3), dtype=np.uint8)
    for c in range(3):
        lo, hi = rng.randint(0, 90), rng.randint(160, 255)
        if rng.choice(["h", "v"]) == "h":
            g = np.linspace(lo, hi, w, dtype=np.uint8)[None, :]
            arr[..., c] = g if rng.random() < 0.5 else g[:, ::-1]
        else:
            g = np.linspace(lo, hi, h, dtype=np.uint8)[:, None]
            arr[..., c] = g if rng.random() < 0.5 else g[::-1, :]
    img = Image.fromarray(arr)
    d = ImageDraw.Draw(img)
    for _ in range(8):
        x0, y0 = rng.randint(0, w - 30), rng.randint(0, h - 24)
        x1, y1 = x0 + rng.randint(16, 44), y0 + rng.randint(12, 32)
        d.rectangle([x0, y0, x1, y1], fill=tuple(rng.randint(0, 255) for _ in range(3)))
    return img


def write_blob_manifest(
    directory: Path,
    n: int,
    task_labels,
    seed: int = 0,
    prefix: str = "img",
    split_tag=None,
) -> Manifest:
    """Write n blob images; task_labels maps task_id -> (callable cls -> idx).

    The underlying binary class alternates; per-task label indices derive
    from it via the given mapping.
    """
    directory.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)
    records = []
    for i in range(n):
        cls = i % 2
        name = f"{prefix}{i:03d}.png"
        draw_blob(cls, TOY_SIZE, rng).save(directory / name)
        labels = {t: fn(cls) for t, fn in task_labels.items()}
        records.append(ImageRecord(f"{prefix}{i:03d}", name, LabelVector(labels)))
    return Manifest(records=records, split_tag=split_tag, base_dir=directory)


def absolutized(manifest: Manifest) -> Manifest:
    """Copy with image_refs rewritten to absolute paths (for relocated files)."""
    from dataclasses import replace

    records = [replace(r, image_ref=str(manifest.resolve_ref(r))) for r in manifest.records]
    return manifest.with_records(records)


TINY_CONFIG = TrainConfig(
    learning_rate=2e-3,
    max_epochs=40,
    batch_size=16,
    seed=0,
    backbone="tiny",
    pretrained=False,
    image_size=TOY_SIZE,
    device="cpu",
)


@pytest.fixture(scope="session")
def blob_split(tmp_path_factory):
    """Binary informativeness toy data: 32 train / 16 dev images."""
    root = tmp_path_factory.mktemp("blobs")
    labels = {"informativeness": lambda c: c}
    train_mf = write_blob_manifest(root / "train", 32, labels, seed=11, split_tag="train")
    dev_mf = write_blob_manifest(root / "dev", 16, labels, seed=22, prefix="dev", split_tag="dev")
    return train_mf, dev_mf


@pytest.fixture(scope="session")
def tiny_ckpt(blob_split):
    """Tiny backbone overfit on the blob toy set (train accuracy 1.0)."""
    train_mf, dev_mf = blob_split
    model = build_model("tiny", 2, pretrained=False)
    ckpt, history = train(model, train_mf, dev_mf, TINY_CONFIG)
    assert max(h["train_acc"] for h in history) == 1.0, "toy fixture failed to overfit"
    return ckpt, history, train_mf, dev_mf


FOUR_TASK_LABELS = {
    "disaster_types": lambda c: c,  # earthquake vs fire
    "informativeness": lambda c: c,
    "humanitarian": lambda c: c,
    "damage_severity": lambda c: c,
}


@pytest.fixture(scope="session")
def four_task_split(tmp_path_factory):
    """Complete-label toy data across all four tasks (labels correlated)."""
    root = tmp_path_factory.mktemp("fourtask")
    train_mf = write_blob_manifest(root / "train", 32, FOUR_TASK_LABELS, seed=33, split_tag="train")
    dev_mf = write_blob_manifest(root / "dev", 16, FOUR_TASK_LABELS, seed=44, prefix="dev", split_tag="dev")
    return train_mf, dev_mf
