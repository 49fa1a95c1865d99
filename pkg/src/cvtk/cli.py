"""Command-line interface.

Batch commands (curation, training, evaluation) run in-process; ``serve``
exposes the streaming classifier as an HTTP service and ``remote classify``
is a thin client for it.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import __version__
from .schemas import (
    MISSING,
    Manifest,
    TASK_ORDER,
    TASKS,
    class_histograms,
    get_task,
    load_manifest,
    save_manifest,
    scan_manifest,
)

log = logging.getLogger(__name__)


def _parse_tasks(spec: str) -> list[str]:
    if spec.strip().lower() == "all":
        return list(TASK_ORDER)
    tasks = [get_task(part.strip()).task_id for part in spec.split(",") if part.strip()]
    if not tasks:
        raise click.BadParameter("no tasks given")
    return tasks


def _load_split_dir(path: Path) -> dict[str, Manifest]:
    out = {}
    for split in ("train", "dev", "test"):
        f = path / f"{split}.jsonl"
        if not f.is_file():
            raise click.ClickException(f"missing {f}")
        out[split] = load_manifest(f)
    return out


@click.group()
@click.version_option(__version__)
@click.option("-v", "--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


# ---------------------------------------------------------------- manifest


@main.group()
def manifest():
    """Manifest inspection and validation."""


@manifest.command("validate")
@click.argument("path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
def manifest_validate(path):
    """Exit 0 iff every record is valid; print per-task class histograms."""
    mf, issues = scan_manifest(path)
    for issue in issues:
        click.echo(f"{path}:{issue.line_no}: {issue.reason}", err=True)
    missing_refs = [r.record_id for r in mf if not mf.resolve_ref(r).is_file()]
    for rid in missing_refs:
        click.echo(f"warning: image_ref not resolvable for {rid}", err=True)
    click.echo(f"{len(mf)} record(s), {len(issues)} rejected line(s)")
    for task_id, counts in class_histograms(mf).items():
        click.echo(f"[{task_id}]")
        for name, n in counts.items():
            click.echo(f"  {name}: {n}")
    sys.exit(1 if issues else 0)


# ---------------------------------------------------------------- curate


@main.group()
def curate():
    """Dataset splitting, deduplication and consolidation."""


@curate.command("split")
@click.argument("manifest_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--ratios", default="0.7,0.1,0.2", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--stratify", "stratify_task", default=None, help="Task id to stratify by.")
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), required=True)
def curate_split(manifest_path, ratios, seed, stratify_task, out_dir):
    """Create stratified train/dev/test manifests from one manifest."""
    from .curation import apply_plan, make_splits

    parts = [float(x) for x in ratios.split(",")]
    if len(parts) != 3:
        raise click.BadParameter("--ratios needs three comma-separated fractions")
    mf = load_manifest(manifest_path)
    task = get_task(stratify_task) if stratify_task else None
    plan = make_splits(mf, tuple(parts), seed=seed, stratify_task=task)
    out_dir.mkdir(parents=True, exist_ok=True)
    for split, part in apply_plan(mf, plan).items():
        save_manifest(part, out_dir / f"{split}.jsonl")
    sizes = plan.sizes()
    click.echo(f"train={sizes['train']} dev={sizes['dev']} test={sizes['test']} -> {out_dir}")


@curate.command("consolidate")
@click.argument("split_dirs", nargs=-1, required=True, type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--hamming", type=int, default=10, show_default=True, help="Near-duplicate Hamming threshold.")
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), required=True)
def curate_consolidate(split_dirs, hamming, out_dir):
    """Merge several split directories (train/dev/test.jsonl each) into one."""
    from .curation import SplitPlan, apply_plan, consolidate

    datasets = []
    for d in split_dirs:
        parts = _load_split_dir(d)
        records = []
        assignments = {}
        for split, part in parts.items():
            for rec in part:
                records.append(rec)
                assignments[rec.record_id] = split
        base = parts["train"].base_dir
        datasets.append((Manifest(records=records, base_dir=base), SplitPlan(assignments)))
    merged, plan = consolidate(datasets, hamming_threshold=hamming)
    out_dir.mkdir(parents=True, exist_ok=True)
    for split, part in apply_plan(merged, plan).items():
        save_manifest(part, out_dir / f"{split}.jsonl")
    sizes = plan.sizes()
    click.echo(f"train={sizes['train']} dev={sizes['dev']} test={sizes['test']} -> {out_dir}")


@curate.command("stats")
@click.argument("split_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--task", "task_name", default=None, help="Task id (default: every labeled task).")
@click.option("--json", "json_out", type=click.Path(dir_okay=False, path_type=Path), default=None)
def curate_stats(split_dir, task_name, json_out):
    """Per-split per-class count tables over a split directory."""
    from .curation import SplitPlan, render_stats, split_stats

    parts = _load_split_dir(split_dir)
    records, assignments = [], {}
    for split, part in parts.items():
        for rec in part:
            records.append(rec)
            assignments[rec.record_id] = split
    mf = Manifest(records=records)
    plan = SplitPlan(assignments)
    tasks = [get_task(task_name)] if task_name else [
        TASKS[t] for t in TASK_ORDER if any(r.labels.has(t) for r in mf)
    ]
    blobs = []
    for task in tasks:
        stats = split_stats(mf, plan, task)
        click.echo(render_stats(stats))
        click.echo("")
        blobs.append(stats.to_json_obj())
    if json_out:
        json_out.write_text(json.dumps(blobs, indent=2), encoding="utf-8")
        click.echo(f"wrote {json_out}")


# ---------------------------------------------------------------- merge


@main.command("merge-multitask")
@click.option("--tasks", "tasks_spec", default="all", show_default=True, help="all or e.g. info,hum")
@click.option(
    "--data-root",
    type=click.Path(exists=True, file_okay=False, path_type=Path),
    required=True,
    help="Directory with <task>/{train,dev,test}.jsonl per task.",
)
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), required=True)
def merge_multitask_cmd(tasks_spec, data_root, out_dir):
    """Build combined multi-task splits from per-task split directories."""
    from .merge import merge_multitask

    tasks = _parse_tasks(tasks_spec)
    per_task = {}
    for t in tasks:
        parts = _load_split_dir(data_root / t)
        per_task[t] = (parts["train"], parts["dev"], parts["test"])
    train, dev, test = merge_multitask(per_task)
    out_dir.mkdir(parents=True, exist_ok=True)
    for split, mf in (("train", train), ("dev", dev), ("test", test)):
        save_manifest(mf, out_dir / f"{split}.jsonl")
    click.echo(f"train={len(train)} dev={len(dev)} test={len(test)} -> {out_dir}")


# ---------------------------------------------------------------- training


def _load_config(config_path, augment_flag):
    from .augment import AugmentPolicy
    from .train import TrainConfig, load_train_config

    if config_path:
        config, policy = load_train_config(config_path)
    else:
        config, policy = TrainConfig(), None
    if augment_flag and policy is None:
        policy = AugmentPolicy()
        if config.weight_decay == 0.0:
            config.weight_decay = 1e-3
    return config, policy


@main.command("train")
@click.option("--task", "task_name", required=True)
@click.option("--backbone", default=None, help="Overrides the config's backbone.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--train", "train_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--dev", "dev_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--augment", "augment_flag", is_flag=True, help="Enable augmentation (default policy).")
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), required=True)
def train_cmd(task_name, backbone, config_path, train_path, dev_path, augment_flag, out_dir):
    """Fine-tune a pretrained backbone on one task."""
    from .models import build_model
    from .train import plot_history, save_checkpoint, save_history, train

    task = get_task(task_name)
    config, policy = _load_config(config_path, augment_flag)
    if backbone:
        config.backbone = backbone
    import torch

    torch.manual_seed(config.seed)  # reproducible head init
    model = build_model(config.backbone, task.num_classes, pretrained=config.pretrained)
    ckpt, history = train(
        model, load_manifest(train_path), load_manifest(dev_path), config, policy, task=task
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, out_dir / "checkpoint.pt")
    save_history(history, out_dir / "history.jsonl")
    plot_history(history, out_dir / "curves.png")
    click.echo(
        f"best dev accuracy {ckpt.dev_metrics['accuracy']:.4f} at epoch {ckpt.epoch} -> {out_dir}"
    )


@main.command("train-multitask")
@click.option("--tasks", "tasks_spec", default="all", show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--train", "train_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--dev", "dev_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--augment", "augment_flag", is_flag=True)
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), required=True)
def train_multitask_cmd(tasks_spec, config_path, train_path, dev_path, augment_flag, out_dir):
    """Train a shared backbone with per-task heads and the masked batch loss."""
    from .multitask import train_multitask
    from .train import plot_history, save_checkpoint, save_history

    tasks = _parse_tasks(tasks_spec)
    config, policy = _load_config(config_path, augment_flag)
    ckpt, history = train_multitask(
        None, load_manifest(train_path), load_manifest(dev_path), config, tasks=tasks, augment_policy=policy
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, out_dir / "checkpoint.pt")
    save_history(history, out_dir / "history.jsonl")
    plot_history(history, out_dir / "curves.png")
    click.echo(
        f"best mean dev accuracy {ckpt.dev_metrics['mean_accuracy']:.4f} at epoch {ckpt.epoch} -> {out_dir}"
    )


@main.command("noisy-student")
@click.option("--task", "task_name", required=True)
@click.option("--train", "train_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--dev", "dev_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--unlabeled", type=click.Path(exists=True, path_type=Path), required=True,
              help="Directory of images or an unlabeled manifest.")
@click.option("--threshold", default="auto", show_default=True, help='"auto" or a value in (0,1).')
@click.option("--iterations", type=int, default=1, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), required=True)
def noisy_student_cmd(task_name, train_path, dev_path, unlabeled, threshold, iterations, config_path, out_dir):
    """Teacher -> pseudo-labels -> balanced noised student, optionally iterated."""
    from .noisy_student import NoisyStudentConfig, iterate, sweep_threshold
    from .pipeline import manifest_from_source
    from .train import save_checkpoint

    task = get_task(task_name)
    train_config, _ = _load_config(config_path, False)
    train_mf = load_manifest(train_path)
    dev_mf = load_manifest(dev_path)
    unlabeled_mf = (
        load_manifest(unlabeled) if unlabeled.is_file() else manifest_from_source(unlabeled)
    )
    config = NoisyStudentConfig(
        task_id=task.task_id,
        confidence_threshold=None if threshold == "auto" else float(threshold),
        iterations=iterations,
        train=train_config,
    )
    if threshold == "auto":
        best, scores = sweep_threshold(train_mf, dev_mf, unlabeled_mf, config, task)
        click.echo("threshold sweep: " + ", ".join(f"{t:.2f}->{a:.3f}" for t, a in scores))
        config.confidence_threshold = best
        click.echo(f"selected threshold {best:.2f}")
    result = iterate(train_mf, dev_mf, unlabeled_mf, config, task)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.student, out_dir / "student.pt")
    rounds = [r.__dict__ for r in result.rounds]
    (out_dir / "rounds.json").write_text(json.dumps(rounds, indent=2), encoding="utf-8")
    click.echo(f"{len(result.rounds)} round(s); student -> {out_dir / 'student.pt'}")


# ---------------------------------------------------------------- evaluation


def _read_predictions(path: Path, task) -> dict[str, int]:
    """record_id -> class index from a predictions/gold JSONL file.

    Accepts either simple rows {"record_id", "pred"|"label": int} or manifest
    records (labels object keyed by task id, requires --task).
    """
    out = {}
    for i, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        obj = json.loads(line)
        if "record_id" not in obj:
            if "schema_version" in obj:
                continue  # manifest header
            raise click.ClickException(f"{path}:{i}: missing record_id")
        rid = obj["record_id"]
        if "pred" in obj:
            out[rid] = int(obj["pred"])
        elif "label" in obj and not isinstance(obj.get("label"), dict):
            out[rid] = int(obj["label"])
        elif "labels" in obj:
            if task is None:
                raise click.ClickException(f"{path}:{i}: manifest-style rows need --task")
            idx = obj["labels"].get(task.task_id, MISSING)
            if idx != MISSING:
                out[rid] = int(idx)
        else:
            raise click.ClickException(f"{path}:{i}: no pred/label field")
    return out


def _aligned(preds: dict[str, int], gold: dict[str, int]) -> tuple[list[int], list[int]]:
    common = sorted(set(preds) & set(gold))
    if not common:
        raise click.ClickException("no overlapping record_ids between predictions and gold")
    return [preds[r] for r in common], [gold[r] for r in common]


@main.command("eval")
@click.option("--preds", "preds_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--gold", "gold_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--task", "task_name", required=True)
@click.option("--json", "json_out", type=click.Path(dir_okay=False, path_type=Path), default=None)
def eval_cmd(preds_path, gold_path, task_name, json_out):
    """Accuracy and weighted P/R/F1 of one prediction file against gold."""
    from .evaluation import evaluate

    task = get_task(task_name)
    p, g = _aligned(_read_predictions(preds_path, task), _read_predictions(gold_path, task))
    report = evaluate(p, g, task)
    click.echo(f"samples:            {report.num_samples}")
    click.echo(f"accuracy:           {report.accuracy:.4f}")
    click.echo(f"weighted precision: {report.weighted_precision:.4f}")
    click.echo(f"weighted recall:    {report.weighted_recall:.4f}")
    click.echo(f"weighted F1:        {report.weighted_f1:.4f}")
    for c in report.per_class:
        click.echo(
            f"  {c.label}: P={c.precision:.4f} R={c.recall:.4f} F1={c.f1:.4f} support={c.support}"
        )
    if json_out:
        json_out.write_text(json.dumps(report.to_json_obj(), indent=2), encoding="utf-8")


@main.command("compare")
@click.option("--preds", "preds_paths", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              multiple=True, required=True)
@click.option("--gold", "gold_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--task", "task_name", required=True)
@click.option("--json", "json_out", type=click.Path(dir_okay=False, path_type=Path), default=None)
def compare_cmd(preds_paths, gold_path, task_name, json_out):
    """Pairwise significance matrix across several prediction files."""
    from .evaluation import significance_matrix

    task = get_task(task_name)
    if len(preds_paths) < 2:
        raise click.ClickException("need at least two --preds files")
    gold = _read_predictions(gold_path, task)
    all_preds, names = [], []
    common = None
    parsed = [_read_predictions(p, task) for p in preds_paths]
    for p in parsed:
        keys = set(p) & set(gold)
        common = keys if common is None else common & keys
    if not common:
        raise click.ClickException("no record_ids shared by every file")
    order = sorted(common)
    for path, p in zip(preds_paths, parsed):
        names.append(Path(path).stem)
        all_preds.append([p[r] for r in order])
    gold_vec = [gold[r] for r in order]
    matrix = significance_matrix(all_preds, gold_vec, task, names=names)
    click.echo(matrix.render())
    if json_out:
        json_out.write_text(json.dumps(matrix.to_json_obj(), indent=2), encoding="utf-8")


# ---------------------------------------------------------------- explain


@main.command("explain")
@click.option("--checkpoint", "ckpt_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--image", "image_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--class", "class_spec", default="predicted", show_default=True,
              help='Class name or "predicted".')
@click.option("--task", "task_name", default=None, help="Required for multitask checkpoints.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False, path_type=Path), required=True)
def explain_cmd(ckpt_path, image_path, class_spec, task_name, out_path):
    """Write a Grad-CAM overlay for one image."""
    from PIL import Image as PILImage

    from .gradcam import grad_cam_checkpoint, overlay
    from .multitask import HeadLayout
    from .schemas import encode_label
    from .train import instantiate_model, load_checkpoint, predict

    ckpt = load_checkpoint(ckpt_path)
    model = instantiate_model(ckpt)
    if ckpt.is_multitask:
        if not task_name:
            raise click.ClickException("--task is required for multitask checkpoints")
        task = get_task(task_name)
        if task.task_id not in ckpt.task_ids:
            raise click.ClickException(f"checkpoint has no head for {task.task_id}")
    else:
        task = TASKS[ckpt.task_id]

    img = PILImage.open(image_path).convert("RGB")
    if class_spec == "predicted":
        pred = predict(ckpt, [img], model=model)[0]
        class_index = pred.predicted_class(task.task_id)
    else:
        class_index = encode_label(task, class_spec)

    layout = HeadLayout(ckpt.task_ids, ckpt.num_classes)
    target = layout.segment(ckpt.task_ids.index(task.task_id))[0] + class_index

    cam = grad_cam_checkpoint(ckpt, img, target, model=model)
    size = ckpt.image_size()
    rendered = overlay(cam, img.resize((size, size), PILImage.BILINEAR))
    rendered.save(out_path)
    click.echo(f"{task.task_id}/{task.label_name(class_index)} -> {out_path}")


# ---------------------------------------------------------------- pipeline


def _pipeline_config(mode, checkpoint_specs, filter_noninformative, no_dedup, hamming, batch_size):
    from .pipeline import PipelineConfig
    from .train import load_checkpoint

    if mode == "multitask":
        if len(checkpoint_specs) != 1 or "=" in checkpoint_specs[0]:
            raise click.ClickException("multitask mode takes exactly one --checkpoint PATH")
        checkpoints = load_checkpoint(checkpoint_specs[0])
    else:
        checkpoints = {}
        for spec in checkpoint_specs:
            if "=" not in spec:
                raise click.ClickException("chain mode takes --checkpoint task=path entries")
            task_name, path = spec.split("=", 1)
            checkpoints[get_task(task_name).task_id] = load_checkpoint(path)
    return PipelineConfig(
        mode=mode,
        checkpoints=checkpoints,
        dedup_enabled=not no_dedup,
        hamming_threshold=hamming,
        batch_size=batch_size,
        filter_noninformative=filter_noninformative,
    )


@main.group()
def pipeline():
    """Streaming classification over image collections."""


@pipeline.command("run")
@click.option("--mode", type=click.Choice(["multitask", "single_task_chain"]), default="multitask",
              show_default=True)
@click.option("--checkpoint", "checkpoint_specs", multiple=True, required=True,
              help="PATH (multitask) or task=PATH (chain, repeat per task).")
@click.option("--source", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--filter-noninformative", is_flag=True)
@click.option("--no-dedup", is_flag=True)
@click.option("--hamming", type=int, default=10, show_default=True)
@click.option("--batch-size", type=int, default=128, show_default=True)
def pipeline_run(mode, checkpoint_specs, source, out_path, filter_noninformative, no_dedup, hamming, batch_size):
    """Classify a directory or URI list into line-delimited annotated records."""
    from .pipeline import run_pipeline

    config = _pipeline_config(mode, checkpoint_specs, filter_noninformative, no_dedup, hamming, batch_size)
    report = run_pipeline(source, config, out_path)
    click.echo(
        f"{report.images} image(s) in {report.wall_seconds:.2f}s "
        f"({report.images_per_second:.1f}/s) -> {out_path}"
    )


@main.command("serve")
@click.option("--mode", type=click.Choice(["multitask", "single_task_chain"]), default="multitask",
              show_default=True)
@click.option("--checkpoint", "checkpoint_specs", multiple=True, required=True)
@click.option("--filter-noninformative", is_flag=True)
@click.option("--no-dedup", is_flag=True)
@click.option("--hamming", type=int, default=10, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve_cmd(mode, checkpoint_specs, filter_noninformative, no_dedup, hamming, host, port):
    """Serve the classifier over HTTP (see the remote subcommands for a client)."""
    import uvicorn

    from .service import create_app

    config = _pipeline_config(mode, checkpoint_specs, filter_noninformative, no_dedup, hamming, batch_size=1)
    app = create_app(config)
    uvicorn.run(app, host=host, port=port)


@main.group()
def remote():
    """Thin HTTP client for a running classification service."""


@remote.command("classify")
@click.option("--url", required=True, help="Service base URL, e.g. http://localhost:8000")
@click.argument("images", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
def remote_classify(url, images):
    import base64

    import httpx

    payload = {
        "images": [
            {"record_id": p.stem, "image_b64": base64.b64encode(p.read_bytes()).decode()}
            for p in images
        ]
    }
    resp = httpx.post(url.rstrip("/") + "/classify-batch", json=payload, timeout=120.0)
    resp.raise_for_status()
    for rec in resp.json()["records"]:
        click.echo(json.dumps(rec))


# ---------------------------------------------------------------- misc


@main.command("plot-history")
@click.argument("history_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--out", "out_path", type=click.Path(dir_okay=False, path_type=Path), required=True)
def plot_history_cmd(history_path, out_path):
    """Render loss/accuracy curves from a training history file."""
    from .train import load_history, plot_history

    plot_history(load_history(history_path), out_path)
    click.echo(f"wrote {out_path}")


@main.command("complexity")
@click.option("--backbones", default="all", show_default=True, help='"all" or comma-separated names.')
@click.option("--num-classes", type=int, default=2, show_default=True)
def complexity_cmd(backbones, num_classes):
    """Parameter counts per backbone (adapted head and stock architecture)."""
    from .models import BACKBONES, complexity_report

    if backbones == "all":
        names = [n for n in BACKBONES if n != "tiny"]
    else:
        names = [b.strip() for b in backbones.split(",") if b.strip()]
    rows = complexity_report(names, num_classes)
    click.echo(f"{'backbone':<16}{'params (M)':>12}{'stock (M)':>12}{'weights MB':>12}")
    for row in rows:
        stock = f"{row['params_canonical_m']:.2f}" if row["params_canonical_m"] else "-"
        click.echo(
            f"{row['backbone']:<16}{row['params_adapted_m']:>12.2f}{stock:>12}{row['weights_mb']:>12.2f}"
        )


if __name__ == "__main__":
    main()
