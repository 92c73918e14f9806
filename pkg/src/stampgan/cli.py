"""Command line entry points: dataset build, train, eval kid, export, serve."""

from __future__ import annotations

import glob
import json
import os

import click
import numpy as np

import stampgan.trainer as trainer_mod
from stampgan.checkpoint import export_model
from stampgan.data import (
    filter_instances,
    load_coco_instances,
    load_image_png,
    write_dataset,
)
from stampgan.evaluation import extract_features, subset_protocol
from stampgan.synthetic import CLASS_PRESETS, build_synthetic_dataset


@click.group()
def main():
    """Two-stage object stamp generation toolkit."""


@main.group()
def dataset():
    """Dataset construction."""


@dataset.command("build")
@click.option("--source", type=click.Choice(["coco", "synth"]), required=True)
@click.option("--class", "class_name", required=True,
              help="object class (COCO category or synth preset)")
@click.option("--size", type=int, default=64, show_default=True)
@click.option("--out", "out_dir", required=True)
@click.option("--count", type=int, default=200, show_default=True,
              help="number of synthetic samples")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--annotations", default=None, help="COCO annotation JSON")
@click.option("--images", "images_dir", default=None, help="COCO image directory")
def dataset_build(source, class_name, size, out_dir, count, seed, annotations,
                  images_dir):
    if source == "synth":
        if class_name not in CLASS_PRESETS:
            raise click.BadParameter(f"unknown synth class {class_name!r}; "
                                     f"choose from {sorted(CLASS_PRESETS)}")
        manifest = build_synthetic_dataset(out_dir, count=count, seed=seed,
                                           class_name=class_name, size=size)
        click.echo(f"wrote {manifest['count']} samples to {out_dir}")
        return
    if not annotations or not images_dir:
        raise click.BadParameter("--annotations and --images are required for coco")
    records = load_coco_instances(annotations, images_dir, class_name, size=size)
    kept = filter_instances(records)
    pairs = [(r.image, r.mask) for r in kept]
    write_dataset(out_dir, pairs, label=class_name,
                  meta={"source": "coco", "annotations": annotations,
                        "kept": len(kept), "total": len(records)})
    click.echo(f"kept {len(kept)}/{len(records)} instances -> {out_dir}")


@main.command()
@click.option("--config", "config_path", required=True)
@click.option("--stage", type=click.Choice(["mask", "texture", "joint"]),
              default=None, help="override the config's stage")
@click.option("--dataset", "dataset_dir", required=True)
@click.option("--resume", "resume_from", default=None)
def train(config_path, stage, dataset_dir, resume_from):
    """Run one training stage; emits metrics as JSON lines."""
    config = trainer_mod.TrainConfig.from_file(config_path)
    if stage is not None and stage != config.stage:
        config = trainer_mod.TrainConfig.from_dict(
            {**config.to_dict(), "stage": stage})
    path = trainer_mod.train(config, dataset_dir=dataset_dir,
                             resume_from=resume_from)
    click.echo(path)


@main.group("eval")
def eval_group():
    """Evaluation protocols."""


@eval_group.command("kid")
@click.option("--real", "real_dir", required=True)
@click.option("--fake", "fake_dirs", required=True,
              help="comma-separated directories, one per system")
@click.option("--subsets", type=int, default=50, show_default=True)
@click.option("--subset-size", type=int, default=50, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--backend", default="surrogate", show_default=True)
@click.option("--out", "out_path", required=True)
def eval_kid(real_dir, fake_dirs, subsets, subset_size, seed, backend, out_path):
    def load_dir(path):
        files = sorted(glob.glob(os.path.join(path, "*.png"))
                       + glob.glob(os.path.join(path, "images", "*.png")))
        if not files:
            raise click.BadParameter(f"no PNG images under {path}")
        return np.stack([load_image_png(f).data for f in files])

    real_feats = extract_features(load_dir(real_dir), backend=backend)
    fakes = {}
    for path in fake_dirs.split(","):
        fakes[os.path.basename(os.path.normpath(path))] = extract_features(
            load_dir(path), backend=backend)
    report = subset_protocol(real_feats, fakes, n_subsets=subsets,
                             subset_size=subset_size, seed=seed)
    report.save(out_path)
    click.echo(json.dumps({"mean": dict(zip(report.system_names, report.mean)),
                           "count_best": dict(zip(report.system_names,
                                                  report.count_best))}))


@main.command()
@click.option("--mask", "mask_ckpt", required=True)
@click.option("--texture", "texture_ckpt", required=True)
@click.option("--label", required=True)
@click.option("--out", "out_path", required=True)
def export(mask_ckpt, texture_ckpt, label, out_path):
    """Pack final stage checkpoints into one serving model file."""
    export_model(mask_ckpt, texture_ckpt, out_path, label=label)
    click.echo(out_path)


@main.command()
@click.option("--model-dir", default=None, help="defaults to $MODEL_DIR")
@click.option("--port", type=int, default=None, help="defaults to $PORT or 8000")
@click.option("--device", default=None, help="defaults to $DEVICE or cpu")
@click.option("--ui-dir", default=None, help="static editor bundle directory")
@click.option("--queue-size", type=int, default=4, show_default=True)
def serve(model_dir, port, device, ui_dir, queue_size):
    """Start the inference HTTP service."""
    import uvicorn

    from stampgan.service import create_app

    model_dir = model_dir or os.environ.get("MODEL_DIR", "models")
    port = port or int(os.environ.get("PORT", "8000"))
    device = device or os.environ.get("DEVICE", "cpu")
    ui_dir = ui_dir or os.environ.get("UI_DIR")
    app = create_app(model_dir=model_dir, device=device, queue_size=queue_size,
                     ui_dir=ui_dir)
    uvicorn.run(app, host="0.0.0.0", port=port)


if __name__ == "__main__":
    main()
