"""Command line interface: synthetic corpus generation, training, editing,
interpolation and evaluation, plus serving the HTTP API."""

import json
import os

import click
import numpy as np

from .data import load_image, load_manifest
from .interp import pseudo_targets, stage_targets
from .networks import GeneratorConfig
from .training import (
    TrainConfig,
    edit as run_edit,
    init_cascade_from_pretrained,
    load_checkpoint,
    train_cascade,
    train_single_stage,
)


def _parse_aus(text):
    return np.array([float(v) for v in text.replace(",", " ").split()])


def _load_json_config(path, cls):
    if path is None:
        return cls()
    with open(path) as fh:
        return cls.from_dict(json.load(fh))


@click.group()
def main():
    """Progressive facial expression editing toolkit."""


@main.command("synth-data")
@click.option("--identities", "n_identities", type=int, required=True)
@click.option("--aus-per-id", "aus_per_id", type=int, required=True)
@click.option("--c", "au_dim", type=int, default=4, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--size", type=int, default=128, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def synth_data(n_identities, aus_per_id, au_dim, seed, size, out_dir):
    """Generate a paired synthetic face corpus with a manifest."""
    from .synth import synth_dataset_generate

    manifest = synth_dataset_generate(n_identities, aus_per_id, au_dim, out_dir, seed, size)
    click.echo(f"wrote {len(manifest.records)} records to {out_dir}/manifest.jsonl")


@main.command()
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="JSON file mirroring TrainConfig fields")
@click.option("--gen-config", "gen_config_path", type=click.Path(exists=True), default=None)
@click.option("--toy", is_flag=True, help="small desk-scale architecture")
@click.option("--out", "out_dir", type=click.Path(), required=True)
def train(manifest_path, config_path, gen_config_path, toy, out_dir):
    """Train a single editing stage from scratch."""
    manifest = load_manifest(manifest_path)
    config = _load_json_config(config_path, TrainConfig)
    if gen_config_path:
        gen_config = _load_json_config(gen_config_path, GeneratorConfig)
    elif toy:
        gen_config = GeneratorConfig.toy(au_dim=manifest.au_dim, image_size=manifest.image_size)
    else:
        gen_config = GeneratorConfig(au_dim=manifest.au_dim, image_size=manifest.image_size)
    path = train_single_stage(manifest, manifest_path, config, gen_config, out_dir)
    click.echo(f"checkpoint: {path}")


@main.command("train-cascade")
@click.option("--init", "init_ckpt", type=click.Path(exists=True), required=True,
              help="trained single-stage checkpoint")
@click.option("--stages", type=int, default=3, show_default=True)
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def train_cascade_cmd(init_ckpt, stages, manifest_path, config_path, out_dir):
    """Clone a trained stage into a cascade and fine-tune end-to-end."""
    manifest = load_manifest(manifest_path)
    config = _load_json_config(config_path, TrainConfig)
    model, _ = init_cascade_from_pretrained(init_ckpt, stages)
    path = train_cascade(model, manifest, manifest_path, config, out_dir)
    click.echo(f"checkpoint: {path}")


@main.command()
@click.option("--ckpt", type=click.Path(exists=True), required=True)
@click.option("--image", type=click.Path(exists=True), required=True)
@click.option("--source-aus", required=True)
@click.option("--target-aus", required=True)
@click.option("--frames", type=int, default=None, help="continuous editing frame count")
@click.option("--grid", "grid_path", type=click.Path(), default=None)
@click.option("--out", "out_dir", type=click.Path(), default=".")
def edit(ckpt, image, source_aus, target_aus, frames, grid_path, out_dir):
    """Edit one face toward target AUs; writes stage outputs as PNGs."""
    from .data import save_image
    from .metrics import continuous_edit, save_image_grid

    model, _ = load_checkpoint(ckpt)
    face = load_image(image)
    y_x, y_z = _parse_aus(source_aus), _parse_aus(target_aus)
    os.makedirs(out_dir, exist_ok=True)
    stem = os.path.splitext(os.path.basename(image))[0]
    if frames:
        images = continuous_edit(face, y_x, y_z, frames, model)
    else:
        intermediates, final = run_edit(face, y_x, y_z, model)
        images = intermediates + [final]
    for i, img in enumerate(images):
        path = os.path.join(out_dir, f"{stem}_step{i + 1}.png")
        save_image(path, img)
        click.echo(path)
    if grid_path:
        save_image_grid(grid_path, [face] + images)
        click.echo(grid_path)


@main.command()
@click.option("--y-x", required=True)
@click.option("--y-z", required=True)
@click.option("--stages", type=int, default=3, show_default=True)
@click.option("--ckpt", type=click.Path(exists=True), default=None,
              help="use the trained interpolator; default is linear targets")
def interp(y_x, y_z, stages, ckpt):
    """Print per-stage AU targets for a source/target pair."""
    y_x, y_z = _parse_aus(y_x), _parse_aus(y_z)
    if ckpt:
        model, _ = load_checkpoint(ckpt)
        targets = stage_targets(y_x, y_z, stages, model.interpolator)
    else:
        targets = pseudo_targets(y_x, y_z, stages)
    for k, t in enumerate(targets, start=1):
        click.echo(f"stage {k}: " + " ".join(f"{v:.4f}" for v in t))


@main.command("eval")
@click.option("--ckpt", type=click.Path(exists=True), required=True)
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--metrics", default="psnr,fid,cls", show_default=True)
@click.option("--report", "report_path", type=click.Path(), required=True)
@click.option("--seed", type=int, default=0)
def eval_cmd(ckpt, manifest_path, metrics, report_path, seed):
    """Evaluate a checkpoint on a labeled manifest, write a JSON report."""
    from .evaluation import evaluate

    model, _ = load_checkpoint(ckpt)
    manifest = load_manifest(manifest_path)
    report = evaluate(model, manifest, manifest_path, metrics.split(","), seed=seed)
    with open(report_path, "w") as fh:
        json.dump(report, fh, indent=2)
    click.echo(json.dumps(report, indent=2))


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host, port):
    """Run the HTTP API."""
    import uvicorn

    uvicorn.run("expredit.service:app", host=host, port=port)


if __name__ == "__main__":
    main()
