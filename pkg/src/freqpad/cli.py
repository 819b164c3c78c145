"""Command-line interface.

Exit codes: 0 success, 2 validation error, 3 numerical divergence.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import os
import sys

import click
import numpy as np
import yaml
from PIL import Image

from . import data as data_mod
from . import evaluation as eval_mod
from . import frequency as freq_mod
from . import trainer as trainer_mod
from .errors import DivergenceError, ValidationError


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ValidationError as exc:
            click.echo(f"validation error: {exc}", err=True)
            sys.exit(2)
        except DivergenceError as exc:
            click.echo(f"divergence: {exc}", err=True)
            sys.exit(3)
    return wrapper


@click.group()
def main():
    """Dual-stream frequency-decomposition face PAD toolkit."""


def _load_config(config_path, overrides):
    cfg_dict = {}
    if config_path:
        with open(config_path) as fh:
            cfg_dict = yaml.safe_load(fh) or {}
    for item in overrides:
        if "=" not in item:
            raise ValidationError(f"override must be key=value, got {item!r}")
        key, value = item.split("=", 1)
        cfg_dict[key] = yaml.safe_load(value)
    return trainer_mod.TrainConfig.from_dict(cfg_dict)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="YAML training config.")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
              help="Override a config key.")
@_handle_errors
def train(config_path, manifest_path, out_dir, overrides):
    """Train a model from a manifest."""
    cfg = _load_config(config_path, overrides)
    manifest = data_mod.read_manifest(manifest_path)
    ckpt, log = trainer_mod.train(cfg, manifest, out_dir)
    click.echo(f"checkpoint: {ckpt}")
    click.echo(f"log: {log}")


@main.command("make-synthetic")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--n-videos", default=20, show_default=True, help="Videos per class.")
@click.option("--frames", default=10, show_default=True)
@click.option("--size", default=224, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--dataset-id", default="synthetic", show_default=True)
@click.option("--modes", default="lowpass_print,moire_replay", show_default=True)
@_handle_errors
def make_synthetic(out_dir, n_videos, frames, size, seed, dataset_id, modes):
    """Generate a synthetic bona fide / attack corpus plus manifest."""
    spec = data_mod.SyntheticSpec(
        n_videos_per_class=n_videos, frames_per_video=frames, image_size=size,
        attack_modes=tuple(m for m in modes.split(",") if m), seed=seed,
        dataset_id=dataset_id)
    manifest = data_mod.generate_synthetic(spec, out_dir)
    path = os.path.join(out_dir, "manifest.csv")
    data_mod.write_manifest(manifest, path)
    click.echo(f"wrote {len(manifest.records)} frames, manifest: {path}")


@main.command("validate-manifest")
@click.argument("manifest_path", type=click.Path(exists=True))
@_handle_errors
def validate_manifest(manifest_path):
    """Check a manifest's schema and per-video consistency."""
    manifest = data_mod.read_manifest(manifest_path)
    counts = {}
    for r in manifest.records:
        counts[(r.split, r.label)] = counts.get((r.split, r.label), 0) + 1
    click.echo(f"{manifest_path}: OK, {len(manifest.records)} records")
    for (split, label), n in sorted(counts.items()):
        click.echo(f"  {split:5s} {label:9s} {n}")


@main.command()
@click.argument("inputs", nargs=-1, type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--checkpoint", type=click.Path(exists=True), default=None,
              help="Use the trained filter bank from a checkpoint.")
@click.option("--viz/--no-viz", default=False, help="Write per-band PNG previews.")
@click.option("--dump-masks", is_flag=True, help="Write mask grids as text.")
@_handle_errors
def decompose(inputs, out_dir, checkpoint, viz, dump_masks):
    """Decompose images into frequency components (.npz per image)."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for p in inputs:
        if os.path.isdir(p):
            paths += sorted(os.path.join(p, f) for f in os.listdir(p)
                            if f.lower().endswith((".png", ".jpg", ".jpeg", ".bmp")))
        else:
            paths.append(p)
    if not paths:
        raise ValidationError("no input images found")
    bank = None
    if checkpoint:
        model, _, _ = trainer_mod.load_checkpoint(checkpoint)
        if not model.use_mfd:
            raise ValidationError("checkpoint model has no filter bank")
        bank = model.filter_bank
    for path in paths:
        img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
        h, w = img.shape[:2]
        if bank is None or (bank.height, bank.width) != (h, w):
            bank = freq_mod.init_filter_bank(h, w)
        stack = freq_mod.decompose(img, bank)
        stem = os.path.splitext(os.path.basename(path))[0]
        np.savez_compressed(os.path.join(out_dir, stem + ".npz"),
                            components=stack.components,
                            source_shape=np.array(stack.source_shape))
        if viz:
            c_in = stack.source_shape[2]
            for band in range(bank.n_bands):
                comp = stack.components[:, :, band * c_in:(band + 1) * c_in]
                lo, hi = comp.min(), comp.max()
                vis = (comp - lo) / (hi - lo + 1e-12)
                Image.fromarray((vis * 255).astype(np.uint8)).save(
                    os.path.join(out_dir, f"{stem}_band{band + 1}.png"))
    if dump_masks:
        masks = bank.combined_masks().detach().numpy()
        with open(os.path.join(out_dir, "masks.txt"), "w") as fh:
            for i, mask in enumerate(masks):
                fh.write(f"# mask {i + 1} ({mask.shape[0]}x{mask.shape[1]})\n")
                for row in mask:
                    fh.write(" ".join(f"{v:.6g}" for v in row) + "\n")
    click.echo(f"decomposed {len(paths)} image(s) into {out_dir}")


@main.command("eval")
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--split", default="test", show_default=True)
@click.option("--protocol", "protocol_path", type=click.Path(exists=True), default=None,
              help="Protocol YAML; overrides --split.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--dump-attention", is_flag=True,
              help="Save normalized attention-map PNGs for one batch.")
@_handle_errors
def eval_cmd(checkpoint, manifest_path, split, protocol_path, out_dir, dump_attention):
    """Score videos with a checkpoint and write metric reports."""
    os.makedirs(out_dir, exist_ok=True)
    model, cfg, _ = trainer_mod.load_checkpoint(checkpoint)
    manifest = data_mod.read_manifest(manifest_path)
    score_fn = lambda records: trainer_mod.score_videos(model, records, cfg)

    if protocol_path:
        with open(protocol_path) as fh:
            protocol = eval_mod.ProtocolConfig.from_dict(yaml.safe_load(fh))
        result = eval_mod.run_protocol(protocol, manifest, score_fn)
        out = os.path.join(out_dir, "protocol_report.json")
        eval_mod.report_to_json(result, out)
        for fold in result["folds"]:
            click.echo(f"{fold['name']}: HTER {100 * fold['hter']:.1f}% "
                       f"AUC {100 * fold['auc']:.1f}%")
        if "aggregate" in result:
            agg = result["aggregate"]
            click.echo(f"aggregate ACER {100 * agg['acer']['mean']:.1f}% "
                       f"± {100 * agg['acer']['std']:.1f}%")
        click.echo(f"report: {out}")
    else:
        records = manifest.split(split)
        if not records:
            raise ValidationError(f"no records in split {split!r}")
        scores = score_fn(records)
        eval_mod.write_scores(scores, os.path.join(out_dir, "scores.csv"))
        threshold = eval_mod.eer_threshold(scores)
        report = eval_mod.compute_report(scores, threshold, name=split)
        eval_mod.report_to_json(report.to_dict(), os.path.join(out_dir, "report.json"))
        click.echo(report.format_table())

    if dump_attention:
        if not model.use_ham:
            raise ValidationError("model has no attention taps to dump")
        records = manifest.records[:1]
        loader = trainer_mod.FrameLoader(cfg)
        images, _, kept = loader.load_batch(list(enumerate(records)))
        if images is None:
            raise ValidationError("could not load a frame for attention dump")
        for name, m in model.attention_maps(images).items():
            arr = m.detach().numpy()
            if arr.ndim == 4:  # spatial map (B,1,H,W)
                arr = arr[0, 0]
            else:  # channel scales (B,C) rendered as a bar
                arr = np.repeat(arr[:1], 8, axis=0)
            lo, hi = arr.min(), arr.max()
            vis = (arr - lo) / (hi - lo + 1e-12)
            Image.fromarray((vis * 255).astype(np.uint8)).save(
                os.path.join(out_dir, f"attention_{name}.png"))


@main.command()
@click.option("--scores", "scores_path", type=click.Path(exists=True), required=True)
@click.option("--threshold", type=float, default=None,
              help="Fixed decision threshold; defaults to the EER threshold.")
@click.option("--out", "out_path", type=click.Path(), default=None)
@_handle_errors
def report(scores_path, threshold, out_path):
    """Metric report from a score CSV."""
    scores = eval_mod.read_scores(scores_path)
    if threshold is None:
        threshold = eval_mod.eer_threshold(scores)
    rep = eval_mod.compute_report(scores, threshold)
    click.echo(rep.format_table())
    if out_path:
        eval_mod.report_to_json(rep.to_dict(), out_path)


@main.command("export-embeddings")
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--split", default="test", show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@_handle_errors
def export_embeddings(checkpoint, manifest_path, split, out_dir):
    """Export per-frame embeddings plus reduced 128-D / 2-D projections."""
    os.makedirs(out_dir, exist_ok=True)
    model, cfg, _ = trainer_mod.load_checkpoint(checkpoint)
    manifest = data_mod.read_manifest(manifest_path)
    records = manifest.split(split)
    if not records:
        raise ValidationError(f"no records in split {split!r}")
    csv_path = os.path.join(out_dir, "embeddings.csv")
    trainer_mod.export_embeddings(model, records, cfg, csv_path)

    rows = np.genfromtxt(csv_path, delimiter=",", skip_header=1,
                         usecols=range(4, 4 + model.embedding_dim))
    rows = np.atleast_2d(rows)
    reduced, coords = eval_mod.reduce_embeddings(rows)
    np.savez_compressed(os.path.join(out_dir, "embeddings_reduced.npz"),
                        reduced_128d=reduced, coords_2d=coords)
    _scatter_png(coords, [r.y for r in _csv_labels(csv_path)],
                 os.path.join(out_dir, "embedding_plot.png"))
    click.echo(f"embeddings: {csv_path}")


def _csv_labels(csv_path):
    import csv as _csv

    with open(csv_path) as fh:
        reader = _csv.reader(fh)
        next(reader)
        for row in reader:
            yield data_mod.SampleRecord(
                frame_path=row[1], video_id=row[0], label=row[2], pai=row[3],
                split="test")


def _scatter_png(coords, labels, path, size=512):
    """Minimal 2-D scatter fallback rendered with PIL."""
    img = Image.new("RGB", (size, size), "white")
    px = img.load()
    c = np.asarray(coords, dtype=np.float64)
    lo = c.min(axis=0)
    span = c.max(axis=0) - lo + 1e-12
    for (x, y), label in zip(c, labels):
        ix = int((x - lo[0]) / span[0] * (size - 9)) + 4
        iy = int((y - lo[1]) / span[1] * (size - 9)) + 4
        color = (40, 90, 200) if label == 1 else (220, 120, 40)
        for dx in range(-2, 3):
            for dy in range(-2, 3):
                px[ix + dx, iy + dy] = color
    img.save(path)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--presets", default=",".join(trainer_mod.ABLATION_PRESETS),
              show_default=True)
@click.option("--seeds", default="0", show_default=True, help="Comma-separated seeds.")
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE")
@_handle_errors
def ablate(config_path, manifest_path, out_dir, presets, seeds, overrides):
    """Train and compare the ablation presets on one manifest."""
    cfg = _load_config(config_path, overrides)
    manifest = data_mod.read_manifest(manifest_path)
    table = trainer_mod.run_ablation(
        manifest, cfg, out_dir,
        presets=[p for p in presets.split(",") if p],
        seeds=[int(s) for s in seeds.split(",") if s])
    os.makedirs(out_dir, exist_ok=True)
    out = os.path.join(out_dir, "ablation.json")
    with open(out, "w") as fh:
        json.dump(table, fh, indent=2)
    for preset, runs in table.items():
        aucs = ", ".join(f"{100 * r['auc']:.1f}%" for r in runs)
        hters = ", ".join(f"{100 * r['hter']:.1f}%" for r in runs)
        click.echo(f"{preset:12s} AUC [{aucs}]  HTER [{hters}]")
    click.echo(f"table: {out}")


if __name__ == "__main__":
    main()
