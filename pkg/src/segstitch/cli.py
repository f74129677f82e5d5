"""Command-line surface: synthesize scenes, segment them, serve the tuner."""
from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import click
import numpy as np

from . import io as sio
from .config import RunConfig
from .metrics import EvalReport
from .pipeline import (
    segment_consensus,
    segment_disjoint_point,
    segment_region,
    simulate_samples,
    synth_scene,
)


def _load_config(path: str | None, seed: int | None) -> RunConfig:
    cfg = RunConfig.load(path) if path else RunConfig()
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    return cfg


@click.group()
def main():
    """Scene synthesis and sliding-window consensus segmentation."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Run configuration JSON; defaults are used otherwise.")
@click.option("-n", "--num-scenes", default=1, show_default=True,
              help="Scene count (reference dataset sizes: 5000 train / 500 test).")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
def synth(config_path, num_scenes, seed, out_dir):
    """Write synthetic scenes (image, truth labels, mixing stack, manifest)."""
    cfg = _load_config(config_path, seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    entries = []
    for idx in range(num_scenes):
        bundle = synth_scene(cfg, idx)
        stem = f"scene_{idx:04d}"
        files = {
            "image": f"{stem}_image.png",
            "labels": f"{stem}_labels.png",
            "pi": f"{stem}_pi.mimg",
            "boxes": f"{stem}_boxes.json",
        }
        sio.write_image_png(out / files["image"], bundle.image)
        sio.write_label_png(out / files["labels"], bundle.truth_labels)
        sio.write_tensor(out / files["pi"], bundle.truth_pi.astype(np.float32))
        (out / files["boxes"]).write_text(json.dumps(
            [{"cx": b.cx, "cy": b.cy, "w": b.w, "h": b.h} for b in bundle.truth_boxes]
        ))
        entries.append({
            "index": idx,
            "true_k": bundle.true_count,
            "files": files,
            "sha256": {name: sio.file_sha256(out / fname) for name, fname in files.items()},
        })
    manifest = {"version": 1, "seed": cfg.seed, "n_scenes": num_scenes, "scenes": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    click.echo(f"wrote {num_scenes} scenes to {out}")


def _iter_scene_stacks(cfg: RunConfig, scene_dir: Path, samples_source: str):
    manifest = json.loads((scene_dir / "manifest.json").read_text())
    for entry in manifest["scenes"]:
        idx = entry["index"]
        truth = sio.read_label_png(scene_dir / entry["files"]["labels"])
        if samples_source == "simulate":
            bundle = synth_scene(cfg, idx)
            stacks = simulate_samples(cfg, bundle, idx)
        else:
            pattern = f"scene_{idx:04d}_sample_*.mimg"
            paths = sorted(scene_dir.glob(pattern))
            if not paths:
                raise click.ClickException(f"no posterior sample files match {pattern}")
            stacks = [sio.read_tensor(p).astype(np.float64) for p in paths]
        yield idx, truth, entry["true_k"], stacks


@main.command()
@click.argument("scene_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Defaults to the config stored with the scenes.")
@click.option("--samples", "samples_source", type=click.Choice(["simulate", "files"]),
              default="simulate", show_default=True)
@click.option("--windows", type=click.Choice(["overlapping", "disjoint"]),
              default="overlapping", show_default=True)
@click.option("--resolution", type=click.Choice(["fixed", "auto"]),
              default="fixed", show_default=True)
@click.option("--gamma", type=float, default=None, help="Override the config gamma.")
@click.option("--region", default=None,
              help="x,y,w,h sub-rectangle: segment only this region of scene 0.")
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def segment(scene_dir, config_path, samples_source, windows, resolution, gamma,
            region, seed, out_dir):
    """Segment synthesized scenes and score them against their ground truth."""
    scene_dir = Path(scene_dir)
    default_cfg = scene_dir / "config.json"
    cfg = _load_config(config_path or (str(default_cfg) if default_cfg.exists() else None),
                       seed)
    if gamma is not None:
        cfg = dataclasses.replace(cfg, gamma=gamma)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if region is not None:
        x, y, w, h = (int(v) for v in region.split(","))
        idx, truth, true_k, stacks = next(_iter_scene_stacks(cfg, scene_dir, samples_source))
        result = segment_region(cfg, stacks, (x, y, w, h), cfg.gamma, cfg.seed)
        sio.write_label_png(out / "region_labels.png", result.label_map)
        (out / "region.json").write_text(json.dumps({
            "region": [x, y, w, h], "gamma": cfg.gamma, "seed": cfg.seed,
            "n_communities": result.n_communities, "nmi": result.nmi,
            "labels": sio.labels_to_runs(result.label_map),
        }, sort_keys=True))
        click.echo(f"region {region}: {result.n_communities} communities")
        return

    report = EvalReport()
    log_path = out / "run_log.jsonl"
    for idx, truth, true_k, stacks in _iter_scene_stacks(cfg, scene_dir, samples_source):
        if windows == "disjoint":
            label_map = segment_disjoint_point(cfg, stacks)
        else:
            labels = segment_consensus(cfg, stacks, auto=resolution == "auto",
                                       scene_index=idx)
            label_map = labels.to_label_map(truth.shape)
        sio.write_label_png(out / f"scene_{idx:04d}_labels.png", label_map)
        score = report.add(truth, label_map, true_k)
        sio.append_runlog(log_path, "scene_score", {
            "scene": idx, "true_k": score.true_k, "est_k": score.est_k,
            "ari": score.ari, "nmi": score.nmi, "splits": score.splits,
        })
    summary = report.summary()
    summary["windows"] = windows
    summary["resolution"] = resolution
    summary["gamma"] = cfg.gamma
    (out / "report.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    click.echo(json.dumps(summary, indent=2, sort_keys=True))


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--scene-dir", type=click.Path(exists=True, file_okay=False), default=None,
              help="Serve a synthesized scene directory instead of a fresh scene.")
@click.option("--frontend", "frontend_dir", type=click.Path(exists=True, file_okay=False),
              default=None, help="Static tuner UI directory to mount at /app.")
@click.option("--seed", type=int, default=None)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def serve(config_path, scene_dir, frontend_dir, seed, host, port):
    """Serve the interactive resolution-tuning HTTP API (/v1)."""
    import uvicorn

    from .service import create_app

    cfg = _load_config(config_path, seed)
    app = create_app(cfg, scene_dir=scene_dir, frontend_dir=frontend_dir)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
