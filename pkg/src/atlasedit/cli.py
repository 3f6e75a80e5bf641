"""Command-line interface: synthesize clips, train, render, track, export,
and serve the HTTP API."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import editing, tracking, training
from .media import (SyntheticSpec, export_sequence, generate_synthetic,
                    load_clip, save_clip)
from .model import FG, BundleConfig, ModelBundle


@click.group()
def main():
    """Layered neural atlas video editor."""


@main.command()
@click.argument("out_dir", type=click.Path())
@click.option("--width", default=64, show_default=True)
@click.option("--height", default=64, show_default=True)
@click.option("--frames", "n_frames", default=8, show_default=True)
@click.option("--shape", type=click.Choice(["rect", "disc"]), default="rect")
@click.option("--fg-size", default=20, show_default=True)
@click.option("--fg-start", nargs=2, type=float, default=(8.0, 8.0))
@click.option("--velocity", nargs=2, type=float, default=(2.0, 1.0))
@click.option("--bg-seed", default=7, show_default=True)
@click.option("--fg-seed", default=11, show_default=True)
def synth(out_dir, width, height, n_frames, shape, fg_size, fg_start,
          velocity, bg_seed, fg_seed):
    """Generate a synthetic clip (frames, exact flow, masks) into OUT_DIR."""
    spec = SyntheticSpec(width=width, height=height, n_frames=n_frames,
                         shape=shape, fg_size=fg_size,
                         fg_start=tuple(fg_start), velocity=tuple(velocity),
                         bg_seed=bg_seed, fg_seed=fg_seed)
    spec.validate()
    save_clip(generate_synthetic(spec).clip, out_dir)
    click.echo(f"wrote synthetic clip to {out_dir}")


@main.command()
@click.argument("clip_dir", type=click.Path(exists=True))
@click.option("--out", "out_path", default="model.ckpt", show_default=True,
              help="Checkpoint output path.")
@click.option("--config", "config_path", type=click.Path(exists=True),
              help="Training config JSON; CLI flags below override it.")
@click.option("--iters-forward", type=int, default=None)
@click.option("--iters-inverse", type=int, default=None)
@click.option("--batch", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--desk/--full", "desk", default=True, show_default=True,
              help="Model size profile.")
@click.option("--history-csv", type=click.Path(), default=None,
              help="Write the per-iteration loss history as CSV.")
def train(clip_dir, out_path, config_path, iters_forward, iters_inverse,
          batch, seed, desk, history_csv):
    """Train the atlas model on the clip in CLIP_DIR."""
    clip = load_clip(clip_dir)
    config = (training.TrainConfig.from_json(config_path) if config_path
              else training.TrainConfig())
    for name, value in (("iters_forward", iters_forward),
                        ("iters_inverse", iters_inverse),
                        ("batch", batch), ("seed", seed)):
        if value is not None:
            setattr(config, name, value)
    profile = BundleConfig.desk_scale if desk else BundleConfig.for_clip
    model = ModelBundle(profile(clip.width, clip.height, clip.n_frames),
                        seed=config.seed)

    def prog(row):
        if row["iteration"] % 100 == 0:
            click.echo(f"iter {row['iteration']:6d}  "
                       + "  ".join(f"{k}={v:.5f}" for k, v in row.items()
                                   if k not in ("iteration", "iters_per_sec"))
                       + f"  ({row['iters_per_sec']:.1f} it/s)")

    state = training.train(clip, model, config, on_progress=prog)
    model.save(out_path)
    if history_csv:
        state.export_csv(history_csv)
    rec = training.reconstruct_frames(model, clip)
    click.echo(f"saved {out_path}; PSNR {training.psnr(rec, clip.frames):.2f} dB")


def _load_doc(edits_path):
    if edits_path:
        return editing.EditDocument.load(edits_path)
    return editing.EditDocument()


@main.command()
@click.argument("clip_dir", type=click.Path(exists=True))
@click.argument("checkpoint", type=click.Path(exists=True))
@click.option("--frame", "frame_index", default=0, show_default=True)
@click.option("--edits", "edits_path", type=click.Path(exists=True))
@click.option("--out", "out_path", default="frame.png", show_default=True)
def render(clip_dir, checkpoint, frame_index, edits_path, out_path):
    """Render one frame (optionally with edits applied) to a PNG."""
    from PIL import Image
    clip = load_clip(clip_dir)
    model = ModelBundle.load(checkpoint)
    frame, report = editing.render_edited_frame(
        frame_index, _load_doc(edits_path), model, clip)
    arr = np.clip(frame * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(out_path)
    click.echo(f"wrote {out_path} ({report.elapsed:.3f}s)")


@main.command()
@click.argument("clip_dir", type=click.Path(exists=True))
@click.argument("checkpoint", type=click.Path(exists=True))
@click.argument("x", type=float)
@click.argument("y", type=float)
@click.argument("t", type=int)
@click.option("--layer", default=FG, show_default=True)
def track(clip_dir, checkpoint, x, y, t, layer):
    """Track the point (X, Y) in frame T through the whole clip."""
    clip = load_clip(clip_dir)
    model = ModelBundle.load(checkpoint)
    traj = tracking.track_point(x, y, t, range(clip.n_frames), layer, model)
    json.dump(traj.to_json(), sys.stdout, indent=2)
    click.echo()


@main.command()
@click.argument("clip_dir", type=click.Path(exists=True))
@click.argument("checkpoint", type=click.Path(exists=True))
@click.argument("out_dir", type=click.Path())
@click.option("--edits", "edits_path", type=click.Path(exists=True))
def export(clip_dir, checkpoint, out_dir, edits_path):
    """Render the whole clip with edits applied into OUT_DIR."""
    clip = load_clip(clip_dir)
    doc = _load_doc(edits_path)
    if doc.edits:
        model = ModelBundle.load(checkpoint)
        frames, report = editing.render_edited_clip(doc, model, clip)
        click.echo(f"rendered {report.frames} frames at {report.fps:.2f} fps")
    else:
        frames = clip.frames
    export_sequence(frames, out_dir)
    click.echo(f"wrote {clip.n_frames} frames to {out_dir}")


@main.command()
@click.option("--data-dir", default="./atlasedit-data", show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def serve(data_dir, host, port):
    """Run the HTTP API server."""
    import uvicorn

    from .service import create_app
    uvicorn.run(create_app(Path(data_dir)), host=host, port=port)


if __name__ == "__main__":
    main()
