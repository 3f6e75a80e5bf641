"""Project store, training orchestration and the HTTP + event API.

Single-process service; persistence is the project directory tree. Renders
and tracking read the latest published parameter snapshot, so they never
block (or observe a torn state of) the training loop.
"""

from __future__ import annotations

import io
import json
import queue
import threading
import time
import uuid
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse, Response, StreamingResponse
from PIL import Image
from pydantic import BaseModel, Field

from . import editing, tracking, training
from .media import (ClipLoadError, SyntheticSpec, VideoClip, export_sequence,
                    generate_synthetic, load_clip, save_clip)
from .model import BG, FG, BundleConfig, ModelBundle

STATES = ("created", "training-forward", "training-inverse", "ready", "failed")


class EventBus:
    """Fan-out of JSON events to any number of SSE subscribers."""

    def __init__(self):
        self._subscribers: list[queue.Queue] = []
        self._lock = threading.Lock()

    def subscribe(self) -> queue.Queue:
        q: queue.Queue = queue.Queue()
        with self._lock:
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q: queue.Queue):
        with self._lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    def publish(self, event: dict):
        with self._lock:
            subs = list(self._subscribers)
        for q in subs:
            q.put(event)


class Project:
    def __init__(self, root: Path, project_id: str):
        self.id = project_id
        self.root = root
        self.state = "created"
        self.events = EventBus()
        self.doc = editing.EditDocument()
        self.doc_version = 0
        self._clip: VideoClip | None = None
        self._snapshot: ModelBundle | None = None
        self._snapshot_checksum: str | None = None
        self._snapshot_lock = threading.Lock()
        self._edit_lock = threading.Lock()
        self._train_thread: threading.Thread | None = None
        self.synthetic_spec: SyntheticSpec | None = None
        self.train_error: str | None = None

    # -- persistence -----------------------------------------------------

    @property
    def clip_dir(self) -> Path:
        return self.root / "clip"

    @property
    def checkpoint_path(self) -> Path:
        return self.root / "model.ckpt"

    @property
    def edits_path(self) -> Path:
        return self.root / "edits.json"

    def meta(self) -> dict:
        return {"id": self.id, "state": self.state,
                "edit_version": self.doc_version,
                "synthetic": asdict(self.synthetic_spec) if self.synthetic_spec else None,
                "error": self.train_error}

    def save_meta(self):
        (self.root / "project.json").write_text(json.dumps(self.meta()))

    @property
    def clip(self) -> VideoClip:
        if self._clip is None:
            self._clip = load_clip(self.clip_dir)
        return self._clip

    # -- snapshot management -----------------------------------------------

    def publish_snapshot(self, snap: ModelBundle):
        checksum = snap.checksum()
        with self._snapshot_lock:
            self._snapshot = snap
            self._snapshot_checksum = checksum

    def snapshot(self) -> ModelBundle:
        with self._snapshot_lock:
            snap, checksum = self._snapshot, self._snapshot_checksum
        if snap is None:
            if self.checkpoint_path.exists():
                snap = ModelBundle.load(self.checkpoint_path)
                self.publish_snapshot(snap)
                return snap
            raise HTTPException(409, "project has no trained model yet")
        if snap.checksum() != checksum:
            raise HTTPException(500, "snapshot integrity check failed")
        return snap

    def status(self) -> dict:
        clip = self.clip
        info = self.meta()
        info.update(width=clip.width, height=clip.height, n_frames=clip.n_frames)
        return info


class ProjectStore:
    def __init__(self, data_dir):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.projects: dict[str, Project] = {}
        self._lock = threading.Lock()
        for meta_file in self.data_dir.glob("*/project.json"):
            meta = json.loads(meta_file.read_text())
            p = Project(meta_file.parent, meta["id"])
            p.state = meta.get("state", "created")
            if p.state.startswith("training"):
                p.state = "failed"  # job did not survive the restart
            if meta.get("synthetic"):
                p.synthetic_spec = SyntheticSpec(**_tuplify_spec(meta["synthetic"]))
            if p.edits_path.exists():
                p.doc = editing.EditDocument.load(p.edits_path)
                p.doc_version = p.doc.version
            self.projects[p.id] = p

    def create(self, clip: VideoClip, spec: SyntheticSpec | None = None) -> Project:
        project_id = uuid.uuid4().hex[:10]
        root = self.data_dir / project_id
        save_clip(clip, root / "clip")
        p = Project(root, project_id)
        p._clip = clip
        p.synthetic_spec = spec
        p.save_meta()
        with self._lock:
            self.projects[project_id] = p
        return p

    def get(self, project_id: str) -> Project:
        p = self.projects.get(project_id)
        if p is None:
            raise HTTPException(404, f"unknown project {project_id}")
        return p


def _tuplify_spec(raw: dict) -> dict:
    for key in ("fg_start", "velocity"):
        if key in raw and isinstance(raw[key], list):
            raw[key] = tuple(raw[key])
    return raw


# -- request/response models ---------------------------------------------------

class SyntheticRequest(BaseModel):
    width: int = 64
    height: int = 64
    n_frames: int = 8
    shape: str = "rect"
    fg_size: int = 20
    fg_start: tuple[float, float] = (8.0, 8.0)
    velocity: tuple[float, float] = (2.0, 1.0)
    rotation: float = 0.0
    bg_seed: int = 7
    fg_seed: int = 11


class CreateProjectRequest(BaseModel):
    synthetic: SyntheticRequest | None = None
    upload_dir: str | None = None


class TrainRequest(BaseModel):
    iters_forward: int = 3000
    iters_inverse: int = 1500
    batch: int = 2048
    seed: int = 0
    snapshot_interval: int = 50
    early_stop: bool = True
    desk_profile: bool = True
    weights: dict = Field(default_factory=dict)


class EditRequest(BaseModel):
    kind: str
    layer: str = FG
    frame: int | None = None
    points: list[tuple[float, float]] | None = None
    space: str = "frame"                  # "frame" | "atlas"
    color: tuple[float, float, float] | None = None
    width: float = 0.01
    deltas: tuple[float, float, float] | None = None
    mode: str | None = None
    anchor: tuple[float, float] | None = None
    size: tuple[float, float] | None = None
    image_png_base64: str | None = None
    alpha_multiply: bool = False


class TrackRequest(BaseModel):
    x: float
    y: float
    t: int
    layer: str = FG


class ExportRequest(BaseModel):
    edited: bool = True


class VisibilityRequest(BaseModel):
    kind: str
    visible: bool


def create_app(data_dir) -> FastAPI:
    app = FastAPI(title="atlasedit")
    store = ProjectStore(data_dir)
    app.state.store = store

    @app.post("/projects")
    def create_project(req: CreateProjectRequest):
        if req.synthetic is not None:
            spec = SyntheticSpec(**req.synthetic.model_dump())
            try:
                spec.validate()
            except ValueError as e:
                raise HTTPException(422, str(e))
            synth = generate_synthetic(spec)
            p = store.create(synth.clip, spec)
        elif req.upload_dir:
            try:
                clip = load_clip(req.upload_dir)
            except ClipLoadError as e:
                raise HTTPException(422, f"clip rejected: {e}")
            p = store.create(clip)
        else:
            raise HTTPException(422, "provide either synthetic spec or upload_dir")
        return {"id": p.id, "state": p.state}

    @app.get("/projects")
    def list_projects():
        return [p.meta() for p in store.projects.values()]

    @app.get("/projects/{pid}")
    def project_status(pid: str):
        return store.get(pid).status()

    @app.post("/projects/{pid}/train")
    def start_training(pid: str, req: TrainRequest):
        p = store.get(pid)
        if p.state not in ("created", "ready"):
            raise HTTPException(409, f"project is {p.state}; training already active")
        config = training.TrainConfig(
            iters_forward=req.iters_forward, iters_inverse=req.iters_inverse,
            batch=req.batch, seed=req.seed,
            snapshot_interval=req.snapshot_interval, early_stop=req.early_stop,
            weights=training.LossWeights(**req.weights) if req.weights
            else training.LossWeights())
        clip = p.clip
        if req.desk_profile:
            bc = BundleConfig.desk_scale(clip.width, clip.height, clip.n_frames)
        else:
            bc = BundleConfig.for_clip(clip.width, clip.height, clip.n_frames)
        model = ModelBundle(bc, seed=config.seed)
        p.state = "training-forward"
        p.save_meta()

        def on_progress(row):
            p.events.publish({"type": "progress", "phase": p.state,
                              "iteration": row["iteration"],
                              "losses": {k: v for k, v in row.items()
                                         if k not in ("iteration", "iters_per_sec")},
                              "iters_per_sec": row["iters_per_sec"]})

        def job():
            try:
                st = training.train_forward_phase(
                    clip, model, config, on_progress=on_progress,
                    on_snapshot=p.publish_snapshot)
                p.state = "training-inverse"
                p.save_meta()
                training.train_inverse_phase(
                    clip, model, config, on_progress=on_progress,
                    on_snapshot=p.publish_snapshot, state=st)
                model.save(p.checkpoint_path)
                p.publish_snapshot(model.snapshot())
                p.state = "ready"
                p.save_meta()
                p.events.publish({"type": "state", "state": "ready"})
            except Exception as e:  # surfaced through status + events
                p.state = "failed"
                p.train_error = str(e)
                p.save_meta()
                p.events.publish({"type": "state", "state": "failed",
                                  "error": str(e)})

        p._train_thread = threading.Thread(target=job, daemon=True)
        p._train_thread.start()
        return {"id": p.id, "state": p.state}

    @app.get("/projects/{pid}/frames/{t}")
    def get_frame(pid: str, t: int, edited: bool = False):
        p = store.get(pid)
        clip = p.clip
        if not 0 <= t < clip.n_frames:
            raise HTTPException(404, f"frame {t} out of range")
        if edited and p.doc.edits:
            snap = p.snapshot()
            frame, _ = editing.render_edited_frame(t, p.doc, snap, clip)
        else:
            frame = clip.frames[t]
        return _png_response(frame)

    @app.get("/projects/{pid}/atlas")
    def get_atlas(pid: str, layer: str = FG, edits: bool = True,
                  resolution: int = 256):
        p = store.get(pid)
        if layer not in (FG, BG):
            raise HTTPException(422, f"layer must be fg or bg, got {layer!r}")
        snap = p.snapshot()
        img = render_atlas_image(snap, layer, resolution,
                                 p.doc if edits else None)
        return _png_response(img)

    @app.get("/projects/{pid}/edits")
    def list_edits(pid: str):
        p = store.get(pid)
        return {"version": p.doc_version,
                "visibility": p.doc.visibility,
                "edits": [{"id": e.id, "kind": e.kind} for e in p.doc.edits]}

    @app.post("/projects/{pid}/edits")
    def post_edit(pid: str, req: EditRequest):
        p = store.get(pid)
        try:
            payload = _build_edit_payload(req, p)
        except (editing.ContractViolation, ValueError, KeyError) as e:
            raise HTTPException(422, f"malformed edit: {e}")
        with p._edit_lock:
            eid = p.doc.add(payload, req.kind)
            p.doc_version += 1
            p.doc.save(p.edits_path)
        p.events.publish({"type": "edits", "version": p.doc_version, "id": eid})
        return {"id": eid, "version": p.doc_version}

    @app.delete("/projects/{pid}/edits/{eid}")
    def delete_edit(pid: str, eid: str):
        p = store.get(pid)
        with p._edit_lock:
            try:
                p.doc.remove(eid)
            except KeyError as e:
                raise HTTPException(404, str(e))
            p.doc_version += 1
            p.doc.save(p.edits_path)
        p.events.publish({"type": "edits", "version": p.doc_version, "id": eid})
        return {"version": p.doc_version}

    @app.post("/projects/{pid}/visibility")
    def set_visibility(pid: str, req: VisibilityRequest):
        p = store.get(pid)
        if req.kind not in editing.KINDS:
            raise HTTPException(422, f"unknown edit kind {req.kind!r}")
        with p._edit_lock:
            p.doc.set_visibility(req.kind, req.visible)
            p.doc_version += 1
        p.events.publish({"type": "edits", "version": p.doc_version,
                          "visibility": p.doc.visibility})
        return {"version": p.doc_version}

    @app.post("/projects/{pid}/track")
    def track(pid: str, req: TrackRequest):
        p = store.get(pid)
        snap = p.snapshot()
        try:
            traj = tracking.track_point(req.x, req.y, req.t,
                                        range(p.clip.n_frames), req.layer, snap)
        except tracking.ContractViolation as e:
            raise HTTPException(409, str(e))
        return traj.to_json()

    @app.post("/projects/{pid}/export")
    def export(pid: str, req: ExportRequest):
        p = store.get(pid)
        clip = p.clip
        out_dir = p.root / ("export_edited" if req.edited else "export_original")
        if req.edited and p.doc.edits:
            snap = p.snapshot()
            frames, report = editing.render_edited_clip(p.doc, snap, clip)
        else:
            frames = clip.frames
            report = editing.RenderReport(frames=clip.n_frames, elapsed=0.0)
        export_sequence(frames, out_dir)
        return {"path": str(out_dir), "frames": int(clip.n_frames),
                "fps": report.fps if report.elapsed else None}

    @app.get("/projects/{pid}/events")
    def events(pid: str, request: Request, idle_timeout: float = 30.0):
        p = store.get(pid)
        q = p.events.subscribe()

        def stream():
            try:
                # initial state so late subscribers can sync
                yield _sse({"type": "state", "state": p.state,
                            "version": p.doc_version})
                idle = 0.0
                while idle < idle_timeout:
                    try:
                        event = q.get(timeout=0.25)
                        idle = 0.0
                        yield _sse(event)
                    except queue.Empty:
                        idle += 0.25
            finally:
                p.events.unsubscribe(q)
        return StreamingResponse(stream(), media_type="text/event-stream")

    return app


def _sse(event: dict) -> str:
    return f"data: {json.dumps(event)}\n\n"


def _png_response(frame: np.ndarray) -> Response:
    arr = np.clip(np.asarray(frame) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return Response(buf.getvalue(), media_type="image/png")


def render_atlas_image(model: ModelBundle, layer: str, resolution: int,
                       doc: editing.EditDocument | None) -> np.ndarray:
    """Sample atlas colors over the layer sub-square, optionally overlaying
    the edit rasters."""
    from .model import SUBSQUARE
    u0, u1 = SUBSQUARE[layer]
    us = u0 + (u1 - u0) * (np.arange(resolution) + 0.5) / resolution
    vs = (np.arange(resolution) + 0.5) / resolution
    uu, vv = np.meshgrid(us, vs)
    uv = np.column_stack([uu.ravel(), vv.ravel()])
    img = model.atlas_color(uv.astype(np.float32)).reshape(resolution, resolution, 3)
    if doc is not None and doc.edits:
        rasters = doc.rasters()
        flat_uv = uv
        for raster in (rasters.texture, rasters.sketch):
            rgba = editing._sample_nearest(raster, flat_uv).reshape(
                resolution, resolution, 4)
            a = rgba[..., 3:4]
            img = a * rgba[..., :3] + (1 - a) * img
        meta = editing._sample_nearest(rasters.metadata, flat_uv).reshape(
            resolution, resolution, 4)
        covered = meta[..., 3] > 0
        if covered.any():
            img[covered] = editing.apply_metadata(img[covered], meta[covered, :3])
    return img


def _build_edit_payload(req: EditRequest, p: Project):
    if req.kind == editing.KIND_SKETCH or req.kind == editing.KIND_METADATA:
        if not req.points:
            raise ValueError("points are required for stroke edits")
        pts = np.asarray(req.points, np.float64)
        common: dict = {"width": req.width, "layer": req.layer}
        if req.space == "atlas":
            common["atlas_chain"] = pts
        else:
            if req.frame is None:
                raise ValueError("frame index required for frame-space strokes")
            common["frame_points"] = pts
            common["frame"] = req.frame
        if req.kind == editing.KIND_SKETCH:
            if req.color is None:
                raise ValueError("color required for sketch strokes")
            stroke = editing.SketchStroke(color=tuple(req.color), **common)
        else:
            if req.deltas is None:
                raise ValueError("deltas required for metadata strokes")
            stroke = editing.MetadataStroke(deltas=tuple(req.deltas), **common)
        if req.space != "atlas":
            editing.map_stroke_to_atlas(stroke, p.snapshot())
        return stroke
    if req.kind == editing.KIND_TEXTURE:
        import base64
        if not (req.mode and req.anchor and req.size and req.image_png_base64):
            raise ValueError("texture edits need mode, anchor, size and image")
        raw = base64.b64decode(req.image_png_base64)
        with Image.open(io.BytesIO(raw)) as im:
            image = np.asarray(im.convert("RGBA"), np.float32) / 255.0
        return editing.TextureEdit(mode=req.mode, image=image,
                                   anchor=tuple(req.anchor), size=tuple(req.size),
                                   layer=req.layer,
                                   alpha_multiply=req.alpha_multiply)
    raise ValueError(f"unknown edit kind {req.kind!r}")
