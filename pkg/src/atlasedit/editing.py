"""Layered edit document, vectorized sketching and frame rendering.

Edits live in atlas space as vector data (the document is the source of
truth); per-layer rasters are deterministic caches regenerated from the
document. Rendering is back-to-front: metadata adjustments, then textures,
then sketches, with point-tracked textures composited last in frame space.
"""

from __future__ import annotations

import hashlib
import json
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .autodiff import ContractViolation
from .media import VideoClip
from .model import FG, SUBSQUARE

ATLAS_RASTER_RESOLUTION = 1024

KIND_SKETCH = "sketch"
KIND_TEXTURE = "texture"
KIND_METADATA = "metadata"
KINDS = (KIND_METADATA, KIND_TEXTURE, KIND_SKETCH)  # back-to-front


def _new_id() -> str:
    return uuid.uuid4().hex[:12]


def _collapse_duplicates(points: np.ndarray) -> np.ndarray:
    if len(points) <= 1:
        return points
    keep = np.ones(len(points), bool)
    keep[1:] = np.any(points[1:] != points[:-1], axis=1)
    return points[keep]


@dataclass
class SketchStroke:
    color: tuple[float, float, float]
    width: float                      # atlas units
    layer: str = FG
    frame_points: np.ndarray | None = None   # [K,2] frame-space (x, y)
    frame: int | None = None                  # source frame for frame_points
    atlas_chain: np.ndarray | None = None     # [K,2] cached (u, v)

    def __post_init__(self):
        if self.frame_points is not None:
            self.frame_points = _collapse_duplicates(
                np.atleast_2d(np.asarray(self.frame_points, np.float64)))
            if len(self.frame_points) < 1:
                raise ContractViolation("stroke needs at least one control point")
        if self.atlas_chain is not None:
            self.atlas_chain = np.atleast_2d(np.asarray(self.atlas_chain, np.float64))
        if self.frame_points is None and self.atlas_chain is None:
            raise ContractViolation("stroke needs frame or atlas control points")


@dataclass
class MetadataStroke:
    """Stroke geometry carrying HSB adjustment deltas instead of color."""
    deltas: tuple[float, float, float]   # (brightness, saturation, hue degrees)
    width: float
    layer: str = FG
    frame_points: np.ndarray | None = None
    frame: int | None = None
    atlas_chain: np.ndarray | None = None

    def __post_init__(self):
        db, ds, dh = self.deltas
        if not (-1 <= db <= 1 and -1 <= ds <= 1 and -180 <= dh <= 180):
            raise ContractViolation(
                f"metadata deltas out of range: brightness/saturation in [-1,1], "
                f"hue in [-180,180], got {self.deltas}")
        if self.frame_points is not None:
            self.frame_points = _collapse_duplicates(
                np.atleast_2d(np.asarray(self.frame_points, np.float64)))
        if self.atlas_chain is not None:
            self.atlas_chain = np.atleast_2d(np.asarray(self.atlas_chain, np.float64))
        if self.frame_points is None and self.atlas_chain is None:
            raise ContractViolation("metadata stroke needs control points")


@dataclass
class TextureEdit:
    mode: str                         # "atlas-warped" | "point-tracked"
    image: np.ndarray                 # [h,w,4] float32 RGBA in [0,1]
    anchor: tuple[float, float]       # atlas (u, v), center of the placement
    size: tuple[float, float]         # atlas units (warped) or pixels (tracked)
    layer: str = FG
    alpha_multiply: bool = False      # tracked mode: occlude by the layer alpha

    def __post_init__(self):
        self.image = np.asarray(self.image, np.float32)
        if self.image.ndim != 3 or self.image.shape[2] != 4 \
                or self.image.shape[0] == 0 or self.image.shape[1] == 0:
            raise ContractViolation("texture image must be a non-empty RGBA raster")
        if self.size[0] <= 0 or self.size[1] <= 0:
            raise ContractViolation(f"texture size must be positive, got {self.size}")
        if self.mode not in ("atlas-warped", "point-tracked"):
            raise ContractViolation(f"unknown texture mode {self.mode!r}")
        if self.mode == "atlas-warped":
            u0, u1 = SUBSQUARE[self.layer]
            if not (u0 <= self.anchor[0] <= u1 and 0 <= self.anchor[1] <= 1):
                raise ContractViolation(
                    f"anchor {self.anchor} outside the {self.layer} sub-square")


@dataclass
class Edit:
    id: str
    kind: str
    payload: object   # SketchStroke | TextureEdit | MetadataStroke


class EditDocument:
    """Ordered edit layers; rendering order is metadata -> texture -> sketch."""

    def __init__(self):
        self.edits: list[Edit] = []
        self.visibility = {k: True for k in KINDS}
        self.version = 0
        self._raster_cache: tuple[int, int, "EditRasters"] | None = None

    def add(self, payload, kind: str | None = None) -> str:
        if kind is None:
            kind = {SketchStroke: KIND_SKETCH, TextureEdit: KIND_TEXTURE,
                    MetadataStroke: KIND_METADATA}[type(payload)]
        edit = Edit(id=_new_id(), kind=kind, payload=payload)
        self.edits.append(edit)
        self.version += 1
        return edit.id

    def remove(self, edit_id: str):
        before = len(self.edits)
        self.edits = [e for e in self.edits if e.id != edit_id]
        if len(self.edits) == before:
            raise KeyError(f"no edit with id {edit_id!r}")
        self.version += 1

    def get(self, edit_id: str) -> Edit:
        for e in self.edits:
            if e.id == edit_id:
                return e
        raise KeyError(f"no edit with id {edit_id!r}")

    def set_visibility(self, kind: str, visible: bool):
        self.visibility[kind] = bool(visible)
        self.version += 1

    def by_kind(self, kind: str) -> list[Edit]:
        return [e for e in self.edits if e.kind == kind]

    def rasters(self, resolution: int = ATLAS_RASTER_RESOLUTION) -> "EditRasters":
        cached = self._raster_cache
        if cached and cached[0] == self.version and cached[1] == resolution:
            return cached[2]
        r = EditRasters.build(self, resolution)
        self._raster_cache = (self.version, resolution, r)
        return r

    # -- persistence ------------------------------------------------------

    def save(self, path):
        """edits.json beside content-hashed texture PNGs."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        out = {"version": self.version,
               "visibility": self.visibility, "edits": []}
        for e in self.edits:
            rec: dict = {"id": e.id, "kind": e.kind}
            p = e.payload
            if e.kind == KIND_SKETCH:
                rec.update(layer=p.layer, color=list(p.color), width=p.width,
                           frame=p.frame,
                           frame_points=_pts(p.frame_points),
                           atlas_chain=_pts(p.atlas_chain))
            elif e.kind == KIND_METADATA:
                rec.update(layer=p.layer, deltas=list(p.deltas), width=p.width,
                           frame=p.frame,
                           frame_points=_pts(p.frame_points),
                           atlas_chain=_pts(p.atlas_chain))
            else:
                img8 = np.clip(p.image * 255.0 + 0.5, 0, 255).astype(np.uint8)
                digest = hashlib.sha256(img8.tobytes()).hexdigest()[:16]
                img_name = f"tex_{digest}.png"
                Image.fromarray(img8, "RGBA").save(path.parent / img_name)
                rec.update(layer=p.layer, mode=p.mode, anchor=list(p.anchor),
                           size=list(p.size), image=img_name,
                           alpha_multiply=p.alpha_multiply)
            out["edits"].append(rec)
        path.write_text(json.dumps(out, indent=2))

    @classmethod
    def load(cls, path) -> "EditDocument":
        path = Path(path)
        raw = json.loads(path.read_text())
        doc = cls()
        doc.visibility.update(raw.get("visibility", {}))
        for rec in raw["edits"]:
            kind = rec["kind"]
            if kind == KIND_SKETCH:
                payload = SketchStroke(
                    color=tuple(rec["color"]), width=rec["width"],
                    layer=rec["layer"], frame=rec.get("frame"),
                    frame_points=_unpts(rec.get("frame_points")),
                    atlas_chain=_unpts(rec.get("atlas_chain")))
            elif kind == KIND_METADATA:
                payload = MetadataStroke(
                    deltas=tuple(rec["deltas"]), width=rec["width"],
                    layer=rec["layer"], frame=rec.get("frame"),
                    frame_points=_unpts(rec.get("frame_points")),
                    atlas_chain=_unpts(rec.get("atlas_chain")))
            else:
                with Image.open(path.parent / rec["image"]) as im:
                    image = np.asarray(im.convert("RGBA"), np.float32) / 255.0
                payload = TextureEdit(
                    mode=rec["mode"], image=image, anchor=tuple(rec["anchor"]),
                    size=tuple(rec["size"]), layer=rec["layer"],
                    alpha_multiply=rec.get("alpha_multiply", False))
            doc.edits.append(Edit(id=rec["id"], kind=kind, payload=payload))
        doc.version = raw.get("version", len(doc.edits))
        return doc


def _pts(arr):
    return None if arr is None else np.asarray(arr, np.float64).tolist()


def _unpts(lst):
    return None if lst is None else np.asarray(lst, np.float64)


# -- stroke mapping ------------------------------------------------------------

def map_stroke_to_atlas(stroke, model) -> np.ndarray:
    """Map a frame-space stroke's control points to the atlas; exactly K
    forward-map evaluations. Fills and returns stroke.atlas_chain."""
    if stroke.frame_points is None or stroke.frame is None:
        raise ContractViolation("stroke has no frame-space control points")
    pts = stroke.frame_points
    c = model.config
    if (pts[:, 0].min() < 0 or pts[:, 0].max() > c.width - 1
            or pts[:, 1].min() < 0 or pts[:, 1].max() > c.height - 1):
        raise ContractViolation("stroke control point outside the frame")
    xyt = np.column_stack([pts, np.full(len(pts), float(stroke.frame))])
    stroke.atlas_chain = model.forward_map(xyt, stroke.layer).astype(np.float64)
    return stroke.atlas_chain


# -- rasterization --------------------------------------------------------------

def segment_coverage(raster_shape: tuple[int, int], chain: np.ndarray,
                     width: float) -> np.ndarray:
    """Boolean mask of texels whose center lies within width/2 of the chain."""
    rh, rw = raster_shape
    covered = np.zeros((rh, rw), bool)
    chain = np.atleast_2d(np.asarray(chain, np.float64))
    radius = width / 2.0
    segs = [(chain[i], chain[i + 1]) for i in range(len(chain) - 1)] \
        or [(chain[0], chain[0])]
    for a, b in segs:
        lo_u = min(a[0], b[0]) - radius
        hi_u = max(a[0], b[0]) + radius
        lo_v = min(a[1], b[1]) - radius
        hi_v = max(a[1], b[1]) + radius
        i0 = max(int(np.floor(lo_u * rw - 0.5)), 0)
        i1 = min(int(np.ceil(hi_u * rw - 0.5)) + 1, rw)
        j0 = max(int(np.floor(lo_v * rh - 0.5)), 0)
        j1 = min(int(np.ceil(hi_v * rh - 0.5)) + 1, rh)
        if i0 >= i1 or j0 >= j1:
            continue
        us = (np.arange(i0, i1) + 0.5) / rw
        vs = (np.arange(j0, j1) + 0.5) / rh
        uu, vv = np.meshgrid(us, vs)
        d2 = _dist2_to_segment(uu, vv, a, b)
        covered[j0:j1, i0:i1] |= d2 <= radius * radius
    return covered


def _dist2_to_segment(px, py, a, b) -> np.ndarray:
    ab = (b[0] - a[0], b[1] - a[1])
    denom = ab[0] * ab[0] + ab[1] * ab[1]
    if denom == 0:
        return (px - a[0]) ** 2 + (py - a[1]) ** 2
    s = ((px - a[0]) * ab[0] + (py - a[1]) * ab[1]) / denom
    s = np.clip(s, 0.0, 1.0)
    cx = a[0] + s * ab[0]
    cy = a[1] + s * ab[1]
    return (px - cx) ** 2 + (py - cy) ** 2


def rasterize_chain(chain: np.ndarray, color, width: float, target: np.ndarray):
    """Hard-coverage polyline: covered texels are set to exactly `color` with
    full alpha; no color interpolation anywhere."""
    if chain is None or len(chain) == 0:
        raise ContractViolation("rasterize_chain needs a non-empty chain")
    covered = segment_coverage(target.shape[:2], chain, width)
    target[covered, 0] = color[0]
    target[covered, 1] = color[1]
    target[covered, 2] = color[2]
    target[covered, 3] = 1.0
    return covered


class EditRasters:
    """Per edit-type atlas-domain buffers at resolution R x R (cache only)."""

    def __init__(self, resolution: int):
        self.resolution = resolution
        self.sketch = np.zeros((resolution, resolution, 4), np.float32)
        self.texture = np.zeros((resolution, resolution, 4), np.float32)
        # channels: brightness delta, saturation delta, hue delta, coverage
        self.metadata = np.zeros((resolution, resolution, 4), np.float32)

    @classmethod
    def build(cls, doc: EditDocument, resolution: int) -> "EditRasters":
        r = cls(resolution)
        for e in doc.edits:
            p = e.payload
            if e.kind == KIND_SKETCH:
                if p.atlas_chain is None:
                    raise ContractViolation(
                        f"sketch {e.id} has no atlas chain; map it first")
                rasterize_chain(p.atlas_chain, p.color, p.width, r.sketch)
            elif e.kind == KIND_METADATA:
                if p.atlas_chain is None:
                    raise ContractViolation(
                        f"metadata stroke {e.id} has no atlas chain; map it first")
                covered = segment_coverage((resolution, resolution),
                                           p.atlas_chain, p.width)
                r.metadata[covered, 0] = p.deltas[0]
                r.metadata[covered, 1] = p.deltas[1]
                r.metadata[covered, 2] = p.deltas[2]
                r.metadata[covered, 3] = 1.0
            elif e.kind == KIND_TEXTURE and p.mode == "atlas-warped":
                _blit_texture(r.texture, p)
        return r


def _blit_texture(target: np.ndarray, edit: TextureEdit):
    res = target.shape[0]
    w_u, w_v = edit.size
    u0 = edit.anchor[0] - w_u / 2.0
    v0 = edit.anchor[1] - w_v / 2.0
    i0 = max(int(round(u0 * res)), 0)
    j0 = max(int(round(v0 * res)), 0)
    i1 = min(int(round((u0 + w_u) * res)), res)
    j1 = min(int(round((v0 + w_v) * res)), res)
    if i0 >= i1 or j0 >= j1:
        return
    ih, iw = edit.image.shape[:2]
    cols = np.minimum(((np.arange(i0, i1) + 0.5 - u0 * res) / ((i1 - i0) or 1)
                       * iw).astype(int), iw - 1)
    rows = np.minimum(((np.arange(j0, j1) + 0.5 - v0 * res) / ((j1 - j0) or 1)
                       * ih).astype(int), ih - 1)
    patch = edit.image[np.ix_(rows, cols)]
    dst = target[j0:j1, i0:i1]
    a = patch[..., 3:4]
    dst[..., :3] = a * patch[..., :3] + (1 - a) * dst[..., :3]
    dst[..., 3:4] = a + (1 - a) * dst[..., 3:4]


def place_texture(edit: TextureEdit, doc: EditDocument) -> str:
    return doc.add(edit, KIND_TEXTURE)


# -- color adjustment ------------------------------------------------------------

def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx = np.max(rgb, axis=-1)
    mn = np.min(rgb, axis=-1)
    d = mx - mn
    h = np.zeros_like(mx)
    nz = d > 0
    rmax = nz & (mx == r)
    gmax = nz & ~rmax & (mx == g)
    bmax = nz & ~rmax & ~gmax
    h[rmax] = (60.0 * (g - b)[rmax] / d[rmax]) % 360.0
    h[gmax] = 60.0 * (b - r)[gmax] / d[gmax] + 120.0
    h[bmax] = 60.0 * (r - g)[bmax] / d[bmax] + 240.0
    s = np.where(mx > 0, d / np.where(mx > 0, mx, 1.0), 0.0)
    return np.stack([h, s, mx], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0] % 360.0, hsv[..., 1], hsv[..., 2]
    c = v * s
    hp = h / 60.0
    x = c * (1.0 - np.abs(hp % 2.0 - 1.0))
    z = np.zeros_like(c)
    conds = [hp < 1, hp < 2, hp < 3, hp < 4, hp < 5, hp >= 5]
    rgbs = [(c, x, z), (x, c, z), (z, c, x), (z, x, c), (x, z, c), (c, z, x)]
    r = np.select(conds, [t[0] for t in rgbs])
    g = np.select(conds, [t[1] for t in rgbs])
    b = np.select(conds, [t[2] for t in rgbs])
    m = v - c
    return np.stack([r + m, g + m, b + m], axis=-1)


def apply_metadata(color: np.ndarray, deltas) -> np.ndarray:
    """HSV adjustment: V += brightness, S += saturation (clamped), hue rotated."""
    deltas = np.broadcast_to(deltas, np.shape(color)[:-1] + (3,))
    hsv = rgb_to_hsv(color)
    hsv[..., 2] = np.clip(hsv[..., 2] + deltas[..., 0], 0.0, 1.0)
    hsv[..., 1] = np.clip(hsv[..., 1] + deltas[..., 1], 0.0, 1.0)
    hsv[..., 0] = (hsv[..., 0] + deltas[..., 2]) % 360.0
    return hsv_to_rgb(hsv)


# -- rendering --------------------------------------------------------------------

def _sample_nearest(raster: np.ndarray, uv: np.ndarray) -> np.ndarray:
    res = raster.shape[0]
    i = np.clip((uv[:, 0] * res).astype(int), 0, res - 1)
    j = np.clip((uv[:, 1] * res).astype(int), 0, res - 1)
    return raster[j, i]


@dataclass
class RenderReport:
    frames: int
    elapsed: float

    @property
    def fps(self) -> float:
        return self.frames / self.elapsed if self.elapsed > 0 else float("inf")


def render_edited_frame(t: int, doc: EditDocument, model, clip: VideoClip,
                        resolution: int = ATLAS_RASTER_RESOLUTION
                        ) -> tuple[np.ndarray, RenderReport]:
    start = time.perf_counter()
    frame = _render_frame(t, doc, model, clip, resolution)
    return frame, RenderReport(frames=1, elapsed=time.perf_counter() - start)


def render_edited_clip(doc: EditDocument, model, clip: VideoClip,
                       resolution: int = ATLAS_RASTER_RESOLUTION
                       ) -> tuple[np.ndarray, RenderReport]:
    start = time.perf_counter()
    frames = np.stack([_render_frame(t, doc, model, clip, resolution)
                       for t in range(clip.n_frames)])
    return frames, RenderReport(frames=clip.n_frames,
                                elapsed=time.perf_counter() - start)


def render_edited_pixel(p, doc: EditDocument, model, clip: VideoClip,
                        resolution: int = ATLAS_RASTER_RESOLUTION) -> np.ndarray:
    """Single-pixel rendering; p = (x, y, t) with integer pixel coords."""
    x, y, t = int(p[0]), int(p[1]), int(p[2])
    return _render_pixels(np.array([[x, y]]), t, doc, model, clip, resolution)[0]


def _render_frame(t, doc, model, clip, resolution) -> np.ndarray:
    ys, xs = np.mgrid[0:clip.height, 0:clip.width]
    px = np.column_stack([xs.ravel(), ys.ravel()])
    out = _render_pixels(px, t, doc, model, clip, resolution)
    return out.reshape(clip.height, clip.width, 3)


def _render_pixels(px: np.ndarray, t: int, doc: EditDocument, model,
                   clip: VideoClip, resolution: int) -> np.ndarray:
    if not getattr(model, "forward_trained", True):
        raise ContractViolation("rendering requires a trained model")
    n = len(px)
    color = clip.frames[t][px[:, 1], px[:, 0]].astype(np.float64).copy()
    if not doc.edits:
        return color
    rasters = doc.rasters(resolution)
    xyt = np.column_stack([px, np.full(n, float(t))])
    uv_f = model.forward_map(xyt, "fg")
    uv_b = model.forward_map(xyt, "bg")
    alpha = model.opacity(xyt).astype(np.float64)

    visible = doc.visibility
    # metadata first: background then foreground, scaled by layer weight
    if visible.get(KIND_METADATA, True):
        for uv, weight in ((uv_b, 1.0 - alpha), (uv_f, alpha)):
            meta = _sample_nearest(rasters.metadata, uv).astype(np.float64)
            covered = meta[:, 3] > 0
            if covered.any():
                deltas = meta[covered, :3] * weight[covered, None]
                color[covered] = apply_metadata(color[covered], deltas)
    # texture then sketch layers, alpha-over weighted by layer membership
    for kind, raster in ((KIND_TEXTURE, rasters.texture),
                         (KIND_SKETCH, rasters.sketch)):
        if not visible.get(kind, True):
            continue
        for uv, weight in ((uv_b, 1.0 - alpha), (uv_f, alpha)):
            rgba = _sample_nearest(raster, uv).astype(np.float64)
            a = rgba[:, 3] * weight
            color = a[:, None] * rgba[:, :3] + (1.0 - a)[:, None] * color
    # point-tracked textures composite last, rigidly in frame space
    if visible.get(KIND_TEXTURE, True):
        for e in doc.by_kind(KIND_TEXTURE):
            te = e.payload
            if te.mode != "point-tracked":
                continue
            color = _composite_tracked(color, px, t, te, model, alpha)
    return color


def _composite_tracked(color, px, t, te: TextureEdit, model, alpha):
    anchor_xy = model.inverse_map(np.array([te.anchor]), float(t), te.layer)[0]
    w_px, h_px = te.size
    ih, iw = te.image.shape[:2]
    # pixel -> texture image coordinates
    tx = (px[:, 0] - (anchor_xy[0] - w_px / 2.0)) / w_px * iw
    ty = (px[:, 1] - (anchor_xy[1] - h_px / 2.0)) / h_px * ih
    inside = (tx >= 0) & (tx < iw) & (ty >= 0) & (ty < ih)
    if not inside.any():
        return color
    rgba = np.zeros((len(px), 4))
    rgba[inside] = te.image[ty[inside].astype(int), tx[inside].astype(int)]
    a = rgba[:, 3]
    if te.alpha_multiply:
        a = a * alpha
    return a[:, None] * rgba[:, :3] + (1.0 - a)[:, None] * color


# -- raster-resample comparison path ------------------------------------------

def raster_baseline_stroke(stroke: SketchStroke, model, clip: VideoClip,
                           target_frame: int, atlas_resolution: int = 64,
                           interp: str = "linear"
                           ) -> tuple[np.ndarray, int]:
    """Frame-raster editing pipeline used only as a comparison baseline.

    Draws the stroke into a frame-sized edit layer, maps every frame pixel to
    the atlas (H*W forward-map evaluations), splats the colors into a small
    atlas raster, and renders the target frame by resampling that raster.
    Returns (rendered frame, forward-map evaluation count for the mapping
    step). Exhibits the interpolation artifacts that vectorized strokes avoid.
    """
    h, w = clip.height, clip.width
    # 1. rasterize the stroke in frame space (width interpreted in pixels
    #    relative to the atlas->frame scale of the stub mapping)
    layer = np.zeros((h, w, 4), np.float32)
    chain_norm = stroke.frame_points / np.array([w, h], np.float64)
    covered = segment_coverage((h, w), chain_norm, stroke.width)
    layer[covered, :3] = stroke.color
    layer[covered, 3] = 1.0

    # 2. map the whole edit layer to the atlas
    ys, xs = np.mgrid[0:h, 0:w]
    xyt = np.column_stack([xs.ravel(), ys.ravel(),
                           np.full(h * w, float(stroke.frame))])
    count_before = model.forward_eval_count
    uv = model.forward_map(xyt, stroke.layer)
    mapping_evals = model.forward_eval_count - count_before

    atlas = np.zeros((atlas_resolution, atlas_resolution, 4), np.float32)
    src = layer.reshape(-1, 4)
    hit = src[:, 3] > 0
    i = np.clip((uv[hit, 0] * atlas_resolution).astype(int), 0, atlas_resolution - 1)
    j = np.clip((uv[hit, 1] * atlas_resolution).astype(int), 0, atlas_resolution - 1)
    atlas[j, i] = src[hit]

    # 3. resample the atlas raster onto the target frame
    xyt2 = np.column_stack([xs.ravel(), ys.ravel(),
                            np.full(h * w, float(target_frame))])
    uv2 = model.forward_map(xyt2, stroke.layer)
    if interp == "nearest":
        rgba = _sample_nearest(atlas, uv2)
    else:
        rgba = _sample_bilinear_rgba(atlas, uv2)
    base = clip.frames[target_frame].reshape(-1, 3).astype(np.float64)
    a = rgba[:, 3:4]
    out = a * rgba[:, :3] + (1 - a) * base
    return out.reshape(h, w, 3), mapping_evals


def _sample_bilinear_rgba(raster: np.ndarray, uv: np.ndarray) -> np.ndarray:
    res = raster.shape[0]
    x = np.clip(uv[:, 0] * res - 0.5, 0, res - 1)
    y = np.clip(uv[:, 1] * res - 0.5, 0, res - 1)
    x0 = np.floor(x).astype(int)
    y0 = np.floor(y).astype(int)
    x1 = np.minimum(x0 + 1, res - 1)
    y1 = np.minimum(y0 + 1, res - 1)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    return ((raster[y0, x0] * (1 - fx) + raster[y0, x1] * fx) * (1 - fy)
            + (raster[y1, x0] * (1 - fx) + raster[y1, x1] * fx) * fy).astype(np.float64)
