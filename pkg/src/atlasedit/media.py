"""Clip ingestion, synthetic ground-truth clips, and render export.

Directory layout for real clips:

    clip/
      frames/00000.png ...   8-bit RGB
      flow/00000.flo ...     Middlebury layout, N-1 files
      flow/00000.valid       optional packed-bit validity sidecar
      masks/00000.png ...    binary (any nonzero = foreground)
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

FLO_MAGIC = 202021.25


class ClipLoadError(ValueError):
    """A clip directory failed validation; message names the file."""


@dataclass
class VideoClip:
    frames: np.ndarray            # [N, H, W, 3] float32 in [0,1]
    flow: np.ndarray              # [N-1, H, W, 2] float32 (forward, pixels)
    flow_valid: np.ndarray        # [N-1, H, W] bool
    masks: np.ndarray             # [N, H, W] bool

    def __post_init__(self):
        n, h, w = self.frames.shape[:3]
        if self.flow.shape[:3] != (max(n - 1, 0), h, w):
            raise ClipLoadError(
                f"flow shape {self.flow.shape} does not match frames {self.frames.shape}")
        if self.masks.shape != (n, h, w):
            raise ClipLoadError(
                f"mask shape {self.masks.shape} does not match frames {self.frames.shape}")
        if self.flow_valid.shape != self.flow.shape[:3]:
            raise ClipLoadError("flow validity shape does not match flow")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]


# -- .flo ------------------------------------------------------------------

def read_flo(path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = struct.unpack("<f", fh.read(4))[0]
        if magic != FLO_MAGIC:
            raise ClipLoadError(f"bad .flo magic {magic} in {path}")
        w, h = struct.unpack("<ii", fh.read(8))
        data = np.frombuffer(fh.read(w * h * 2 * 4), dtype="<f4")
        if data.size != w * h * 2:
            raise ClipLoadError(f"truncated .flo payload in {path}")
    return data.reshape(h, w, 2).copy()


def write_flo(path, flow: np.ndarray):
    h, w = flow.shape[:2]
    with open(path, "wb") as fh:
        fh.write(struct.pack("<f", FLO_MAGIC))
        fh.write(struct.pack("<ii", w, h))
        fh.write(flow.astype("<f4").tobytes())


def read_valid_sidecar(path, width: int, height: int) -> np.ndarray:
    """Packed row-major bitmap, 1 bit per pixel, MSB first."""
    bits = np.unpackbits(np.fromfile(path, dtype=np.uint8))
    if bits.size < width * height:
        raise ClipLoadError(f"validity sidecar {path} too small for {width}x{height}")
    return bits[: width * height].reshape(height, width).astype(bool)


def write_valid_sidecar(path, valid: np.ndarray):
    np.packbits(valid.astype(np.uint8).ravel()).tofile(path)


# -- PNG frames --------------------------------------------------------------

def _read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def load_clip(dir_path) -> VideoClip:
    root = Path(dir_path)
    frame_files = sorted((root / "frames").glob("*.png"))
    if not frame_files:
        raise ClipLoadError(f"no frames found under {root / 'frames'}")
    frames = []
    for f in frame_files:
        frames.append(_read_png(f))
        if frames[-1].shape != frames[0].shape:
            raise ClipLoadError(f"frame dimension mismatch in {f}")
    frames = np.stack(frames).astype(np.float32) / 255.0
    n, h, w = frames.shape[:3]

    flow = np.zeros((n - 1, h, w, 2), np.float32)
    valid = np.ones((n - 1, h, w), bool)
    for i in range(n - 1):
        fpath = root / "flow" / f"{i:05d}.flo"
        if not fpath.exists():
            raise ClipLoadError(f"missing flow file {fpath}")
        fl = read_flo(fpath)
        if fl.shape[:2] != (h, w):
            raise ClipLoadError(f"flow dimension mismatch in {fpath}")
        flow[i] = fl
        side = fpath.with_suffix(".valid")
        if side.exists():
            valid[i] = read_valid_sidecar(side, w, h)

    masks = np.zeros((n, h, w), bool)
    for i in range(n):
        mpath = root / "masks" / f"{i:05d}.png"
        if not mpath.exists():
            raise ClipLoadError(f"missing mask file {mpath}")
        m = _read_png(mpath)
        if m.shape[:2] != (h, w):
            raise ClipLoadError(f"mask dimension mismatch in {mpath}")
        masks[i] = m.max(axis=-1) > 127
    return VideoClip(frames=frames, flow=flow, flow_valid=valid, masks=masks)


def save_clip(clip: VideoClip, dir_path):
    root = Path(dir_path)
    for sub in ("frames", "flow", "masks"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for i in range(clip.n_frames):
        arr = np.clip(clip.frames[i] * 255.0 + 0.5, 0, 255).astype(np.uint8)
        Image.fromarray(arr).save(root / "frames" / f"{i:05d}.png")
        Image.fromarray((clip.masks[i] * 255).astype(np.uint8)).save(
            root / "masks" / f"{i:05d}.png")
    for i in range(clip.n_frames - 1):
        write_flo(root / "flow" / f"{i:05d}.flo", clip.flow[i])
        write_valid_sidecar(root / "flow" / f"{i:05d}.valid", clip.flow_valid[i])


def export_sequence(frames: np.ndarray, dir_path):
    """Write frames as %05d.png plus a manifest.json."""
    frames = np.asarray(frames)
    if frames.ndim != 4 or frames.shape[0] == 0:
        raise ValueError("export_sequence needs a non-empty [N,H,W,3] array")
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        if frame.dtype != np.uint8:
            frame = np.clip(frame * 255.0 + 0.5, 0, 255).astype(np.uint8)
        Image.fromarray(frame).save(root / f"{i:05d}.png")
    manifest = {"count": int(frames.shape[0]),
                "width": int(frames.shape[2]), "height": int(frames.shape[1])}
    (root / "manifest.json").write_text(json.dumps(manifest))


def load_sequence(dir_path) -> np.ndarray:
    root = Path(dir_path)
    files = sorted(root.glob("[0-9]" * 5 + ".png"))
    return np.stack([_read_png(f) for f in files]).astype(np.float32) / 255.0


# -- synthetic clips ----------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    width: int = 64
    height: int = 64
    n_frames: int = 8
    bg_seed: int = 7
    fg_seed: int = 11
    shape: str = "rect"            # rect | disc
    fg_size: int = 20              # rect side / disc diameter, pixels
    fg_start: tuple[float, float] = (8.0, 8.0)   # top-left (rect) / center-ish origin
    velocity: tuple[float, float] = (2.0, 1.0)   # px/frame
    rotation: float = 0.0          # degrees/frame about the shape center

    def validate(self):
        vx, vy = self.velocity
        for t in range(self.n_frames):
            x0 = self.fg_start[0] + vx * t
            y0 = self.fg_start[1] + vy * t
            if x0 < 0 or y0 < 0 or x0 + self.fg_size > self.width \
                    or y0 + self.fg_size > self.height:
                raise ValueError(
                    f"foreground leaves the frame at t={t} "
                    f"({x0:.1f},{y0:.1f})+{self.fg_size} vs {self.width}x{self.height}")


def value_noise(h: int, w: int, seed: int, cells: int = 8) -> np.ndarray:
    """Smooth seeded RGB noise in [0,1]: bilinear upsampling of a coarse grid."""
    rng = np.random.default_rng(seed)
    coarse = rng.uniform(0.1, 0.9, size=(cells + 1, cells + 1, 3))
    ys = np.linspace(0, cells, h)
    xs = np.linspace(0, cells, w)
    y0 = np.minimum(ys.astype(int), cells - 1)
    x0 = np.minimum(xs.astype(int), cells - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    c00 = coarse[np.ix_(y0, x0)]
    c01 = coarse[np.ix_(y0, x0 + 1)]
    c10 = coarse[np.ix_(y0 + 1, x0)]
    c11 = coarse[np.ix_(y0 + 1, x0 + 1)]
    return ((c00 * (1 - fx) + c01 * fx) * (1 - fy)
            + (c10 * (1 - fx) + c11 * fx) * fy).astype(np.float32)


@dataclass
class SyntheticClip:
    clip: VideoClip
    spec: SyntheticSpec

    def ground_truth_position(self, x: float, y: float, t0: int, t: int
                              ) -> tuple[float, float]:
        """Analytic position at frame t of the content under (x, y, t0)."""
        s = self.spec
        cx0 = s.fg_start[0] + s.velocity[0] * t0 + s.fg_size / 2.0
        cy0 = s.fg_start[1] + s.velocity[1] * t0 + s.fg_size / 2.0
        if not self._inside_shape(x - (s.fg_start[0] + s.velocity[0] * t0),
                                  y - (s.fg_start[1] + s.velocity[1] * t0)):
            return (x, y)  # background is static
        dx, dy = x - cx0, y - cy0
        if s.rotation:
            a = np.deg2rad(s.rotation * (t - t0))
            dx, dy = dx * np.cos(a) - dy * np.sin(a), dx * np.sin(a) + dy * np.cos(a)
        cx = s.fg_start[0] + s.velocity[0] * t + s.fg_size / 2.0
        cy = s.fg_start[1] + s.velocity[1] * t + s.fg_size / 2.0
        return (cx + dx, cy + dy)

    def _inside_shape(self, lx: float, ly: float) -> bool:
        s = self.spec
        if s.shape == "rect":
            return 0 <= lx < s.fg_size and 0 <= ly < s.fg_size
        r = s.fg_size / 2.0
        return (lx - r) ** 2 + (ly - r) ** 2 <= r * r


def generate_synthetic(spec: SyntheticSpec, seed: int = 0) -> SyntheticClip:
    """Analytic textured foreground translating (and optionally rotating)
    over a static textured background, with exact flow and masks."""
    spec.validate()
    h, w, n = spec.height, spec.width, spec.n_frames
    bg = value_noise(h, w, spec.bg_seed)
    fg_tex = value_noise(spec.fg_size, spec.fg_size, spec.fg_seed, cells=4)

    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    frames = np.zeros((n, h, w, 3), np.float32)
    masks = np.zeros((n, h, w), bool)
    flow = np.zeros((max(n - 1, 0), h, w, 2), np.float32)
    valid = np.ones_like(flow[..., 0], dtype=bool) if n > 1 else np.ones((0, h, w), bool)

    for t in range(n):
        ox = spec.fg_start[0] + spec.velocity[0] * t
        oy = spec.fg_start[1] + spec.velocity[1] * t
        lx = xs - ox
        ly = ys - oy
        if spec.rotation:
            a = np.deg2rad(-spec.rotation * t)
            c0 = spec.fg_size / 2.0
            rx = (lx - c0) * np.cos(a) - (ly - c0) * np.sin(a) + c0
            ry = (lx - c0) * np.sin(a) + (ly - c0) * np.cos(a) + c0
            lx, ly = rx, ry
        if spec.shape == "rect":
            inside = (lx >= 0) & (lx < spec.fg_size) & (ly >= 0) & (ly < spec.fg_size)
        else:
            r = spec.fg_size / 2.0
            inside = (lx - r) ** 2 + (ly - r) ** 2 <= r * r
        frames[t] = bg
        tex = _sample_bilinear(fg_tex, np.clip(lx, 0, spec.fg_size - 1),
                               np.clip(ly, 0, spec.fg_size - 1))
        frames[t][inside] = tex[inside]
        masks[t] = inside
        if t < n - 1:
            fx = np.where(inside, spec.velocity[0], 0.0)
            fy = np.where(inside, spec.velocity[1], 0.0)
            if spec.rotation:
                # rotation about the moving center adds a tangential component
                a = np.deg2rad(spec.rotation)
                cx = ox + spec.fg_size / 2.0
                cy = oy + spec.fg_size / 2.0
                rx = (xs - cx) * np.cos(a) - (ys - cy) * np.sin(a) + cx
                ry = (xs - cx) * np.sin(a) + (ys - cy) * np.cos(a) + cy
                fx = np.where(inside, rx - xs + spec.velocity[0], fx)
                fy = np.where(inside, ry - ys + spec.velocity[1], fy)
            flow[t, ..., 0] = fx
            flow[t, ..., 1] = fy
    clip = VideoClip(frames=frames, flow=flow, flow_valid=valid, masks=masks)
    return SyntheticClip(clip=clip, spec=spec)


def _sample_bilinear(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    x0 = np.clip(np.floor(x).astype(int), 0, w - 1)
    y0 = np.clip(np.floor(y).astype(int), 0, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    return ((img[y0, x0] * (1 - fx) + img[y0, x1] * fx) * (1 - fy)
            + (img[y1, x0] * (1 - fx) + img[y1, x1] * fx) * fy).astype(np.float32)
