"""Point trajectories: forward-map once, inverse-map to every frame."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ContractViolation
from .model import FG, ModelBundle


@dataclass
class Trajectory:
    source: tuple[float, float, int]       # (x, y, t0)
    layer: str
    t_start: int
    t_end: int
    uv: tuple[float, float]                # atlas anchor
    points: np.ndarray                     # [t_end - t_start + 1, 2]
    out_of_frame: np.ndarray               # bool per point

    def position(self, t: int) -> tuple[float, float]:
        return tuple(self.points[t - self.t_start])

    def to_json(self) -> list[dict]:
        return [{"t": self.t_start + i,
                 "x": float(self.points[i, 0]), "y": float(self.points[i, 1]),
                 "out_of_frame": bool(self.out_of_frame[i])}
                for i in range(len(self.points))]


def track_point(x: float, y: float, t0: int, frame_range, layer: str,
                model: ModelBundle, margin: float = 0.5) -> Trajectory:
    """Trajectory of the atlas point under (x, y, t0) across frame_range.

    Points are emitted for every frame; frames where the unclamped prediction
    leaves the frame bounds get the out_of_frame flag instead of truncation.
    """
    if not model.forward_trained or not model.inverse_trained:
        raise ContractViolation("tracking requires trained forward and inverse maps")
    c = model.config
    if not (0 <= x < c.width and 0 <= y < c.height and 0 <= t0 < c.n_frames):
        raise ContractViolation(f"track source ({x},{y},{t0}) outside clip bounds")
    frames = sorted(frame_range)
    t_start, t_end = frames[0], frames[-1]
    uv = model.forward_map(np.array([[x, y, t0]]), layer)[0]

    n = t_end - t_start + 1
    uvt = np.column_stack([
        np.repeat(uv[None, :], n, axis=0),
        (np.arange(t_start, t_end + 1) / max(c.n_frames - 1, 1))]).astype(np.float32)
    xy_norm = model.inverse_map_t(uvt, layer).values
    xy = xy_norm * np.array([c.width - 1, c.height - 1], np.float32)
    oof = ((xy[:, 0] < -margin) | (xy[:, 0] > c.width - 1 + margin)
           | (xy[:, 1] < -margin) | (xy[:, 1] > c.height - 1 + margin))
    xy = np.clip(xy, 0.0, [c.width - 1, c.height - 1])
    return Trajectory(source=(x, y, t0), layer=layer, t_start=t_start,
                      t_end=t_end, uv=tuple(uv), points=xy.astype(np.float64),
                      out_of_frame=oof)
