"""Losses, batch sampling and the two-phase training schedule.

Forward maps, opacity and atlas train together first; inverse maps train
afterwards against gradient-detached forward outputs.
"""

from __future__ import annotations

import csv
import json
import time
from collections import deque
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import AdamOptimizer, ContractViolation, ConfigurationError, Tensor
from .media import VideoClip
from .model import BG, FG, LAYERS, SUBSQUARE, ModelBundle


class TrainingDiverged(RuntimeError):
    """A loss term went NaN; the message names the term."""


@dataclass
class LossWeights:
    w_recon: float = 1.0
    w_rigid: float = 0.05
    w_flow: float = 0.5
    w_sparse: float = 0.01
    w_alpha_bootstrap: float = 0.1
    # anchors each forward map to an axis-aligned placement of the frame in
    # its sub-square early on; prevents the maps from collapsing to a tiny
    # atlas region (a uniform contraction is a similarity, so rigidity alone
    # does not forbid it)
    w_map_bootstrap: float = 3.0
    bootstrap_iters: int = 1000

    def __post_init__(self):
        for name in ("w_recon", "w_rigid", "w_flow", "w_sparse",
                     "w_alpha_bootstrap", "w_map_bootstrap"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative")


@dataclass
class TrainConfig:
    iters_forward: int = 3000
    iters_inverse: int = 1500
    batch: int = 2048
    seed: int = 0
    snapshot_interval: int = 50
    lr_hash: float = 1e-2
    lr_mlp: float = 1e-3
    sparsity_samples: int = 256
    # regularizers run on batch subsets; 0 means the whole batch
    rigidity_samples: int = 512
    consistency_samples: int = 1024
    weights: LossWeights = field(default_factory=LossWeights)
    early_stop: bool = True
    early_stop_window: int = 500
    early_stop_min_iters: int = 2000

    @classmethod
    def full_scale(cls) -> "TrainConfig":
        return cls(iters_forward=12000, iters_inverse=3000, batch=10000,
                   weights=LossWeights(bootstrap_iters=4000))

    def to_json(self, path):
        Path(path).write_text(json.dumps(asdict(self), indent=2))

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        raw = json.loads(Path(path).read_text())
        weights = LossWeights(**raw.pop("weights", {}))
        return cls(weights=weights, **raw)


@dataclass
class TrainState:
    iteration: int = 0
    phase: str = "forward"
    history: deque = field(default_factory=lambda: deque(maxlen=20000))
    seed: int = 0

    def export_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "recon", "rigid", "flow",
                             "sparse", "alpha", "iters_per_sec"])
            for row in self.history:
                writer.writerow([row["iteration"], row["recon"], row["rigid"],
                                 row["flow"], row["sparse"], row["alpha"],
                                 row["iters_per_sec"]])


# -- sampling ---------------------------------------------------------------

def sample_batch(clip: VideoClip, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform over all H*W*N pixel coordinates; returns [n, 3] (x, y, t)."""
    if clip.n_frames == 0 or n < 1:
        raise ContractViolation("sample_batch needs a non-empty clip and n >= 1")
    flat = rng.integers(0, clip.width * clip.height * clip.n_frames, size=n)
    t, rem = np.divmod(flat, clip.width * clip.height)
    y, x = np.divmod(rem, clip.width)
    return np.column_stack([x, y, t]).astype(np.float64)


def _norm(model: ModelBundle, xyt: np.ndarray) -> np.ndarray:
    return model.normalize_xyt(xyt)


# -- losses -------------------------------------------------------------------

def reconstruction_loss(batch: np.ndarray, clip: VideoClip, model: ModelBundle,
                        rgb_pred: Tensor | None = None) -> Tensor:
    """Mean squared L2 (summed over channels) against the source pixels."""
    if len(batch) == 0:
        raise ContractViolation("reconstruction_loss needs a non-empty batch")
    if rgb_pred is None:
        rgb_pred, _, _, _ = model.reconstruct_pixel_t(_norm(model, batch))
    xi = batch[:, 0].astype(int)
    yi = batch[:, 1].astype(int)
    ti = batch[:, 2].astype(int)
    target = Tensor(clip.frames[ti, yi, xi])
    diff = rgb_pred - target
    return (diff * diff).sum(axis=1).mean()


def rigidity_loss(batch: np.ndarray, model: ModelBundle, layer: str,
                  base_uv: Tensor | None = None) -> Tensor:
    """Penalizes local pixel->atlas Jacobians that are not similarities.

    Finite differences with a 1-pixel step; derivatives taken in normalized
    coordinates so both columns are comparable.
    """
    c = model.config
    if base_uv is None:
        base_uv = model.forward_map_t(_norm(model, batch), layer)
    dx = batch + np.array([1.0, 0.0, 0.0])
    dy = batch + np.array([0.0, 1.0, 0.0])
    uv_dx = model.forward_map_t(_norm(model, dx), layer)
    uv_dy = model.forward_map_t(_norm(model, dy), layer)
    jx = (uv_dx - base_uv) * float(c.width - 1)
    jy = (uv_dy - base_uv) * float(c.height - 1)
    return _similarity_residual(jx, jy)


def _similarity_residual(jx: Tensor, jy: Tensor) -> Tensor:
    nx = (jx * jx).sum(axis=1)
    ny = (jy * jy).sum(axis=1)
    dot = (jx * jy).sum(axis=1)
    diff = nx - ny
    return (diff * diff + dot * dot).mean()


def consistency_loss(batch: np.ndarray, clip: VideoClip, model: ModelBundle,
                     layer: str, base_uv: Tensor | None = None) -> Tensor:
    """Flow-corresponding pixels in consecutive frames share atlas coords."""
    if clip.flow.shape[0] != clip.n_frames - 1:
        raise ConfigurationError("clip has no forward flow for frames 0..N-2")
    ti = batch[:, 2].astype(int)
    keep = ti < clip.n_frames - 1
    if keep.any():
        xi = batch[keep, 0].astype(int)
        yi = batch[keep, 1].astype(int)
        tk = ti[keep]
        keep2 = clip.flow_valid[tk, yi, xi]
        xi, yi, tk = xi[keep2], yi[keep2], tk[keep2]
    else:
        keep2 = np.zeros(0, bool)
    if keep.sum() == 0 or keep2.sum() == 0:
        return Tensor(np.zeros((), np.float32))
    f = clip.flow[tk, yi, xi]
    src = np.column_stack([xi, yi, tk]).astype(np.float64)
    dst = np.column_stack([
        np.clip(xi + f[:, 0], 0, clip.width - 1),
        np.clip(yi + f[:, 1], 0, clip.height - 1),
        tk + 1]).astype(np.float64)
    if base_uv is None:
        uv_src = model.forward_map_t(_norm(model, src), layer)
    else:
        uv_src = base_uv[np.flatnonzero(keep)[keep2]]
    uv_dst = model.forward_map_t(_norm(model, dst), layer)
    d = uv_src - uv_dst
    return (d * d).sum(axis=1).mean()


def sparsity_loss(model: ModelBundle, k: int, rng: np.random.Generator) -> Tensor:
    """Mean squared color magnitude at random foreground-atlas points."""
    if k < 1:
        raise ContractViolation("sparsity_loss needs k >= 1")
    uv = np.column_stack([rng.uniform(0.5, 1.0, k), rng.uniform(0.0, 1.0, k)])
    rgb = model.atlas_color_t(uv.astype(np.float32))
    return (rgb * rgb).sum(axis=1).mean()


def alpha_bootstrap_loss(batch: np.ndarray, clip: VideoClip, model: ModelBundle,
                         alpha: Tensor | None = None, eps: float = 1e-6) -> Tensor:
    """Binary cross-entropy between opacity and the foreground mask."""
    if clip.masks is None:
        raise ConfigurationError("alpha bootstrap requires masks")
    xi = batch[:, 0].astype(int)
    yi = batch[:, 1].astype(int)
    ti = batch[:, 2].astype(int)
    target = clip.masks[ti, yi, xi].astype(np.float32)[:, None]
    if alpha is None:
        alpha = model.opacity_t(_norm(model, batch))
    a = alpha.clip(eps, 1.0 - eps)
    t = Tensor(target)
    bce = -(t * a.log() + (1.0 - t) * (1.0 - a).log())
    return bce.mean()


# -- early stopping -----------------------------------------------------------

def should_stop_early(state: TrainState, window: int = 500,
                      min_iters: int = 2000) -> bool:
    """Stop once the windowed mean consistency loss improves < 1%."""
    if state.iteration < max(min_iters, 2 * window):
        return False
    flows = [row["flow"] for row in state.history]
    if len(flows) < 2 * window:
        return False
    prev = float(np.mean(flows[-2 * window:-window]))
    cur = float(np.mean(flows[-window:]))
    if prev <= 0:
        return True
    return (prev - cur) < 0.01 * prev


# -- phases -------------------------------------------------------------------

def _check_finite(name: str, value: float):
    if not np.isfinite(value):
        raise TrainingDiverged(f"loss term {name!r} became non-finite ({value})")


def train_forward_phase(clip: VideoClip, model: ModelBundle,
                        config: TrainConfig,
                        on_progress=None, on_snapshot=None,
                        state: TrainState | None = None) -> TrainState:
    """Joint optimization of the forward maps, opacity and atlas networks."""
    w = config.weights
    if w.w_flow > 0 and clip.flow.shape[0] != clip.n_frames - 1:
        raise ConfigurationError("consistency loss enabled but clip has no flow")
    if w.w_alpha_bootstrap > 0 and clip.masks is None:
        raise ConfigurationError("alpha bootstrap enabled but clip has no masks")
    state = state or TrainState(seed=config.seed)
    rng = np.random.default_rng(config.seed)
    opt = AdamOptimizer(model.forward_phase_parameters,
                        lr_hash=config.lr_hash, lr_mlp=config.lr_mlp)
    t_last = time.perf_counter()
    for it in range(config.iters_forward):
        batch = sample_batch(clip, config.batch, rng)
        n = len(batch)
        norm = _norm(model, batch)

        # one fused forward-map evaluation per layer: base points, the two
        # rigidity offsets, and the flow-displaced next-frame points
        nr = min(config.rigidity_samples or n, n)
        rsub = rng.choice(n, size=nr, replace=False) if nr < n else np.arange(n)
        rbatch = batch[rsub]
        dx_n = _norm(model, rbatch + np.array([1.0, 0.0, 0.0]))
        dy_n = _norm(model, rbatch + np.array([0.0, 1.0, 0.0]))
        ti = batch[:, 2].astype(int)
        keep = ti < clip.n_frames - 1
        src_rows = np.flatnonzero(keep)
        xi, yi, tk = batch[keep, 0].astype(int), batch[keep, 1].astype(int), ti[keep]
        fvalid = clip.flow_valid[tk, yi, xi]
        xi, yi, tk = xi[fvalid], yi[fvalid], tk[fvalid]
        src_rows = src_rows[fvalid]
        nc = config.consistency_samples or len(xi)
        if len(xi) > nc:
            csub = rng.choice(len(xi), size=nc, replace=False)
            xi, yi, tk, src_rows = xi[csub], yi[csub], tk[csub], src_rows[csub]
        f = clip.flow[tk, yi, xi]
        dst = np.column_stack([np.clip(xi + f[:, 0], 0, clip.width - 1),
                               np.clip(yi + f[:, 1], 0, clip.height - 1),
                               tk + 1]).astype(np.float64)
        dst_n = _norm(model, dst)
        m = len(dst)
        query = np.concatenate([norm, dx_n, dy_n, dst_n], axis=0)

        uv, jx, jy, cons = {}, {}, {}, {}
        c = model.config
        for layer in LAYERS:
            out = model.forward_map_t(query, layer)
            uv[layer] = out[0:n]
            base_r = uv[layer][rsub]
            jx[layer] = (out[n:n + nr] - base_r) * float(c.width - 1)
            jy[layer] = (out[n + nr:n + 2 * nr] - base_r) * float(c.height - 1)
            if m:
                d = uv[layer][src_rows] - out[n + 2 * nr:n + 2 * nr + m]
                cons[layer] = (d * d).sum(axis=1).mean()
            else:
                cons[layer] = Tensor(np.zeros((), np.float32))

        alpha = model.opacity_t(norm)
        # one fused atlas evaluation: fg uv, bg uv, sparsity probes
        sp_uv = np.column_stack([rng.uniform(0.5, 1.0, config.sparsity_samples),
                                 rng.uniform(0.0, 1.0, config.sparsity_samples)]
                                ).astype(np.float32)
        atlas_in = ad.concat([uv[FG], uv[BG], Tensor(sp_uv)], axis=0)
        colors = model.atlas_color_t(atlas_in)
        rgb = alpha * colors[0:n] + (1.0 - alpha) * colors[n:2 * n]
        sp_rgb = colors[2 * n:]

        terms: dict[str, Tensor] = {}
        terms["recon"] = reconstruction_loss(batch, clip, model, rgb_pred=rgb)
        terms["rigid"] = _similarity_residual(jx[FG], jy[FG]) \
            + _similarity_residual(jx[BG], jy[BG])
        terms["flow"] = cons[FG] + cons[BG]
        terms["sparse"] = (sp_rgb * sp_rgb).sum(axis=1).mean()
        bootstrap_on = state.iteration < w.bootstrap_iters and w.w_alpha_bootstrap > 0
        terms["alpha"] = alpha_bootstrap_loss(batch, clip, model, alpha=alpha) \
            if bootstrap_on else Tensor(np.zeros((), np.float32))
        # Anchor the maps to an axis-aligned placement of the frame in the
        # layer sub-square: every sample during the bootstrap window, and the
        # t=0 samples for the whole phase.  The permanent t=0 anchor fixes the
        # atlas gauge while the consistency loss propagates it to later frames,
        # so moving content still ends up motion-compensated.
        if w.w_map_bootstrap > 0:
            if state.iteration < w.bootstrap_iters:
                row_w = np.ones(n, np.float32)
            else:
                row_w = (batch[:, 2] == 0).astype(np.float32)
        else:
            row_w = np.zeros(n, np.float32)
        if row_w.any():
            mterm = None
            for layer in LAYERS:
                u0, u1 = SUBSQUARE[layer]
                target = Tensor(np.column_stack(
                    [u0 + (u1 - u0) * norm[:, 0], norm[:, 1]]).astype(np.float32))
                d = uv[layer] - target
                part = ((d * d).sum(axis=1) * Tensor(row_w)).mean()
                mterm = part if mterm is None else mterm + part
            terms["map"] = mterm
        else:
            terms["map"] = Tensor(np.zeros((), np.float32))

        for name, t in terms.items():
            _check_finite(name, float(t.values))
        total = (w.w_recon * terms["recon"] + w.w_rigid * terms["rigid"]
                 + w.w_flow * terms["flow"] + w.w_sparse * terms["sparse"])
        if bootstrap_on:
            total = total + w.w_alpha_bootstrap * terms["alpha"]
        total = total + w.w_map_bootstrap * terms["map"]
        ad.backward(total)
        opt.step()

        state.iteration += 1
        now = time.perf_counter()
        ips = 1.0 / max(now - t_last, 1e-9)
        t_last = now
        row = {"iteration": state.iteration, "iters_per_sec": ips,
               **{k: float(t.values) for k, t in terms.items()}}
        state.history.append(row)
        if on_progress:
            on_progress(row)
        if on_snapshot and state.iteration % config.snapshot_interval == 0:
            on_snapshot(model.snapshot())
        if config.early_stop and should_stop_early(
                state, config.early_stop_window, config.early_stop_min_iters):
            break
    model.forward_trained = True
    if on_snapshot:
        on_snapshot(model.snapshot())
    return state


def train_inverse_phase(clip: VideoClip, model: ModelBundle,
                        config: TrainConfig,
                        on_progress=None, on_snapshot=None,
                        state: TrainState | None = None) -> TrainState:
    """Supervise inverse maps with detached forward-map outputs."""
    if not model.forward_trained:
        raise ContractViolation("inverse phase requires a completed forward phase")
    state = state or TrainState(seed=config.seed)
    state.phase = "inverse"
    rng = np.random.default_rng(config.seed + 1)
    opt = AdamOptimizer(model.inverse_phase_parameters,
                        lr_hash=config.lr_hash, lr_mlp=config.lr_mlp)
    c = model.config
    t_last = time.perf_counter()
    for it in range(config.iters_inverse):
        batch = sample_batch(clip, config.batch, rng)
        norm = _norm(model, batch)
        t_norm = norm[:, 2:3]
        target_xy = Tensor(norm[:, 0:2])
        total = None
        for layer in LAYERS:
            uv = model.forward_map_t(norm, layer).detach()
            uvt = Tensor(np.concatenate([uv.values, t_norm], axis=1))
            pred = model.inverse_map_t(uvt, layer)
            d = pred - target_xy
            loss = (d * d).sum(axis=1).mean()
            total = loss if total is None else total + loss
        _check_finite("inverse", float(total.values))
        ad.backward(total)
        opt.step()
        state.iteration += 1
        now = time.perf_counter()
        row = {"iteration": state.iteration, "recon": 0.0, "rigid": 0.0,
               "flow": 0.0, "sparse": 0.0, "alpha": 0.0,
               "inverse": float(total.values),
               "iters_per_sec": 1.0 / max(now - t_last, 1e-9)}
        t_last = now
        state.history.append(row)
        if on_progress:
            on_progress(row)
        if on_snapshot and state.iteration % config.snapshot_interval == 0:
            on_snapshot(model.snapshot())
    model.inverse_trained = True
    if on_snapshot:
        on_snapshot(model.snapshot())
    return state


def train(clip: VideoClip, model: ModelBundle, config: TrainConfig,
          on_progress=None, on_snapshot=None) -> TrainState:
    state = train_forward_phase(clip, model, config, on_progress, on_snapshot)
    return train_inverse_phase(clip, model, config, on_progress, on_snapshot,
                               state=state)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    mse = float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
    if mse == 0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


def reconstruct_frames(model: ModelBundle, clip: VideoClip,
                       frames: range | None = None) -> np.ndarray:
    frames = frames if frames is not None else range(clip.n_frames)
    h, w = clip.height, clip.width
    out = np.zeros((len(frames), h, w, 3), np.float32)
    ys, xs = np.mgrid[0:h, 0:w]
    for i, t in enumerate(frames):
        xyt = np.column_stack([xs.ravel(), ys.ravel(),
                               np.full(h * w, t)]).astype(np.float64)
        out[i] = model.reconstruct_pixel(xyt).reshape(h, w, 3)
    return out


# -- single-image fitting (encoding convergence comparison) -------------------

def fit_image(image: np.ndarray, encoder, mlp, iters: int, batch: int,
              seed: int, lr_hash: float = 1e-2, lr_mlp: float = 1e-3):
    """Fit rgb = mlp(encoder(xy)) to an image; returns per-iteration losses.

    `encoder` maps an [n,2] float array to a Tensor; `mlp` is an MLP whose
    input dim matches the encoder output.
    """
    h, w = image.shape[:2]
    rng = np.random.default_rng(seed)
    params = list(getattr(encoder, "parameters", [])) + mlp.parameters
    opt = AdamOptimizer(params, lr_hash=lr_hash, lr_mlp=lr_mlp)
    losses = []
    for _ in range(iters):
        idx = rng.integers(0, h * w, size=batch)
        ys, xs = np.divmod(idx, w)
        pts = np.column_stack([xs / max(w - 1, 1), ys / max(h - 1, 1)]).astype(np.float32)
        pred = ad.sigmoid(mlp(encoder(pts)))
        target = Tensor(image[ys, xs].astype(np.float32))
        d = pred - target
        loss = (d * d).sum(axis=1).mean()
        ad.backward(loss)
        opt.step()
        losses.append(float(loss.values))
    return losses
