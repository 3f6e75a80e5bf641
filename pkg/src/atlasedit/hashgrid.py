"""Multiresolution hash-grid positional encoding for 2-D and 3-D points.

Each level stores a trainable feature table indexed either densely (when the
level's vertex grid fits in the table) or through a spatial XOR hash. A point
is encoded by d-linear interpolation of the surrounding vertex features at
every level, concatenated into one feature vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import exp, log

import numpy as np

from .autodiff import ConfigurationError, ContractViolation, Parameter, Tensor

try:
    from numba import njit
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def deco(fn):
            return fn
        return deco if not (args and callable(args[0])) else args[0]

# per-axis hash primes; axis 0 is multiplied by 1 for cache coherence
_HASH_PRIMES = (1, 2654435761, 805459861)


@njit(cache=True)
def _interp_level(pts, res, table, dense, table_size, out, idx_out, w_out):
    """d-linear interpolation of one level; fills out/idx_out/w_out in place."""
    n, dims = pts.shape
    n_corners = 1 << dims
    n_feats = table.shape[1]
    for i in range(n):
        cell = np.empty(dims, np.int64)
        frac = np.empty(dims, table.dtype)
        for a in range(dims):
            pos = pts[i, a] * res
            c = int(pos)
            if c > res - 1:
                c = res - 1
            cell[a] = c
            frac[a] = pos - c
        for corner in range(n_corners):
            weight = 1.0
            h = 0
            if dense:
                stride = 1
                for a in range(dims):
                    bit = (corner >> a) & 1
                    h += (cell[a] + bit) * stride
                    stride *= res + 1
                    weight *= frac[a] if bit else 1.0 - frac[a]
            else:
                for a in range(dims):
                    bit = (corner >> a) & 1
                    v = cell[a] + bit
                    if a == 0:
                        h = v
                    elif a == 1:
                        h ^= v * 2654435761
                    else:
                        h ^= v * 805459861
                    weight *= frac[a] if bit else 1.0 - frac[a]
                h &= table_size - 1
            idx_out[i, corner] = h
            w_out[i, corner] = weight
            for f in range(n_feats):
                out[i, f] += table[h, f] * weight


@njit(cache=True)
def _scatter_level(idx, w, g, table_grad):
    n, n_corners = idx.shape
    n_feats = g.shape[1]
    for i in range(n):
        for c in range(n_corners):
            for f in range(n_feats):
                table_grad[idx[i, c], f] += w[i, c] * g[i, f]


@dataclass(frozen=True)
class HashGridConfig:
    dims: int
    levels: int = 8
    table_size: int = 2 ** 14
    features: int = 2
    n_min: int = 16
    n_max: int = 512

    def __post_init__(self):
        if self.dims not in (2, 3):
            raise ConfigurationError(f"dims must be 2 or 3, got {self.dims}")
        if self.levels < 1 or self.features < 1:
            raise ConfigurationError("levels and features must be >= 1")
        if self.table_size & (self.table_size - 1):
            raise ConfigurationError(f"table_size must be a power of two, got {self.table_size}")
        if self.n_min > self.n_max:
            raise ConfigurationError(f"n_min {self.n_min} exceeds n_max {self.n_max}")

    @property
    def growth(self) -> float:
        if self.levels == 1:
            return 1.0
        return exp((log(self.n_max) - log(self.n_min)) / (self.levels - 1))

    def resolution(self, level: int) -> int:
        if not 0 <= level < self.levels:
            raise ContractViolation(f"level {level} out of range [0, {self.levels})")
        return int(self.n_min * self.growth ** level)

    @property
    def output_dim(self) -> int:
        return self.levels * self.features

    def rows(self, level: int) -> int:
        """Table rows at a level: dense vertex count or the hash table size."""
        dense = (self.resolution(level) + 1) ** self.dims
        return min(self.table_size, dense)

    def to_header(self, prefix: str) -> dict[str, int]:
        return {f"{prefix}.{k}": getattr(self, k)
                for k in ("dims", "levels", "table_size", "features", "n_min", "n_max")}

    @classmethod
    def from_header(cls, header: dict, prefix: str) -> "HashGridConfig":
        return cls(**{k: int(header[f"{prefix}.{k}"])
                      for k in ("dims", "levels", "table_size", "features", "n_min", "n_max")})


def hash_index(cell: np.ndarray, level: int, config: HashGridConfig) -> np.ndarray:
    """Map integer vertex coordinates [..., dims] to table row indices."""
    res = config.resolution(level)
    cell = np.asarray(cell, dtype=np.int64)
    if (res + 1) ** config.dims <= config.table_size:
        # dense regime: row-major, x fastest
        idx = cell[..., 0]
        stride = res + 1
        for axis in range(1, config.dims):
            idx = idx + cell[..., axis] * stride ** axis
        return idx
    idx = cell[..., 0] * _HASH_PRIMES[0]
    for axis in range(1, config.dims):
        idx = idx ^ (cell[..., axis] * _HASH_PRIMES[axis])
    return idx % config.table_size


@dataclass
class HashGrid:
    config: HashGridConfig
    tables: list[Parameter] = field(default_factory=list)

    @classmethod
    def create(cls, config: HashGridConfig, name: str, rng: np.random.Generator,
               init_scale: float = 1e-4, dtype=None) -> "HashGrid":
        tables = [
            Parameter(rng.uniform(-init_scale, init_scale, size=(config.rows(l), config.features)),
                      name=f"{name}.table{l}", group="hash", dtype=dtype)
            for l in range(config.levels)
        ]
        return cls(config=config, tables=tables)

    @property
    def parameters(self) -> list[Parameter]:
        return list(self.tables)

    def __call__(self, points) -> Tensor:
        return self.encode(points)

    def encode(self, points) -> Tensor:
        """Encode points in [0,1]^dims into an [n, levels*features] tensor.

        Gradients flow to the touched table rows with the interpolation
        weights, and to the points themselves when they are a Tensor that
        requires grad.
        """
        cfg = self.config
        pts_tensor = points if isinstance(points, Tensor) else None
        raw = points.values if pts_tensor is not None else np.asarray(points)
        if raw.ndim != 2 or raw.shape[1] != cfg.dims:
            raise ContractViolation(
                f"encode expects [n, {cfg.dims}] points, got {raw.shape}")
        work_dtype = self.tables[0].values.dtype
        pts = np.clip(raw, 0.0, 1.0).astype(work_dtype, copy=False)
        pts = np.ascontiguousarray(pts)
        n = pts.shape[0]
        n_corners = 1 << cfg.dims
        F = cfg.features

        out_values = np.zeros((n, cfg.levels * F), work_dtype)
        saved = []  # per level: (idx [n,C], w [n,C], res)
        for l in range(cfg.levels):
            res = cfg.resolution(l)
            dense = (res + 1) ** cfg.dims <= cfg.table_size
            idx = np.empty((n, n_corners), np.int64)
            w = np.empty((n, n_corners), work_dtype)
            if _HAVE_NUMBA:
                _interp_level(pts, res, self.tables[l].values, dense,
                              cfg.table_size, out_values[:, l * F:(l + 1) * F],
                              idx, w)
            else:
                self._interp_level_np(pts, l, out_values[:, l * F:(l + 1) * F], idx, w)
            saved.append((idx, w, res))

        parents = [t.tensor for t in self.tables]
        if pts_tensor is not None:
            parents.append(pts_tensor)
        out = Tensor(out_values, parents=tuple(parents))
        tables = self.tables
        corner_bits = np.array(
            [[(c >> a) & 1 for a in range(cfg.dims)] for c in range(n_corners)],
            dtype=np.int64)
        inside = (raw > 0.0) & (raw < 1.0)  # clamp kills point grads at the border

        def backward(g):
            g = np.ascontiguousarray(g, dtype=work_dtype)
            for l, (idx, w, res) in enumerate(saved):
                g_l = g[:, l * F:(l + 1) * F]
                table = tables[l].tensor
                if table.requires_grad:
                    if table.grad is None:
                        table.grad = np.zeros_like(table.values)
                    if _HAVE_NUMBA:
                        _scatter_level(idx, w, g_l, table.grad)
                    else:
                        contrib = w[:, :, None] * g_l[:, None, :]
                        for f in range(F):
                            table.grad[:, f] += np.bincount(
                                idx.ravel(), weights=contrib[:, :, f].ravel(),
                                minlength=table.values.shape[0]).astype(table.grad.dtype)
                if pts_tensor is not None and pts_tensor.requires_grad:
                    # dw/dfrac_a = sign * product of the other axes' weights
                    pos = pts * res
                    cell = np.minimum(np.floor(pos), res - 1)
                    frac = (pos - cell).astype(work_dtype)
                    axis_w = np.where(corner_bits[None, :, :] == 1,
                                      frac[:, None, :], 1.0 - frac[:, None, :])
                    feats = tables[l].values[idx]                  # [n, C, F]
                    dot = (feats * g_l[:, None, :]).sum(axis=2)    # [n, C]
                    gpt = np.zeros_like(raw)
                    for a in range(cfg.dims):
                        others = np.prod(np.delete(axis_w, a, axis=2), axis=2)
                        sign = np.where(corner_bits[None, :, a] == 1, 1.0, -1.0)
                        gpt[:, a] = (dot * sign * others).sum(axis=1) * res
                    pts_tensor._accumulate((gpt * inside).astype(raw.dtype))
        out._backward = backward
        return out

    def _interp_level_np(self, pts: np.ndarray, level: int, out: np.ndarray,
                         idx_out: np.ndarray, w_out: np.ndarray):
        """Pure-numpy fallback mirroring _interp_level."""
        cfg = self.config
        res = cfg.resolution(level)
        n_corners = 1 << cfg.dims
        corner_bits = np.array(
            [[(c >> a) & 1 for a in range(cfg.dims)] for c in range(n_corners)],
            dtype=np.int64)
        pos = pts * res
        cell = np.minimum(np.floor(pos), res - 1).astype(np.int64)
        frac = (pos - cell).astype(pts.dtype)
        corners = cell[:, None, :] + corner_bits[None, :, :]
        axis_w = np.where(corner_bits[None, :, :] == 1,
                          frac[:, None, :], 1.0 - frac[:, None, :])
        w_out[:] = axis_w.prod(axis=2)
        idx_out[:] = hash_index(
            corners.reshape(-1, cfg.dims), level, cfg).reshape(pts.shape[0], n_corners)
        feats = self.tables[level].values[idx_out]
        out[:] = (feats * w_out[:, :, None]).sum(axis=1)


def sinusoidal_encode(points, frequencies: int) -> Tensor:
    """Octave sin/cos features per axis; output dim = dims * 2 * frequencies."""
    if frequencies < 1:
        raise ConfigurationError("frequencies must be >= 1")
    pts_tensor = points if isinstance(points, Tensor) else None
    raw = points.values if pts_tensor is not None else np.asarray(points)
    n, dims = raw.shape
    freqs = (2.0 ** np.arange(frequencies)) * np.pi        # [K]
    phase = raw[:, :, None] * freqs[None, None, :]          # [n, dims, K]
    out_values = np.concatenate(
        [np.sin(phase).reshape(n, -1), np.cos(phase).reshape(n, -1)], axis=1
    ).astype(raw.dtype)
    parents = (pts_tensor,) if pts_tensor is not None else ()
    out = Tensor(out_values, parents=parents)

    def backward(g):
        if pts_tensor is None or not pts_tensor.requires_grad:
            return
        half = dims * frequencies
        g_sin = g[:, :half].reshape(n, dims, frequencies)
        g_cos = g[:, half:].reshape(n, dims, frequencies)
        d = (g_sin * np.cos(phase) - g_cos * np.sin(phase)) * freqs[None, None, :]
        pts_tensor._accumulate(d.sum(axis=2).astype(raw.dtype))
    out._backward = backward
    return out
