"""The six coordinate networks and pixel reconstruction by alpha blending.

Two forward mappers take normalized (x, y, t) to atlas coordinates (u, v),
each squashed into its own half of the shared atlas domain (foreground
[0.5,1]x[0,1], background [0,0.5]x[0,1]). Two inverse mappers take (u, v, t)
back to pixel coordinates. One opacity network gives the soft foreground
membership and one atlas network stores color over the atlas domain.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ContractViolation, Parameter, Tensor
from .hashgrid import HashGrid, HashGridConfig

FG, BG = "fg", "bg"
LAYERS = (FG, BG)

# foreground owns u in [0.5, 1], background u in [0, 0.5]; v spans [0, 1]
SUBSQUARE = {FG: (0.5, 1.0), BG: (0.0, 0.5)}


def layer_subsquare(layer: str) -> tuple[float, float, float, float]:
    u0, u1 = SUBSQUARE[layer]
    return u0, u1, 0.0, 1.0


class MLP:
    """Fixed-shape fully connected net: ReLU hidden layers, linear output."""

    def __init__(self, name: str, in_dim: int, out_dim: int,
                 hidden: int = 64, depth: int = 2,
                 rng: np.random.Generator | None = None, dtype=None):
        rng = rng or np.random.default_rng(0)
        dims = [in_dim] + [hidden] * depth + [out_dim]
        self.weights: list[Parameter] = []
        self.biases: list[Parameter] = []
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            scale = np.sqrt(2.0 / a)
            self.weights.append(Parameter(
                rng.normal(0.0, scale, size=(a, b)), name=f"{name}.w{i}", dtype=dtype))
            self.biases.append(Parameter(
                np.zeros(b), name=f"{name}.b{i}", dtype=dtype))

    @property
    def parameters(self) -> list[Parameter]:
        return self.weights + self.biases

    def __call__(self, x: Tensor) -> Tensor:
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = ad.affine(x, w, b)
            if i < len(self.weights) - 1:
                x = ad.relu(x)
        return x


class CoordinateNetwork:
    """Hash-grid encoding feeding a small MLP head."""

    def __init__(self, name: str, grid_config: HashGridConfig, out_dim: int,
                 rng: np.random.Generator, hidden: int = 64, depth: int = 2,
                 dtype=None):
        self.name = name
        self.grid = HashGrid.create(grid_config, f"{name}.grid", rng, dtype=dtype)
        self.mlp = MLP(f"{name}.mlp", grid_config.output_dim, out_dim,
                       hidden=hidden, depth=depth, rng=rng, dtype=dtype)

    @property
    def parameters(self) -> list[Parameter]:
        return self.grid.parameters + self.mlp.parameters

    def __call__(self, points) -> Tensor:
        return self.mlp(self.grid.encode(points))


@dataclass(frozen=True)
class BundleConfig:
    width: int
    height: int
    n_frames: int
    grid3d: HashGridConfig
    grid_map: HashGridConfig
    grid_inverse: HashGridConfig
    grid_atlas: HashGridConfig
    hidden: int = 64
    depth: int = 2

    @classmethod
    def for_clip(cls, width: int, height: int, n_frames: int,
                 levels: int = 8, levels3d: int | None = None,
                 table_size: int = 2 ** 14, features: int = 2,
                 n_min: int = 16, atlas_n_max: int = 512,
                 hidden: int = 64, depth: int = 2,
                 map_levels: int | None = None, map_n_min: int = 2,
                 map_n_max: int = 16) -> "BundleConfig":
        n_max3d = max(width, height, n_frames)
        l3 = levels3d if levels3d is not None else levels
        g3 = HashGridConfig(3, l3, table_size, features, n_min, max(n_min, n_max3d))
        # Mapping networks model scene motion, which is smooth at well below
        # pixel scale; an (opt-in) coarse grid keeps them and their inverses
        # from developing pixel-frequency wiggle that the fine opacity/atlas
        # grids need but the maps must not have.
        if map_levels is not None:
            gm = HashGridConfig(3, map_levels, table_size, features,
                                map_n_min, max(map_n_min, map_n_max))
        else:
            gm = g3
        g2 = HashGridConfig(2, levels, table_size, features, n_min, atlas_n_max)
        return cls(width, height, n_frames, grid3d=g3, grid_map=gm,
                   grid_inverse=gm, grid_atlas=g2, hidden=hidden, depth=depth)

    @classmethod
    def desk_scale(cls, width: int, height: int, n_frames: int) -> "BundleConfig":
        """Small profile that keeps CPU training in minutes."""
        return cls.for_clip(width, height, n_frames, levels=6,
                            table_size=2 ** 12, features=2, n_min=16,
                            atlas_n_max=256, map_levels=4)


class ModelBundle:
    """The six networks plus query helpers over a fixed clip geometry."""

    def __init__(self, config: BundleConfig, seed: int = 0, dtype=None):
        self.config = config
        rng = np.random.default_rng(seed)
        c = config
        self.forward_net = {
            FG: CoordinateNetwork("forward_fg", c.grid_map, 2, rng, c.hidden, c.depth, dtype),
            BG: CoordinateNetwork("forward_bg", c.grid_map, 2, rng, c.hidden, c.depth, dtype),
        }
        self.inverse_net = {
            FG: CoordinateNetwork("inverse_fg", c.grid_inverse, 2, rng, c.hidden, c.depth, dtype),
            BG: CoordinateNetwork("inverse_bg", c.grid_inverse, 2, rng, c.hidden, c.depth, dtype),
        }
        self.opacity_net = CoordinateNetwork("opacity", c.grid3d, 1, rng, c.hidden, c.depth, dtype)
        self.atlas_net = CoordinateNetwork("atlas", c.grid_atlas, 3, rng, c.hidden, c.depth, dtype)
        self.forward_eval_count = 0  # instrumented: points fed to forward_map
        self.inverse_trained = False
        self.forward_trained = False

    # -- parameter plumbing -------------------------------------------

    @property
    def forward_phase_parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        for net in (self.forward_net[FG], self.forward_net[BG],
                    self.opacity_net, self.atlas_net):
            out += net.parameters
        return out

    @property
    def inverse_phase_parameters(self) -> list[Parameter]:
        return self.inverse_net[FG].parameters + self.inverse_net[BG].parameters

    @property
    def parameters(self) -> list[Parameter]:
        return self.forward_phase_parameters + self.inverse_phase_parameters

    def parameter_count(self) -> int:
        return sum(p.values.size for p in self.parameters)

    # -- coordinate helpers ---------------------------------------------

    def normalize_xyt(self, xyt: np.ndarray) -> np.ndarray:
        c = self.config
        scale = np.array([max(c.width - 1, 1), max(c.height - 1, 1),
                          max(c.n_frames - 1, 1)], dtype=np.float64)
        return (np.asarray(xyt, dtype=np.float64) / scale).astype(np.float32)

    def _check_bounds(self, xyt: np.ndarray):
        c = self.config
        x, y, t = xyt[:, 0], xyt[:, 1], xyt[:, 2]
        if (x.min() < 0 or x.max() >= c.width or y.min() < 0 or y.max() >= c.height
                or t.min() < 0 or t.max() >= c.n_frames):
            raise ContractViolation(
                f"pixel coordinate out of clip bounds {c.width}x{c.height}x{c.n_frames}")

    # -- the six-network surface ----------------------------------------

    def forward_map_t(self, xyt_norm, layer: str) -> Tensor:
        """Normalized (x,y,t) -> (u,v), squashed into the layer sub-square.

        Accepts a constant array or a Tensor (for coordinate gradients).
        """
        n = xyt_norm.values.shape[0] if isinstance(xyt_norm, Tensor) else len(xyt_norm)
        self.forward_eval_count += n
        raw = ad.sigmoid(self.forward_net[layer](xyt_norm))
        u0, u1 = SUBSQUARE[layer]
        scale = Tensor(np.array([u1 - u0, 1.0], dtype=np.float32))
        offset = Tensor(np.array([u0, 0.0], dtype=np.float32))
        return raw * scale + offset

    def forward_map(self, xyt: np.ndarray, layer: str, check_bounds: bool = True) -> np.ndarray:
        xyt = np.atleast_2d(np.asarray(xyt, dtype=np.float64))
        if check_bounds:
            self._check_bounds(xyt)
        return self.forward_map_t(self.normalize_xyt(xyt), layer).values

    def inverse_map_t(self, uvt_norm, layer: str) -> Tensor:
        """Normalized (u,v,t) -> normalized (x,y), unclamped (training path)."""
        return self.inverse_net[layer](uvt_norm)

    def inverse_map(self, uv: np.ndarray, t, layer: str) -> np.ndarray:
        """(u,v) plus frame index -> pixel (x,y), clamped to frame bounds."""
        uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (uv.shape[0],))
        c = self.config
        uvt = np.column_stack([uv, t / max(c.n_frames - 1, 1)]).astype(np.float32)
        xy_norm = self.inverse_map_t(uvt, layer).values
        xy = xy_norm * np.array([c.width - 1, c.height - 1], dtype=np.float32)
        return np.clip(xy, 0.0, [c.width - 1, c.height - 1])

    def opacity_t(self, xyt_norm) -> Tensor:
        return ad.sigmoid(self.opacity_net(xyt_norm))

    def opacity(self, xyt: np.ndarray) -> np.ndarray:
        xyt = np.atleast_2d(np.asarray(xyt, dtype=np.float64))
        self._check_bounds(xyt)
        return self.opacity_t(self.normalize_xyt(xyt)).values[:, 0]

    def atlas_color_t(self, uv) -> Tensor:
        return ad.sigmoid(self.atlas_net(uv))

    def atlas_color(self, uv: np.ndarray) -> np.ndarray:
        uv = np.clip(np.atleast_2d(np.asarray(uv, dtype=np.float32)), 0.0, 1.0)
        return self.atlas_color_t(uv).values

    def reconstruct_pixel_t(self, xyt_norm, alpha_override: float | None = None
                            ) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        """Returns (rgb, uv_fg, uv_bg, alpha); alpha_override is a test hook."""
        uv_f = self.forward_map_t(xyt_norm, FG)
        uv_b = self.forward_map_t(xyt_norm, BG)
        if alpha_override is None:
            alpha = self.opacity_t(xyt_norm)
        else:
            n = xyt_norm.values.shape[0] if isinstance(xyt_norm, Tensor) else len(xyt_norm)
            alpha = Tensor(np.full((n, 1), alpha_override, dtype=np.float32))
        rgb = alpha * self.atlas_color_t(uv_f) + (1.0 - alpha) * self.atlas_color_t(uv_b)
        return rgb, uv_f, uv_b, alpha

    def reconstruct_pixel(self, xyt: np.ndarray,
                          alpha_override: float | None = None) -> np.ndarray:
        xyt = np.atleast_2d(np.asarray(xyt, dtype=np.float64))
        self._check_bounds(xyt)
        rgb, _, _, _ = self.reconstruct_pixel_t(self.normalize_xyt(xyt), alpha_override)
        return rgb.values

    # -- snapshot / checkpoint ------------------------------------------

    def _header(self) -> dict:
        c = self.config
        h = {"width": c.width, "height": c.height, "n_frames": c.n_frames,
             "hidden": c.hidden, "depth": c.depth,
             "forward_trained": int(self.forward_trained),
             "inverse_trained": int(self.inverse_trained)}
        h.update(c.grid3d.to_header("grid3d"))
        h.update(c.grid_map.to_header("grid_map"))
        h.update(c.grid_inverse.to_header("grid_inverse"))
        h.update(c.grid_atlas.to_header("grid_atlas"))
        return h

    def save(self, path):
        ad.save_checkpoint(path, self.parameters, self._header())

    @classmethod
    def load(cls, path) -> "ModelBundle":
        header, records = ad.load_checkpoint(path)
        config = BundleConfig(
            width=int(header["width"]), height=int(header["height"]),
            n_frames=int(header["n_frames"]),
            grid3d=HashGridConfig.from_header(header, "grid3d"),
            grid_map=HashGridConfig.from_header(header, "grid_map"),
            grid_inverse=HashGridConfig.from_header(header, "grid_inverse"),
            grid_atlas=HashGridConfig.from_header(header, "grid_atlas"),
            hidden=int(header["hidden"]), depth=int(header["depth"]))
        bundle = cls(config)
        ad.restore_parameters(bundle.parameters, records)
        bundle.forward_trained = bool(header.get("forward_trained", 0))
        bundle.inverse_trained = bool(header.get("inverse_trained", 0))
        return bundle

    def snapshot(self) -> "ModelBundle":
        """Immutable-by-convention deep copy for concurrent readers."""
        clone = ModelBundle(self.config)
        # copy arrays directly; cheaper and exact vs a file round trip
        for src, dst in zip(self.parameters, clone.parameters):
            dst.tensor.values = src.tensor.values.copy()
            dst.m = src.m.copy()
            dst.v = src.v.copy()
            dst.step = src.step
        clone.forward_trained = self.forward_trained
        clone.inverse_trained = self.inverse_trained
        return clone

    def checksum(self) -> str:
        h = hashlib.sha256()
        for p in self.parameters:
            h.update(p.values.tobytes())
        return h.hexdigest()
