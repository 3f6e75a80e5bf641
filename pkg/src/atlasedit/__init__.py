"""Layered neural atlas video editing: train per-layer atlas networks on a
clip once, then edit the atlases and re-render interactively."""

from .autodiff import (AdamOptimizer, CheckpointError, ConfigurationError,
                       ContractViolation, Parameter, Tensor, backward)
from .editing import (EditDocument, MetadataStroke, RenderReport, SketchStroke,
                      TextureEdit, map_stroke_to_atlas, rasterize_chain,
                      render_edited_clip, render_edited_frame,
                      render_edited_pixel)
from .hashgrid import HashGrid, HashGridConfig, hash_index, sinusoidal_encode
from .media import (ClipLoadError, SyntheticSpec, VideoClip,
                    generate_synthetic, load_clip, save_clip)
from .model import BG, FG, BundleConfig, ModelBundle
from .tracking import Trajectory, track_point
from .training import (LossWeights, TrainConfig, TrainingDiverged, TrainState,
                       psnr, train, train_forward_phase, train_inverse_phase)

__version__ = "0.1.0"

__all__ = [
    "AdamOptimizer", "BG", "BundleConfig", "CheckpointError", "ClipLoadError",
    "ConfigurationError", "ContractViolation", "EditDocument", "FG",
    "HashGrid", "HashGridConfig", "LossWeights", "MetadataStroke",
    "ModelBundle", "Parameter", "RenderReport", "SketchStroke", "SyntheticSpec",
    "Tensor", "TextureEdit", "TrainConfig", "TrainState", "TrainingDiverged",
    "Trajectory", "VideoClip", "backward", "generate_synthetic", "hash_index",
    "load_clip", "map_stroke_to_atlas", "psnr", "rasterize_chain",
    "render_edited_clip", "render_edited_frame", "render_edited_pixel",
    "save_clip", "sinusoidal_encode", "track_point", "train",
    "train_forward_phase", "train_inverse_phase",
]
