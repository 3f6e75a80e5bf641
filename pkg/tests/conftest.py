"""Shared fixtures: the reference synthetic clip and a trained model.

Training on one CPU core takes several minutes, so the trained model is
cached under tests/.cache keyed by a hash of the training recipe. Delete
that directory to force a full retrain.
"""

import hashlib
import json
from pathlib import Path

import pytest

from atlasedit.media import SyntheticSpec, generate_synthetic
from atlasedit.model import BundleConfig, ModelBundle
from atlasedit.training import LossWeights, TrainConfig, train

CACHE_DIR = Path(__file__).parent / ".cache"


def reference_spec() -> SyntheticSpec:
    return SyntheticSpec(width=64, height=64, n_frames=8)


def reference_train_config() -> TrainConfig:
    return TrainConfig(
        iters_forward=3000, iters_inverse=1500, batch=2048, seed=0,
        early_stop=False,
        weights=LossWeights(w_rigid=0.05, w_flow=10.0, w_map_bootstrap=3.0,
                            w_alpha_bootstrap=1.0, bootstrap_iters=1000))


def reference_model_config() -> BundleConfig:
    spec = reference_spec()
    return BundleConfig.desk_scale(spec.width, spec.height, spec.n_frames)


def _recipe_digest() -> str:
    cfg = reference_train_config()
    mc = reference_model_config()
    blob = json.dumps({
        "spec": vars(reference_spec()),
        "train": {k: (vars(v) if k == "weights" else v)
                  for k, v in vars(cfg).items()},
        "model": {"grid3d": vars(mc.grid3d), "grid_atlas": vars(mc.grid_atlas),
                  "grid_map": vars(mc.grid_map),
                  "grid_inverse": vars(mc.grid_inverse),
                  "hidden": mc.hidden, "depth": mc.depth},
    }, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def train_reference_model(seed_override: int | None = None) -> ModelBundle:
    """Full two-phase training run on the reference clip (no cache)."""
    clip = generate_synthetic(reference_spec()).clip
    cfg = reference_train_config()
    if seed_override is not None:
        cfg.seed = seed_override
    model = ModelBundle(reference_model_config(), seed=cfg.seed)
    train(clip, model, cfg)
    return model


@pytest.fixture(scope="session")
def synthetic_scene():
    return generate_synthetic(reference_spec())


@pytest.fixture(scope="session")
def synthetic_clip(synthetic_scene):
    return synthetic_scene.clip


@pytest.fixture(scope="session")
def trained_model() -> ModelBundle:
    CACHE_DIR.mkdir(exist_ok=True)
    path = CACHE_DIR / f"model_{_recipe_digest()}.ckpt"
    if path.exists():
        return ModelBundle.load(path)
    model = train_reference_model()
    model.save(path)
    return model


# -- acceptance reporting ----------------------------------------------------

ACCEPTANCE_RESULTS: dict[str, tuple[bool, str]] = {}


def record_acceptance(criterion: str, passed: bool, detail: str = ""):
    ACCEPTANCE_RESULTS[criterion] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[name]
        verdict = "PASS" if passed else "FAIL"
        line = f"{verdict}  {name}"
        if detail:
            line += f"  ({detail})"
        tr.write_line(line)
