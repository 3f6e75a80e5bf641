"""Clip I/O, optical-flow files, and the synthetic clip generator."""

import numpy as np
import pytest

from atlasedit import media
from atlasedit.media import (ClipLoadError, SyntheticSpec, VideoClip,
                             generate_synthetic, load_clip, read_flo,
                             read_valid_sidecar, save_clip, write_flo,
                             write_valid_sidecar)


def small_spec(**kw):
    defaults = dict(width=48, height=40, n_frames=5, fg_size=12,
                    fg_start=(6.0, 6.0), velocity=(2.0, 1.0))
    defaults.update(kw)
    return SyntheticSpec(**defaults)


# -- .flo files ------------------------------------------------------------------

def test_flo_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    flow = rng.normal(size=(12, 17, 2)).astype(np.float32)
    path = tmp_path / "f.flo"
    write_flo(path, flow)
    back = read_flo(path)
    assert back.shape == (12, 17, 2)
    assert np.array_equal(back, flow)


def test_flo_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.flo"
    path.write_bytes(np.float32(1.0).tobytes() + b"\x00" * 16)
    with pytest.raises(ClipLoadError):
        read_flo(path)


def test_valid_sidecar_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    valid = rng.random((9, 13)) > 0.4
    path = tmp_path / "f.valid"
    write_valid_sidecar(path, valid)
    assert np.array_equal(read_valid_sidecar(path, 13, 9), valid)


# -- clip persistence -------------------------------------------------------------

def test_clip_save_load_roundtrip(tmp_path):
    clip = generate_synthetic(small_spec()).clip
    save_clip(clip, tmp_path / "clip")
    back = load_clip(tmp_path / "clip")
    # frames go through 8-bit PNG; flow and masks are lossless
    assert np.max(np.abs(back.frames - clip.frames)) <= 1.0 / 255.0 + 1e-6
    assert np.array_equal(back.flow, clip.flow)
    assert np.array_equal(back.flow_valid, clip.flow_valid)
    assert np.array_equal(back.masks, clip.masks)


def test_load_clip_missing_frames_raises(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(ClipLoadError):
        load_clip(tmp_path / "empty")


def test_export_sequence_writes_manifest(tmp_path):
    frames = np.zeros((3, 8, 10, 3), np.float32)
    media.export_sequence(frames, tmp_path / "out")
    import json
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest == {"count": 3, "width": 10, "height": 8}
    assert sorted(p.name for p in (tmp_path / "out").glob("*.png")) == \
        ["00000.png", "00001.png", "00002.png"]


def test_videoclip_shape_validation():
    with pytest.raises(ClipLoadError):
        VideoClip(frames=np.zeros((4, 8, 8, 3), np.float32),
                  flow=np.zeros((2, 8, 8, 2), np.float32),   # must be N-1 = 3
                  flow_valid=np.ones((2, 8, 8), bool),
                  masks=np.zeros((4, 8, 8), bool))


# -- synthetic clips ---------------------------------------------------------------

def test_synthetic_shape_and_ranges():
    sc = generate_synthetic(small_spec())
    clip = sc.clip
    assert clip.frames.shape == (5, 40, 48, 3)
    assert clip.flow.shape == (4, 40, 48, 2)
    assert clip.frames.min() >= 0.0 and clip.frames.max() <= 1.0
    assert clip.flow_valid.all()


def test_synthetic_is_seed_deterministic():
    a = generate_synthetic(small_spec()).clip
    b = generate_synthetic(small_spec()).clip
    assert np.array_equal(a.frames, b.frames)
    c = generate_synthetic(small_spec(bg_seed=99)).clip
    assert not np.array_equal(a.frames, c.frames)


def test_synthetic_flow_is_exact_correspondence():
    """Warping frame t by the stored flow reproduces frame t+1 pixels."""
    sc = generate_synthetic(small_spec(velocity=(2.0, 1.0)))
    clip = sc.clip
    for t in range(clip.n_frames - 1):
        mask = clip.masks[t]
        ys, xs = np.nonzero(mask)
        f = clip.flow[t, ys, xs]
        xd = (xs + f[:, 0]).astype(int)
        yd = (ys + f[:, 1]).astype(int)
        src = clip.frames[t, ys, xs]
        dst = clip.frames[t + 1, yd, xd]
        assert np.max(np.abs(src - dst)) < 1e-6
        # background truly static
        bg = ~clip.masks[t] & ~clip.masks[t + 1]
        assert np.array_equal(clip.frames[t][bg], clip.frames[t + 1][bg])


def test_synthetic_mask_tracks_the_shape():
    spec = small_spec(shape="rect", fg_size=12, fg_start=(6.0, 6.0),
                      velocity=(2.0, 1.0))
    clip = generate_synthetic(spec).clip
    for t in range(clip.n_frames):
        x0, y0 = 6 + 2 * t, 6 + 1 * t
        expected = np.zeros((40, 48), bool)
        expected[y0:y0 + 12, x0:x0 + 12] = True
        assert np.array_equal(clip.masks[t], expected)


def test_ground_truth_position_translation():
    sc = generate_synthetic(small_spec(velocity=(2.0, 1.0)))
    p = sc.ground_truth_position(10.0, 9.0, 0, 3)
    assert np.allclose(p, [16.0, 12.0])


def test_spec_rejects_shape_leaving_frame():
    with pytest.raises(ValueError):
        small_spec(velocity=(20.0, 0.0)).validate()


def test_disc_shape_supported():
    clip = generate_synthetic(small_spec(shape="disc")).clip
    assert clip.masks[0].any()
    assert not clip.masks[0].all()
