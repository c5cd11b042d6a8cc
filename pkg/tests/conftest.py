"""Shared fixtures: synthetic sequences with a cascade built to match them."""

from dataclasses import dataclass

import pytest

from speedcam import detector, imaging, mblbp


@dataclass
class PatchCase:
    """A synthetic sequence plus a model that detects exactly its patch."""

    cfg: imaging.SynthConfig
    frames: list
    model: mblbp.CascadeModel
    params: detector.DetectorParams


def _build_patch_case(
    velocity=(10.0, 0.0),
    n_frames=24,
    frame_w=640,
    frame_h=360,
    patch_xy=(20, 150),
    texture_seed=0,
    min_neighbors=1,
):
    """Moving 96x48 patch watched by a single-scale, single-stage cascade.

    The model's window is 48x24 scanned at scale 2. Its three weaks
    accept exactly the patch texture's codes (read off frame 0), so the
    detector locks onto the patch with no false positives; a stage
    threshold of 3 requires all three features to match.
    """
    cfg = imaging.SynthConfig(
        frame_w=frame_w,
        frame_h=frame_h,
        patch=imaging.Rect(patch_xy[0], patch_xy[1], 96, 48),
        velocity=velocity,
        n_frames=n_frames,
        frame_interval_ms=1000.0 / 30.0,
        texture_seed=texture_seed,
    )
    frames = imaging.synth_sequence(cfg)
    features = (
        mblbp.MbLbpFeature(0, 0, 16, 8),
        mblbp.MbLbpFeature(0, 0, 8, 8),
        mblbp.MbLbpFeature(24, 0, 8, 8),
    )
    ii0 = imaging.integral(frames[0])
    codes = [mblbp.lbp_code(ii0, f, patch_xy, 2.0) for f in features]
    assert 255 not in codes, "patch texture must differ from the flat background"
    weaks = tuple(
        mblbp.WeakClassifier(i, mblbp.subset_from_codes([c]), 1.0, -1.0)
        for i, c in enumerate(codes)
    )
    model = mblbp.CascadeModel(features, (mblbp.Stage(3.0, weaks),), 48, 24)
    params = detector.DetectorParams(
        min_size_fraction=2 * model.window_h / frame_h,
        scale_factor=8.0,
        stride_base=2,
        min_neighbors=min_neighbors,
        group_eps=0.2,
    )
    return PatchCase(cfg=cfg, frames=frames, model=model, params=params)


@pytest.fixture
def patch_case():
    """Factory for PatchCase synthetic scenarios."""
    return _build_patch_case
