"""Backend selection and bit-identity between the scan implementations."""

import numpy as np
import pytest

from speedcam import imaging, kernels, mblbp
from speedcam.detector import _flatten_model, _scaled_features
from speedcam.errors import ConfigError
from speedcam.imaging import Frame


def _random_model(rng, n_stages=2, n_weaks=3, window=(12, 9)):
    w, h = window
    features = []
    for _ in range(4):
        bw = int(rng.integers(1, w // 3 + 1))
        bh = int(rng.integers(1, h // 3 + 1))
        bx = int(rng.integers(0, w - 3 * bw + 1))
        by = int(rng.integers(0, h - 3 * bh + 1))
        features.append(mblbp.MbLbpFeature(bx, by, bw, bh))
    stages = []
    for _ in range(n_stages):
        weaks = tuple(
            mblbp.WeakClassifier(
                int(rng.integers(0, len(features))),
                tuple(int(v) for v in rng.integers(0, 2**32, 8, dtype=np.uint64)),
                float(rng.normal()),
                float(rng.normal()),
            )
            for _ in range(n_weaks)
        )
        stages.append(mblbp.Stage(float(rng.normal()), weaks))
    return mblbp.CascadeModel(tuple(features), tuple(stages), w, h)


def test_codes_at_matches_scalar_path():
    rng = np.random.default_rng(2)
    px = rng.integers(0, 256, (30, 44), np.uint8)
    ii = imaging.integral(Frame(44, 30, px))
    for bw, bh in [(1, 1), (3, 2), (5, 7)]:
        xs = np.arange(0, 44 - 3 * bw + 1, 3, dtype=np.int64)
        ys = np.arange(0, 30 - 3 * bh + 1, 2, dtype=np.int64)
        gx = np.repeat(xs, ys.size)
        gy = np.tile(ys, xs.size)
        got = kernels.codes_at(ii.sums, gx, gy, bw, bh)
        want = [
            mblbp.lbp_code(ii, mblbp.MbLbpFeature(0, 0, bw, bh), (int(x), int(y)))
            for x, y in zip(gx, gy)
        ]
        assert got.tolist() == want


def test_codes_stack_matches_scalar_path():
    rng = np.random.default_rng(3)
    frames = [Frame(12, 9, rng.integers(0, 256, (9, 12), np.uint8)) for _ in range(6)]
    sums = np.stack([imaging.integral(f).sums for f in frames])
    feats = [
        mblbp.MbLbpFeature(0, 0, 4, 3),
        mblbp.MbLbpFeature(1, 0, 2, 2),
        mblbp.MbLbpFeature(3, 2, 3, 1),
    ]
    fx = np.array([f.bx for f in feats], np.int64)
    fy = np.array([f.by for f in feats], np.int64)
    fbw = np.array([f.bw for f in feats], np.int64)
    fbh = np.array([f.bh for f in feats], np.int64)
    got = kernels.codes_stack(sums, fx, fy, fbw, fbh)
    for i, frame in enumerate(frames):
        ii = imaging.integral(frame)
        for j, f in enumerate(feats):
            assert got[i, j] == mblbp.lbp_code(ii, f, (0, 0))


def test_backends_bit_identical_on_random_inputs():
    rng = np.random.default_rng(4)
    numba_scan = kernels.scan_impl("numba")
    for trial in range(8):
        model = _random_model(rng)
        scale = float(rng.choice([1.0, 1.5, 2.0]))
        px = rng.integers(0, 256, (48, 72), np.uint8)
        ii = imaging.integral(Frame(72, 48, px))
        fx, fy, fbw, fbh = _scaled_features(model, scale)
        flat = _flatten_model(model)
        eff_w = int(np.max(fx + 3 * fbw))
        eff_h = int(np.max(fy + 3 * fbh))
        xs = np.arange(0, 72 - eff_w + 1, 2, dtype=np.int64)
        ys = np.arange(0, 48 - eff_h + 1, 3, dtype=np.int64)
        a = kernels.scan_numpy(ii.sums, xs, ys, fx, fy, fbw, fbh, *flat)
        b = numba_scan(ii.sums, xs, ys, fx, fy, fbw, fbh, *flat)
        assert np.array_equal(a, b), f"trial {trial} diverged"


def test_backend_selection_env(monkeypatch):
    monkeypatch.setenv(kernels.BACKEND_ENV, "numpy")
    assert kernels.selected_backend() == "numpy"
    assert kernels.scan_impl() is kernels.scan_numpy
    monkeypatch.setenv(kernels.BACKEND_ENV, "numba")
    assert kernels.selected_backend() == "numba"
    assert kernels.scan_impl() is not kernels.scan_numpy
    monkeypatch.setenv(kernels.BACKEND_ENV, "turbo")
    with pytest.raises(ConfigError, match="turbo"):
        kernels.selected_backend()
    monkeypatch.delenv(kernels.BACKEND_ENV)
    assert kernels.selected_backend() in ("numba", "numpy")


def test_scan_impl_rejects_unknown_name():
    with pytest.raises(ConfigError):
        kernels.scan_impl("cuda")
