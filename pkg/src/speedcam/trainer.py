"""Desk-scale AdaBoost training of block-pattern cascades.

Weak learning is exact for a fixed feature: each 8-bit code goes into
the subset iff the positive weight mass at that code exceeds the
negative mass, which minimizes weighted 0-1 loss directly. Boosting is
the discrete variant with alphas folded into the leaf votes, so trained
models evaluate through the ordinary cascade path. Between stages,
negatives the cascade already rejects are dropped (a light stand-in for
full hard-negative mining).
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from speedcam import kernels
from speedcam.errors import ConfigError
from speedcam.imaging import Frame, integral
from speedcam.mblbp import (
    CascadeModel,
    MbLbpFeature,
    Stage,
    WeakClassifier,
    subset_from_codes,
)

POSITIVE = "positive"
NEGATIVE = "negative"


@dataclass
class TrainSample:
    """One window-sized example with its boosting weight."""

    window: Frame
    label: str
    weight: float = 1.0

    def __post_init__(self):
        if self.label not in (POSITIVE, NEGATIVE):
            raise ConfigError(f"label {self.label!r} must be {POSITIVE} or {NEGATIVE}")
        if self.weight <= 0:
            raise ConfigError(f"weight {self.weight} must be positive")


@dataclass(frozen=True)
class TrainConfig:
    max_weaks_per_stage: int
    n_stages: int
    stage_tpr_target: float = 0.995
    feature_stride: int = 1
    epsilon_clamp: float = 1e-10

    def __post_init__(self):
        if self.max_weaks_per_stage < 1:
            raise ConfigError("max_weaks_per_stage must be at least 1")
        if self.n_stages < 1:
            raise ConfigError("n_stages must be at least 1")
        if not (0.0 < self.stage_tpr_target <= 1.0):
            raise ConfigError(
                f"stage_tpr_target {self.stage_tpr_target} outside (0, 1]"
            )
        if self.feature_stride < 1:
            raise ConfigError("feature_stride must be at least 1")
        if not (0.0 < self.epsilon_clamp < 0.5):
            raise ConfigError("epsilon_clamp must lie in (0, 0.5)")


def enumerate_features(window_w: int, window_h: int, stride: int = 1) -> list[MbLbpFeature]:
    """Every 3x3 block grid that fits the window, anchors on the stride grid.

    Block sizes take every integer value; only the anchor positions are
    stride-quantized. Order is bh-major, then bw, by, bx.
    """
    if window_w < 3 or window_h < 3:
        raise ConfigError(f"window {window_w}x{window_h} smaller than 3x3")
    if stride < 1:
        raise ConfigError("stride must be at least 1")
    features = []
    for bh in range(1, window_h // 3 + 1):
        for bw in range(1, window_w // 3 + 1):
            for by in range(0, window_h - 3 * bh + 1, stride):
                for bx in range(0, window_w - 3 * bw + 1, stride):
                    features.append(MbLbpFeature(bx, by, bw, bh))
    return features


@dataclass(eq=False)
class SampleCache:
    """Precomputed per-sample integral tables and per-feature codes."""

    sums: np.ndarray  # (n, h+1, w+1) int64
    codes: np.ndarray  # (n, n_features) uint8
    positive: np.ndarray  # (n,) bool


def build_cache(samples: list[TrainSample], features: list[MbLbpFeature]) -> SampleCache:
    """Stack integral tables and evaluate every feature on every sample."""
    if not samples:
        raise ConfigError("no samples")
    if not features:
        raise ConfigError("no features")
    w0, h0 = samples[0].window.width, samples[0].window.height
    for s in samples:
        if (s.window.width, s.window.height) != (w0, h0):
            raise ConfigError(
                f"sample window {s.window.width}x{s.window.height} "
                f"does not match {w0}x{h0}"
            )
    sums = np.stack([integral(s.window).sums for s in samples])
    fx = np.array([f.bx for f in features], dtype=np.int64)
    fy = np.array([f.by for f in features], dtype=np.int64)
    fbw = np.array([f.bw for f in features], dtype=np.int64)
    fbh = np.array([f.bh for f in features], dtype=np.int64)
    codes = kernels.codes_stack(sums, fx, fy, fbw, fbh)
    positive = np.array([s.label == POSITIVE for s in samples], dtype=bool)
    return SampleCache(sums=sums, codes=codes, positive=positive)


def best_weak(
    samples: list[TrainSample],
    features: list[MbLbpFeature],
    cache: SampleCache,
):
    """Minimal weighted-error weak over all features; ties take the first.

    For each feature, code c joins the subset iff positive mass at c
    strictly exceeds negative mass; the error is then the total of the
    losing masses, sum(min(pos_mass, neg_mass)).
    """
    weights = np.array([s.weight for s in samples], dtype=np.float64)
    pos = cache.positive
    nf = len(features)
    idx = cache.codes.astype(np.int64) + np.arange(nf, dtype=np.int64)[None, :] * 256

    def mass(rows):
        sel = idx[rows]
        wsel = np.broadcast_to(weights[rows][:, None], sel.shape)
        return np.bincount(sel.ravel(), weights=wsel.ravel(), minlength=nf * 256).reshape(
            nf, 256
        )

    pos_mass = mass(pos)
    neg_mass = mass(~pos)
    errors = np.minimum(pos_mass, neg_mass).sum(axis=1)
    fbest = int(np.argmin(errors))  # first occurrence keeps enumeration order
    in_codes = np.nonzero(pos_mass[fbest] > neg_mass[fbest])[0]
    weak = WeakClassifier(
        feature_index=fbest,
        subset=subset_from_codes(int(c) for c in in_codes),
        leaf_in=1.0,
        leaf_out=-1.0,
    )
    return weak, float(errors[fbest])


def _subset_lut(weak: WeakClassifier) -> np.ndarray:
    words = np.asarray(weak.subset, dtype=np.uint64)
    codes = np.arange(256)
    return ((words[codes >> 5] >> (codes & 31).astype(np.uint64)) & 1).astype(bool)


def boost_round(
    samples: list[TrainSample],
    weak: WeakClassifier,
    error: float,
    cache: SampleCache,
    epsilon_clamp: float = 1e-10,
):
    """One discrete boosting update: (alpha, reweighted samples).

    alpha = half the log odds of the clamped error; correct samples
    scale by e^-alpha, mistakes by e^alpha, then weights renormalize.
    """
    eps = min(max(error, epsilon_clamp), 1.0 - epsilon_clamp)
    alpha = 0.5 * math.log((1.0 - eps) / eps)
    lut = _subset_lut(weak)
    predicted_pos = lut[cache.codes[:, weak.feature_index]]
    correct = predicted_pos == cache.positive
    weights = np.array([s.weight for s in samples], dtype=np.float64)
    weights = weights * np.where(correct, math.exp(-alpha), math.exp(alpha))
    weights /= weights.sum()
    updated = [replace(s, weight=float(w)) for s, w in zip(samples, weights)]
    return alpha, updated


def _stage_scores(stage: Stage, cache: SampleCache) -> np.ndarray:
    scores = np.zeros(cache.codes.shape[0], dtype=np.float64)
    for w in stage.weaks:
        lut = _subset_lut(w)
        inset = lut[cache.codes[:, w.feature_index]]
        scores += np.where(inset, w.leaf_in, w.leaf_out)
    return scores


def train_stage(
    samples: list[TrainSample],
    features: list[MbLbpFeature],
    config: TrainConfig,
    cache: SampleCache | None = None,
) -> Stage:
    """Boost weaks until the cap (or a perfect weak), then set the threshold.

    Weights start uniform. The threshold is the largest value passing at
    least stage_tpr_target of the positive training samples: the k-th
    highest positive score with k = ceil(target * n_pos).
    """
    labels = {s.label for s in samples}
    if labels != {POSITIVE, NEGATIVE}:
        raise ConfigError("training a stage needs both positive and negative samples")
    if cache is None:
        cache = build_cache(samples, features)
    n = len(samples)
    current = [replace(s, weight=1.0 / n) for s in samples]
    folded = []
    for _ in range(config.max_weaks_per_stage):
        weak, err = best_weak(current, features, cache)
        alpha, current = boost_round(current, weak, err, cache, config.epsilon_clamp)
        folded.append(replace(weak, leaf_in=alpha, leaf_out=-alpha))
        if err < config.epsilon_clamp:
            break
    stage = Stage(threshold=0.0, weaks=tuple(folded))
    scores = _stage_scores(stage, cache)
    pos_scores = np.sort(scores[cache.positive])[::-1]
    k = math.ceil(config.stage_tpr_target * pos_scores.size)
    threshold = float(pos_scores[k - 1])
    return Stage(threshold=threshold, weaks=tuple(folded))


def train_cascade(
    pos: list[TrainSample], neg: list[TrainSample], config: TrainConfig
) -> CascadeModel:
    """Train stages sequentially, dropping already-rejected negatives between.

    Stops at n_stages or as soon as no negative survives the cascade.
    The returned model's feature table holds only the features some weak
    actually uses, in first-use order.
    """
    if not pos or not neg:
        raise ConfigError("training needs at least one positive and one negative")
    window_w = pos[0].window.width
    window_h = pos[0].window.height
    features = enumerate_features(window_w, window_h, config.feature_stride)

    stages = []
    active_neg = list(neg)
    for _ in range(config.n_stages):
        samples = list(pos) + active_neg
        cache = build_cache(samples, features)
        stage = train_stage(samples, features, config, cache)
        stages.append(stage)
        neg_scores = _stage_scores(stage, cache)[len(pos) :]
        active_neg = [
            s for s, score in zip(active_neg, neg_scores) if score >= stage.threshold
        ]
        if not active_neg:
            break

    index_map = {}
    used = []
    remapped_stages = []
    for stage in stages:
        weaks = []
        for w in stage.weaks:
            if w.feature_index not in index_map:
                index_map[w.feature_index] = len(used)
                used.append(features[w.feature_index])
            weaks.append(replace(w, feature_index=index_map[w.feature_index]))
        remapped_stages.append(Stage(stage.threshold, tuple(weaks)))
    return CascadeModel(
        tuple(used), tuple(remapped_stages), window_w=window_w, window_h=window_h
    )
