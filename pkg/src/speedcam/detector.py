"""Multi-scale sliding-window detection and rectangle grouping.

The scan slides the model window over the frame at a geometric ladder of
scales, evaluating the cascade at each origin via the array kernels.
Accepted windows are grouped into similarity classes; classes with
enough support fuse to a single averaged Detection. The tracked vehicle
is the largest-area detection.
"""

from dataclasses import dataclass

import numpy as np

from speedcam import kernels
from speedcam.errors import ConfigError, NoScaleError
from speedcam.imaging import Frame, Rect, integral, round_half_up
from speedcam.mblbp import CascadeModel


@dataclass(frozen=True)
class DetectorParams:
    """Scan geometry and grouping knobs.

    min_size_fraction: smallest window height as a fraction of frame height.
    scale_factor: ratio between consecutive window scales.
    stride_base: slide step floor; the step is max(stride_base, round(scale)).
    min_neighbors: similarity-class support needed to keep a detection.
    group_eps: edge tolerance for grouping, relative to mean rect size.
    """

    min_size_fraction: float = 0.3
    scale_factor: float = 1.1
    stride_base: int = 2
    min_neighbors: int = 3
    group_eps: float = 0.2

    def __post_init__(self):
        if not (0.0 < self.min_size_fraction <= 1.0):
            raise ConfigError(f"min_size_fraction {self.min_size_fraction} outside (0, 1]")
        if self.scale_factor <= 1.0:
            raise ConfigError(f"scale_factor {self.scale_factor} must exceed 1")
        if self.stride_base < 1:
            raise ConfigError(f"stride_base {self.stride_base} must be at least 1")
        if self.min_neighbors < 1:
            raise ConfigError(f"min_neighbors {self.min_neighbors} must be at least 1")
        if self.group_eps < 0.0:
            raise ConfigError(f"group_eps {self.group_eps} must be non-negative")


@dataclass(frozen=True)
class Detection:
    """A grouped detection; scale is rect height over model window height."""

    rect: Rect
    scale: float
    neighbors: int


def _det_order(d: Detection):
    return (-d.rect.area, d.rect.y, d.rect.x)


def scale_schedule(
    frame_w: int, frame_h: int, window_w: int, window_h: int, params: DetectorParams
) -> list[float]:
    """Ascending window scales from the minimum vehicle size up to frame size.

    s0 makes the window height min_size_fraction of the frame height;
    each next scale multiplies by scale_factor; generation stops once the
    scaled window exceeds the frame in either dimension.
    """
    s0 = params.min_size_fraction * frame_h / window_h
    if s0 < 1.0:
        raise NoScaleError(
            f"minimum window {params.min_size_fraction:g} x frame height "
            f"{frame_h} is below the {window_w}x{window_h} model window"
        )
    scales = []
    s = s0
    while (
        round_half_up(window_w * s) <= frame_w and round_half_up(window_h * s) <= frame_h
    ):
        scales.append(s)
        s *= params.scale_factor
    if not scales:
        raise NoScaleError(
            f"frame {frame_w}x{frame_h} cannot hold the minimum scan window"
        )
    return scales


def _flatten_model(model: CascadeModel):
    wfeat = []
    wsub = []
    wli = []
    wlo = []
    sbound = [0]
    sthr = []
    for stage in model.stages:
        for w in stage.weaks:
            wfeat.append(w.feature_index)
            wsub.append(w.subset)
            wli.append(w.leaf_in)
            wlo.append(w.leaf_out)
        sbound.append(len(wfeat))
        sthr.append(stage.threshold)
    return (
        np.asarray(wfeat, dtype=np.int64),
        np.asarray(wsub, dtype=np.uint32),
        np.asarray(wli, dtype=np.float64),
        np.asarray(wlo, dtype=np.float64),
        np.asarray(sbound, dtype=np.int64),
        np.asarray(sthr, dtype=np.float64),
    )


def _scaled_features(model: CascadeModel, scale: float):
    fx = np.empty(len(model.features), dtype=np.int64)
    fy = np.empty_like(fx)
    fbw = np.empty_like(fx)
    fbh = np.empty_like(fx)
    for i, f in enumerate(model.features):
        fx[i] = round_half_up(f.bx * scale)
        fy[i] = round_half_up(f.by * scale)
        fbw[i] = max(1, round_half_up(f.bw * scale))
        fbh[i] = max(1, round_half_up(f.bh * scale))
    return fx, fy, fbw, fbh


def scan(frame: Frame, model: CascadeModel, params: DetectorParams) -> list[Rect]:
    """All window rects the cascade accepts, scale-major then row-major."""
    schedule = scale_schedule(
        frame.width, frame.height, model.window_w, model.window_h, params
    )
    ii = integral(frame)
    flat = _flatten_model(model)
    impl = kernels.scan_impl()
    out = []
    for scale in schedule:
        win_w = round_half_up(model.window_w * scale)
        win_h = round_half_up(model.window_h * scale)
        stride = max(params.stride_base, round_half_up(scale))
        fx, fy, fbw, fbh = _scaled_features(model, scale)
        # independent rounding can push a scaled feature grid past the
        # scaled window edge; shrink the origin range to whichever is wider
        eff_w = max(win_w, int(np.max(fx + 3 * fbw, initial=0)))
        eff_h = max(win_h, int(np.max(fy + 3 * fbh, initial=0)))
        xs = np.arange(0, frame.width - eff_w + 1, stride, dtype=np.int64)
        ys = np.arange(0, frame.height - eff_h + 1, stride, dtype=np.int64)
        if xs.size == 0 or ys.size == 0:
            continue
        mask = impl(ii.sums, xs, ys, fx, fy, fbw, fbh, *flat)
        for iy, ix in np.argwhere(mask):
            out.append(Rect(int(xs[ix]), int(ys[iy]), win_w, win_h))
    return out


def _similar(r: Rect, q: Rect, eps: float) -> bool:
    dw = eps * (r.w + q.w) / 2.0
    dh = eps * (r.h + q.h) / 2.0
    return (
        abs(r.x - q.x) <= dw
        and abs((r.x + r.w) - (q.x + q.w)) <= dw
        and abs(r.y - q.y) <= dh
        and abs((r.y + r.h) - (q.y + q.h)) <= dh
    )


def group_rects(
    cands: list[Rect], params: DetectorParams, window_h: int | None = None
) -> list[Detection]:
    """Fuse similar rects into Detections with at least min_neighbors support.

    Similarity (edge-wise proximity within group_eps of the pair's mean
    size) is closed transitively. Each surviving class becomes one
    Detection at the member-wise mean rect, sorted by descending area
    then ascending (y, x). window_h, when given, anchors the reported
    scale; otherwise scale is 1.0.
    """
    n = len(cands)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if _similar(cands[i], cands[j], params.group_eps):
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[ri] = rj

    classes = {}
    for i in range(n):
        classes.setdefault(find(i), []).append(cands[i])

    dets = []
    for members in classes.values():
        if len(members) < params.min_neighbors:
            continue
        k = len(members)
        rect = Rect(
            round_half_up(sum(r.x for r in members) / k),
            round_half_up(sum(r.y for r in members) / k),
            round_half_up(sum(r.w for r in members) / k),
            round_half_up(sum(r.h for r in members) / k),
        )
        scale = rect.h / window_h if window_h else 1.0
        dets.append(Detection(rect, scale, k))
    dets.sort(key=_det_order)
    return dets


def detect(frame: Frame, model: CascadeModel, params: DetectorParams) -> list[Detection]:
    """Scan then group; every returned rect lies inside the frame."""
    dets = group_rects(scan(frame, model, params), params, window_h=model.window_h)
    fixed = []
    for d in dets:
        r = d.rect
        # averaging with half-up rounding can overshoot an edge by a pixel
        x = min(max(r.x, 0), frame.width - r.w)
        y = min(max(r.y, 0), frame.height - r.h)
        if (x, y) != (r.x, r.y):
            d = Detection(Rect(x, y, r.w, r.h), d.scale, d.neighbors)
        fixed.append(d)
    return fixed


def select_vehicle(dets: list[Detection]):
    """The tracked vehicle: largest area, ties to smallest (y, x); None if empty."""
    if not dets:
        return None
    return min(dets, key=_det_order)
