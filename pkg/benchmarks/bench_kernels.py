#!/usr/bin/env python3
"""Benchmark the sliding-window scan: numba JIT kernel vs numpy fallback.

Runs the same multi-scale cascade scan over a random frame with both
backends, checks they return identical rects, and reports per-scan time
plus the speedup. The first numba call includes JIT compilation and is
reported separately.

Usage:
    python3 benchmarks/bench_kernels.py [--repeats 10] [--width 640]
"""

import argparse
import os
import time

import numpy as np

from speedcam import kernels
from speedcam.detector import DetectorParams, scan
from speedcam.imaging import Frame
from speedcam.mblbp import CascadeModel, MbLbpFeature, Stage, WeakClassifier


def random_model(rng, n_features=20, weaks_per_stage=(8, 6, 6)):
    """Cascade over a 48x24 window with ~50% stage survival."""
    features = []
    for _ in range(n_features):
        bw = int(rng.integers(1, 6))
        bh = int(rng.integers(1, 5))
        bx = int(rng.integers(0, 48 - 3 * bw + 1))
        by = int(rng.integers(0, 24 - 3 * bh + 1))
        features.append(MbLbpFeature(bx, by, bw, bh))
    stages = []
    for n_weaks in weaks_per_stage:
        weaks = []
        for _ in range(n_weaks):
            subset = tuple(int(w) for w in rng.integers(0, 2**32, 8, np.uint64))
            weaks.append(
                WeakClassifier(int(rng.integers(0, n_features)), subset, 1.0, -1.0)
            )
        stages.append(Stage(0.0, tuple(weaks)))
    return CascadeModel(tuple(features), tuple(stages))


def time_backend(name, frame, model, params, repeats):
    os.environ[kernels.BACKEND_ENV] = name
    start = time.perf_counter()
    rects = scan(frame, model, params)
    first = time.perf_counter() - start

    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        scan(frame, model, params)
        times.append(time.perf_counter() - start)
    return rects, first, min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=10)
    ap.add_argument("--width", type=int, default=640)
    ap.add_argument("--height", type=int, default=360)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    frame = Frame(
        args.width,
        args.height,
        rng.integers(0, 256, (args.height, args.width), np.uint8),
    )
    model = random_model(rng)
    params = DetectorParams(min_size_fraction=0.15)
    saved = os.environ.get(kernels.BACKEND_ENV)

    try:
        if not kernels.NUMBA_AVAILABLE:
            print("numba not importable: benchmarking the numpy backend only")
            _, first, best = time_backend("numpy", frame, model, params, args.repeats)
            print(f"numpy: {1000 * best:.2f} ms per scan")
            return

        print(
            f"scanning {args.width}x{args.height} frame, "
            f"{len(model.features)} features, "
            f"{sum(len(s.weaks) for s in model.stages)} weaks, "
            f"best of {args.repeats}"
        )
        np_rects, _, np_best = time_backend("numpy", frame, model, params, args.repeats)
        nb_rects, nb_first, nb_best = time_backend(
            "numba", frame, model, params, args.repeats
        )

        if np_rects != nb_rects:
            raise SystemExit("FAIL: backends disagree on accepted windows")
        print(f"backends agree: {len(np_rects)} windows accepted")
        print(f"numpy: {1000 * np_best:.2f} ms per scan")
        print(f"numba: {1000 * nb_best:.2f} ms per scan (first call {nb_first:.2f} s with JIT)")
        print(f"speedup: {np_best / nb_best:.1f}x")
    finally:
        if saved is None:
            os.environ.pop(kernels.BACKEND_ENV, None)
        else:
            os.environ[kernels.BACKEND_ENV] = saved


if __name__ == "__main__":
    main()
