#!/usr/bin/env python3
"""Rasterizer throughput benchmark.

Renders a pixel-aligned grid of Gaussians (the feed-forward workload shape)
and reports wall-clock times. The 256x256 / 65536-Gaussian / M=32 row is
the soft performance floor: it should complete in under 2 s on a
contemporary desktop CPU using all cores.
"""

import argparse
import time

import numpy as np

from segsplat.core import Camera, GaussianCloud
from segsplat.rasterizer import RenderSettings, render, resolve_threads


def grid_scene(size: int, bank_size: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    cols, rows = np.meshgrid(np.arange(size), np.arange(size))
    z, f = 2.0, float(size)
    positions = np.stack(
        [
            (cols.ravel() + 0.5 - size / 2) * z / f,
            (rows.ravel() + 0.5 - size / 2) * z / f,
            np.full(size * size, z),
        ],
        axis=1,
    )
    n = size * size
    cloud = GaussianCloud(
        positions,
        rng.uniform(0.3, 0.95, n),
        rng.uniform(0.7, 1.5, (n, 3)) * z / f,
        np.tile([1.0, 0, 0, 0], (n, 1)),
        rng.uniform(-1, 1, (n, 1, 3)),
        rng.integers(0, bank_size + 1, n),
    )
    cam = Camera(np.eye(4), f, f, size / 2, size / 2, size, size, 0.1, 100.0)
    return cloud, cam


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", type=int, nargs="+", default=[64, 128, 256])
    parser.add_argument("--bank-size", type=int, default=32)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    workers = resolve_threads()
    print(f"workers = {workers}")
    settings = RenderSettings()
    for size in args.sizes:
        cloud, cam = grid_scene(size, args.bank_size)
        render(cloud, args.bank_size, cam, settings)  # warm-up
        times = []
        for _ in range(args.repeats):
            start = time.perf_counter()
            render(cloud, args.bank_size, cam, settings)
            times.append(time.perf_counter() - start)
        best = min(times)
        print(
            f"{size}x{size}  {len(cloud):>6} gaussians  M={args.bank_size}  "
            f"best {best:.3f}s  ({len(cloud) / best / 1e6:.2f} Mgauss/s)"
        )


if __name__ == "__main__":
    main()
