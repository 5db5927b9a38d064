"""Compare the compiled compositing kernels against the NumPy fallback.

Usage: python benchmarks/bench_renderer.py [--repeats N]
"""

import argparse
import time

import numpy as np

from gsedit.camera import Intrinsics, look_at_pose
from gsedit.renderer import available_backends, render, render_backward, set_backend
from gsedit.scene import GaussianScene
from gsedit.transforms import normalize_quat


def make_scene(rng, n):
    k = 1
    sh = np.zeros((n, k, 3))
    sh[:, 0, :] = rng.uniform(-0.8, 0.8, size=(n, 3))
    return GaussianScene(
        positions=rng.uniform(-0.8, 0.8, size=(n, 3)),
        opacity_logits=rng.uniform(-1.0, 2.0, size=n),
        scale_logs=np.log(rng.uniform(0.05, 0.3, size=(n, 3))),
        rotations=normalize_quat(rng.normal(size=(n, 4))),
        sh_coeffs=sh,
        sh_degree=0,
    )


def bench(fn, repeats):
    fn()  # warm up
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    pose = look_at_pose([0.0, 0.8, 3.0], [0.0, 0.0, 0.0])
    cases = [
        (50, 64), (50, 128),
        (200, 128), (200, 256),
        (1000, 256), (1000, 512),
    ]
    backends = available_backends()
    if len(backends) < 2:
        print(f"only {backends} available; build the extension to compare")

    header = f"{'gaussians':>9} {'size':>6} {'pass':>8}"
    for b in backends:
        header += f" {b + ' (ms)':>14}"
    if len(backends) == 2:
        header += f" {'speedup':>9}"
    print(header)

    for n, size in cases:
        scene = make_scene(rng, n)
        K = Intrinsics(fx=1.2 * size, fy=1.2 * size, cx=(size - 1) / 2,
                       cy=(size - 1) / 2, width=size, height=size)
        grad = np.ones((size, size, 3))
        for pass_name, fn in (
            ("forward", lambda: render(scene, pose, K)),
            ("backward", lambda: render_backward(scene, pose, K, grad)),
        ):
            times = {}
            for b in backends:
                set_backend(b)
                times[b] = bench(fn, args.repeats) * 1000.0
            row = f"{n:>9} {size:>6} {pass_name:>8}"
            for b in backends:
                row += f" {times[b]:>14.2f}"
            if len(backends) == 2:
                row += f" {times['numpy'] / times['cython']:>8.1f}x"
            print(row)


if __name__ == "__main__":
    main()
