"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Both backends are imported in one process; numba timings exclude the first
(compiling) call.
"""
import argparse
import time

import numpy as np

from flightba import kernels
from flightba.association import _pad_sets
from flightba.scene import camera_arrays
from flightba.simulator import NoiseConfig, SimConfig, simulate


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    sc = simulate(SimConfig(noise=NoiseConfig(sigma_px=2.0, outlier_max=8)))
    obs, cams, X = sc.obs, sc.truth.cameras, sc.truth.X.positions
    R, t, intr = camera_arrays(cams)
    idx = np.flatnonzero(obs.counts.ravel())
    cam_of, frame_of = idx % obs.n_cameras, idx // obs.n_cameras
    pts = X[frame_of]
    offsets = np.concatenate([obs.offsets[idx], obs.offsets[-1:]])
    uv, z, _, _ = kernels.project_jac_numpy(R, t, intr, cam_of, pts)
    ok = z > 0
    hyp = X[:200] + np.random.default_rng(0).normal(0, 0.5, (200, 3))
    padded, counts = _pad_sets(obs.frame_sets(0))

    cases = {
        f"projection + jacobians ({len(pts)} obs)": (
            lambda: kernels.project_jac_numpy(R, t, intr, cam_of, pts),
            lambda: kernels.project_jac_numba(R, t, intr, cam_of, pts),
        ),
        "min over candidates": (
            lambda: kernels.min_candidates_numpy(uv, ok, obs.candidates, offsets, 1, 2.0, 1e8),
            lambda: kernels.min_candidates_numba(uv, ok, obs.candidates, offsets, 1, 2.0, 1e8),
        ),
        "RANSAC scoring (200 hypotheses)": (
            lambda: kernels.score_hypotheses_numpy(R, t, intr, hyp, padded, counts, 1, 2.0, 1e8),
            lambda: kernels.score_hypotheses_numba(R, t, intr, hyp, padded, counts, 1, 2.0, 1e8),
        ),
    }
    print(f"{'kernel':42s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, (f_np, f_nb) in cases.items():
        a = best_of(f_np, args.repeat) * 1e3
        b = best_of(f_nb, args.repeat) * 1e3
        print(f"{name:42s} {a:10.3f} {b:10.3f} {a / b:8.1f}")


if __name__ == "__main__":
    main()
