"""Compare the compiled kinematics kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeats N]

Prints the mean time per call for each backend, the speedup and the largest
absolute difference between the two results.
"""

import argparse
import time

import numpy as np

from sportmotion import _fk_py, kernels
from sportmotion.kinematics import default_skeleton


def timed(fn, repeats):
    fn()  # warm-up
    start = time.perf_counter()
    for _ in range(repeats):
        out = fn()
    return (time.perf_counter() - start) / repeats, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=200)
    args = ap.parse_args()
    if kernels.compiled_backend is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation` first")

    rng = np.random.default_rng(0)
    skel = default_skeleton()
    theta = rng.normal(scale=0.5, size=72)
    beta = rng.normal(size=10)
    offsets = skel.shaped_offsets(beta)
    vecs = rng.normal(size=(4096, 3))

    cases = {
        "fk_jacobian": lambda b: b.fk_jacobian(skel.parents, offsets, theta, skel.shape_basis, True),
        "fk (no jacobian)": lambda b: b.fk_jacobian(skel.parents, offsets, theta, skel.shape_basis, False),
        "rot_and_left_jacobian x4096": lambda b: b.rot_and_left_jacobian(vecs),
    }
    print(f"{'kernel':30s} {'python':>11s} {'compiled':>11s} {'speedup':>8s} {'max |diff|':>11s}")
    for name, call in cases.items():
        t_py, out_py = timed(lambda: call(_fk_py), args.repeats)
        t_c, out_c = timed(lambda: call(kernels.compiled_backend), args.repeats)
        diff = max(
            float(np.max(np.abs(np.asarray(a) - np.asarray(b))))
            for a, b in zip(out_py, out_c)
            if a is not None
        )
        print(f"{name:30s} {t_py * 1e6:9.1f}us {t_c * 1e6:9.1f}us {t_py / t_c:7.1f}x {diff:11.2e}")


if __name__ == "__main__":
    main()
