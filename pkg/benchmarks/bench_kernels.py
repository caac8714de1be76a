"""Benchmark the numba-jitted kernels against their pure-numpy twins.

Run:  python benchmarks/bench_kernels.py [repeats]

Times both implementations of every hot kernel on cascade-sized inputs and
prints the speedup. Also times a small end-to-end cascade under the active
backend (set FRECAS_BACKEND=numpy to compare full runs without numba).

Representative results (Linux container, numba 0.66, numpy 2.2):

    bilinear_resample 3x32x32->64     numpy   326.9 us   numba   32.8 us   10.0x
    sq_dists 100x(3*64*64)            numpy 20326.3 us   numba 1265.8 us   16.1x
    patch_sq_dists 100x3x64x64 p=8    numpy 26198.7 us   numba 1429.2 us   18.3x
    patch_mix 100x3x64x64 p=8         numpy   829.1 us   numba 1088.8 us    0.8x

patch_mix is the one contraction where numpy's einsum stays competitive.
"""

import sys
import time

import numpy as np

from frecas import _kernels as K
from frecas.bank import make_value_noise_bank
from frecas.cascade import PRESETS, plan_from_preset, run_cascade
from frecas.codec import IDENTITY
from frecas.schedule import vp_default


def timeit(fn, repeats):
    fn()  # warm up (JIT compile for the numba twins)
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats


def bench_kernels(repeats):
    rng = np.random.default_rng(0)
    src = rng.standard_normal((3, 32, 32))
    bank_flat = rng.standard_normal((100, 3 * 64 * 64))
    z_flat = rng.standard_normal(3 * 64 * 64)
    bank = rng.standard_normal((100, 3, 64, 64))
    z = rng.standard_normal((3, 64, 64))
    weights = rng.random((100, 64))

    cases = [
        ("bilinear_resample 3x32x32->64",
         lambda: K._bilinear_np(src, 64, 64),
         lambda: K._bilinear_nb(src, 64, 64)),
        ("sq_dists 100x(3*64*64)",
         lambda: K._sq_dists_np(bank_flat, z_flat, 0.7),
         lambda: K._sq_dists_nb(bank_flat, z_flat, 0.7)),
        ("patch_sq_dists 100x3x64x64 p=8",
         lambda: K._patch_sq_dists_np(bank, z, 0.7, 8, 8),
         lambda: K._patch_sq_dists_nb(bank, z, 0.7, 8, 8)),
        ("patch_mix 100x3x64x64 p=8",
         lambda: K._patch_mix_np(bank, weights, 8, 8),
         lambda: K._patch_mix_nb(bank, weights, 8, 8)),
    ]
    print(f"kernel backends, mean of {repeats} runs:")
    for name, np_fn, nb_fn in cases:
        err = np.abs(np.asarray(np_fn()) - np.asarray(nb_fn())).max()
        t_np = timeit(np_fn, repeats)
        t_nb = timeit(nb_fn, repeats)
        print(f"  {name:33s} numpy {t_np * 1e6:8.1f} us   "
              f"numba {t_nb * 1e6:7.1f} us   {t_np / t_nb:5.1f}x   "
              f"(max abs diff {err:.2e})")


def bench_cascade():
    sched = vp_default()
    plan = plan_from_preset(PRESETS["sdxl-x4"], 16, sched)
    bank = make_value_noise_bank(32, channels=3, n_items=50, n_classes=4, seed=0)
    run_cascade(plan, IDENTITY, bank, 0, seed=0)  # warm up
    start = time.perf_counter()
    run_cascade(plan, IDENTITY, bank, 0, seed=1)
    elapsed = time.perf_counter() - start
    print(f"\ncascade sdxl-x4 @ base 16, 50-item bank, backend={K.backend()}: "
          f"{elapsed:.3f} s")


if __name__ == "__main__":
    repeats = int(sys.argv[1]) if len(sys.argv) > 1 else 50
    bench_kernels(repeats)
    bench_cascade()
