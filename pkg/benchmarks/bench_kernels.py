"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--end-to-end]

Kernel timings compile the numba variants locally, so they work whatever
THZSOUND_DISABLE_NUMBA is set to. ``--end-to-end`` also times a desk-scale
``thzsound run b2b_54db`` in a subprocess with the flag off and on.
"""

import argparse
import os
import subprocess
import sys
import tempfile
import time

import numpy as np
from numba import njit

from thzsound import _accel


def _best(fn, repeat):
    fn()  # warm-up (and JIT compile)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(rng):
    x = rng.uniform(-1.2, 1.2, 2_400_000)
    rows = rng.standard_normal((1000, 4000))
    p = rng.random(240_000)
    y = rng.standard_normal(19_200) + 1j * rng.standard_normal(19_200)

    def kahan(impl):
        return lambda: impl(np.zeros(4000), np.zeros(4000), rows)

    return [
        ("quantize_midrise 2.4M", lambda: _accel.quantize_midrise_np(x, 14, 1.0),
         lambda q=njit(_accel._quantize_midrise_nb): q(x, 14, 1.0)),
        ("kahan_accumulate 1000x4000", kahan(_accel.kahan_accumulate_np),
         kahan(njit(_accel._kahan_accumulate_nb))),
        ("local_maxima 240k", lambda: _accel.local_maxima_np(p),
         lambda q=njit(_accel._local_maxima_nb): q(p)),
        ("envelope_project 19.2k", lambda: _accel.envelope_project_np(y, 1.0, 1.5),
         lambda q=njit(_accel._envelope_project_nb): q(y, 1.0, 1.5)),
    ]


def end_to_end(disable):
    env = dict(os.environ, THZSOUND_DISABLE_NUMBA="1" if disable else "0")
    with tempfile.TemporaryDirectory() as out:
        t0 = time.perf_counter()
        subprocess.run([sys.executable, "-m", "thzsound", "run", "b2b_54db", out],
                       env=env, check=True, capture_output=True)
        return time.perf_counter() - t0


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--end-to-end", action="store_true")
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    print(f"{'kernel':30s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, np_fn, nb_fn in kernel_cases(rng):
        t_np, t_nb = _best(np_fn, args.repeat), _best(nb_fn, args.repeat)
        print(f"{name:30s} {t_np * 1e3:10.2f} {t_nb * 1e3:10.2f} {t_np / t_nb:8.2f}")
    if args.end_to_end:
        t_np, t_nb = end_to_end(True), end_to_end(False)
        print(f"{'run b2b_54db (desk)':30s} {t_np * 1e3:10.0f} {t_nb * 1e3:10.0f} {t_np / t_nb:8.2f}")


if __name__ == "__main__":
    main()
