"""Compiled versus pure-Python kernels on the cubic plant.

Run with ``python3 benchmarks/bench_kernels.py [--steps N] [--repeat R]``.
Prints the best-of-R wall time per backend, the speedup and whether both
backends returned bit-identical states.
"""

import argparse
import time

import numpy as np

from predfb import kernels
from predfb.input_history import InputWindow
from predfb.system_model import cubic_system


def _best(fn, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench(steps, repeat):
    form = cubic_system().affine_form
    rng = np.random.default_rng(0)
    tau = 0.5
    window = InputWindow(np.linspace(0.0, tau, 17), rng.uniform(-0.5, 0.5, (17, 1)), tau)
    x0 = np.array([0.4])
    edges = tau * np.arange(steps + 1) / steps
    U = window.step_integrals(edges)
    grid = np.linspace(0.0, tau, steps + 1)

    cases = {
        "euler_affine": lambda b: kernels.euler_affine(form, x0, tau / steps, U, True, backend=b)[0],
        "rk4_affine_grid": lambda b: kernels.rk4_affine_grid(
            form, x0, grid, window.times, window.values, backend=b)[0],
    }
    backends = ["python"] + (["compiled"] if kernels.compiled_available() else [])
    rows = []
    for name, fn in cases.items():
        times, outs = {}, {}
        for b in backends:
            times[b], outs[b] = _best(lambda: fn(b), repeat)
        same = len(outs) < 2 or np.array_equal(outs["python"], outs["compiled"])
        rows.append((name, times, same))
    return backends, rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=100_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    backends, rows = bench(args.steps, args.repeat)
    print(f"steps={args.steps} repeat={args.repeat} default backend={kernels.BACKEND}")
    for name, times, same in rows:
        cells = "  ".join(f"{b}={times[b] * 1e3:9.2f} ms" for b in backends)
        speed = f"  speedup={times['python'] / times['compiled']:7.1f}x" if "compiled" in times else ""
        print(f"{name:16s} {cells}{speed}  identical={same}")


if __name__ == "__main__":
    main()
